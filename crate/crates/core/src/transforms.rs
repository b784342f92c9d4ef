//! Learnable mappings of the codec, as pure forward functions over a
//! [`ParameterStore`].
//!
//! | stack              | role       | mapping                                   |
//! |--------------------|------------|-------------------------------------------|
//! | base analysis      | `base`     | image `3xHxW` to latent `L_base x H/8 x W/8` |
//! | latent transform   | `lst`      | base latent to task features `F x H/4 x W/4` |
//! | preview synthesis  | `preview`  | base latent to preview image                |
//! | residual analysis  | `residual` | residual image to `L_enh x H/8 x W/8`       |
//! | residual synthesis | `residual` | enhancement latent to residual image        |
//! | joint analysis     | `joint`    | image to `(L_base + L_enh) x H/8 x W/8`     |
//! | joint synthesis    | `joint`    | full joint latent to reconstruction         |
//!
//! Analysis stacks are three stride-2 5x5 convolutions with `tanh` between
//! them; synthesis stacks mirror them with transposed convolutions and end
//! in a clamp to the output range.

use crate::config::{Architecture, ExperimentConfig};
use crate::entropy::model::DEFAULT_S_MAX;
use crate::error::{Error, Result};
use crate::nn::{Layer, Stack};
use crate::params::ParameterStore;
use crate::rng::substream;
use crate::tensor::{FeatureMap, ImageKind, ImageTensor, LatentTensor, LayerTag, Tensor};

/// Parameter holding the architecture integers, so forward functions can
/// rebuild their stacks from the store alone.
pub const ARCH_PARAM: &str = "meta.arch";

const KERNEL: usize = 5;

fn analysis(prefix: &str, hidden: usize, out: usize) -> Stack {
    Stack::new(vec![
        Layer::conv(&format!("{prefix}.conv1"), 3, hidden, KERNEL, 2),
        Layer::Tanh,
        Layer::conv(&format!("{prefix}.conv2"), hidden, hidden, KERNEL, 2),
        Layer::Tanh,
        Layer::conv(&format!("{prefix}.conv3"), hidden, out, KERNEL, 2),
    ])
}

fn synthesis(prefix: &str, cin: usize, hidden: usize, lo: f64, hi: f64) -> Vec<Layer> {
    vec![
        Layer::conv_t(&format!("{prefix}.deconv1"), cin, hidden, KERNEL),
        Layer::Tanh,
        Layer::conv_t(&format!("{prefix}.deconv2"), hidden, hidden, KERNEL),
        Layer::Tanh,
        Layer::conv_t(&format!("{prefix}.deconv3"), hidden, 3, KERNEL),
        Layer::Clamp { lo, hi },
    ]
}

/// Every codec stack for one architecture.
#[derive(Debug, Clone)]
pub struct Nets {
    pub arch: Architecture,
    pub base: Stack,
    pub lst: Stack,
    pub preview: Stack,
    pub residual_analysis: Stack,
    pub residual_synthesis: Stack,
    pub joint_analysis: Stack,
    pub joint_synthesis: Stack,
}

impl Nets {
    pub fn new(arch: &Architecture) -> Self {
        let n = arch.hidden;
        let mut preview = vec![Layer::conv("preview.adapt", arch.l_base, arch.l_enh, 1, 1)];
        preview.extend(synthesis("preview", arch.l_enh, n, 0.0, 1.0));
        Nets {
            arch: arch.clone(),
            base: analysis("base", n, arch.l_base),
            lst: Stack::new(vec![
                Layer::conv("lst.conv1", arch.l_base, n, 3, 1),
                Layer::Tanh,
                Layer::Upsample2,
                Layer::conv("lst.conv2", n, arch.feature_channels, 3, 1),
            ]),
            preview: Stack::new(preview),
            residual_analysis: analysis("residual", n, arch.l_enh),
            residual_synthesis: Stack::new(synthesis("residual", arch.l_enh, n, -1.0, 1.0)),
            joint_analysis: analysis("joint", n, arch.l_base + arch.l_enh),
            joint_synthesis: Stack::new(synthesis("joint", arch.l_base + arch.l_enh, n, 0.0, 1.0)),
        }
    }

    /// Rebuild from the architecture recorded in a store.
    pub fn from_store(p: &ParameterStore) -> Result<Self> {
        Ok(Self::new(&architecture_of(p)?))
    }
}

pub fn write_architecture(p: &mut ParameterStore, arch: &Architecture) -> Result<()> {
    let values = vec![
        arch.l_base as f32,
        arch.l_enh as f32,
        arch.hidden as f32,
        arch.feature_channels as f32,
        arch.proxy_width as f32,
        arch.classes as f32,
        arch.s_max as f32,
    ];
    p.set(ARCH_PARAM, &[values.len()], values)?;
    Ok(())
}

pub fn architecture_of(p: &ParameterStore) -> Result<Architecture> {
    let a = p
        .get(ARCH_PARAM)
        .ok_or_else(|| Error::Shape(format!("store lacks `{ARCH_PARAM}`")))?;
    if a.values.len() != 7 {
        return Err(Error::Shape(format!("`{ARCH_PARAM}` has {} entries", a.values.len())));
    }
    let v = |i: usize| a.values[i] as usize;
    Ok(Architecture {
        l_base: v(0),
        l_enh: v(1),
        hidden: v(2),
        feature_channels: v(3),
        proxy_width: v(4),
        classes: v(5),
        s_max: a.values[6] as i32,
    })
}

fn init_entropy(p: &mut ParameterStore, prefix: &str, channels: usize) -> Result<()> {
    p.init_constant(&format!("{prefix}.em.loc"), &[channels], 0.0)?;
    p.init_constant(&format!("{prefix}.em.log_scale"), &[channels], 0.0)?;
    Ok(())
}

/// Allocate every codec parameter (all roles except `taskproxy`).
///
/// Weights are uniform in `±sqrt(3 / fan_in)`, biases zero except the
/// image-space output heads, which start at mid-gray. Each role draws from its own
/// substream, so one role's initialization does not depend on the sizes of
/// the others.
pub fn init_params(config: &ExperimentConfig, seed: u64) -> Result<ParameterStore> {
    let arch = &config.arch;
    for (k, v) in [
        ("l_base", arch.l_base),
        ("l_enh", arch.l_enh),
        ("hidden", arch.hidden),
        ("feature_channels", arch.feature_channels),
    ] {
        if v == 0 {
            return Err(Error::Invalid(format!("{k} must be positive")));
        }
    }
    let nets = Nets::new(arch);
    let mut p = ParameterStore::new();
    write_architecture(&mut p, arch)?;
    for (name, stack) in [
        ("base", &nets.base),
        ("lst", &nets.lst),
        ("preview", &nets.preview),
        ("residual.analysis", &nets.residual_analysis),
        ("residual.synthesis", &nets.residual_synthesis),
        ("joint.analysis", &nets.joint_analysis),
        ("joint.synthesis", &nets.joint_synthesis),
    ] {
        stack.init_params(&mut p, &mut substream(seed, &format!("init/{name}"), 0))?;
    }
    for head in ["preview.deconv3.bias", "joint.deconv3.bias"] {
        let bias = p.require(head)?;
        p.param_mut(bias).values.fill(0.5);
    }
    init_entropy(&mut p, "base", arch.l_base)?;
    init_entropy(&mut p, "residual", arch.l_enh)?;
    init_entropy(&mut p, "joint", arch.l_base + arch.l_enh)?;
    Ok(p)
}

pub fn s_max_of(p: &ParameterStore) -> i32 {
    architecture_of(p).map(|a| a.s_max).unwrap_or(DEFAULT_S_MAX)
}

fn expect_latent_shape(y: &LatentTensor, channels: usize) -> Result<()> {
    if y.channels() != channels {
        return Err(Error::Shape(format!(
            "expected {channels}-channel {:?} latent, got {}",
            y.layer,
            y.channels()
        )));
    }
    Ok(())
}

pub fn analyze_base(x: &ImageTensor, p: &ParameterStore) -> Result<LatentTensor> {
    x.expect_kind(ImageKind::Input)?;
    let nets = Nets::from_store(p)?;
    let y = nets.base.forward(p, x.tensor())?;
    Ok(LatentTensor::new(y, LayerTag::Base, false))
}

pub fn analyze_joint(x: &ImageTensor, p: &ParameterStore) -> Result<LatentTensor> {
    x.expect_kind(ImageKind::Input)?;
    let nets = Nets::from_store(p)?;
    let y = nets.joint_analysis.forward(p, x.tensor())?;
    Ok(LatentTensor::new(y, LayerTag::Joint, false))
}

/// Partition a joint latent into its first `l_base` channels (tagged base)
/// and the remainder (tagged enh).
pub fn split_latent(y: &LatentTensor, l_base: usize) -> Result<(LatentTensor, LatentTensor)> {
    if y.layer != LayerTag::Joint {
        return Err(Error::Invalid(format!("cannot split a {:?} latent", y.layer)));
    }
    let total = y.channels();
    if l_base == 0 || l_base >= total {
        return Err(Error::Invalid(format!(
            "base channel count {l_base} must lie in 1..{total}"
        )));
    }
    let t = y.tensor();
    Ok((
        LatentTensor::new(t.slice_channels(0..l_base), LayerTag::Base, y.quantized),
        LatentTensor::new(t.slice_channels(l_base..total), LayerTag::Enh, y.quantized),
    ))
}

/// Inverse of [`split_latent`].
pub fn concat_latent(base: &LatentTensor, enh: &LatentTensor) -> Result<LatentTensor> {
    Ok(LatentTensor::new(
        base.tensor().concat_channels(enh.tensor())?,
        LayerTag::Joint,
        base.quantized && enh.quantized,
    ))
}

/// Map a (quantized or noise-relaxed) base latent to task-proxy features.
pub fn lst_apply(y_hat: &LatentTensor, p: &ParameterStore) -> Result<FeatureMap> {
    if y_hat.layer == LayerTag::Enh {
        return Err(Error::Invalid("the latent transform reads base latents only".into()));
    }
    let nets = Nets::from_store(p)?;
    expect_latent_shape(y_hat, nets.arch.l_base)?;
    FeatureMap::new(nets.lst.forward(p, y_hat.tensor())?)
}

pub fn synthesize_preview(y_hat: &LatentTensor, p: &ParameterStore) -> Result<ImageTensor> {
    if !y_hat.quantized || y_hat.layer != LayerTag::Base {
        return Err(Error::Invalid("preview needs a quantized base latent".into()));
    }
    let nets = Nets::from_store(p)?;
    expect_latent_shape(y_hat, nets.arch.l_base)?;
    let mut t = nets.preview.forward(p, y_hat.tensor())?;
    t.snap_to_grid();
    ImageTensor::new(t, ImageKind::Preview)
}

pub fn analyze_residual(x_res: &ImageTensor, p: &ParameterStore) -> Result<LatentTensor> {
    x_res.expect_kind(ImageKind::Residual)?;
    let nets = Nets::from_store(p)?;
    let y = nets.residual_analysis.forward(p, x_res.tensor())?;
    Ok(LatentTensor::new(y, LayerTag::Enh, false))
}

pub fn synthesize_residual(y_hat: &LatentTensor, p: &ParameterStore) -> Result<ImageTensor> {
    if !y_hat.quantized || y_hat.layer != LayerTag::Enh {
        return Err(Error::Invalid("residual synthesis needs a quantized enh latent".into()));
    }
    let nets = Nets::from_store(p)?;
    expect_latent_shape(y_hat, nets.arch.l_enh)?;
    let mut t = nets.residual_synthesis.forward(p, y_hat.tensor())?;
    t.snap_to_grid();
    ImageTensor::new(t, ImageKind::Residual)
}

/// Reconstruction of the parallel baseline from its full joint latent.
pub fn synthesize_joint(y_hat: &LatentTensor, p: &ParameterStore) -> Result<ImageTensor> {
    if !y_hat.quantized || y_hat.layer != LayerTag::Joint {
        return Err(Error::Invalid("joint synthesis needs a quantized joint latent".into()));
    }
    let nets = Nets::from_store(p)?;
    expect_latent_shape(y_hat, nets.arch.l_base + nets.arch.l_enh)?;
    let mut t = nets.joint_synthesis.forward(p, y_hat.tensor())?;
    t.snap_to_grid();
    ImageTensor::new(t, ImageKind::Reconstruction)
}

/// `x - preview`, a residual-kind image.
pub fn residual_image(x: &ImageTensor, preview: &ImageTensor) -> Result<ImageTensor> {
    preview.expect_kind(ImageKind::Preview)?;
    let t = x.tensor().zip_map(preview.tensor(), |a, b| a - b)?;
    ImageTensor::new(t, ImageKind::Residual)
}

/// Preview plus decoded residual, clamped to `[0, 1]`. Exact on the pixel
/// grid: `reconstruct(p, x - p) == x`.
pub fn reconstruct(preview: &ImageTensor, residual_hat: &ImageTensor) -> Result<ImageTensor> {
    preview.expect_kind(ImageKind::Preview)?;
    residual_hat.expect_kind(ImageKind::Residual)?;
    let t = preview
        .tensor()
        .zip_map(residual_hat.tensor(), |a, b| (a + b).clamp(0.0, 1.0))?;
    ImageTensor::new(t, ImageKind::Reconstruction)
}

/// Image tensor from raw values, e.g. for tests.
pub fn image(t: Tensor, kind: ImageKind) -> Result<ImageTensor> {
    ImageTensor::new(t, kind)
}
