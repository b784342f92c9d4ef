//! Encode and decode pipelines over a trained checkpoint store.
//!
//! A store is either *sequential* (base, latent transform, preview and
//! residual coder) or *joint* (the parallel baseline). Both produce the same
//! two-layer container: a base layer that suffices for the task and an
//! optional enhancement layer for reconstruction.
//!
//! The container carries a checksum of exactly the parameters needed to
//! decode the layers it holds, so a base-only stream decodes with any
//! checkpoint that shares the base layer.

use crate::entropy::{
    decode_layer, encode_layer, estimate_rate_bits, pack_container, unpack_container,
    Container, EntropyModel, LayerRecord,
};
use crate::error::{Error, Result};
use crate::params::{ParameterStore, Role};
use crate::taskproxy::{argmax, classify_from_features};
use crate::tensor::{FeatureMap, ImageKind, ImageTensor, LatentTensor, LayerTag, Tensor};
use crate::transforms::{
    analyze_base, analyze_joint, analyze_residual, architecture_of, concat_latent, lst_apply,
    reconstruct, residual_image, s_max_of, split_latent, synthesize_joint, synthesize_preview,
    synthesize_residual,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Sequential,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layers {
    Base,
    BaseEnh,
}

impl std::str::FromStr for Layers {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Layers::Base),
            "base+enh" => Ok(Layers::BaseEnh),
            _ => Err(Error::Invalid(format!("layers must be `base` or `base+enh`, got `{s}`"))),
        }
    }
}

pub fn family(store: &ParameterStore) -> Result<Family> {
    match (store.has_role(Role::Base), store.has_role(Role::Joint)) {
        (true, false) => Ok(Family::Sequential),
        (false, true) => Ok(Family::Joint),
        (true, true) => Err(Error::Checkpoint(
            "store holds both sequential and joint parameters".into(),
        )),
        (false, false) => Err(Error::Checkpoint("store holds no codec parameters".into())),
    }
}

/// Roles whose bytes a stream with `layers` depends on.
pub fn stream_roles(family: Family, layers: Layers) -> Vec<Role> {
    match (family, layers) {
        (Family::Sequential, Layers::Base) => vec![Role::Base, Role::Lst, Role::TaskProxy],
        (Family::Sequential, Layers::BaseEnh) => vec![
            Role::Base,
            Role::Lst,
            Role::TaskProxy,
            Role::Preview,
            Role::Residual,
        ],
        (Family::Joint, _) => vec![Role::Joint, Role::Lst, Role::TaskProxy],
    }
}

pub fn stream_hash(store: &ParameterStore, layers: Layers) -> Result<u32> {
    Ok(store.role_hash(&stream_roles(family(store)?, layers)))
}

fn round(y: &LatentTensor, store: &ParameterStore) -> LatentTensor {
    let s = f64::from(s_max_of(store));
    let t = y.tensor().map(|v| v.round_ties_even().clamp(-s, s));
    LatentTensor::new(t, y.layer, true)
}

/// Entropy models for the base and enhancement layers of a store.
pub fn layer_models(store: &ParameterStore) -> Result<(EntropyModel, EntropyModel)> {
    let s_max = s_max_of(store);
    match family(store)? {
        Family::Sequential => Ok((
            EntropyModel::from_store(store, "base", LayerTag::Base, s_max)?,
            EntropyModel::from_store(store, "residual", LayerTag::Enh, s_max)?,
        )),
        Family::Joint => {
            let a = architecture_of(store)?;
            let m = EntropyModel::from_store(store, "joint", LayerTag::Joint, s_max)?;
            Ok((
                m.subset(0..a.l_base, LayerTag::Base)?,
                m.subset(a.l_base..a.l_base + a.l_enh, LayerTag::Enh)?,
            ))
        }
    }
}

/// Rounded latents of both layers as the encoder sees them, plus the
/// sequential preview when there is one.
pub struct Analysis {
    pub base: LatentTensor,
    pub enh: Option<LatentTensor>,
    pub preview: Option<ImageTensor>,
}

pub fn analyze(x: &ImageTensor, store: &ParameterStore, layers: Layers) -> Result<Analysis> {
    match family(store)? {
        Family::Sequential => {
            let base = round(&analyze_base(x, store)?, store);
            if layers == Layers::Base {
                return Ok(Analysis {
                    base,
                    enh: None,
                    preview: None,
                });
            }
            let preview = synthesize_preview(&base, store)?;
            let res = residual_image(x, &preview)?;
            let enh = round(&analyze_residual(&res, store)?, store);
            Ok(Analysis {
                base,
                enh: Some(enh),
                preview: Some(preview),
            })
        }
        Family::Joint => {
            let a = architecture_of(store)?;
            let y = round(&analyze_joint(x, store)?, store);
            let (base, enh) = split_latent(&y, a.l_base)?;
            Ok(Analysis {
                base,
                enh: (layers == Layers::BaseEnh).then_some(enh),
                preview: None,
            })
        }
    }
}

fn record(y: &LatentTensor, model: &EntropyModel, tag: LayerTag) -> Result<LayerRecord> {
    let [c, h, w] = y.shape();
    let dim = |v: usize| {
        u16::try_from(v).map_err(|_| Error::Bitstream(format!("dimension {v} exceeds 65535")))
    };
    Ok(LayerRecord {
        layer: tag,
        channels: dim(c)?,
        height: dim(h)?,
        width: dim(w)?,
        payload: encode_layer(y, model)?,
    })
}

/// Encode an input image into a `.shmc` container.
pub fn encode_image(x: &ImageTensor, store: &ParameterStore, layers: Layers) -> Result<Vec<u8>> {
    let a = analyze(x, store, layers)?;
    let (mb, me) = layer_models(store)?;
    let mut records = vec![record(&a.base, &mb, LayerTag::Base)?];
    if let Some(enh) = &a.enh {
        records.push(record(enh, &me, LayerTag::Enh)?);
    }
    pack_container(records, x.height(), x.width(), stream_hash(store, layers)?)
}

fn open(bytes: &[u8], store: &ParameterStore) -> Result<(Container, Layers)> {
    let c = unpack_container(bytes)?;
    let layers = if c.layer(LayerTag::Enh).is_some() {
        Layers::BaseEnh
    } else {
        Layers::Base
    };
    let expected = stream_hash(store, layers)?;
    if c.model_hash != expected {
        return Err(Error::Bitstream(format!(
            "model hash mismatch: stream {:08x}, checkpoint {expected:08x}",
            c.model_hash
        )));
    }
    Ok((c, layers))
}

fn decode_record(c: &Container, tag: LayerTag, model: &EntropyModel) -> Result<LatentTensor> {
    let r = c
        .layer(tag)
        .ok_or_else(|| Error::Bitstream(format!("stream lacks a {tag:?} layer")))?;
    let shape = [r.channels as usize, r.height as usize, r.width as usize];
    if shape[1] * 8 != c.height as usize || shape[2] * 8 != c.width as usize {
        return Err(Error::Bitstream(format!(
            "{tag:?} latent {}x{} does not match a {}x{} image",
            shape[1], shape[2], c.height, c.width
        )));
    }
    let y = decode_layer(&r.payload, model, shape)?;
    Ok(LatentTensor::new(y.into_tensor(), tag, true))
}

#[derive(Debug, Clone)]
pub struct TaskOutput {
    pub features: FeatureMap,
    pub probabilities: Vec<f64>,
    pub label: usize,
}

fn task_from_base(base: &LatentTensor, store: &ParameterStore) -> Result<TaskOutput> {
    let features = lst_apply(base, store)?;
    let probabilities = classify_from_features(&features, store)?;
    let label = argmax(&probabilities);
    Ok(TaskOutput {
        features,
        probabilities,
        label,
    })
}

/// Task prediction from the base layer of a stream.
pub fn decode_task(bytes: &[u8], store: &ParameterStore) -> Result<TaskOutput> {
    let (c, _) = open(bytes, store)?;
    let (mb, _) = layer_models(store)?;
    task_from_base(&decode_record(&c, LayerTag::Base, &mb)?, store)
}

fn synthesize(base: &LatentTensor, enh: Option<&LatentTensor>, store: &ParameterStore) -> Result<ImageTensor> {
    match family(store)? {
        Family::Sequential => {
            let preview = synthesize_preview(base, store)?;
            match enh {
                Some(e) => reconstruct(&preview, &synthesize_residual(e, store)?),
                None => Ok(preview),
            }
        }
        Family::Joint => {
            let e = enh.ok_or_else(|| {
                Error::Bitstream("the joint baseline needs both layers to reconstruct".into())
            })?;
            synthesize_joint(&concat_latent(base, e)?, store)
        }
    }
}

/// Reconstructed image. A sequential base-only stream yields the preview.
pub fn decode_image(bytes: &[u8], store: &ParameterStore) -> Result<ImageTensor> {
    let (c, layers) = open(bytes, store)?;
    let (mb, me) = layer_models(store)?;
    let base = decode_record(&c, LayerTag::Base, &mb)?;
    let enh = match layers {
        Layers::BaseEnh => Some(decode_record(&c, LayerTag::Enh, &me)?),
        Layers::Base => None,
    };
    synthesize(&base, enh.as_ref(), store)
}

/// Quality-side outputs of the in-memory pipeline, without entropy coding.
#[derive(Debug, Clone)]
pub struct Direct {
    pub task: TaskOutput,
    pub image: Option<ImageTensor>,
    /// Ideal code length of the latents in bits.
    pub estimated_bits: f64,
}

pub fn run_direct(x: &ImageTensor, store: &ParameterStore, layers: Layers) -> Result<Direct> {
    let a = analyze(x, store, layers)?;
    let (mb, me) = layer_models(store)?;
    let mut estimated_bits = estimate_rate_bits(&a.base, &mb)?;
    if let Some(e) = &a.enh {
        estimated_bits += estimate_rate_bits(e, &me)?;
    }
    let image = match layers {
        Layers::Base => None,
        Layers::BaseEnh => Some(match (&a.preview, &a.enh) {
            (Some(p), Some(e)) => reconstruct(p, &synthesize_residual(e, store)?)?,
            _ => synthesize(&a.base, a.enh.as_ref(), store)?,
        }),
    };
    Ok(Direct {
        task: task_from_base(&a.base, store)?,
        image,
        estimated_bits,
    })
}

/// Preview of the sequential codec, the reconstruction with an empty
/// enhancement layer.
pub fn preview_only(x: &ImageTensor, store: &ParameterStore) -> Result<ImageTensor> {
    if family(store)? != Family::Sequential {
        return Err(Error::Invalid("only the sequential codec has a preview".into()));
    }
    let a = analyze(x, store, Layers::Base)?;
    synthesize_preview(&a.base, store)
}

/// Zero residual image matching `x`.
pub fn zero_residual(x: &ImageTensor) -> Result<ImageTensor> {
    ImageTensor::new(Tensor::zeros(3, x.height(), x.width()), ImageKind::Residual)
}
