//! Training objectives and their gradients.
//!
//! Each loss is a batch mean of per-image terms. Rates are in bits per
//! pixel of the input image and use the interval mass of noise-relaxed
//! latents; distortions are global means of squared differences.

use rand::Rng;

use crate::entropy::{rate_with_grad, EntropyModel};
use crate::error::{Error, Result};
use crate::nn::Stack;
use crate::params::{Gradients, ParameterStore};
use crate::tensor::{LayerTag, Tensor};
use crate::transforms::{s_max_of, Nets};

/// One training image with the proxy features of its clean version.
#[derive(Debug, Clone)]
pub struct Example {
    pub x: Tensor,
    pub f_ref: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BaseParts {
    pub loss: f64,
    pub rate_bpp: f64,
    pub distortion: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnhParts {
    pub loss: f64,
    pub rate_bpp: f64,
    pub distortion: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointParts {
    pub loss: f64,
    pub rate_base: f64,
    pub rate_enh: f64,
    pub d_base: f64,
    pub d_enh: f64,
}

pub fn base_objective(rate_bpp: f64, distortion: f64, lambda_base: f64) -> f64 {
    rate_bpp + lambda_base * distortion
}

pub fn joint_objective(r_base: f64, r_enh: f64, d_base: f64, d_enh: f64, lb: f64, le: f64) -> f64 {
    r_base + r_enh + lb * d_base + le * d_enh
}

fn add_noise(t: &Tensor, rng: &mut impl Rng) -> Tensor {
    let mut out = t.clone();
    for v in out.data_mut() {
        *v += rng.gen_range(-0.5..0.5);
    }
    out
}

/// `mean((a - b)^2)` and its gradient with respect to `a`, scaled by `k`.
fn mse_grad(a: &Tensor, b: &Tensor, k: f64) -> Result<(f64, Tensor)> {
    let d = crate::tensor::mse(a, b)?;
    let n = a.len() as f64;
    let g = a.zip_map(b, |x, y| k * 2.0 * (x - y) / n)?;
    Ok((d, g))
}

fn check_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Training(format!("non-finite {what}: {v}")))
    }
}

/// Rate of a relaxed latent in bpp, accumulating entropy-model gradients
/// scaled by `k` and returning the latent gradient.
fn rate_term(
    p: &ParameterStore,
    model: &EntropyModel,
    prefix: &str,
    channels: std::ops::Range<usize>,
    latent: &Tensor,
    pixels: f64,
    k: f64,
    grads: &mut Gradients,
) -> Result<(f64, Tensor)> {
    let r = rate_with_grad(latent, model)?;
    let scale = k / pixels;
    let total = p.index_of(&format!("{prefix}.em.loc")).map(|i| p.param(i).values.len());
    let total = total.ok_or_else(|| Error::Entropy(format!("missing `{prefix}.em.loc`")))?;
    for (suffix, g) in [("loc", &r.d_loc), ("log_scale", &r.d_log_scale)] {
        let idx = p.require(&format!("{prefix}.em.{suffix}"))?;
        let slot = grads.slot(idx, total);
        for (j, c) in channels.clone().enumerate() {
            slot[c] += scale * g[j];
        }
    }
    let mut d_latent = r.d_latent;
    d_latent.scale(scale);
    Ok((r.bits / pixels, d_latent))
}

fn full_model(p: &ParameterStore, prefix: &str, layer: LayerTag) -> Result<EntropyModel> {
    EntropyModel::from_store(p, prefix, layer, s_max_of(p))
}

fn backward_into(
    stack: &Stack,
    p: &ParameterStore,
    trace: &crate::nn::Trace,
    gy: Tensor,
    grads: &mut Gradients,
) -> Result<Tensor> {
    Ok(stack
        .backward(p, trace, gy, grads, true)?
        .expect("input gradient requested"))
}

/// Base-layer objective: rate of the noisy base latent plus `lambda_base`
/// times the feature MSE of its latent-space transform.
///
/// Gradients (batch means) are accumulated for `base.*` and `lst.*`.
pub fn base_loss(
    batch: &[Example],
    p: &ParameterStore,
    lambda_base: f64,
    rng: &mut impl Rng,
    grads: &mut Gradients,
) -> Result<BaseParts> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    let nets = Nets::from_store(p)?;
    let model = full_model(p, "base", LayerTag::Base)?;
    let k = 1.0 / batch.len() as f64;
    let mut sum = BaseParts::default();
    for ex in batch {
        let pixels = ex.x.plane() as f64;
        let ta = nets.base.forward_trace(p, &ex.x)?;
        let y = add_noise(ta.output(), rng);
        let tl = nets.lst.forward_trace(p, &y)?;
        let (d, gf) = mse_grad(tl.output(), &ex.f_ref, k * lambda_base)?;
        let (rate, mut gy) = rate_term(p, &model, "base", 0..model.channels(), &y, pixels, k, grads)?;
        gy.add_assign(&backward_into(&nets.lst, p, &tl, gf, grads)?);
        nets.base.backward(p, &ta, gy, grads, false)?;
        sum.rate_bpp += k * rate;
        sum.distortion += k * d;
    }
    sum.loss = check_finite("base loss", base_objective(sum.rate_bpp, sum.distortion, lambda_base))?;
    Ok(sum)
}

/// Clamp to `[0, 1]` with its pass-through mask.
fn clamp_unit(t: &Tensor) -> (Tensor, Vec<bool>) {
    let mask = t.data().iter().map(|v| (0.0..=1.0).contains(v)).collect();
    (t.map(|v| v.clamp(0.0, 1.0)), mask)
}

/// Enhancement objective with the base layer frozen.
///
/// `base_latents[i]` is the rounded base latent of `batch[i]`. The preview
/// `P(y_base)` and residual `x - P` are formed in-graph, so gradients reach
/// both `preview.*` and `residual.*`. Nothing is accumulated for `base.*`.
pub fn enhancement_loss(
    batch: &[Example],
    base_latents: &[Tensor],
    p: &ParameterStore,
    lambda_enh: f64,
    rng: &mut impl Rng,
    grads: &mut Gradients,
) -> Result<EnhParts> {
    if batch.is_empty() || batch.len() != base_latents.len() {
        return Err(Error::Training("batch and base latents must be nonempty and aligned".into()));
    }
    let nets = Nets::from_store(p)?;
    let model = full_model(p, "residual", LayerTag::Enh)?;
    let k = 1.0 / batch.len() as f64;
    let mut sum = EnhParts::default();
    for (ex, yb) in batch.iter().zip(base_latents) {
        let pixels = ex.x.plane() as f64;
        let tp = nets.preview.forward_trace(p, yb)?;
        let preview = tp.output();
        let residual = ex.x.zip_map(preview, |a, b| a - b)?;
        let ta = nets.residual_analysis.forward_trace(p, &residual)?;
        let y = add_noise(ta.output(), rng);
        let ts = nets.residual_synthesis.forward_trace(p, &y)?;
        let sum_img = preview.zip_map(ts.output(), |a, b| a + b)?;
        let (x_hat, mask) = clamp_unit(&sum_img);
        let (d, mut g_hat) = mse_grad(&x_hat, &ex.x, k * lambda_enh)?;
        for (g, m) in g_hat.data_mut().iter_mut().zip(&mask) {
            if !m {
                *g = 0.0;
            }
        }
        let (rate, mut gy) =
            rate_term(p, &model, "residual", 0..model.channels(), &y, pixels, k, grads)?;
        gy.add_assign(&backward_into(&nets.residual_synthesis, p, &ts, g_hat.clone(), grads)?);
        let g_res = backward_into(&nets.residual_analysis, p, &ta, gy, grads)?;
        let mut g_pre = g_hat;
        for (a, b) in g_pre.data_mut().iter_mut().zip(g_res.data()) {
            *a -= b;
        }
        nets.preview.backward(p, &tp, g_pre, grads, false)?;
        sum.rate_bpp += k * rate;
        sum.distortion += k * d;
    }
    sum.loss = check_finite("enhancement loss", sum.rate_bpp + lambda_enh * sum.distortion)?;
    Ok(sum)
}

/// Parallel baseline objective over one latent partitioned into base and
/// enhancement channels. The base slice alone feeds the latent-space
/// transform; the full latent feeds the reconstruction.
pub fn joint_loss(
    batch: &[Example],
    p: &ParameterStore,
    lambda_base: f64,
    lambda_enh: f64,
    rng: &mut impl Rng,
    grads: &mut Gradients,
) -> Result<JointParts> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    let nets = Nets::from_store(p)?;
    let lb = nets.arch.l_base;
    let total = lb + nets.arch.l_enh;
    let model = full_model(p, "joint", LayerTag::Joint)?;
    let base_model = model.subset(0..lb, LayerTag::Base)?;
    let enh_model = model.subset(lb..total, LayerTag::Enh)?;
    let k = 1.0 / batch.len() as f64;
    let mut sum = JointParts::default();
    for ex in batch {
        let pixels = ex.x.plane() as f64;
        let ta = nets.joint_analysis.forward_trace(p, &ex.x)?;
        let y = add_noise(ta.output(), rng);
        let yb = y.slice_channels(0..lb);
        let ye = y.slice_channels(lb..total);
        let (r_b, gb) = rate_term(p, &base_model, "joint", 0..lb, &yb, pixels, k, grads)?;
        let (r_e, ge) = rate_term(p, &enh_model, "joint", lb..total, &ye, pixels, k, grads)?;
        let mut gy = gb.concat_channels(&ge)?;

        let tl = nets.lst.forward_trace(p, &yb)?;
        let (db, gf) = mse_grad(tl.output(), &ex.f_ref, k * lambda_base)?;
        let g_lst = backward_into(&nets.lst, p, &tl, gf, grads)?;
        for (a, b) in gy.data_mut()[..g_lst.len()].iter_mut().zip(g_lst.data()) {
            *a += b;
        }

        let ts = nets.joint_synthesis.forward_trace(p, &y)?;
        let (de, gx) = mse_grad(ts.output(), &ex.x, k * lambda_enh)?;
        gy.add_assign(&backward_into(&nets.joint_synthesis, p, &ts, gx, grads)?);
        nets.joint_analysis.backward(p, &ta, gy, grads, false)?;

        sum.rate_base += k * r_b;
        sum.rate_enh += k * r_e;
        sum.d_base += k * db;
        sum.d_enh += k * de;
    }
    sum.loss = check_finite(
        "joint loss",
        joint_objective(sum.rate_base, sum.rate_enh, sum.d_base, sum.d_enh, lambda_base, lambda_enh),
    )?;
    Ok(sum)
}
