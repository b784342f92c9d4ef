use std::ops::Range;

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::{LatentTensor, LayerTag, Tensor};

use super::range_coder::FREQ_TOTAL;

pub const DEFAULT_S_MAX: i32 = 64;
/// Probability mass reserved for the uniform floor over the support.
pub const DEFAULT_ESCAPE: f64 = 1.0 / 65536.0;
/// Bounds applied to the learned log-scale after each optimizer step.
pub const LOG_SCALE_MIN: f64 = -3.0;
pub const LOG_SCALE_MAX: f64 = 4.6;

#[inline]
fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn logistic_density(t: f64) -> f64 {
    logistic(t) * logistic(-t)
}

/// `logistic(a) - logistic(b)` for `a >= b`, evaluated on whichever tail
/// keeps the subtraction well conditioned.
#[inline]
fn logistic_diff(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        logistic(-b) - logistic(-a)
    } else {
        logistic(a) - logistic(b)
    }
}

/// Probability and partial derivatives of the interval mass at one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassGrad {
    pub p: f64,
    pub d_value: f64,
    pub d_loc: f64,
    pub d_log_scale: f64,
}

/// Per-channel discretized logistic over the integers `-s_max..=s_max`,
/// mixed with a uniform floor of total mass `escape`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyModel {
    pub layer: LayerTag,
    loc: Vec<f64>,
    scale: Vec<f64>,
    s_max: i32,
    escape: f64,
}

impl EntropyModel {
    pub fn new(
        layer: LayerTag,
        loc: Vec<f64>,
        scale: Vec<f64>,
        s_max: i32,
        escape: f64,
    ) -> Result<Self> {
        if loc.len() != scale.len() {
            return Err(Error::Entropy(format!(
                "{} locations but {} scales",
                loc.len(),
                scale.len()
            )));
        }
        if s_max < 1 || (2 * s_max + 1) as u32 > FREQ_TOTAL / 2 {
            return Err(Error::Entropy(format!("symbol bound {s_max} out of range")));
        }
        if !(0.0..1.0).contains(&escape) {
            return Err(Error::Entropy(format!("escape mass {escape} not in [0, 1)")));
        }
        if let Some(s) = scale.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Entropy(format!("scale {s} must be positive and finite")));
        }
        if let Some(m) = loc.iter().find(|m| !m.is_finite()) {
            return Err(Error::Entropy(format!("location {m} must be finite")));
        }
        Ok(EntropyModel {
            layer,
            loc,
            scale,
            s_max,
            escape,
        })
    }

    /// Read `{prefix}.em.loc` and `{prefix}.em.log_scale` from a store.
    pub fn from_store(
        store: &ParameterStore,
        prefix: &str,
        layer: LayerTag,
        s_max: i32,
    ) -> Result<Self> {
        let loc = store
            .get(&format!("{prefix}.em.loc"))
            .ok_or_else(|| Error::Entropy(format!("missing `{prefix}.em.loc`")))?
            .to_f64();
        let scale = store
            .get(&format!("{prefix}.em.log_scale"))
            .ok_or_else(|| Error::Entropy(format!("missing `{prefix}.em.log_scale`")))?
            .to_f64()
            .into_iter()
            .map(f64::exp)
            .collect();
        Self::new(layer, loc, scale, s_max, DEFAULT_ESCAPE)
    }

    pub fn channels(&self) -> usize {
        self.loc.len()
    }

    pub fn s_max(&self) -> i32 {
        self.s_max
    }

    pub fn escape(&self) -> f64 {
        self.escape
    }

    pub fn loc(&self, c: usize) -> f64 {
        self.loc[c]
    }

    pub fn scale(&self, c: usize) -> f64 {
        self.scale[c]
    }

    pub fn symbols(&self) -> usize {
        (2 * self.s_max + 1) as usize
    }

    /// Channels `range` as a standalone model tagged `layer`.
    pub fn subset(&self, range: Range<usize>, layer: LayerTag) -> Result<Self> {
        if range.end > self.channels() || range.is_empty() {
            return Err(Error::Entropy(format!(
                "channel range {range:?} outside 0..{}",
                self.channels()
            )));
        }
        Ok(EntropyModel {
            layer,
            loc: self.loc[range.clone()].to_vec(),
            scale: self.scale[range].to_vec(),
            s_max: self.s_max,
            escape: self.escape,
        })
    }

    /// Interval mass of `[value - 0.5, value + 0.5]` under channel `c`,
    /// renormalized to the truncated support and floored.
    pub fn mass(&self, c: usize, value: f64) -> f64 {
        let (mu, sigma) = (self.loc[c], self.scale[c]);
        let s = f64::from(self.s_max);
        let d = logistic_diff((value + 0.5 - mu) / sigma, (value - 0.5 - mu) / sigma);
        let z = logistic_diff((s + 0.5 - mu) / sigma, (-s - 0.5 - mu) / sigma);
        (1.0 - self.escape) * d / z + self.escape / self.symbols() as f64
    }

    pub fn mass_grad(&self, c: usize, value: f64) -> MassGrad {
        let (mu, sigma) = (self.loc[c], self.scale[c]);
        let s = f64::from(self.s_max);
        let a = (value + 0.5 - mu) / sigma;
        let b = (value - 0.5 - mu) / sigma;
        let zu = (s + 0.5 - mu) / sigma;
        let zl = (-s - 0.5 - mu) / sigma;
        let d = logistic_diff(a, b);
        let z = logistic_diff(zu, zl);
        let (pa, pb) = (logistic_density(a), logistic_density(b));
        let (pu, pl) = (logistic_density(zu), logistic_density(zl));

        let dd_value = (pa - pb) / sigma;
        let dd_loc = -dd_value;
        let dd_ls = -(pa * a - pb * b);
        let dz_loc = -(pu - pl) / sigma;
        let dz_ls = -(pu * zu - pl * zl);

        let k = (1.0 - self.escape) / (z * z);
        MassGrad {
            p: (1.0 - self.escape) * d / z + self.escape / self.symbols() as f64,
            d_value: (1.0 - self.escape) * dd_value / z,
            d_loc: k * (dd_loc * z - d * dz_loc),
            d_log_scale: k * (dd_ls * z - d * dz_ls),
        }
    }

    /// Probability of integer symbol `q` in channel `c`.
    pub fn pmf(&self, c: usize, q: i32) -> Result<f64> {
        if c >= self.channels() {
            return Err(Error::Entropy(format!("channel {c} out of range")));
        }
        if q.abs() > self.s_max {
            return Err(Error::Entropy(format!(
                "symbol {q} outside [-{0}, {0}]",
                self.s_max
            )));
        }
        Ok(self.mass(c, f64::from(q)))
    }

    /// Cumulative frequency table for channel `c` with `FREQ_TOTAL` total
    /// and every symbol given at least one count.
    pub fn cdf(&self, c: usize) -> Vec<u32> {
        let n = self.symbols();
        let total = i64::from(FREQ_TOTAL);
        let mut freq: Vec<i64> = (-self.s_max..=self.s_max)
            .map(|q| ((self.mass(c, f64::from(q)) * total as f64).round() as i64).max(1))
            .collect();
        let mut diff = total - freq.iter().sum::<i64>();
        while diff != 0 {
            let (i, &fmax) = freq
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.cmp(y.1).then(y.0.cmp(&x.0)))
                .expect("non-empty support");
            if diff > 0 {
                freq[i] += diff;
                diff = 0;
            } else {
                let take = (-diff).min(fmax - 1);
                freq[i] -= take;
                diff += take;
            }
        }
        let mut cdf = Vec::with_capacity(n + 1);
        let mut acc = 0u32;
        cdf.push(0);
        for f in freq {
            acc += f as u32;
            cdf.push(acc);
        }
        cdf
    }
}

/// Ideal code length in bits of a latent under `model`: `-sum log2 p`.
///
/// Quantized latents are scored at their integer symbols; relaxed latents
/// use the interval mass at their real-valued positions.
pub fn estimate_rate_bits(y_hat: &LatentTensor, model: &EntropyModel) -> Result<f64> {
    let t = y_hat.tensor();
    if t.channels() != model.channels() {
        return Err(Error::Entropy(format!(
            "latent has {} channels, model {}",
            t.channels(),
            model.channels()
        )));
    }
    let mut bits = 0.0;
    for c in 0..t.channels() {
        for &v in t.channel(c) {
            let p = if y_hat.quantized {
                model.pmf(c, v as i32)?
            } else {
                model.mass(c, v)
            };
            bits -= p.log2();
        }
    }
    Ok(bits)
}

/// Rate in bits of a relaxed latent together with its gradients.
#[derive(Debug, Clone)]
pub struct RateGrad {
    pub bits: f64,
    pub d_latent: Tensor,
    pub d_loc: Vec<f64>,
    pub d_log_scale: Vec<f64>,
}

pub fn rate_with_grad(latent: &Tensor, model: &EntropyModel) -> Result<RateGrad> {
    if latent.channels() != model.channels() {
        return Err(Error::Entropy(format!(
            "latent has {} channels, model {}",
            latent.channels(),
            model.channels()
        )));
    }
    let [c, h, w] = latent.shape();
    let mut d_latent = Tensor::zeros(c, h, w);
    let mut d_loc = vec![0.0; c];
    let mut d_log_scale = vec![0.0; c];
    let mut bits = 0.0;
    let plane = h * w;
    let inv_ln2 = std::f64::consts::LOG2_E;
    for ch in 0..c {
        for i in 0..plane {
            let idx = ch * plane + i;
            let g = model.mass_grad(ch, latent.data()[idx]);
            bits -= g.p.log2();
            let k = -inv_ln2 / g.p;
            d_latent.data_mut()[idx] = k * g.d_value;
            d_loc[ch] += k * g.d_loc;
            d_log_scale[ch] += k * g.d_log_scale;
        }
    }
    Ok(RateGrad {
        bits,
        d_latent,
        d_loc,
        d_log_scale,
    })
}
