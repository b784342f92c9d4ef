//! Quality metrics, rate-quality curves, BD-Rate, the break-even viewing
//! fraction, the discrete information-bottleneck check and report output.

pub mod bdrate;
pub mod curve;
pub mod ib;

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::codec::{encode_image, run_direct, Layers};
use crate::data::LabeledDataset;
use crate::entropy::container::{HEADER_LEN, LAYER_RECORD_LEN};
use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::{mse, ImageTensor};

pub use bdrate::{bd_rate, BdRate, Pchip};
pub use curve::{Point, QualityKind, RateQualityCurve};
pub use ib::{ib_discrete_check, mutual_information, IbCheck};

/// PSNR reported for (near-)identical images.
pub const PSNR_CAP: f64 = 100.0;

/// Peak signal-to-noise ratio in dB for images with peak value 1.
pub fn psnr(x: &ImageTensor, x_hat: &ImageTensor) -> Result<f64> {
    Ok(psnr_from_mse(mse(x.tensor(), x_hat.tensor())?))
}

pub fn psnr_from_mse(m: f64) -> f64 {
    if m < 1e-10 {
        PSNR_CAP
    } else {
        -10.0 * m.log10()
    }
}

/// Bits per pixel of `bytes` coded bytes for an `h x w` image.
pub fn bpp(bytes: usize, h: usize, w: usize) -> Result<f64> {
    if h == 0 || w == 0 {
        return Err(Error::Eval("bpp of an empty image".into()));
    }
    Ok(8.0 * bytes as f64 / (h * w) as f64)
}

/// Sum in a fixed binary-tree order, so results do not depend on how the
/// terms were produced.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

pub fn mean(v: &[f64]) -> f64 {
    pairwise_sum(v) / v.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BreakEvenInput {
    /// Base rate over the single-layer rate.
    pub r_b: f64,
    /// Base plus enhancement rate over the single-layer rate.
    pub r_t: f64,
}

/// Expected rate of the scalable codec relative to a single-layer codec
/// when a fraction `f` of images is also viewed by humans.
pub fn relative_rate(input: BreakEvenInput, f: f64) -> f64 {
    (1.0 - f) * input.r_b + f * input.r_t
}

/// Largest viewing fraction `f` in `[0, 1]` with `relative_rate <= 1`.
pub fn break_even(input: BreakEvenInput) -> Result<f64> {
    let BreakEvenInput { r_b, r_t } = input;
    if !(r_b.is_finite() && r_t.is_finite() && r_b > 0.0 && r_t > 0.0) {
        return Err(Error::Eval(format!("rate ratios must be positive, got r_b={r_b}, r_t={r_t}")));
    }
    if r_t > r_b {
        Ok(((1.0 - r_b) / (r_t - r_b)).clamp(0.0, 1.0))
    } else if r_t <= 1.0 {
        // Non-increasing in f, so f = 1 is feasible exactly when r_t <= 1.
        Ok(1.0)
    } else {
        Ok(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Task accuracy from the base layer alone.
    Accuracy,
    /// Reconstruction PSNR from both layers.
    Psnr,
}

impl Metric {
    pub fn layers(self) -> Layers {
        match self {
            Metric::Accuracy => Layers::Base,
            Metric::Psnr => Layers::BaseEnh,
        }
    }

    pub fn kind(self) -> QualityKind {
        match self {
            Metric::Accuracy => QualityKind::Accuracy,
            Metric::Psnr => QualityKind::Psnr,
        }
    }
}

/// Mean bpp and mean quality of one checkpoint over a dataset.
///
/// With `coder` on, rate is the length of the actual `.shmc` container.
/// Bypassed, it is the ideal code length of the latents plus the same
/// container overhead. Quality does not depend on `coder`.
pub fn operating_point(
    store: &ParameterStore,
    data: &LabeledDataset,
    metric: Metric,
    coder: bool,
) -> Result<Point> {
    if data.is_empty() {
        return Err(Error::Eval("operating point over an empty dataset".into()));
    }
    let layers = metric.layers();
    let overhead = HEADER_LEN
        + LAYER_RECORD_LEN * match layers {
            Layers::Base => 1,
            Layers::BaseEnh => 2,
        };
    let mut rates = Vec::with_capacity(data.len());
    let mut quality = Vec::with_capacity(data.len());
    for (x, label) in data.iter() {
        let d = run_direct(x, store, layers)?;
        let pixels = (x.height() * x.width()) as f64;
        rates.push(if coder {
            bpp(encode_image(x, store, layers)?.len(), x.height(), x.width())?
        } else {
            (d.estimated_bits + 8.0 * overhead as f64) / pixels
        });
        quality.push(match metric {
            Metric::Accuracy => {
                if d.task.label == label {
                    100.0
                } else {
                    0.0
                }
            }
            Metric::Psnr => psnr(x, d.image.as_ref().expect("both layers requested"))?,
        });
    }
    Ok(Point {
        bpp: mean(&rates),
        quality: mean(&quality),
    })
}

/// One operating point per checkpoint, sorted by rate.
pub fn build_curve(
    label: &str,
    checkpoints: &[&ParameterStore],
    data: &LabeledDataset,
    metric: Metric,
    coder: bool,
) -> Result<RateQualityCurve> {
    let points = checkpoints
        .iter()
        .map(|s| operating_point(s, data, metric, coder))
        .collect::<Result<Vec<_>>>()?;
    RateQualityCurve::new(label, metric.kind(), points)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BdEntry {
    pub reference: String,
    pub test: String,
    pub bd_rate_percent: f64,
    pub overlap: (f64, f64),
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakEvenEntry {
    pub label: String,
    pub r_b: f64,
    pub r_t: f64,
    pub f_threshold: f64,
}

#[derive(Serialize)]
struct CurveEntry<'a> {
    label: &'a str,
    kind: QualityKind,
    file: String,
    points: usize,
}

#[derive(Serialize)]
struct Summary<'a> {
    curves: Vec<CurveEntry<'a>>,
    bd_rate: &'a [BdEntry],
    break_even: &'a [BreakEvenEntry],
    config_hashes: &'a BTreeMap<String, String>,
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Write one `<label>.csv` per curve and `summary.json` into `dir`.
pub fn emit_report(
    curves: &[RateQualityCurve],
    bd: &[BdEntry],
    break_even: &[BreakEvenEntry],
    config_hashes: &BTreeMap<String, String>,
    dir: &Path,
) -> Result<()> {
    if curves.is_empty() {
        return Err(Error::Eval("report needs at least one curve".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(curves.len());
    for c in curves {
        let file = format!("{}.csv", file_stem(&c.label));
        let path = dir.join(&file);
        std::fs::write(&path, c.to_csv()).map_err(|e| Error::io(&path, e))?;
        entries.push(CurveEntry {
            label: &c.label,
            kind: c.kind,
            file,
            points: c.len(),
        });
    }
    let summary = Summary {
        curves: entries,
        bd_rate: bd,
        break_even,
        config_hashes,
    };
    let path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Eval(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
