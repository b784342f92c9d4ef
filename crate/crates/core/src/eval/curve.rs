use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityKind {
    /// Top-1 accuracy in percent.
    Accuracy,
    Psnr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub bpp: f64,
    pub quality: f64,
}

/// Rate-quality operating points sorted by strictly increasing bpp.
///
/// Quality is expected to rise with rate. Points that break this are kept
/// and reported by [`RateQualityCurve::violations`]; callers decide whether
/// to use [`RateQualityCurve::pareto_frontier`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateQualityCurve {
    pub label: String,
    pub kind: QualityKind,
    points: Vec<Point>,
}

/// Points whose bpp differ by less than this are merged.
pub const DUPLICATE_BPP: f64 = 1e-9;

impl RateQualityCurve {
    /// Sort by bpp and merge near-duplicate rates (keeping the mean
    /// quality). Needs at least two distinct points.
    pub fn new(label: &str, kind: QualityKind, mut points: Vec<Point>) -> Result<Self> {
        if let Some(p) = points
            .iter()
            .find(|p| !(p.bpp.is_finite() && p.bpp > 0.0 && p.quality.is_finite()))
        {
            return Err(Error::Eval(format!(
                "{label}: invalid point ({}, {})",
                p.bpp, p.quality
            )));
        }
        points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        let mut merged: Vec<(Point, usize)> = Vec::with_capacity(points.len());
        for p in points {
            match merged.last_mut() {
                Some((q, n)) if p.bpp - q.bpp < DUPLICATE_BPP => {
                    log::warn!("{label}: merging points at bpp {}", q.bpp);
                    q.quality = (q.quality * *n as f64 + p.quality) / (*n + 1) as f64;
                    *n += 1;
                }
                _ => merged.push((p, 1)),
            }
        }
        if merged.len() < 2 {
            return Err(Error::Eval(format!(
                "{label}: a curve needs at least 2 distinct points, got {}",
                merged.len()
            )));
        }
        Ok(RateQualityCurve {
            label: label.to_string(),
            kind,
            points: merged.into_iter().map(|(p, _)| p).collect(),
        })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Adjacent pairs `(i, i + 1)` where quality falls as rate rises.
    pub fn violations(&self) -> Vec<(usize, usize)> {
        self.points
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1].quality < w[0].quality)
            .map(|(i, _)| (i, i + 1))
            .collect()
    }

    /// Largest quality drop across adjacent points, or 0.
    pub fn worst_violation(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[0].quality - w[1].quality)
            .fold(0.0, f64::max)
    }

    /// Points not dominated by a cheaper point of equal or higher quality.
    /// The result has strictly increasing bpp and quality.
    pub fn pareto_frontier(&self) -> (RateQualityCurve, Vec<Point>) {
        let mut kept: Vec<Point> = Vec::new();
        let mut dropped = Vec::new();
        for &p in &self.points {
            match kept.last() {
                Some(q) if p.quality <= q.quality => dropped.push(p),
                _ => kept.push(p),
            }
        }
        (
            RateQualityCurve {
                label: self.label.clone(),
                kind: self.kind,
                points: kept,
            },
            dropped,
        )
    }

    /// Copy with every bpp multiplied by `k`.
    pub fn scale_rate(&self, k: f64) -> Result<Self> {
        let pts = self.points.iter().map(|p| Point { bpp: p.bpp * k, quality: p.quality }).collect();
        Self::new(&self.label, self.kind, pts)
    }

    /// Copy with `delta` added to every quality value.
    pub fn shift_quality(&self, delta: f64) -> Result<Self> {
        let pts = self.points.iter().map(|p| Point { bpp: p.bpp, quality: p.quality + delta }).collect();
        Self::new(&self.label, self.kind, pts)
    }

    /// `bpp,quality` CSV with 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bpp,quality\n");
        for p in &self.points {
            out.push_str(&format!("{},{}\n", sig9(p.bpp), sig9(p.quality)));
        }
        out
    }

    pub fn from_csv(label: &str, kind: QualityKind, text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| Error::Eval(format!("{label}: {e}")))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["bpp", "quality"] {
            return Err(Error::Eval(format!("{label}: header must be `bpp,quality`")));
        }
        let mut points = Vec::new();
        for (i, row) in rdr.deserialize::<Point>().enumerate() {
            points.push(row.map_err(|e| Error::Eval(format!("{label}: row {}: {e}", i + 2)))?);
        }
        Self::new(label, kind, points)
    }
}

/// Format with 9 significant digits, without exponent for ordinary values.
pub fn sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    if (-5..=15).contains(&mag) {
        let decimals = (8 - mag).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.8e}")
    }
}
