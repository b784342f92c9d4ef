//! Bjøntegaard delta rate with a shape-preserving interpolant.

use serde::Serialize;

use super::curve::RateQualityCurve;
use crate::error::{Error, Result};

/// Samples used to average the log-rate difference.
pub const SAMPLES: usize = 1000;
/// Overlaps shorter than this fraction of either curve's quality span get a
/// warning.
pub const SHORT_OVERLAP: f64 = 0.1;

/// Monotone piecewise cubic Hermite interpolant (Fritsch-Carlson).
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    /// `x` must be strictly increasing with at least two knots.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::Eval("interpolation needs at least 2 matching knots".into()));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Eval("interpolation knots must be strictly increasing".into()));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d.fill(delta[0]);
            return Ok(Pchip { x, y, d });
        }
        for k in 1..n - 1 {
            if delta[k - 1] * delta[k] > 0.0 {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
            }
        }
        d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
        d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        Ok(Pchip { x, y, d })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }
}

/// Three-point end slope, limited to keep the interpolant monotone.
fn end_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BdRate {
    pub percent: f64,
    pub overlap: (f64, f64),
    pub warning: Option<String>,
}

fn log_rate_interpolant(c: &RateQualityCurve) -> Result<Pchip> {
    if c.len() < 4 {
        return Err(Error::Eval(format!(
            "{}: BD-Rate needs at least 4 points, got {}",
            c.label,
            c.len()
        )));
    }
    if !c.violations().is_empty() || c.points().windows(2).any(|w| w[1].quality == w[0].quality) {
        return Err(Error::Eval(format!(
            "{}: quality must increase strictly with rate",
            c.label
        )));
    }
    Pchip::new(
        c.points().iter().map(|p| p.quality).collect(),
        c.points().iter().map(|p| p.bpp.log10()).collect(),
    )
}

/// Average rate difference of `test` relative to `reference` at equal
/// quality, in percent. Negative means `test` needs fewer bits.
pub fn bd_rate(reference: &RateQualityCurve, test: &RateQualityCurve) -> Result<BdRate> {
    let fr = log_rate_interpolant(reference)?;
    let ft = log_rate_interpolant(test)?;
    let span = |c: &RateQualityCurve| {
        (c.points()[0].quality, c.points()[c.len() - 1].quality)
    };
    let (r0, r1) = span(reference);
    let (t0, t1) = span(test);
    let (lo, hi) = (r0.max(t0), r1.min(t1));
    if hi <= lo {
        return Err(Error::Eval(format!(
            "no quality overlap between {} [{r0}, {r1}] and {} [{t0}, {t1}]",
            reference.label, test.label
        )));
    }
    let width = hi - lo;
    let warning = (width < SHORT_OVERLAP * (r1 - r0) || width < SHORT_OVERLAP * (t1 - t0))
        .then(|| format!("quality overlap [{lo}, {hi}] is under 10% of a curve's span"));
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    // Trapezoid rule over uniform samples.
    let step = width / (SAMPLES - 1) as f64;
    let mut acc = 0.0;
    for i in 0..SAMPLES {
        let q = if i == SAMPLES - 1 { hi } else { lo + step * i as f64 };
        let w = if i == 0 || i == SAMPLES - 1 { 0.5 } else { 1.0 };
        acc += w * (ft.eval(q) - fr.eval(q));
    }
    let mean = acc / (SAMPLES - 1) as f64;
    Ok(BdRate {
        percent: (10f64.powf(mean) - 1.0) * 100.0,
        overlap: (lo, hi),
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pchip_interpolates_and_stays_monotone() {
        let p = Pchip::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 1.0, 5.0]).unwrap();
        for (x, y) in [(0.0, 0.0), (1.0, 1.0), (2.0, 1.0), (3.0, 5.0)] {
            assert!((p.eval(x) - y).abs() < 1e-12);
        }
        let mut prev = p.eval(0.0);
        for i in 1..=300 {
            let v = p.eval(i as f64 * 0.01);
            assert!(v >= prev - 1e-12);
            prev = v;
        }
        // Flat between equal knots.
        assert!((p.eval(1.5) - 1.0).abs() < 1e-12);
        let line = Pchip::new(vec![0.0, 2.0, 3.0, 7.0], vec![1.0, 5.0, 7.0, 15.0]).unwrap();
        assert!((line.eval(4.5) - 10.0).abs() < 1e-12);
    }
}
