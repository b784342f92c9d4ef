//! Exact entropies of a deterministic discrete encoder.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IbCheck {
    pub h_x: f64,
    pub h_y: f64,
    pub h_y_given_x: f64,
    pub i_xy: f64,
}

fn entropy(p: impl IntoIterator<Item = f64>) -> f64 {
    p.into_iter().filter(|&v| v > 0.0).map(|v| -v * v.log2()).sum()
}

fn check_distribution(px: &[f64]) -> Result<()> {
    if px.is_empty() || px.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Eval("px must be a nonempty nonnegative vector".into()));
    }
    let total: f64 = px.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Eval(format!("px sums to {total}, not 1")));
    }
    Ok(())
}

/// Mutual information in bits of a joint table `pxy[x][y]`, computed as
/// `H(X) + H(Y) - H(X, Y)`.
pub fn mutual_information(pxy: &[Vec<f64>]) -> f64 {
    let ny = pxy.iter().map(Vec::len).max().unwrap_or(0);
    let px = pxy.iter().map(|r| r.iter().sum::<f64>());
    let py = (0..ny).map(|y| pxy.iter().map(|r| r.get(y).copied().unwrap_or(0.0)).sum::<f64>());
    entropy(px) + entropy(py) - entropy(pxy.iter().flatten().copied())
}

/// Entropies of `Y = table[X]` for `X ~ px`, by enumeration.
///
/// `H(Y|X)` is computed from the conditional distributions, which are point
/// masses for a table, so it is exactly zero; `I(X;Y)` is computed from the
/// joint distribution independently of `H(Y)`.
pub fn ib_discrete_check(table: &[usize], px: &[f64]) -> Result<IbCheck> {
    if table.len() != px.len() {
        return Err(Error::Eval(format!(
            "table has {} inputs, px {}",
            table.len(),
            px.len()
        )));
    }
    check_distribution(px)?;
    let ny = table.iter().max().map_or(0, |m| m + 1);
    let mut pxy = vec![vec![0.0; ny]; px.len()];
    for (x, (&y, &p)) in table.iter().zip(px).enumerate() {
        pxy[x][y] = p;
    }
    let mut py = vec![0.0; ny];
    for (&y, &p) in table.iter().zip(px) {
        py[y] += p;
    }
    let h_y_given_x = pxy
        .iter()
        .zip(px)
        .filter(|(_, &p)| p > 0.0)
        .map(|(row, &p)| p * entropy(row.iter().map(|v| v / p)))
        .sum();
    Ok(IbCheck {
        h_x: entropy(px.iter().copied()),
        h_y: entropy(py),
        h_y_given_x,
        i_xy: mutual_information(&pxy),
    })
}
