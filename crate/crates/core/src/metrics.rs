//! Utility metrics between the true distribution and a post-processed estimate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use crate::oracle::TransportPlan;

/// Floor applied to the estimate before normalizing inside KL.
pub const KL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    L1,
    L2,
    KL,
    EMD,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::L1,
        MetricKind::L2,
        MetricKind::KL,
        MetricKind::EMD,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::L1 => "L1",
            MetricKind::L2 => "L2",
            MetricKind::KL => "KL",
            MetricKind::EMD => "EMD",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        MetricKind::ALL
            .into_iter()
            .find(|m| m.name() == upper)
            .ok_or_else(|| Error::param(format!("unknown metric '{s}'")))
    }
}

fn same_len(f: &[f64], g: &[f64]) -> Result<()> {
    if f.len() == g.len() {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            left: f.len(),
            right: g.len(),
        })
    }
}

pub fn l1(f: &[f64], ftilde: &[f64]) -> Result<f64> {
    same_len(f, ftilde)?;
    Ok(f.iter().zip(ftilde).map(|(a, b)| (b - a).abs()).sum())
}

pub fn l2(f: &[f64], ftilde: &[f64]) -> Result<f64> {
    same_len(f, ftilde)?;
    Ok(f.iter()
        .zip(ftilde)
        .map(|(a, b)| (b - a).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// `sum_v f(v) ln(f(v) / g(v))` where `g` is `ftilde` floored at
/// [`KL_FLOOR`] and renormalized. A total within `1e-12` of one is treated
/// as already normalized, so identical inputs give exactly zero.
pub fn kl(f: &[f64], ftilde: &[f64]) -> Result<f64> {
    same_len(f, ftilde)?;
    if f.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::input("KL reference must be non-negative"));
    }
    let total: f64 = f.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::input(format!("KL reference sums to {total}, not 1")));
    }
    let clamped: Vec<f64> = ftilde
        .iter()
        .map(|&x| if x > KL_FLOOR { x } else { KL_FLOOR })
        .collect();
    let z: f64 = clamped.iter().sum();
    let z = if (z - 1.0).abs() <= 1e-12 { 1.0 } else { z };
    Ok(f.iter()
        .zip(&clamped)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &g)| p * (p / (g / z)).ln())
        .sum())
}

fn normalized_nonneg(x: &[f64]) -> Result<Vec<f64>> {
    let clamped: Vec<f64> = x.iter().map(|&v| v.max(0.0)).collect();
    let z: f64 = clamped.iter().sum();
    if !(z > 0.0) {
        return Err(Error::input("EMD input has no positive mass"));
    }
    Ok(clamped.into_iter().map(|v| v / z).collect())
}

/// Earth mover's distance on the points `0..d` with ground distance
/// `|i - j|`, via the cumulative-distribution closed form. Negative entries
/// are clamped to zero and both inputs normalized first.
pub fn emd(f: &[f64], ftilde: &[f64]) -> Result<f64> {
    same_len(f, ftilde)?;
    let a = normalized_nonneg(f)?;
    let b = normalized_nonneg(ftilde)?;
    let (mut ca, mut cb, mut total) = (0.0, 0.0, 0.0);
    for k in 0..a.len().saturating_sub(1) {
        ca += a[k];
        cb += b[k];
        total += (ca - cb).abs();
    }
    Ok(total)
}

pub fn evaluate(kind: MetricKind, f: &[f64], ftilde: &[f64]) -> Result<f64> {
    match kind {
        MetricKind::L1 => l1(f, ftilde),
        MetricKind::L2 => l2(f, ftilde),
        MetricKind::KL => kl(f, ftilde),
        MetricKind::EMD => emd(f, ftilde),
    }
}
