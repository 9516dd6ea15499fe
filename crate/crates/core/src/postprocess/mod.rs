//! Server-side post-processing of estimated frequencies.
//!
//! Every method is a pure function of the estimate `f_hat` (plus, for the
//! Power family, the estimator's noise level) returning the post-processed
//! vector together with the constant(s) it fitted.

mod power;

pub use power::{fit_exponent, posterior_mean, power_law_atoms};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocols::{estimator_variance, FrequencyVector, ProtocolSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PPMethod {
    NoPP,
    BasePos,
    Norm,
    NormCut,
    NormSub,
    NormMul,
    Power,
    PowerNS,
}

impl PPMethod {
    pub const ALL: [PPMethod; 8] = [
        PPMethod::NoPP,
        PPMethod::BasePos,
        PPMethod::Norm,
        PPMethod::NormCut,
        PPMethod::NormSub,
        PPMethod::NormMul,
        PPMethod::Power,
        PPMethod::PowerNS,
    ];

    /// The seven post-processing methods, without the identity baseline.
    pub const METHODS: [PPMethod; 7] = [
        PPMethod::BasePos,
        PPMethod::Norm,
        PPMethod::NormCut,
        PPMethod::NormSub,
        PPMethod::NormMul,
        PPMethod::Power,
        PPMethod::PowerNS,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PPMethod::NoPP => "NoPP",
            PPMethod::BasePos => "Base-Pos",
            PPMethod::Norm => "Norm",
            PPMethod::NormCut => "Norm-Cut",
            PPMethod::NormSub => "Norm-Sub",
            PPMethod::NormMul => "Norm-Mul",
            PPMethod::Power => "Power",
            PPMethod::PowerNS => "Power-NS",
        }
    }
}

impl fmt::Display for PPMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PPMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let canon = |x: &str| {
            x.chars()
                .filter(|c| c.is_ascii_alphanumeric())
                .collect::<String>()
                .to_ascii_lowercase()
        };
        let wanted = canon(s);
        PPMethod::ALL
            .into_iter()
            .find(|m| canon(m.name()) == wanted)
            .or((wanted == "none").then_some(PPMethod::NoPP))
            .ok_or_else(|| Error::param(format!("unknown post-processing method '{s}'")))
    }
}

/// Constants fitted by a post-processing method; only the producing
/// method's fields are set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalizationConstants {
    /// Norm: additive shift.
    pub sigma: Option<f64>,
    /// Norm-Cut: cut threshold.
    pub theta: Option<f64>,
    /// Norm-Sub: additive shift applied to surviving entries (minus the projection threshold).
    pub delta: Option<f64>,
    /// Norm-Mul: multiplicative factor.
    pub alpha: Option<f64>,
    /// Power: fitted power-law exponent.
    pub power_exponent: Option<f64>,
    /// Power: noise standard deviation used by the posterior.
    pub noise_sd: Option<f64>,
    /// Set when a simplex-constrained method fell back to the uniform vector.
    pub uniform_fallback: bool,
}

pub type Processed = (FrequencyVector, NormalizationConstants);

fn uniform(d: usize) -> Vec<f64> {
    vec![1.0 / d as f64; d]
}

fn positive_mass(fhat: &[f64]) -> f64 {
    fhat.iter().filter(|&&x| x > 0.0).sum()
}

pub fn base_pos(fhat: &[f64]) -> Processed {
    (
        FrequencyVector::post_processed(fhat.iter().map(|&x| x.max(0.0)).collect()),
        NormalizationConstants::default(),
    )
}

pub fn norm(fhat: &[f64]) -> Processed {
    let d = fhat.len() as f64;
    let sigma = (1.0 - fhat.iter().sum::<f64>()) / d;
    (
        FrequencyVector::post_processed(fhat.iter().map(|&x| x + sigma).collect()),
        NormalizationConstants {
            sigma: Some(sigma),
            ..Default::default()
        },
    )
}

/// Zeroes every entry at or below a threshold chosen among `{0}` and the
/// positive entries so that the kept mass is as close to one as possible.
pub fn norm_cut(fhat: &[f64]) -> Processed {
    let theta = cut_threshold(fhat);
    (
        FrequencyVector::post_processed(
            fhat.iter()
                .map(|&x| if x > theta { x } else { 0.0 })
                .collect(),
        ),
        NormalizationConstants {
            theta: Some(theta),
            ..Default::default()
        },
    )
}

fn cut_threshold(fhat: &[f64]) -> f64 {
    let mut positives: Vec<f64> = fhat.iter().copied().filter(|&x| x > 0.0).collect();
    let total: f64 = positives.iter().sum();
    if total <= 1.0 {
        return 0.0;
    }
    positives.sort_by(f64::total_cmp);

    // suffix[i] = mass of positives[i..]
    let mut suffix = vec![0.0; positives.len() + 1];
    for i in (0..positives.len()).rev() {
        suffix[i] = suffix[i + 1] + positives[i];
    }

    let (mut best_theta, mut best_gap) = (0.0, (total - 1.0).abs());
    let mut i = 0;
    while i < positives.len() {
        let theta = positives[i];
        while i < positives.len() && positives[i] == theta {
            i += 1;
        }
        let gap = (suffix[i] - 1.0).abs();
        if gap < best_gap {
            best_gap = gap;
            best_theta = theta;
        }
    }
    best_theta
}

/// Euclidean projection onto the probability simplex.
///
/// Iterates to the fixpoint: shift the active entries by a common constant
/// so they sum to one, drop any that turn non-positive, repeat. If no entry
/// is positive the uniform vector is returned instead.
pub fn norm_sub(fhat: &[f64]) -> Processed {
    let d = fhat.len();
    if positive_mass(fhat) <= 0.0 {
        return (
            FrequencyVector::post_processed(uniform(d)),
            NormalizationConstants {
                uniform_fallback: true,
                ..Default::default()
            },
        );
    }
    let mut active = vec![true; d];
    let mut count = d;
    loop {
        let sum: f64 = fhat
            .iter()
            .zip(&active)
            .filter(|(_, &on)| on)
            .map(|(x, _)| x)
            .sum();
        let tau = (sum - 1.0) / count as f64;
        let mut changed = false;
        for (i, &x) in fhat.iter().enumerate() {
            if active[i] && x - tau <= 0.0 {
                active[i] = false;
                count -= 1;
                changed = true;
            }
        }
        if !changed {
            let out = fhat
                .iter()
                .zip(&active)
                .map(|(&x, &on)| if on { x - tau } else { 0.0 })
                .collect();
            return (
                FrequencyVector::post_processed(out),
                NormalizationConstants {
                    delta: Some(-tau),
                    ..Default::default()
                },
            );
        }
    }
}

pub fn norm_mul(fhat: &[f64]) -> Processed {
    let mass = positive_mass(fhat);
    if mass <= 0.0 {
        return (
            FrequencyVector::post_processed(uniform(fhat.len())),
            NormalizationConstants {
                uniform_fallback: true,
                ..Default::default()
            },
        );
    }
    let alpha = 1.0 / mass;
    (
        FrequencyVector::post_processed(fhat.iter().map(|&x| alpha * x.max(0.0)).collect()),
        NormalizationConstants {
            alpha: Some(alpha),
            ..Default::default()
        },
    )
}

/// Fits a power law over ranks to `fhat` and replaces each value with its
/// posterior mean under that prior and Gaussian noise of `noise_sd`.
pub fn power(fhat: &[f64], noise_sd: f64) -> Result<Processed> {
    if fhat.len() < 2 {
        return Err(Error::param("Power needs at least two values"));
    }
    if !(noise_sd > 0.0) {
        return Err(Error::param(format!(
            "Power needs a positive noise level, got {noise_sd}"
        )));
    }
    let s = fit_exponent(fhat);
    let atoms = power_law_atoms(fhat.len(), s);
    let out = posterior_mean(fhat, &atoms, noise_sd)?;
    Ok((
        FrequencyVector::post_processed(out),
        NormalizationConstants {
            power_exponent: Some(s),
            noise_sd: Some(noise_sd),
            ..Default::default()
        },
    ))
}

pub fn power_ns(fhat: &[f64], noise_sd: f64) -> Result<Processed> {
    let (powered, mut constants) = power(fhat, noise_sd)?;
    let (projected, sub) = norm_sub(&powered.values);
    constants.delta = sub.delta;
    constants.uniform_fallback = sub.uniform_fallback;
    Ok((projected, constants))
}

/// Protocol instance and report count behind an estimate; Power derives its
/// noise level from them.
#[derive(Debug, Clone, Copy)]
pub struct EstimateContext<'a> {
    pub spec: &'a ProtocolSpec,
    pub n: u64,
}

impl EstimateContext<'_> {
    pub fn noise_sd(&self) -> Result<f64> {
        Ok(estimator_variance(self.spec, self.n)?.sqrt())
    }
}

pub fn apply(method: PPMethod, fhat: &[f64], ctx: EstimateContext<'_>) -> Result<Processed> {
    if fhat.len() != ctx.spec.d() {
        return Err(Error::LengthMismatch {
            left: fhat.len(),
            right: ctx.spec.d(),
        });
    }
    Ok(match method {
        PPMethod::NoPP => (
            FrequencyVector::post_processed(fhat.to_vec()),
            NormalizationConstants::default(),
        ),
        PPMethod::BasePos => base_pos(fhat),
        PPMethod::Norm => norm(fhat),
        PPMethod::NormCut => norm_cut(fhat),
        PPMethod::NormSub => norm_sub(fhat),
        PPMethod::NormMul => norm_mul(fhat),
        PPMethod::Power => power(fhat, ctx.noise_sd()?)?,
        PPMethod::PowerNS => power_ns(fhat, ctx.noise_sd()?)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{build_protocol, ProtocolKind};

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn base_pos_examples() {
        assert_eq!(base_pos(&[-0.1, 0.5, 0.6]).0.values, vec![0.0, 0.5, 0.6]);
        assert_eq!(base_pos(&[0.2, 0.3, 0.5]).0.values, vec![0.2, 0.3, 0.5]);
        assert_eq!(base_pos(&[-1.0, -1.0, -1.0]).0.values, vec![0.0; 3]);
    }

    #[test]
    fn norm_examples() {
        let (out, c) = norm(&[0.2, 0.2, 0.2]);
        assert!(close(&out.values, &[1.0 / 3.0; 3], 1e-15));
        assert!((c.sigma.unwrap() - 0.4 / 3.0).abs() < 1e-15);

        let (out, c) = norm(&[0.25, 0.25, 0.5]);
        assert_eq!(out.values, vec![0.25, 0.25, 0.5]);
        assert_eq!(c.sigma, Some(0.0));

        let (out, c) = norm(&[0.9, 0.5]);
        assert!((c.sigma.unwrap() + 0.2).abs() < 1e-15);
        assert!(close(&out.values, &[0.7, 0.3], 1e-15));
    }

    #[test]
    fn norm_cut_examples() {
        let (out, c) = norm_cut(&[0.3, 0.4, -0.2]);
        assert_eq!(out.values, vec![0.3, 0.4, 0.0]);
        assert_eq!(c.theta, Some(0.0));

        let (out, c) = norm_cut(&[0.6, 0.5, 0.3, -0.1]);
        assert_eq!(out.values, vec![0.6, 0.5, 0.0, 0.0]);
        assert_eq!(c.theta, Some(0.3));

        assert_eq!(norm_cut(&[-0.1, -0.2]).0.values, vec![0.0, 0.0]);
    }

    #[test]
    fn norm_cut_ties_prefer_smaller_threshold() {
        // theta = 0 keeps 1.2, theta = 0.2 keeps 0.8: both 0.2 away from one
        let (out, c) = norm_cut(&[0.8, 0.2, 0.2]);
        assert_eq!(c.theta, Some(0.0));
        assert_eq!(out.values, vec![0.8, 0.2, 0.2]);
    }

    #[test]
    fn norm_sub_examples() {
        let (out, c) = norm_sub(&[0.9, 0.4, -0.3]);
        assert!(close(&out.values, &[0.75, 0.25, 0.0], 1e-12));
        assert!((c.delta.unwrap() + 0.15).abs() < 1e-12);

        let (out, c) = norm_sub(&[0.1, 0.2, 0.7]);
        assert!(close(&out.values, &[0.1, 0.2, 0.7], 1e-15));
        assert!(c.delta.unwrap().abs() < 1e-15);

        let (out, c) = norm_sub(&[-1.0, -2.0]);
        assert_eq!(out.values, vec![0.5, 0.5]);
        assert!(c.uniform_fallback);
    }

    #[test]
    fn norm_sub_can_revive_small_negatives() {
        // positive mass below one: the projection raises every entry
        let (out, _) = norm_sub(&[0.3, -0.2]);
        assert!(close(&out.values, &[0.75, 0.25], 1e-12));
    }

    #[test]
    fn norm_mul_examples() {
        let (out, c) = norm_mul(&[0.5, 0.3, -0.2]);
        assert!(close(&out.values, &[0.625, 0.375, 0.0], 1e-15));
        assert_eq!(c.alpha, Some(1.25));

        let (out, c) = norm_mul(&[0.25, 0.75]);
        assert_eq!(out.values, vec![0.25, 0.75]);
        assert_eq!(c.alpha, Some(1.0));

        let (out, c) = norm_mul(&[0.0, 0.0, 2.0]);
        assert_eq!(out.values, vec![0.0, 0.0, 1.0]);
        assert_eq!(c.alpha, Some(0.5));

        assert!(norm_mul(&[-1.0, 0.0]).1.uniform_fallback);
    }

    #[test]
    fn power_self_consistency() {
        let atoms = power_law_atoms(10, 1.5);
        let mut fhat = atoms.clone();
        fhat.rotate_left(3);
        let (out, c) = power(&fhat, 1e-6).unwrap();
        assert!((c.power_exponent.unwrap() - 1.5).abs() < 0.01);
        assert!(close(&out.values, &fhat, 1e-6));
    }

    #[test]
    fn power_two_atoms() {
        let (out, c) = power(&[2.0 / 3.0, 1.0 / 3.0], 1e-6).unwrap();
        assert!((c.power_exponent.unwrap() - 1.0).abs() < 1e-3);
        assert!(close(&out.values, &[2.0 / 3.0, 1.0 / 3.0], 1e-6));
    }

    #[test]
    fn power_large_noise_flattens_to_prior_mean() {
        let (out, _) = power(&[0.5, 0.2, 0.1, 0.1, 0.1], 1e3).unwrap();
        assert!(close(&out.values, &[0.2; 5], 1e-6));
    }

    #[test]
    fn power_rejects_bad_noise() {
        assert!(power(&[0.5, 0.5], 0.0).is_err());
        assert!(power(&[1.0], 0.1).is_err());
    }

    #[test]
    fn power_ns_examples() {
        let (out, _) = power_ns(&[2.0 / 3.0, 1.0 / 3.0], 1e-6).unwrap();
        assert!(close(&out.values, &[2.0 / 3.0, 1.0 / 3.0], 1e-6));

        let (out, _) = power_ns(&[0.4, -0.1, 0.3, 0.05, 0.02], 0.05).unwrap();
        assert!(out.values.iter().all(|&x| x >= 0.0));
        assert!((out.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn apply_dispatch() {
        let spec = build_protocol(ProtocolKind::Oue, 3, 1.0).unwrap();
        let ctx = EstimateContext {
            spec: &spec,
            n: 1000,
        };
        let fhat = [0.9, 0.4, -0.3];
        assert_eq!(
            apply(PPMethod::NoPP, &fhat, ctx).unwrap().0.values,
            fhat.to_vec()
        );
        let (out, _) = apply(PPMethod::NormSub, &fhat, ctx).unwrap();
        assert!(close(&out.values, &[0.75, 0.25, 0.0], 1e-12));

        let spec2 = build_protocol(ProtocolKind::Oue, 2, 1.0).unwrap();
        let ctx2 = EstimateContext {
            spec: &spec2,
            n: 1000,
        };
        assert_eq!(
            apply(PPMethod::BasePos, &[-0.1, 1.1], ctx2)
                .unwrap()
                .0
                .values,
            vec![0.0, 1.1]
        );
        assert!(apply(PPMethod::Norm, &[0.1, 0.2], ctx).is_err());

        let (_, c) = apply(PPMethod::Power, &fhat, ctx).unwrap();
        let expected_sd = estimator_variance(&spec, 1000).unwrap().sqrt();
        assert_eq!(c.noise_sd, Some(expected_sd));
    }

    #[test]
    fn method_names_parse() {
        for m in PPMethod::ALL {
            assert_eq!(m.name().parse::<PPMethod>().unwrap(), m);
        }
        assert_eq!("norm_sub".parse::<PPMethod>().unwrap(), PPMethod::NormSub);
        assert_eq!("powerns".parse::<PPMethod>().unwrap(), PPMethod::PowerNS);
        assert!("norm-div".parse::<PPMethod>().is_err());
    }
}
