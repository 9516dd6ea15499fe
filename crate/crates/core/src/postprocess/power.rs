//! Power-law prior fitting and posterior-mean denoising.

use crate::error::{Error, Result};

pub const EXPONENT_MIN: f64 = 0.05;
pub const EXPONENT_MAX: f64 = 5.0;
pub const GRID_STEP: f64 = 0.05;
/// Golden-section refinement stops once the bracket is narrower than this.
pub const REFINE_TOLERANCE: f64 = 1e-9;

/// Rank frequencies `P_s(i) = i^-s / sum_j j^-s` for ranks `1..=d`.
pub fn power_law_atoms(d: usize, s: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=d).map(|i| (i as f64).powf(-s)).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}

fn squared_error(sorted_desc: &[f64], s: f64) -> f64 {
    power_law_atoms(sorted_desc.len(), s)
        .iter()
        .zip(sorted_desc)
        .map(|(p, x)| (x - p).powi(2))
        .sum()
}

/// Least-squares exponent of a power law over ranks, fitted to the values
/// sorted in descending order. Coarse grid over `[0.05, 5]`, then
/// golden-section search inside the neighbouring grid cells.
pub fn fit_exponent(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));

    let steps = ((EXPONENT_MAX - EXPONENT_MIN) / GRID_STEP).round() as usize;
    let (mut best_s, mut best_err) = (EXPONENT_MIN, f64::INFINITY);
    for j in 0..=steps {
        let s = EXPONENT_MIN + j as f64 * GRID_STEP;
        let err = squared_error(&sorted, s);
        if err < best_err {
            best_s = s;
            best_err = err;
        }
    }

    let lo = (best_s - GRID_STEP).max(EXPONENT_MIN);
    let hi = (best_s + GRID_STEP).min(EXPONENT_MAX);
    let (refined, refined_err) =
        golden_section(|s| squared_error(&sorted, s), lo, hi, REFINE_TOLERANCE);
    if refined_err <= best_err {
        refined
    } else {
        best_s
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (lo + hi);
    (mid, f(mid))
}

/// Posterior mean of each value under a uniform prior over `atoms` and
/// Gaussian noise with standard deviation `noise_sd`.
pub fn posterior_mean(values: &[f64], atoms: &[f64], noise_sd: f64) -> Result<Vec<f64>> {
    if !(noise_sd > 0.0) || !noise_sd.is_finite() {
        return Err(Error::param(format!(
            "noise standard deviation must be positive, got {noise_sd}"
        )));
    }
    let inv_two_var = 1.0 / (2.0 * noise_sd * noise_sd);
    let mut log_w = vec![0.0; atoms.len()];
    Ok(values
        .iter()
        .map(|&x| {
            let mut max = f64::NEG_INFINITY;
            for (lw, &a) in log_w.iter_mut().zip(atoms) {
                *lw = -(x - a).powi(2) * inv_two_var;
                max = max.max(*lw);
            }
            let (mut num, mut den) = (0.0, 0.0);
            for (&lw, &a) in log_w.iter().zip(atoms) {
                let w = (lw - max).exp();
                num += w * a;
                den += w;
            }
            num / den
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atoms_are_a_distribution() {
        for s in [0.05, 1.0, 1.5, 5.0] {
            let atoms = power_law_atoms(17, s);
            assert!((atoms.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(atoms.windows(2).all(|w| w[0] > w[1]));
        }
        let two = power_law_atoms(2, 1.0);
        assert!((two[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn fit_recovers_two_atom_exponent() {
        let s = fit_exponent(&[2.0 / 3.0, 1.0 / 3.0]);
        assert!((s - 1.0).abs() < 1e-3, "{s}");
    }

    #[test]
    fn fit_is_order_independent() {
        let atoms = power_law_atoms(12, 2.2);
        let mut shuffled = atoms.clone();
        shuffled.reverse();
        shuffled.swap(0, 5);
        assert_eq!(fit_exponent(&atoms), fit_exponent(&shuffled));
        assert!((fit_exponent(&atoms) - 2.2).abs() < 1e-4);
    }

    #[test]
    fn fit_clamps_to_search_range() {
        // a flat vector wants s -> 0
        let s = fit_exponent(&[0.25; 4]);
        assert!((EXPONENT_MIN..EXPONENT_MIN + 1e-3).contains(&s), "{s}");
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let (x, fx) = golden_section(|x| (x - 0.3).powi(2), 0.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
        assert!(fx < 1e-15);
    }

    #[test]
    fn posterior_rejects_bad_noise() {
        assert!(posterior_mean(&[0.5], &[0.5, 0.5], 0.0).is_err());
        assert!(posterior_mean(&[0.5], &[0.5, 0.5], -1.0).is_err());
        assert!(posterior_mean(&[0.5], &[0.5, 0.5], f64::NAN).is_err());
    }
}
