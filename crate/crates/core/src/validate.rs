//! Quick self-check suite run by `ldpbench validate`.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::datasets::{gen_zipf, GeneratorConfig};
use crate::engine::{run_chunked, run_once, ExperimentCell};
use crate::exec::ExecPolicy;
use crate::metrics::{self, MetricKind};
use crate::oracle;
use crate::postprocess::{norm_cut, norm_sub, PPMethod};
use crate::protocols::{build_protocol, ProtocolKind};
use crate::seed::SeedPlan;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name,
        passed,
        detail,
    }
}

/// Exhaustive likelihood-ratio check for d = 4 and eps in {0.5, 1, 2}; the
/// hashing protocols are checked per sampled hash seed.
pub fn privacy_ratio() -> CheckOutcome {
    let mut worst_excess = f64::NEG_INFINITY;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
    for eps in [0.5, 1.0, 2.0] {
        let bound = f64::exp(eps) + 1e-9;
        for kind in ProtocolKind::ALL {
            let spec = build_protocol(kind, 4, eps).expect("valid protocol");
            let ratio = match kind {
                ProtocolKind::Blh | ProtocolKind::Olh => {
                    let prime = spec.prime().unwrap();
                    (0..200)
                        .map(|_| {
                            let (a, b) = (rng.gen_range(1..prime), rng.gen_range(0..prime));
                            let dists: Vec<_> = (0..4)
                                .map(|v| {
                                    oracle::hashed_bucket_distribution(&spec, a, b, v)
                                        .into_iter()
                                        .enumerate()
                                        .collect::<std::collections::BTreeMap<_, _>>()
                                })
                                .collect();
                            oracle::max_privacy_ratio(&dists)
                        })
                        .fold(0.0, f64::max)
                }
                _ => {
                    let dists: Vec<_> = (0..4)
                        .map(|v| oracle::report_distribution(&spec, v))
                        .collect();
                    oracle::max_privacy_ratio(&dists)
                }
            };
            worst_excess = worst_excess.max(ratio - bound);
        }
    }
    outcome(
        "privacy ratio",
        worst_excess <= 0.0,
        format!("max ratio - (e^eps + 1e-9) = {worst_excess:.3e}"),
    )
}

/// Norm-Sub against the sort-based projection on random vectors.
pub fn norm_sub_projection(trials: usize) -> CheckOutcome {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut fallbacks = 0;
    for _ in 0..trials {
        let d = rng.gen_range(2..=64);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (out, c) = norm_sub(&x);
        let reference = if x.iter().all(|&v| v <= 0.0) {
            fallbacks += 1;
            vec![1.0 / d as f64; d]
        } else {
            oracle::simplex_projection_sorted(&x)
        };
        assert_eq!(c.uniform_fallback, x.iter().all(|&v| v <= 0.0));
        for (a, b) in out.values.iter().zip(&reference) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(
        "norm-sub projection",
        worst < 1e-9,
        format!("max |diff| = {worst:.3e} over {trials} vectors ({fallbacks} all-non-positive)"),
    )
}

/// Norm-Cut threshold against exhaustive search.
pub fn norm_cut_threshold(trials: usize) -> CheckOutcome {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..trials {
        let d = rng.gen_range(2..=32);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.3..0.6)).collect();
        if norm_cut(&x).1.theta != Some(oracle::norm_cut_threshold_brute_force(&x)) {
            mismatches += 1;
        }
    }
    outcome(
        "norm-cut threshold",
        mismatches == 0,
        format!("{mismatches} mismatches over {trials} vectors"),
    )
}

fn random_distribution(rng: &mut Xoshiro256PlusPlus, d: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}

/// CDF-form EMD against the min-cost-flow transport solve.
pub fn emd_transport(trials: usize) -> CheckOutcome {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let d = rng.gen_range(2..=6);
        let f = random_distribution(&mut rng, d);
        let g = random_distribution(&mut rng, d);
        let closed = metrics::emd(&f, &g).expect("valid distributions");
        worst = worst.max((closed - oracle::transport_lp(&f, &g).cost()).abs());
    }
    outcome(
        "emd transport",
        worst < 1e-6,
        format!("max |diff| = {worst:.3e} over {trials} pairs"),
    )
}

/// Zero on identical inputs, `L2 <= L1`, and non-negative KL.
pub fn metric_identities(trials: usize) -> CheckOutcome {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
    let mut failures = Vec::new();
    for _ in 0..trials {
        let d = rng.gen_range(2..=64);
        let f = random_distribution(&mut rng, d);
        let g = random_distribution(&mut rng, d);
        for m in MetricKind::ALL {
            let v = metrics::evaluate(m, &f, &f).expect("valid distributions");
            if v != 0.0 {
                failures.push(format!("{m}(f, f) = {v}"));
            }
        }
        let (a, b) = (metrics::l1(&f, &g).unwrap(), metrics::l2(&f, &g).unwrap());
        if b > a {
            failures.push(format!("L2 {b} > L1 {a}"));
        }
        let k = metrics::kl(&f, &g).unwrap();
        if k < -1e-12 {
            failures.push(format!("KL {k} < 0"));
        }
    }
    let detail = failures
        .first()
        .cloned()
        .unwrap_or_else(|| format!("{trials} random pairs"));
    outcome("metric identities", failures.is_empty(), detail)
}

/// `run_chunked` equals `run_once` for several chunk and thread counts.
pub fn chunk_determinism() -> CheckOutcome {
    let pop = std::sync::Arc::new(
        gen_zipf(&GeneratorConfig::zipf(20_000, 32, 1.5, 6)).expect("valid config"),
    );
    let mut mismatches = 0;
    for kind in ProtocolKind::ALL {
        let cell = ExperimentCell {
            dataset: pop.clone(),
            protocol: build_protocol(kind, 32, 1.0).expect("valid protocol"),
            pp: PPMethod::NormSub,
            metric: MetricKind::L1,
        };
        let reference =
            run_once(&cell, 0, 0, &SeedPlan::new(3, 1).unwrap()).expect("pipeline runs");
        for (chunks, threads) in [(1, 1), (4, 2), (16, 4)] {
            let out = run_chunked(
                &cell,
                0,
                0,
                &SeedPlan::new(3, chunks).unwrap(),
                &ExecPolicy::with_threads(threads),
            )
            .expect("pipeline runs");
            if out != reference {
                mismatches += 1;
            }
        }
    }
    outcome(
        "chunk determinism",
        mismatches == 0,
        format!("{mismatches} mismatching runs"),
    )
}

pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        privacy_ratio(),
        norm_sub_projection(1000),
        norm_cut_threshold(1000),
        emd_transport(200),
        metric_identities(1000),
        chunk_determinism(),
    ]
}
