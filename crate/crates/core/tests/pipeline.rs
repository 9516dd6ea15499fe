use std::collections::BTreeMap;
use std::sync::Arc;

use ldpbench::datasets::{gen_zipf, true_frequencies, zipf_pmf, GeneratorConfig};
use ldpbench::engine::config::{DatasetEntry, DatasetSource, ExperimentConfig, SyntheticParams};
use ldpbench::engine::{run_matrix, run_once, CellKey, CellResult, ExperimentCell, ResultMap};
use ldpbench::metrics::MetricKind;
use ldpbench::oracle;
use ldpbench::postprocess::{self, PPMethod};
use ldpbench::protocols::{build_protocol, estimator_variance, ProtocolKind};
use ldpbench::report::{parse_csv, parse_json, render_csv, render_json, win_table};
use ldpbench::seed::SeedPlan;
use ldpbench::ExecPolicy;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn zipf_config(n: usize, d: usize, seed: u64) -> ExperimentConfig {
    let params = SyntheticParams { n, d, s: 1.5, seed, ..SyntheticParams::default() };
    let mut config = ExperimentConfig::new(
        vec![DatasetEntry::new("z", DatasetSource::Zipf(params))],
        vec![ProtocolKind::Grr, ProtocolKind::Olh],
    );
    config.epsilons = vec![0.5, 2.0];
    config.repeats = 6;
    config.chunk_count = 4;
    config.master_seed = 99;
    config.metrics = vec![MetricKind::L1, MetricKind::EMD];
    config
}

#[test]
fn zipf_sample_fits_pmf() {
    let (n, d) = (200_000, 20);
    let pop = gen_zipf(&GeneratorConfig::zipf(n, d, 1.5, 4)).unwrap();
    let observed = true_frequencies(&pop).values;
    let stat: f64 = zipf_pmf(d, 1.5)
        .iter()
        .zip(&observed)
        .map(|(p, o)| n as f64 * (o - p).powi(2) / p)
        .sum();
    let critical = ChiSquared::new((d - 1) as f64).unwrap().inverse_cdf(0.999);
    assert!(stat < critical, "chi-square {stat} >= {critical}");
}

#[test]
fn nopp_l1_matches_half_normal_expectation() {
    let (n, d) = (50_000, 64);
    let pop = Arc::new(gen_zipf(&GeneratorConfig::zipf(n, d, 1.5, 5)).unwrap());
    let runs = 20;
    for kind in [ProtocolKind::Oue, ProtocolKind::Olh] {
        let cell = ExperimentCell {
            dataset: pop.clone(),
            protocol: build_protocol(kind, d, 1.0).unwrap(),
            pp: PPMethod::NoPP,
            metric: MetricKind::L1,
        };
        let plan = SeedPlan::new(12, 1).unwrap();
        let mean = (0..runs).map(|r| run_once(&cell, 0, r, &plan).unwrap().value).sum::<f64>()
            / runs as f64;
        let sd = estimator_variance(&cell.protocol, n as u64).unwrap().sqrt();
        let expected = d as f64 * sd * (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean / expected - 1.0).abs() < 0.15, "{kind}: {mean} vs {expected}");
    }
}

#[test]
fn norm_sub_beats_nopp_at_small_epsilon() {
    let mut config = zipf_config(40_000, 64, 6);
    config.pp = vec![PPMethod::NoPP, PPMethod::NormSub];
    config.metrics = vec![MetricKind::L1];
    config.epsilons = vec![0.5];
    let results = run_matrix(&config, &ExecPolicy::default()).unwrap();
    for kind in [ProtocolKind::Grr, ProtocolKind::Olh] {
        let mean = |pp| {
            results
                .iter()
                .find(|(k, _)| k.protocol == kind && k.pp == pp)
                .map(|(_, r)| r.mean)
                .unwrap()
        };
        assert!(mean(PPMethod::NormSub) < mean(PPMethod::NoPP), "{kind}");
    }
}

#[test]
fn results_round_trip_through_both_formats() {
    let results = run_matrix(&zipf_config(8_000, 16, 7), &ExecPolicy::with_threads(2)).unwrap();
    assert_eq!(results.len(), 2 * 2 * PPMethod::ALL.len() * 2);
    assert_eq!(parse_csv(&render_csv(&results).unwrap()).unwrap(), results);
    assert_eq!(parse_json(&render_json(&results)).unwrap(), results);
    assert_eq!(render_csv(&results).unwrap(), render_csv(&results).unwrap());
}

#[test]
fn win_table_matches_recount() {
    let results = run_matrix(&zipf_config(8_000, 16, 8), &ExecPolicy::default()).unwrap();
    let entries = win_table(&results, false).unwrap();
    assert_eq!(entries.len(), 2 * 2 * 2);
    for e in &entries {
        let group: Vec<(PPMethod, Vec<f64>)> = results
            .iter()
            .filter(|(k, _)| {
                k.dataset == e.dataset
                    && k.protocol == e.protocol
                    && k.epsilon == e.epsilon
                    && k.metric == e.metric
            })
            .map(|(k, r)| (k.pp, r.per_run_values.clone()))
            .collect();
        let values: Vec<Vec<f64>> = group.iter().map(|(_, v)| v.clone()).collect();
        let counts = oracle::recount_wins(&values);
        for ((pp, _), count) in group.iter().zip(counts) {
            assert_eq!(e.wins[pp], count, "{pp}");
        }
        assert_eq!(e.wins.values().max(), Some(&e.wins[&e.best_pp]));
    }
}

#[test]
fn win_table_ties_and_failures() {
    let key = |pp| CellKey {
        dataset: "t".into(),
        protocol: ProtocolKind::Grr,
        epsilon: 1.0,
        pp,
        metric: MetricKind::L1,
    };
    let mut results: ResultMap = BTreeMap::new();
    results.insert(key(PPMethod::NormSub), CellResult::from_values(vec![0.1, 0.3]));
    results.insert(key(PPMethod::NormCut), CellResult::from_values(vec![0.1, 0.2]));
    results.insert(key(PPMethod::Power), CellResult::failed("overflow"));
    let entry = &win_table(&results, false).unwrap()[0];
    assert_eq!(entry.best_pp, PPMethod::NormCut);
    assert_eq!(entry.wins[&PPMethod::NormSub], 1);
    assert_eq!(entry.wins[&PPMethod::NormCut], 2);
    assert_eq!(entry.win_fraction, 1.0);
    assert!(!entry.wins.contains_key(&PPMethod::Power));
}

fn noisy_vector() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.2f64..0.6, 2..48)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn simplex_methods_land_on_simplex(x in noisy_vector()) {
        for (out, _) in [postprocess::norm_sub(&x), postprocess::norm_mul(&x)] {
            prop_assert!(out.values.iter().all(|&v| v >= 0.0));
            prop_assert!((out.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn norm_sub_matches_bisection_threshold(x in noisy_vector()) {
        prop_assume!(x.iter().any(|&v| v > 0.0));
        let (out, c) = postprocess::norm_sub(&x);
        let tau = oracle::projection_threshold_bisection(&x);
        prop_assert!((c.delta.unwrap() + tau).abs() < 1e-9);
        for (a, b) in out.values.iter().zip(oracle::simplex_projection_sorted(&x)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn norm_cut_agrees_with_brute_force(x in noisy_vector()) {
        let (out, c) = postprocess::norm_cut(&x);
        let theta = oracle::norm_cut_threshold_brute_force(&x);
        prop_assert_eq!(c.theta, Some(theta));
        for (o, &v) in out.values.iter().zip(&x) {
            prop_assert_eq!(*o, if v > theta { v } else { 0.0 });
        }
    }

    #[test]
    fn power_is_permutation_equivariant(x in noisy_vector(), rotate in 0usize..48) {
        prop_assume!(x.iter().any(|&v| v > 0.0));
        let k = rotate % x.len();
        let mut rotated = x.clone();
        rotated.rotate_left(k);
        let (a, _) = postprocess::power(&x, 0.01).unwrap();
        let (b, _) = postprocess::power(&rotated, 0.01).unwrap();
        let mut a = a.values;
        a.rotate_left(k);
        for (u, v) in a.iter().zip(&b.values) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn power_ns_is_norm_sub_of_power(x in noisy_vector()) {
        prop_assume!(x.iter().any(|&v| v > 0.0));
        let (p, _) = postprocess::power(&x, 0.02).unwrap();
        let (composed, _) = postprocess::norm_sub(&p.values);
        let (direct, _) = postprocess::power_ns(&x, 0.02).unwrap();
        prop_assert_eq!(direct.values, composed.values);
    }
}
