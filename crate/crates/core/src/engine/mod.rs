//! Experiment execution.
//!
//! A run simulates the whole pipeline for one population: every user
//! perturbs their value, the server aggregates and estimates, then each
//! post-processing method and metric is applied to the same estimate.
//!
//! Users are split into blocks of [`USER_BLOCK`](crate::seed::USER_BLOCK),
//! each driven by its own derived random stream. A run's chunks are ranges
//! of whole blocks whose sketches are merged in ascending chunk order, so
//! neither the chunk count nor the thread count can change a result.

pub mod config;

pub use config::{DatasetEntry, DatasetSource, ExperimentConfig, OutputFormat, SyntheticParams};

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::datasets::{self, Population};
use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::metrics::{self, MetricKind};
use crate::postprocess::{self, EstimateContext, NormalizationConstants, PPMethod};
use crate::protocols::{build_protocol, estimate, ProtocolKind, ProtocolSpec, Sketch};
use crate::seed::{SeedPlan, USER_BLOCK};

/// One (dataset, protocol, epsilon, post-processing, metric) configuration.
#[derive(Debug, Clone)]
pub struct ExperimentCell {
    pub dataset: Arc<Population>,
    pub protocol: ProtocolSpec,
    pub pp: PPMethod,
    pub metric: MetricKind,
}

impl ExperimentCell {
    pub fn key(&self) -> CellKey {
        CellKey {
            dataset: self.dataset.name.clone(),
            protocol: self.protocol.kind(),
            epsilon: self.protocol.epsilon(),
            pp: self.pp,
            metric: self.metric,
        }
    }
}

/// Result-map key. Orders by dataset, protocol name, epsilon, PP name and
/// metric name.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellKey {
    pub dataset: String,
    pub protocol: ProtocolKind,
    pub epsilon: f64,
    pub pp: PPMethod,
    pub metric: MetricKind,
}

impl Eq for CellKey {}

impl Ord for CellKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dataset
            .cmp(&other.dataset)
            .then_with(|| self.protocol.name().cmp(other.protocol.name()))
            .then_with(|| self.epsilon.total_cmp(&other.epsilon))
            .then_with(|| self.pp.name().cmp(other.pp.name()))
            .then_with(|| self.metric.name().cmp(other.metric.name()))
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/eps={}/{}/{}",
            self.dataset, self.protocol, self.epsilon, self.pp, self.metric
        )
    }
}

impl PartialOrd for CellKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub per_run_values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Set when the cell could not be evaluated; `per_run_values` is then empty.
    pub error: Option<String>,
}

impl CellResult {
    pub fn from_values(values: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&values);
        Self {
            per_run_values: values,
            mean,
            std,
            error: None,
        }
    }

    pub fn failed(message: impl Into<String>) -> Self {
        Self {
            per_run_values: Vec::new(),
            mean: f64::NAN,
            std: f64::NAN,
            error: Some(message.into()),
        }
    }
}

/// Arithmetic mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub type ResultMap = BTreeMap<CellKey, CellResult>;

/// Everything one run produced for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub value: f64,
    pub true_frequencies: Vec<f64>,
    pub estimate: Vec<f64>,
    pub post_processed: Vec<f64>,
    pub constants: NormalizationConstants,
    pub sketch: Sketch,
}

fn block_count(n: usize) -> usize {
    n.div_ceil(USER_BLOCK)
}

/// Perturbs and aggregates the users of blocks `blocks` with their own streams.
fn sketch_blocks(
    spec: &ProtocolSpec,
    values: &[u32],
    cell_index: usize,
    run_index: usize,
    plan: &SeedPlan,
    blocks: std::ops::Range<usize>,
) -> Result<Sketch> {
    let mut sketch = Sketch::empty(spec.d());
    let mut scratch = Vec::new();
    for b in blocks {
        let mut rng = plan.rng(cell_index, run_index, b)?;
        let users = &values[b * USER_BLOCK..((b + 1) * USER_BLOCK).min(values.len())];
        for &v in users {
            spec.perturb_into(
                v as usize,
                &mut rng,
                &mut scratch,
                &mut sketch.support_counts,
            )?;
        }
        sketch.n += users.len() as u64;
    }
    Ok(sketch)
}

/// Collects every user's report for one run, `plan.chunk_count` chunks at a time.
pub fn simulate_sketch(
    spec: &ProtocolSpec,
    population: &Population,
    cell_index: usize,
    run_index: usize,
    plan: &SeedPlan,
    exec: &ExecPolicy,
) -> Result<Sketch> {
    if population.d() != spec.d() {
        return Err(Error::LengthMismatch {
            left: population.d(),
            right: spec.d(),
        });
    }
    let blocks = block_count(population.len());
    let chunks = plan.chunk_count;
    let partials = exec.map_indices(chunks, |c| {
        let range = (c * blocks / chunks)..((c + 1) * blocks / chunks);
        sketch_blocks(spec, &population.values, cell_index, run_index, plan, range)
    });
    let mut total = Sketch::empty(spec.d());
    for partial in partials {
        total.merge(&partial?)?;
    }
    Ok(total)
}

fn finish_run(cell: &ExperimentCell, sketch: Sketch) -> Result<RunOutput> {
    let f = datasets::true_frequencies(&cell.dataset).values;
    let fhat = estimate(&cell.protocol, &sketch)?.values;
    let ctx = EstimateContext {
        spec: &cell.protocol,
        n: sketch.n,
    };
    let (ftilde, constants) = postprocess::apply(cell.pp, &fhat, ctx)?;
    let value = metrics::evaluate(cell.metric, &f, &ftilde.values)?;
    Ok(RunOutput {
        value,
        true_frequencies: f,
        estimate: fhat,
        post_processed: ftilde.values,
        constants,
        sketch,
    })
}

/// Single-threaded reference pipeline: every block in order, one sketch.
pub fn run_once(
    cell: &ExperimentCell,
    cell_index: usize,
    run_index: usize,
    plan: &SeedPlan,
) -> Result<RunOutput> {
    let blocks = block_count(cell.dataset.len());
    let sketch = sketch_blocks(
        &cell.protocol,
        &cell.dataset.values,
        cell_index,
        run_index,
        plan,
        0..blocks,
    )?;
    finish_run(cell, sketch)
}

/// Same pipeline with the population split into `plan.chunk_count` chunks
/// executed under `exec`. Bit-identical to [`run_once`].
pub fn run_chunked(
    cell: &ExperimentCell,
    cell_index: usize,
    run_index: usize,
    plan: &SeedPlan,
    exec: &ExecPolicy,
) -> Result<RunOutput> {
    let sketch = simulate_sketch(
        &cell.protocol,
        &cell.dataset,
        cell_index,
        run_index,
        plan,
        exec,
    )?;
    finish_run(cell, sketch)
}

/// Loads or generates every dataset named in a config.
pub fn resolve_datasets(
    config: &ExperimentConfig,
    exec: &ExecPolicy,
) -> Result<Vec<Arc<Population>>> {
    config
        .datasets
        .iter()
        .map(|entry| {
            let mut pop = resolve_dataset(&entry.source, exec)?;
            pop.name = entry.display_name();
            Ok(Arc::new(pop))
        })
        .collect()
}

fn resolve_dataset(source: &DatasetSource, exec: &ExecPolicy) -> Result<Population> {
    if let Some(generator) = source.generator() {
        return datasets::generate(&generator, exec);
    }
    match source {
        DatasetSource::Adult { path } => datasets::load_adult(path).map(|(p, _)| p),
        DatasetSource::Kosarak { path, top_k } => {
            datasets::load_transactions(path, *top_k).map(|(p, _)| p)
        }
        DatasetSource::BmsPos { path, top_k } => {
            datasets::load_bms_pos(path, *top_k).map(|(p, _)| p)
        }
        DatasetSource::File { path } => datasets::read_population(path),
        _ => unreachable!("synthetic sources handled above"),
    }
}

/// A (dataset, protocol, epsilon) triple. All PP methods and metrics of a
/// group are evaluated on the same perturbed reports in each run; the group
/// index is the `cell` component of the seed derivation.
struct Group {
    dataset: usize,
    protocol: ProtocolKind,
    epsilon: f64,
    spec: Result<ProtocolSpec, String>,
}

fn groups(config: &ExperimentConfig, pops: &[Arc<Population>]) -> Vec<Group> {
    let mut out = Vec::new();
    for (di, pop) in pops.iter().enumerate() {
        for &protocol in &config.protocols {
            for &epsilon in &config.epsilons {
                let spec = build_protocol(protocol, pop.d(), epsilon).map_err(|e| e.to_string());
                out.push(Group {
                    dataset: di,
                    protocol,
                    epsilon,
                    spec,
                });
            }
        }
    }
    out
}

/// Executes every cell of the matrix `config.repeats` times.
///
/// A failing cell is recorded in its [`CellResult`] and the rest of the
/// matrix still runs; only config and dataset problems abort.
pub fn run_matrix(config: &ExperimentConfig, exec: &ExecPolicy) -> Result<ResultMap> {
    config.validate()?;
    let pops = resolve_datasets(config, exec)?;
    run_matrix_on(config, &pops, exec)
}

/// [`run_matrix`] over already resolved populations, one per config dataset.
pub fn run_matrix_on(
    config: &ExperimentConfig,
    pops: &[Arc<Population>],
    exec: &ExecPolicy,
) -> Result<ResultMap> {
    let plan = SeedPlan::new(config.master_seed, config.chunk_count)?;
    let groups = groups(config, pops);
    let runs = config.repeats;
    let generators: Vec<_> = config
        .datasets
        .iter()
        .map(|d| d.source.generator())
        .collect();

    // one task per (group, run): a grid of per-(pp, metric) outcomes
    let outcomes = exec.map_indices(groups.len() * runs, |task| {
        let (gi, run) = (task / runs, task % runs);
        let group = &groups[gi];
        let spec = group.spec.as_ref().map_err(Clone::clone)?;
        let pop = match (&generators[group.dataset], config.resample_population) {
            (Some(generator), true) => {
                let mut g = generator.clone();
                g.seed = plan.population_seed(gi, run).map_err(|e| e.to_string())?;
                let mut p =
                    datasets::generate(&g, &ExecPolicy::sequential()).map_err(|e| e.to_string())?;
                p.name = pops[group.dataset].name.clone();
                Arc::new(p)
            }
            _ => pops[group.dataset].clone(),
        };
        let sketch =
            simulate_sketch(spec, &pop, gi, run, &plan, exec).map_err(|e| e.to_string())?;
        let f = datasets::true_frequencies(&pop).values;
        let fhat = estimate(spec, &sketch).map_err(|e| e.to_string())?.values;
        let ctx = EstimateContext { spec, n: sketch.n };
        Ok::<_, String>(
            config
                .pp
                .iter()
                .map(|&pp| {
                    let processed = postprocess::apply(pp, &fhat, ctx).map_err(|e| e.to_string());
                    config
                        .metrics
                        .iter()
                        .map(|&m| {
                            let (ftilde, _) = processed.as_ref().map_err(Clone::clone)?;
                            metrics::evaluate(m, &f, &ftilde.values).map_err(|e| e.to_string())
                        })
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>(),
        )
    });

    let mut results = ResultMap::new();
    for (gi, group) in groups.iter().enumerate() {
        let task_outcomes = &outcomes[gi * runs..(gi + 1) * runs];
        for (pi, &pp) in config.pp.iter().enumerate() {
            for (mi, &metric) in config.metrics.iter().enumerate() {
                let mut values = Vec::with_capacity(runs);
                let mut error = None;
                for outcome in task_outcomes {
                    match outcome.as_ref().map(|grid| &grid[pi][mi]) {
                        Ok(Ok(v)) => values.push(*v),
                        Ok(Err(e)) | Err(e) => {
                            error.get_or_insert_with(|| e.clone());
                        }
                    }
                }
                let key = CellKey {
                    dataset: pops[group.dataset].name.clone(),
                    protocol: group.protocol,
                    epsilon: group.epsilon,
                    pp,
                    metric,
                };
                let result = match error {
                    Some(e) => CellResult::failed(e),
                    None => CellResult::from_values(values),
                };
                results.insert(key, result);
            }
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::GeneratorConfig;
    use crate::protocols::DomainSpec;

    fn zipf_pop(n: usize, d: usize, seed: u64) -> Arc<Population> {
        Arc::new(datasets::gen_zipf(&GeneratorConfig::zipf(n, d, 1.5, seed)).unwrap())
    }

    fn small_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::new(
            vec![DatasetEntry::new(
                "z",
                DatasetSource::Zipf(SyntheticParams {
                    n: 5000,
                    d: 16,
                    mu: 0.0,
                    sd: 1.0,
                    s: 1.5,
                    seed: 3,
                }),
            )],
            vec![ProtocolKind::Grr],
        );
        c.epsilons = vec![1.0];
        c.pp = vec![PPMethod::NoPP, PPMethod::NormSub];
        c.repeats = 3;
        c.chunk_count = 4;
        c.master_seed = 11;
        c
    }

    #[test]
    fn noiseless_pipeline_is_exact() {
        let pop = zipf_pop(10_000, 8, 1);
        let spec = ProtocolSpec::with_probabilities(ProtocolKind::Grr, 8, 1.0, 1.0, 0.0).unwrap();
        let cell = ExperimentCell {
            dataset: pop,
            protocol: spec,
            pp: PPMethod::NoPP,
            metric: MetricKind::L1,
        };
        let out = run_once(&cell, 0, 0, &SeedPlan::new(1, 1).unwrap()).unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let pop = zipf_pop(20_000, 32, 2);
        let spec = build_protocol(ProtocolKind::Olh, 32, 1.0).unwrap();
        let cell = ExperimentCell {
            dataset: pop,
            protocol: spec,
            pp: PPMethod::NormSub,
            metric: MetricKind::L1,
        };
        let plan = SeedPlan::new(5, 1).unwrap();
        let a = run_once(&cell, 3, 1, &plan).unwrap();
        let b = run_once(&cell, 3, 1, &plan).unwrap();
        assert_eq!(a, b);
        let c = run_once(&cell, 3, 2, &plan).unwrap();
        assert_ne!(a.sketch, c.sketch);
    }

    #[test]
    fn chunking_does_not_change_results() {
        let pop = zipf_pop(3 * USER_BLOCK + 123, 24, 4);
        for kind in ProtocolKind::ALL {
            let spec = build_protocol(kind, 24, 0.8).unwrap();
            let cell = ExperimentCell {
                dataset: pop.clone(),
                protocol: spec,
                pp: PPMethod::Norm,
                metric: MetricKind::L2,
            };
            let reference = run_once(&cell, 0, 0, &SeedPlan::new(9, 1).unwrap()).unwrap();
            for chunks in [1, 2, 8, 16] {
                let plan = SeedPlan::new(9, chunks).unwrap();
                for threads in [1, 4] {
                    let out = run_chunked(&cell, 0, 0, &plan, &ExecPolicy::with_threads(threads))
                        .unwrap();
                    assert_eq!(out, reference, "{kind} chunks={chunks} threads={threads}");
                }
            }
        }
    }

    #[test]
    fn sketch_merge_example() {
        let a = Sketch {
            support_counts: vec![1, 0],
            n: 1,
        };
        let b = Sketch {
            support_counts: vec![2, 3],
            n: 3,
        };
        assert_eq!(a.merged(&b).unwrap().support_counts, vec![3, 3]);
    }

    #[test]
    fn matrix_cardinality_and_determinism() {
        let config = small_config();
        let a = run_matrix(&config, &ExecPolicy::sequential()).unwrap();
        assert_eq!(a.len(), 2);
        for r in a.values() {
            assert_eq!(r.per_run_values.len(), 3);
            assert!(r.error.is_none());
            let recomputed = r.per_run_values.iter().sum::<f64>() / 3.0;
            assert!((r.mean - recomputed).abs() <= 1e-15 * recomputed.abs());
        }
        let b = run_matrix(&config, &ExecPolicy::with_threads(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn matrix_matches_single_cell_pipeline() {
        let config = small_config();
        let pops = resolve_datasets(&config, &ExecPolicy::sequential()).unwrap();
        let results = run_matrix_on(&config, &pops, &ExecPolicy::sequential()).unwrap();
        let plan = SeedPlan::new(config.master_seed, config.chunk_count).unwrap();
        let spec = build_protocol(ProtocolKind::Grr, 16, 1.0).unwrap();
        for pp in [PPMethod::NoPP, PPMethod::NormSub] {
            let cell = ExperimentCell {
                dataset: pops[0].clone(),
                protocol: spec.clone(),
                pp,
                metric: MetricKind::L1,
            };
            let values: Vec<f64> = (0..3)
                .map(|r| run_once(&cell, 0, r, &plan).unwrap().value)
                .collect();
            assert_eq!(results[&cell.key()].per_run_values, values);
        }
    }

    #[test]
    fn failing_cells_are_recorded() {
        let mut config = small_config();
        // e^800 overflows, so no protocol instance exists at that budget
        config.epsilons = vec![1.0, 800.0];
        config.protocols = vec![ProtocolKind::Grr, ProtocolKind::Olh];
        let results = run_matrix(&config, &ExecPolicy::sequential()).unwrap();
        assert_eq!(results.len(), 8);
        for (key, r) in &results {
            if key.epsilon == 800.0 {
                assert!(r.error.is_some() && r.per_run_values.is_empty(), "{key:?}");
            } else {
                assert!(r.error.is_none());
                assert_eq!(r.per_run_values.len(), 3);
            }
        }
    }

    #[test]
    fn resampling_population_changes_truth_per_run() {
        let mut config = small_config();
        config.resample_population = true;
        let fixed = run_matrix(&small_config(), &ExecPolicy::sequential()).unwrap();
        let resampled = run_matrix(&config, &ExecPolicy::sequential()).unwrap();
        assert_ne!(fixed, resampled);
        assert_eq!(
            resampled,
            run_matrix(&config, &ExecPolicy::with_threads(2)).unwrap()
        );
    }

    #[test]
    fn population_domain_must_match_protocol() {
        let pop = Population::new("p", vec![0, 1], DomainSpec::new(2).unwrap()).unwrap();
        let spec = build_protocol(ProtocolKind::Grr, 3, 1.0).unwrap();
        let plan = SeedPlan::new(0, 1).unwrap();
        assert!(simulate_sketch(&spec, &pop, 0, 0, &plan, &ExecPolicy::sequential()).is_err());
    }

    #[test]
    fn cell_key_order() {
        let key = |ds: &str, p: ProtocolKind, e: f64, pp: PPMethod| CellKey {
            dataset: ds.into(),
            protocol: p,
            epsilon: e,
            pp,
            metric: MetricKind::L1,
        };
        let mut keys = vec![
            key("b", ProtocolKind::Grr, 1.0, PPMethod::NoPP),
            key("a", ProtocolKind::Oue, 1.0, PPMethod::NoPP),
            key("a", ProtocolKind::Blh, 2.0, PPMethod::NoPP),
            key("a", ProtocolKind::Blh, 0.5, PPMethod::Power),
            key("a", ProtocolKind::Blh, 0.5, PPMethod::BasePos),
        ];
        keys.sort();
        let order: Vec<_> = keys
            .iter()
            .map(|k| (k.dataset.as_str(), k.protocol, k.epsilon, k.pp))
            .collect();
        assert_eq!(
            order,
            vec![
                ("a", ProtocolKind::Blh, 0.5, PPMethod::BasePos),
                ("a", ProtocolKind::Blh, 0.5, PPMethod::Power),
                ("a", ProtocolKind::Blh, 2.0, PPMethod::NoPP),
                ("a", ProtocolKind::Oue, 1.0, PPMethod::NoPP),
                ("b", ProtocolKind::Grr, 1.0, PPMethod::NoPP),
            ]
        );
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
