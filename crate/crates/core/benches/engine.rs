use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ldpbench::datasets::{gen_zipf, GeneratorConfig};
use ldpbench::engine::{run_chunked, ExperimentCell};
use ldpbench::metrics::MetricKind;
use ldpbench::postprocess::PPMethod;
use ldpbench::protocols::{build_protocol, ProtocolKind};
use ldpbench::seed::SeedPlan;
use ldpbench::ExecPolicy;

fn sequential_vs_parallel(c: &mut Criterion) {
    let pop = Arc::new(gen_zipf(&GeneratorConfig::zipf(200_000, 128, 1.5, 1)).unwrap());
    let plan = SeedPlan::new(7, 16).unwrap();
    let mut group = c.benchmark_group("run_chunked");
    group.sample_size(10);
    for kind in [ProtocolKind::Grr, ProtocolKind::Olh, ProtocolKind::Oue] {
        let cell = ExperimentCell {
            dataset: pop.clone(),
            protocol: build_protocol(kind, 128, 1.0).unwrap(),
            pp: PPMethod::NormSub,
            metric: MetricKind::L1,
        };
        for (label, exec) in [
            ("sequential", ExecPolicy::sequential()),
            ("parallel", ExecPolicy::default()),
        ] {
            group.bench_with_input(BenchmarkId::new(label, kind.name()), &exec, |b, exec| {
                b.iter(|| run_chunked(&cell, 0, 0, &plan, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, sequential_vs_parallel);
criterion_main!(benches);
