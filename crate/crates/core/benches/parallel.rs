use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fdaopt::data::{dirichlet_partition, synth_generate, synth_holdout, CohortSpec, PartitionSpec, SyntheticSpec};
use fdaopt::engine::{run_training, Algorithm, EngineConfig};
use fdaopt::exec::Execution;
use fdaopt::model::ModelSpec;
use fdaopt::optim::OptimizerSpec;
use fdaopt::sketch::{AmsSketcher, SketchConfig};
use fdaopt::variance::{SketchProbe, VarianceProbe};
use fdaopt::ParamVector;
use std::hint::black_box;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn training(c: &mut Criterion) {
    let spec = SyntheticSpec {
        input_dim: 20,
        num_classes: 10,
        samples_per_class: 100,
        separation: 4.0,
        seed: 0,
    };
    let data = synth_generate(&spec).unwrap();
    let eval = synth_holdout(&spec, 20).unwrap();
    let fd = dirichlet_partition(&data, &PartitionSpec { num_clients: 10, alpha: 1.0, seed: 0 }).unwrap();
    let model = ModelSpec::mlp(20, 32, 10, 0);

    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    for alg in [Algorithm::FedOpt, Algorithm::FdaOpt] {
        for (name, execution) in MODES {
            let cfg = EngineConfig {
                tau: 12,
                total_rounds: 3,
                cohort: CohortSpec { cohort_size: 10, seed: 0 },
                batch_size: 8,
                execution,
                ..EngineConfig::new(alg, OptimizerSpec::sgd(0.1), OptimizerSpec::fedavg_server())
            };
            group.bench_with_input(BenchmarkId::new(alg.name(), name), &cfg, |b, cfg| {
                b.iter(|| run_training(cfg, &fd, &eval, &model).unwrap())
            });
        }
    }
    group.finish();
}

fn probe(c: &mut Criterion) {
    let d = 20_000;
    let drifts: Vec<ParamVector> = (0..10)
        .map(|k| ParamVector::new((0..d).map(|i| ((i * 31 + k * 7) % 97) as f64 * 1e-3).collect()).unwrap())
        .collect();
    let sketch = SketchConfig::default();

    let mut group = c.benchmark_group("variance_probe");
    group.sample_size(10);
    for (name, execution) in MODES {
        let mut probe = SketchProbe::new(AmsSketcher::new(sketch, d).unwrap(), execution);
        group.bench_function(name, |b| b.iter(|| probe.estimate(0, 0, black_box(&drifts)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, training, probe);
criterion_main!(benches);
