//! Sequential against rayon execution for the two data-parallel hot paths:
//! super-batch gradient evaluation and the per-run fan-out of a suite.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use poer::exec::Exec;
use poer::expcli::{run_experiment, ExperimentSuite, RunConfig};
use poer::trainer::{collect_batch, initial_models, super_batch_gradients, SuperBatchItem, TrainSetup, WorkerState};

fn modes() -> Vec<(&'static str, Exec)> {
    let mut m = vec![("sequential", Exec::Sequential)];
    if Exec::parallel_available() {
        m.push(("parallel", Exec::Parallel));
    }
    m
}

fn gradients(c: &mut Criterion) {
    let setup = TrainSetup::default();
    let (net, mut rnd) = initial_models(&setup).unwrap();
    let mut worker = WorkerState::new(0, setup.env.build().unwrap(), 0);
    let mut group = c.benchmark_group("super_batch_gradients");
    group.sample_size(10);
    for s in [8, 64] {
        let items: Vec<SuperBatchItem> = (0..s)
            .map(|i| SuperBatchItem {
                batch: collect_batch(&mut worker, &net, &mut rnd, &setup.agent, setup.trainer.batch_steps)
                    .unwrap()
                    .batch,
                replayed: i % 3 == 2,
            })
            .collect();
        let seeds: Vec<u64> = (0..s as u64).collect();
        let loss = setup.agent.loss();
        for (name, exec) in modes() {
            group.bench_with_input(BenchmarkId::new(name, s), &items, |b, items| {
                b.iter(|| black_box(super_batch_gradients(items, &seeds, &net, &rnd, &loss, exec).unwrap()))
            });
        }
    }
    group.finish();
}

fn suite(c: &mut Criterion) {
    let mut base = RunConfig::default();
    base.env.chain_length = 10;
    base.env.frame_stack = 1;
    base.agent.hidden = 16;
    base.rnd.hidden = 16;
    base.trainer.workers = 2;
    base.trainer.batch_steps = 16;
    base.trainer.super_batch = 8;
    base.trainer.total_steps = 5_000;
    base.trainer.sync = true;
    let suite = ExperimentSuite::replay_frequency(base, vec![0, 1]);
    let dir = tempfile::tempdir().unwrap();
    let mut group = c.benchmark_group("run_experiment");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_function(name, |b| {
            b.iter(|| black_box(run_experiment(&suite, &dir.path().join(name), exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, gradients, suite);
criterion_main!(benches);
