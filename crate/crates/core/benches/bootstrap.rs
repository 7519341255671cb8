//! Sequential against parallel bootstrap of one meta-d' cell.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use metasdt::binning::{fit_bins, BinStrategy};
use metasdt::estimate::{bootstrap_cell, fit_cell, rate_trials};
use metasdt::inference::{cell_key, BootstrapConfig};
use metasdt::par::Execution;
use metasdt::simulator::{simulate, ObserverSpec};

fn bootstrap(c: &mut Criterion) {
    let trials = simulate(&ObserverSpec {
        sigma_meta: 0.5,
        ..ObserverSpec::ideal(1.5, 2000, 1)
    })
    .unwrap();
    let scheme = fit_bins(&trials, 4, BinStrategy::Quantile).unwrap();
    let point = fit_cell(&trials, &scheme, 1.0).unwrap();
    let rated = rate_trials(&trials, &scheme);

    let mut group = c.benchmark_group("bootstrap_cell");
    group.sample_size(10);
    for resamples in [100, 400] {
        for (name, execution) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            let cfg = BootstrapConfig {
                n_resamples: resamples,
                execution,
                ..Default::default()
            };
            group.bench_with_input(BenchmarkId::new(name, resamples), &cfg, |b, cfg| {
                b.iter(|| bootstrap_cell(&rated, 4, 1.0, &point, cfg, cell_key("bench")).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bootstrap);
criterion_main!(benches);
