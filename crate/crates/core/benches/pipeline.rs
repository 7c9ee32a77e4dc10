//! Default rayon pool vs. a single worker for the data-parallel stages.
//!
//! Build with `--no-default-features` to time the plain sequential loops
//! instead of a one-thread pool.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use devexplain::anova::{decompose_deviation, draw_background, BackgroundInput, Order};
use devexplain::attribution::shapley_values;
use devexplain::dataset::{generate_synthetic, SyntheticSpec};
use devexplain::inverse::{direct_search_map, PosteriorObjective, SearchBudget};
use devexplain::mixtures::{fit_gmm, FeaturePriors};
use devexplain::models::{fit_gbt, fit_linear, residual_stats, GbtParams};
use devexplain::par;

fn compare_pools(c: &mut Criterion, name: &str, f: impl Fn() + Sync) {
    let mut group = c.benchmark_group(name);
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("pool", "default"), |b| b.iter(&f));
    group.bench_function(BenchmarkId::new("pool", "single"), |b| b.iter(|| par::single_threaded(&f)));
    group.finish();
}

fn pipeline(c: &mut Criterion) {
    let spec = SyntheticSpec::trimodal_benchmark();
    let priors = FeaturePriors::from_specs(&spec.features).unwrap();
    let data = generate_synthetic(&spec, 2000, 0).unwrap();
    let linear = fit_linear(&data).unwrap();
    let gbt = fit_gbt(&data, &GbtParams { n_trees: 100, ..GbtParams::default() }).unwrap();
    let sigma2 = residual_stats(&linear, &data, None).unwrap().likelihood_variance();
    let bg = draw_background(BackgroundInput::Prior(&priors), 2000, 1).unwrap();
    let x_obs = [-2.5, -1.7, -2.0];
    let x_ref = [7.96, 7.91, -0.16];

    compare_pools(c, "map_search", || {
        let obj = PosteriorObjective::new(&linear, &priors, 15.7, sigma2).unwrap();
        black_box(direct_search_map(&obj, &priors, &SearchBudget::default_for(&priors), 0).unwrap());
    });
    compare_pools(c, "decomposition_second_order", || {
        black_box(decompose_deviation(&gbt, &bg, &x_obs, &x_ref, -6.2, 15.7, Order::Second).unwrap());
    });
    compare_pools(c, "shapley", || {
        black_box(shapley_values(&gbt, &bg, &x_obs).unwrap());
    });
    compare_pools(c, "label_gmm_k6", || {
        black_box(fit_gmm(data.labels(), 6, 0).unwrap());
    });
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
