use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use oifuse::evaluate::leave_one_out_pixels;
use oifuse::pipeline::{fit_fusion, run_filter};
use oifuse::{
    build_climatology, filter_series, filter_step, generate_site, ClimatologyOptions,
    FusionOptions, GaussianBelief, Observation, ObservationModel, SyntheticConfig,
};
use oifuse_bench::Fixture;

fn step(c: &mut Criterion) {
    let obs = ObservationModel::new(1.0, 0.0075).unwrap();
    let clim = GaussianBelief::new(0.1, 0.01);
    let fusion = GaussianBelief::new(0.3, 0.03);
    c.bench_function("filter_step", |b| {
        b.iter(|| {
            filter_step(
                black_box(clim),
                black_box(Some(fusion)),
                Observation::valid(0.2),
                &obs,
            )
        })
    });
}

fn stages(c: &mut Criterion) {
    let fx = Fixture::new(64);
    let n = fx.inputs.len() as u64;

    let mut g = c.benchmark_group("stages_64x64");
    g.sample_size(10);

    g.throughput(Throughput::Elements(n));
    g.bench_function("filter_series", |b| {
        b.iter(|| {
            for p in &fx.inputs {
                black_box(
                    filter_series(&p.clim_by_month, &p.fusion_by_step, &p.series, &fx.obs).unwrap(),
                );
            }
        })
    });
    g.bench_function("run_filter", |b| {
        b.iter(|| run_filter(&fx.inputs, &fx.obs).unwrap())
    });
    g.bench_function("leave_one_out", |b| {
        b.iter(|| leave_one_out_pixels(&fx.inputs, &fx.obs).unwrap())
    });
    g.bench_function("build_climatology", |b| {
        b.iter(|| build_climatology(&fx.archive, &ClimatologyOptions::default()).unwrap())
    });
    g.bench_function("fit_fusion", |b| {
        b.iter(|| fit_fusion(&fx.data, fx.years, &FusionOptions::default()).unwrap())
    });
    g.finish();
}

fn simulate(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    g.bench_function("64x64", |b| {
        b.iter_batched(
            || SyntheticConfig {
                width: 64,
                height: 64,
                ..SyntheticConfig::default()
            },
            |cfg| generate_site(&cfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

criterion_group!(benches, step, stages, simulate);
criterion_main!(benches);
