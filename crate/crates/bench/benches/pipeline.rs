use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use traypick_bench::fixture;
use traypick_core::experiment::run_trial;
use traypick_core::planner::fit_ellipse;
use traypick_core::{execute_grasp, generate_scene, plan, ExperimentConfig, RefillPolicy};

const ARCHETYPES: [&str; 3] = ["fried_chicken", "mushroom", "sausage"];

fn bench_generate(c: &mut Criterion) {
    let mut g = c.benchmark_group("generate_scene");
    for name in ARCHETYPES {
        let cfg = ExperimentConfig::for_archetype(name);
        let scene_cfg = cfg.scene_config();
        let mut seed = 0u64;
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                seed += 1;
                generate_scene(&scene_cfg, &cfg.library, black_box(seed)).unwrap()
            })
        });
    }
    g.finish();
}

fn bench_fit(c: &mut Criterion) {
    let (_, _, seen) = fixture("fried_chicken", 7);
    let mask = &seen.masks.masks[0].mask;
    c.bench_function("fit_ellipse", |b| b.iter(|| fit_ellipse(black_box(mask)).unwrap()));
}

fn bench_plan(c: &mut Criterion) {
    let mut g = c.benchmark_group("plan");
    for name in ARCHETYPES {
        let (cfg, _, seen) = fixture(name, 7);
        let arch = cfg.library.get(name).unwrap();
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| plan(&seen.masks, &seen.depth, arch, &cfg.finger.geometry, true).unwrap())
        });
    }
    g.finish();
}

fn bench_grasp(c: &mut Criterion) {
    let (cfg, scene, seen) = fixture("fried_chicken", 7);
    let arch = cfg.library.get("fried_chicken").unwrap();
    let planned = plan(&seen.masks, &seen.depth, arch, &cfg.finger.geometry, true).unwrap();
    let target = planned.target_candidate().expect("fixture has a target").clone();
    c.bench_function("execute_grasp", |b| {
        b.iter_batched(
            || scene.clone(),
            |mut s| execute_grasp(&mut s, &target, &cfg.finger, &cfg.capture),
            criterion::BatchSize::LargeInput,
        )
    });
}

fn bench_trial(c: &mut Criterion) {
    let cfg = ExperimentConfig {
        refill: RefillPolicy::FreshSceneEachAttempt,
        ..ExperimentConfig::for_archetype("mushroom")
    };
    let mut attempt = 0u32;
    c.bench_function("run_trial/fresh", |b| {
        b.iter(|| {
            attempt += 1;
            run_trial(&cfg, black_box(attempt)).unwrap()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_generate, bench_fit, bench_plan, bench_grasp, bench_trial
}
criterion_main!(benches);
