use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use mtclf_bench::{opposing_goals, plane, ring_of_goals, shared_goal};
use mtclf_core::controller::{build_qp, control_step, solve_qp};
use mtclf_core::ControllerConfig;
use nalgebra::dvector;

fn qp(c: &mut Criterion) {
    let model = plane();
    let cfg = ControllerConfig::default();
    let x = dvector![0.4, 0.3];
    let mut group = c.benchmark_group("qp_solve");
    for n in [2, 4, 8, 16] {
        let tasks = ring_of_goals(n);
        let data = build_qp(&tasks, &model, &x, &cfg).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &data, |b, data| {
            b.iter(|| solve_qp(black_box(data), &cfg, None))
        });
    }
    group.finish();
}

fn control(c: &mut Criterion) {
    let model = plane();
    let cfg = ControllerConfig::default();
    let x = dvector![0.5, 0.5];
    for (name, tasks) in [("opposing", opposing_goals()), ("shared", shared_goal())] {
        c.bench_function(&format!("control_step/{name}"), |b| {
            b.iter(|| control_step(&tasks, &model, black_box(&x), &cfg, None).unwrap())
        });
    }
    let tasks = shared_goal();
    let warm = control_step(&tasks, &model, &x, &cfg, None).unwrap().warm_start();
    c.bench_function("control_step/shared_warm", |b| {
        b.iter(|| control_step(&tasks, &model, black_box(&x), &cfg, Some(&warm)).unwrap())
    });
}

criterion_group!(benches, qp, control);
criterion_main!(benches);
