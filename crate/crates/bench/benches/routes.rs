use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use streetpattern_bench::{random_route, samples_along};
use streetpattern_core::routeviz::{distribution, images_near, segment_route};
use streetpattern_core::{RouteTrajectory, Side};

fn bench_segments(c: &mut Criterion) {
    let route = random_route(40, 2);
    let samples = samples_along(route.length_m(), 6, 2);
    let traj = RouteTrajectory::new("1", Side::Left, "bench", route, samples).unwrap();
    c.bench_function("segment_route_200m", |b| b.iter(|| segment_route(black_box(&traj), 200.0).unwrap()));
    c.bench_function("distribution", |b| b.iter(|| distribution(black_box(&traj)).unwrap()));
    let mid = traj.length_m() / 2.0;
    c.bench_function("images_near_8", |b| b.iter(|| images_near(black_box(&traj), mid, 8).unwrap()));
}

criterion_group!(benches, bench_segments);
criterion_main!(benches);
