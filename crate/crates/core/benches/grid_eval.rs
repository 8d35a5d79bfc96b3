use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use landscape::data::{make_synthetic, Split, SyntheticKind};
use landscape::directions::{random_direction, IgnorePolicy, Scheme};
use landscape::model::{ModelSpec, Network};
use landscape::objective::NetworkObjective;
use landscape::par::Execution;
use landscape::surface::{grid_2d, AxisSpec};

fn grid_eval(c: &mut Criterion) {
    let spec = ModelSpec::mlp(2, 2, 32, 2, true, true);
    let (net, theta) = Network::build(&spec, 0).unwrap();
    let data = make_synthetic(SyntheticKind::TwoMoons, 512, 0.2, 0, Split::Train).unwrap();
    let obj = NetworkObjective::new(&net, &data, None);
    let dx = random_direction(&theta, 0, Scheme::Filter, IgnorePolicy::BiasBn);
    let dy = random_direction(&theta, 1, Scheme::Filter, IgnorePolicy::BiasBn);
    let mut group = c.benchmark_group("grid_2d");
    group.sample_size(10);
    for steps in [11, 21] {
        let axis = AxisSpec::new(-1.0, 1.0, steps).unwrap();
        for (name, exec) in [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)] {
            group.bench_with_input(BenchmarkId::new(name, steps * steps), &axis, |b, &axis| {
                b.iter(|| grid_2d(&obj, &theta, &dx, &dy, axis, axis, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, grid_eval);
criterion_main!(benches);
