use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use oistab::certifier::{falsify, FalsifyOptions};
use oistab::jets::jet_along_trajectory;
use oistab::linear::{transmission_zeros, LinearSystem};
use oistab::relative_degree::{affine_relative_degree, general_relative_degree, RelDegOptions};
use oistab::simulation::{integrate, integrate_with, IntegrateOptions};
use oistab::system::builtin;
use oistab::{parse, InputSignal, JetTable};

fn symbolic(c: &mut Criterion) {
    let e = parse("sin(x1*x2) + exp(-x3^2)*u1 + atan(x4)/(1 + x1^2)").unwrap();
    c.bench_function("parse_differentiate_simplify", |b| {
        b.iter(|| {
            let d = oistab::expr::differentiate(black_box(&e), &oistab::Var::State(1));
            black_box(oistab::expr::simplify(&d))
        })
    });
    let model = builtin("example4").unwrap();
    c.bench_function("jets_example4_n3", |b| b.iter(|| JetTable::uniform(black_box(&model), 3).unwrap()));
}

fn verdicts(c: &mut Criterion) {
    let opts = RelDegOptions::default();
    let nf = builtin("normal_form_r").unwrap();
    c.bench_function("reldeg_affine_normal_form", |b| b.iter(|| affine_relative_degree(black_box(&nf), &opts).unwrap()));
    let eq25 = builtin("eq25").unwrap();
    c.bench_function("reldeg_general_eq25", |b| b.iter(|| general_relative_degree(black_box(&eq25), &opts).unwrap()));
    let sys = LinearSystem::companion(&[6.0, 11.0, 6.0], &[4.0, 1.0, 0.0]).unwrap();
    c.bench_function("transmission_zeros_companion", |b| b.iter(|| transmission_zeros(black_box(&sys)).unwrap()));
}

fn simulation(c: &mut Criterion) {
    let model = builtin("normal_form_r").unwrap();
    let u = InputSignal::constant(&[0.5]);
    let x0 = [0.1, -0.2, 0.3, 0.4];
    c.bench_function("rk4_normal_form_10k_steps", |b| {
        b.iter(|| integrate(black_box(&model), &x0, &u, 10.0, 1e-3).unwrap())
    });
    let table = JetTable::uniform(&model, 3).unwrap();
    let opts = IntegrateOptions {
        input_order: table.max_input_order().unwrap_or(0),
        ..IntegrateOptions::default()
    };
    let traj = integrate_with(&model, &x0, &u, 10.0, 1e-3, &opts).unwrap();
    c.bench_function("jets_along_trajectory", |b| b.iter(|| jet_along_trajectory(black_box(&table), &traj).unwrap()));
}

fn search(c: &mut Criterion) {
    let model = builtin("example5").unwrap();
    let opts = FalsifyOptions {
        order: 2,
        budget: 200,
        seed: 3,
    };
    let mut group = c.benchmark_group("falsify");
    group.sample_size(10);
    group.bench_function("example5_200_draws", |b| b.iter(|| falsify(black_box(&model), &opts).unwrap()));
    group.finish();
}

criterion_group!(benches, symbolic, verdicts, simulation, search);
criterion_main!(benches);
