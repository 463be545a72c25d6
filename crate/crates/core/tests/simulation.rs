use oistab::expr::parse;
use oistab::jets::JetTable;
use oistab::simulation::{integrate, integrate_with, IntegrateOptions, InputSignal, SineTerm, TrajectoryStatus};
use oistab::system::{builtin, SystemModel};

fn scalar(f: &str) -> SystemModel {
    SystemModel::new("scalar", 1, 1, vec![parse(f).unwrap()], vec![parse("x1").unwrap()])
}

#[test]
fn first_order_lag_matches_closed_form() {
    // x' = -x + u, u = 2: x(t) = 2 + (x0 - 2) e^-t.
    let traj = integrate(&scalar("-x1 + u1"), &[0.5], &InputSignal::constant(&[2.0]), 3.0, 1e-2).unwrap();
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let exact = 2.0 + (0.5 - 2.0) * (-t).exp();
        assert!((x[0] - exact).abs() < 1e-9, "t = {t}");
    }
}

#[test]
fn convergence_order_is_four() {
    let model = scalar("-x1^3 + sin(u1)");
    let u = InputSignal::Sinusoid { terms: vec![vec![SineTerm { amp: 1.0, freq: 2.0, phase: 0.0 }]] };
    let end = |dt: f64| integrate(&model, &[1.0], &u, 2.0, dt).unwrap().final_state()[0];
    let reference = end(1e-4);
    let ratio = (end(0.1) - reference).abs() / (end(0.05) - reference).abs();
    assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn finite_escape_is_reported() {
    // x' = x^2 from 1 blows up at t = 1.
    let traj = integrate(&scalar("x1^2"), &[1.0], &InputSignal::zero(1), 2.0, 1e-3).unwrap();
    match traj.status {
        TrajectoryStatus::Escaped { t } => assert!((0.99..=1.0).contains(&t), "escape at {t}"),
        other => panic!("expected escape, got {other:?}"),
    }
}

#[test]
fn normal_form_jets_follow_the_chain() {
    // y = x1, y' = x2, y'' = x3, y''' = sin(x4) + (2 + tanh(x4)) u.
    let model = builtin("normal_form_r").unwrap();
    let table = JetTable::uniform(&model, 3).unwrap();
    assert_eq!(table.h(0, 1), &parse("x2").unwrap());
    assert_eq!(table.h(0, 2), &parse("x3").unwrap());
    let x = [0.1, 0.2, 0.3, 0.7];
    let u = 1.3;
    let b = oistab::expr::Bindings::new().with_state(&x).with_input(&[u]);
    let got = table.h(0, 3).eval(&b).unwrap();
    let expected = 0.7f64.sin() + (2.0 + 0.7f64.tanh()) * u;
    assert!((got - expected).abs() < 1e-12);
}

#[test]
fn piecewise_input_refuses_derivatives() {
    let model = builtin("integrator").unwrap();
    let u = InputSignal::PiecewiseConstant { switches: vec![0.0, 1.0], values: vec![vec![1.0], vec![-1.0]] };
    let opts = IntegrateOptions { input_order: 1, time_breaks: Vec::new() };
    assert!(integrate_with(&model, &[0.0], &u, 2.0, 1e-2, &opts).is_err());
}
