use std::time::Instant;

use oistab::certifier::{
    certify, falsify, fit_envelope, fit_kl, lyapunov_check, simulate_ensemble, BoundSpec, EnsembleSpec,
    FalsifyOptions, InputFamily, LyapunovGrid, PropertyKind, Verdict,
};
use oistab::expr::parse;
use oistab::gains::{ClassKFn, ClassKLFn};
use oistab::simulation::Phi;
use oistab::system::{builtin, phi_lyapunov, phi_sigma1, SystemModel};

fn falsify_score(key: &str, budget: usize) -> f64 {
    let model = builtin(key).unwrap();
    let report = falsify(&model, &FalsifyOptions { order: 2, budget, seed: 7 }).unwrap();
    report.best.map_or(0.0, |b| b.score)
}

fn switching_ensemble(horizon: f64) -> EnsembleSpec {
    EnsembleSpec::new(3, 1, horizon, 1e-3)
        .with_families(vec![InputFamily::Switching])
        .with_box(0.0)
}

fn detectability(order: usize, beta: ClassKLFn, gamma: ClassKFn) -> BoundSpec {
    BoundSpec::new(
        PropertyKind::Detectability {
            orders: vec![order],
            uniform: true,
        },
        beta,
        gamma,
    )
}

#[test]
fn falsify_separates_example5_from_example4() {
    let t = Instant::now();
    let e5 = falsify_score("example5", 2000);
    let e4 = falsify_score("example4", 2000);
    let int = falsify_score("integrator", 200);
    eprintln!("example5 {e5:.3e} example4 {e4:.3e} integrator {int:.3e} in {:?}", t.elapsed());
    assert!(e5 > 100.0);
    assert!(e4 < 20.0);
    assert!(int <= 1.0 + 1e-9);
}

#[test]
fn eq25_detectability_under_switching_input() {
    let model = builtin("eq25").unwrap();
    let beta = ClassKLFn::exponential(1.0, 1.0).unwrap();
    let gamma = ClassKFn::power(1.0, 2).unwrap();
    let ens = switching_ensemble(12.0);
    let order1 = certify(&model, &detectability(1, beta.clone(), gamma.clone()).with_restarts(3), &ens).unwrap();
    assert_eq!(order1.verdict, Verdict::Holds, "{order1:?}");
    for a in [1.0, 10.0] {
        for rate in [0.5, 1.0] {
            for c in [1.0, 10.0] {
                let beta = ClassKLFn::exponential(a, rate).unwrap();
                let gamma = ClassKFn::polynomial(&[c, c]).unwrap();
                let spec = detectability(0, beta, gamma).with_restarts(3);
                let report = certify(&model, &spec, &ens).unwrap();
                assert_eq!(report.verdict, Verdict::Violated, "a={a} rate={rate} c={c}");
            }
        }
    }
}

#[test]
fn enlarging_gamma_keeps_holds() {
    let model = builtin("eq25").unwrap();
    let ens = EnsembleSpec::new(5, 8, 5.0, 1e-2);
    let beta = ClassKLFn::exponential(1.0, 1.0).unwrap();
    let gamma = ClassKFn::polynomial(&[1.0, 1.0]).unwrap();
    let small = certify(&model, &detectability(1, beta.clone(), gamma.clone()), &ens).unwrap();
    let large = certify(&model, &detectability(1, beta, gamma.scale_out(2.0).unwrap()), &ens).unwrap();
    assert_eq!(small.verdict, Verdict::Holds, "{small:?}");
    assert_eq!(large.verdict, Verdict::Holds);
    assert!(large.margin >= small.margin);
}

#[test]
fn violations_replay_identically() {
    let model = builtin("eq25").unwrap();
    let ens = EnsembleSpec::new(11, 6, 4.0, 1e-2);
    let spec = detectability(0, ClassKLFn::exponential(0.1, 1.0).unwrap(), ClassKFn::linear(0.1).unwrap());
    let a = certify(&model, &spec, &ens).unwrap();
    let b = certify(&model, &spec, &ens).unwrap();
    assert_eq!(a.verdict, Verdict::Violated);
    assert_eq!(a.worst, b.worst);
    assert_eq!(a.margin.to_bits(), b.margin.to_bits());
}

#[test]
fn zero_trajectory_fit_is_vacuous() {
    let model = builtin("integrator").unwrap();
    let ens = EnsembleSpec::new(1, 3, 2.0, 1e-2)
        .with_families(vec![InputFamily::Zero])
        .with_box(0.0);
    let members = simulate_ensemble(&model, &ens, 0).unwrap();
    let fit = fit_envelope(&model, 1, &members).unwrap();
    assert!(fit.vacuous);
    assert!(!fit.certifies());
}

#[test]
fn example5_fit_fails_with_probes() {
    let model = builtin("example5").unwrap();
    let ens = EnsembleSpec::new(2, 40, 2.0, 1e-2).with_families(vec![
        InputFamily::Zero,
        InputFamily::Constant,
        InputFamily::Probe { order: 2 },
        InputFamily::Probe { order: 2 },
    ]);
    let members = simulate_ensemble(&model, &ens, 1).unwrap();
    let fit = fit_envelope(&model, 2, &members).unwrap();
    assert!(fit.residual > 0.1, "{fit:?}");
}

#[test]
fn stable_scalar_fit_kl_certifies() {
    let model = SystemModel::new("decay", 1, 0, vec![parse("-x1").unwrap()], vec![parse("x1").unwrap()]);
    let ens = EnsembleSpec::new(4, 10, 5.0, 1e-2).with_families(vec![InputFamily::Zero]);
    let members = simulate_ensemble(&model, &ens, 0).unwrap();
    let fit = fit_kl(&members);
    assert!(fit.certifies(), "{fit:?}");
    // |x| = |x0| e^(-t); with a = 2 the fastest certified rate is 1 + ln 2 / T.
    let expected = 1.0 + 2f64.ln() / 5.0;
    assert!((fit.template.lambda - expected).abs() < 1e-3, "{fit:?}");
}

#[test]
fn lyapunov_examples() {
    let phi = Phi::new(50, 0.1);
    let sigma1 = phi_sigma1(&phi);
    let v = phi_lyapunov(&phi);
    let alpha = ClassKFn::power(1.0, 2).unwrap();
    let chi = ClassKFn::power(2.0, 2).unwrap();
    let grid = LyapunovGrid { x_box: 4.0, x_points: 801, u_box: 0.0, u_points: 1 };
    let report = lyapunov_check(&sigma1, &v, &alpha, &chi, 0, &grid).unwrap();
    assert!(report.holds, "{report:?}");

    let decay = SystemModel::new("decay", 1, 0, vec![parse("-x1").unwrap()], vec![parse("x1").unwrap()]);
    let v2 = parse("x1^2").unwrap();
    assert!(lyapunov_check(&decay, &v2, &alpha, &chi, 0, &LyapunovGrid::default()).unwrap().holds);

    let integrator = builtin("integrator").unwrap();
    let report = lyapunov_check(&integrator, &v2, &alpha, &chi, 0, &LyapunovGrid::default()).unwrap();
    assert!(!report.holds);
    let worst = report.worst.unwrap();
    assert!(worst.x[0] != 0.0 && worst.u[0].abs() == 10.0);

    assert!(lyapunov_check(&integrator, &parse("u1^2").unwrap(), &alpha, &chi, 0, &LyapunovGrid::default()).is_err());
}

#[test]
fn example4_assembled_gains_hold() {
    // |u1| = |y1'|, |u2| <= |y2''| + 2|y1'||y1''|, |x3| <= |y2'| + y1'^2 and
    // |x4(t)| <= |x4(0)| e^-t + ||y1||^3, each jet entry bounded by ||y^2||.
    let model = builtin("example4").unwrap();
    let beta = ClassKLFn::exponential(1.0, 1.0).unwrap();
    let gamma = ClassKFn::polynomial(&[5.0, 3.0, 1.0]).unwrap();
    let spec = BoundSpec::new(PropertyKind::OutputInput { n: 2 }, beta, gamma);
    let ens = EnsembleSpec::new(21, 50, 5.0, 1e-3);
    let report = certify(&model, &spec, &ens).unwrap();
    assert_eq!(report.verdict, Verdict::Holds, "{report:?}");
    assert!(report.margin > 0.0);
}

#[test]
fn example1_fit_rate_tracks_zero_dynamics() {
    let model = builtin("example1_linear").unwrap();
    let cert = oistab::linear::linear_certificate(model.linear.as_ref().unwrap()).unwrap();
    let mut families = InputFamily::smooth_defaults();
    families.push(InputFamily::ZeroOutput);
    families.push(InputFamily::ZeroOutput);
    let ens = EnsembleSpec::new(6, 24, 10.0, 1e-3).with_families(families);
    let members = simulate_ensemble(&model, &ens, 0).unwrap();
    let fit = fit_envelope(&model, cert.r, &members).unwrap();
    assert!(fit.certifies(), "{fit:?}");
    let ratio = fit.template.lambda / cert.lambda;
    assert!((0.25..=4.0).contains(&ratio), "fit {} vs certificate {}", fit.template.lambda, cert.lambda);
}
