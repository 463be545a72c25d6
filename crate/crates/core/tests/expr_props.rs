use proptest::prelude::*;

use oistab::expr::{differentiate, parse, simplify, Bindings, Expr, Func, Var};

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (1usize..=2).prop_map(Expr::x),
        (-3.0f64..3.0).prop_map(|c| Expr::Const((c * 8.0).round() / 8.0)),
    ]
}

fn expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a - b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a * b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a / (Expr::Const(2.0) + b.powi(2))),
            inner.clone().prop_map(|a| -a),
            (inner.clone(), 1i32..=3).prop_map(|(a, k)| a.powi(k)),
            (inner, 0usize..5).prop_map(|(a, f)| {
                let func = [Func::Sin, Func::Cos, Func::Exp, Func::Atan, Func::Tanh][f];
                let arg = if func == Func::Exp { Expr::call(Func::Tanh, a) } else { a };
                Expr::call(func, arg)
            }),
        ]
    })
}

fn at(e: &Expr, x: [f64; 2]) -> Option<f64> {
    e.eval(&Bindings::new().with_state(&x)).ok().filter(|v| v.is_finite() && v.abs() < 1e6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn derivative_matches_central_difference(e in expr(), x1 in -1.5f64..1.5, x2 in -1.5f64..1.5, which in 1usize..=2) {
        let var = Var::State(which);
        let d = differentiate(&e, &var);
        let x = [x1, x2];
        let h = 1e-5;
        let (mut lo, mut hi) = (x, x);
        lo[which - 1] -= h;
        hi[which - 1] += h;
        if let (Some(sym), Some(a), Some(b), Some(c)) = (at(&d, x), at(&e, hi), at(&e, lo), at(&e, x)) {
            let fd = (a - b) / (2.0 * h);
            let scale = 1.0 + sym.abs() + c.abs();
            prop_assert!((fd - sym).abs() <= 1e-5 * scale, "{e}: {sym} vs {fd}");
        }
    }

    #[test]
    fn simplify_preserves_value(e in expr(), x1 in -2.0f64..2.0, x2 in -2.0f64..2.0) {
        let s = simplify(&e);
        if let (Some(a), Some(b)) = (at(&e, [x1, x2]), at(&s, [x1, x2])) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{e} -> {s}: {a} vs {b}");
        }
    }

    #[test]
    fn display_parses_back(e in expr(), x1 in -2.0f64..2.0, x2 in -2.0f64..2.0) {
        let text = e.to_string();
        let back = parse(&text).map_err(|err| TestCaseError::fail(format!("{text}: {err}")))?;
        if let (Some(a), Some(b)) = (at(&e, [x1, x2]), at(&back, [x1, x2])) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{text}: {a} vs {b}");
        }
    }
}
