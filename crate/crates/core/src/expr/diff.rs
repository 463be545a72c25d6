use super::{simplify, Expr, Func, Var};

/// Partial derivative of `e` with respect to `var`, simplified.
pub fn differentiate(e: &Expr, var: &Var) -> Expr {
    simplify(&raw(e, var))
}

fn raw(e: &Expr, var: &Var) -> Expr {
    if !e.mentions(&|v| v == var) {
        return Expr::zero();
    }
    let d = |a: &Expr| raw(a, var);
    match e {
        Expr::Const(_) => Expr::zero(),
        Expr::Var(v) => Expr::Const(if v == var { 1.0 } else { 0.0 }),
        Expr::Neg(a) => -d(a),
        Expr::Add(a, b) => d(a) + d(b),
        Expr::Sub(a, b) => d(a) - d(b),
        Expr::Mul(a, b) => d(a) * (**b).clone() + (**a).clone() * d(b),
        Expr::Div(a, b) => {
            (d(a) * (**b).clone() - (**a).clone() * d(b)) / (**b).clone().powi(2)
        }
        Expr::Pow(a, k) => {
            if *k == 0 {
                Expr::zero()
            } else {
                Expr::Const(f64::from(*k)) * (**a).clone().powi(k - 1) * d(a)
            }
        }
        Expr::Call(f, a) => {
            let arg = (**a).clone();
            let outer = match f {
                Func::Sin => Expr::call(Func::Cos, arg),
                Func::Cos => -Expr::call(Func::Sin, arg),
                Func::Exp => Expr::call(Func::Exp, arg),
                Func::Atan => Expr::one() / (Expr::one() + arg.powi(2)),
                Func::Tanh => Expr::one() - Expr::call(Func::Tanh, arg).powi(2),
            };
            outer * d(a)
        }
        Expr::Tab(t, a) => {
            let mut next = t.clone();
            next.order += 1;
            Expr::Tab(next, a.clone()) * d(a)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn d(src: &str, v: Var) -> Expr {
        differentiate(&parse(src).unwrap(), &v)
    }

    #[test]
    fn product_rule() {
        assert_eq!(d("x1*x2", Var::State(1)), Expr::x(2));
    }

    #[test]
    fn atan_chain_rule() {
        let got = d("atan(u1)", Var::input(1));
        let want = simplify(&parse("1/(1 + u1^2)").unwrap());
        assert_eq!(got, want);
    }

    #[test]
    fn constant_and_foreign_variable() {
        assert!(d("3.5", Var::State(1)).is_zero());
        assert!(d("sin(x2)", Var::State(1)).is_zero());
    }

    #[test]
    fn closed_over_operator_set() {
        let e = parse("tanh(x1*u1) / (2 + cos(x1)) + exp(-x1^2)").unwrap();
        let once = differentiate(&e, &Var::State(1));
        let twice = differentiate(&once, &Var::State(1));
        assert!(twice.vars().iter().all(|v| matches!(v, Var::State(1) | Var::Input { .. })));
    }
}
