use std::collections::HashMap;

use thiserror::Error;

use super::{Expr, Var};

/// Denominators (and bases of negative powers) smaller than this in magnitude
/// abort evaluation instead of producing huge or infinite values.
pub const DIVISION_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(Var),
    #[error("division by {value:e} (|denominator| < {DIVISION_GUARD:e})")]
    DivisionGuard { value: f64 },
    #[error("non-finite value produced")]
    NonFinite,
    #[error("{0}")]
    Domain(String),
}

/// Variable assignment used by [`Expr::eval`].
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    values: HashMap<Var, f64>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, var: Var, value: f64) -> &mut Self {
        self.values.insert(var, value);
        self
    }

    pub fn with(mut self, var: Var, value: f64) -> Self {
        self.values.insert(var, value);
        self
    }

    /// Binds `x1..xn` to `state`.
    pub fn with_state(mut self, state: &[f64]) -> Self {
        for (i, v) in state.iter().enumerate() {
            self.values.insert(Var::State(i + 1), *v);
        }
        self
    }

    /// Binds `u1..um` (order 0) to `input`.
    pub fn with_input(mut self, input: &[f64]) -> Self {
        for (j, v) in input.iter().enumerate() {
            self.values.insert(Var::input(j + 1), *v);
        }
        self
    }

    pub fn get(&self, var: &Var) -> Option<f64> {
        self.values.get(var).copied()
    }
}

pub(crate) fn guarded_div(num: f64, den: f64) -> Result<f64, EvalError> {
    if den.abs() < DIVISION_GUARD {
        return Err(EvalError::DivisionGuard { value: den });
    }
    Ok(num / den)
}

pub(crate) fn guarded_powi(base: f64, k: i32) -> Result<f64, EvalError> {
    if k < 0 {
        guarded_div(1.0, base.powi(-k))
    } else {
        Ok(base.powi(k))
    }
}

impl Expr {
    /// Evaluates in IEEE double precision.
    pub fn eval(&self, b: &Bindings) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(v) => b.get(v).ok_or_else(|| EvalError::Unbound(v.clone()))?,
            Expr::Neg(a) => -a.eval(b)?,
            Expr::Add(x, y) => x.eval(b)? + y.eval(b)?,
            Expr::Sub(x, y) => x.eval(b)? - y.eval(b)?,
            Expr::Mul(x, y) => x.eval(b)? * y.eval(b)?,
            Expr::Div(x, y) => guarded_div(x.eval(b)?, y.eval(b)?)?,
            Expr::Pow(a, k) => guarded_powi(a.eval(b)?, *k)?,
            Expr::Call(f, a) => f.apply(a.eval(b)?),
            Expr::Tab(t, a) => t.func.derivative(t.order, a.eval(b)?)?,
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }
}
