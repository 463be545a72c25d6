//! Symbolic expressions over state variables, input-derivative variables and
//! free parameters.
//!
//! Every system model, output-derivative function and Lyapunov candidate in
//! this crate is an [`Expr`]. The operator set is fixed to smooth functions:
//! `+ - * /`, integer powers, `sin`, `cos`, `exp`, `atan`, `tanh`, plus
//! [`Tabulated`] nodes for constructed smooth functions that have no closed
//! form but expose exact derivatives.

mod compile;
mod diff;
mod eval;
mod parse;
mod simplify;
mod zero;

use std::collections::BTreeSet;
use std::fmt;
use std::ops;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use compile::{CompiledExpr, VarLayout};
pub use diff::differentiate;
pub use eval::{Bindings, EvalError, DIVISION_GUARD};
pub use parse::{parse, ParseError};
pub use simplify::simplify;
pub use zero::{is_identically_zero, ZeroVerdict, ZERO_TOLERANCE};

/// A variable tag.
///
/// State and input indices are 1-based to match the textual `x1`, `u1`
/// notation. `Input { order: d }` is the `d`-th time derivative of input
/// channel `channel`; `d = 0` is the input itself.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Var {
    State(usize),
    Input { channel: usize, order: usize },
    Param(String),
}

impl Var {
    pub fn input(channel: usize) -> Self {
        Var::Input { channel, order: 0 }
    }

    pub fn is_input(&self) -> bool {
        matches!(self, Var::Input { .. })
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::State(i) => write!(f, "x{i}"),
            Var::Input { channel, order: 0 } => write!(f, "u{channel}"),
            Var::Input { channel, order } => write!(f, "u{channel}_d{order}"),
            Var::Param(name) => f.write_str(name),
        }
    }
}

/// Elementary smooth functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Atan,
    Tanh,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Atan => "atan",
            Func::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "atan" => Func::Atan,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    pub fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Atan => v.atan(),
            Func::Tanh => v.tanh(),
        }
    }
}

/// A scalar smooth function defined numerically, with exact derivatives of
/// every order it supports.
pub trait SmoothFn: fmt::Debug + Send + Sync {
    /// Identifier used when printing and comparing expressions.
    fn name(&self) -> &str;

    /// Value of the `order`-th derivative at `s`.
    fn derivative(&self, order: usize, s: f64) -> Result<f64, EvalError>;

    /// Points where the function switches between analytic pieces, in
    /// increasing order. Integrators may align their steps with these.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// `func^(order)(arg)` for a [`SmoothFn`].
#[derive(Clone, Debug)]
pub struct Tabulated {
    pub func: Arc<dyn SmoothFn>,
    pub order: usize,
}

impl Tabulated {
    pub fn new(func: Arc<dyn SmoothFn>) -> Self {
        Tabulated { func, order: 0 }
    }

    pub fn label(&self) -> String {
        if self.order == 0 {
            self.func.name().to_string()
        } else {
            format!("{}_d{}", self.func.name(), self.order)
        }
    }
}

impl PartialEq for Tabulated {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order && self.func.name() == other.func.name()
    }
}

/// Expression tree.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
    Tab(Tabulated, Box<Expr>),
}

impl Expr {
    pub fn constant(v: f64) -> Self {
        Expr::Const(v)
    }

    pub fn zero() -> Self {
        Expr::Const(0.0)
    }

    pub fn one() -> Self {
        Expr::Const(1.0)
    }

    /// State variable `x_i` (1-based).
    pub fn x(i: usize) -> Self {
        Expr::Var(Var::State(i))
    }

    /// Input `u_j` (1-based).
    pub fn u(j: usize) -> Self {
        Expr::Var(Var::input(j))
    }

    /// `d`-th derivative of input `u_j`.
    pub fn u_deriv(j: usize, d: usize) -> Self {
        Expr::Var(Var::Input { channel: j, order: d })
    }

    pub fn param(name: &str) -> Self {
        Expr::Var(Var::Param(name.to_string()))
    }

    pub fn call(func: Func, arg: Expr) -> Self {
        Expr::Call(func, Box::new(arg))
    }

    pub fn tabulated(func: Arc<dyn SmoothFn>, arg: Expr) -> Self {
        Expr::Tab(Tabulated::new(func), Box::new(arg))
    }

    pub fn powi(self, k: i32) -> Self {
        Expr::Pow(Box::new(self), k)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    /// All variables referenced by the expression.
    pub fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) | Expr::Tab(_, a) => {
                a.collect_vars(out)
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Whether the expression references any variable matching `pred`.
    pub fn mentions(&self, pred: &dyn Fn(&Var) -> bool) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(v) => pred(v),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) | Expr::Tab(_, a) => a.mentions(pred),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.mentions(pred) || b.mentions(pred)
            }
        }
    }

    /// Replaces every occurrence of `var` by `with`. The result is not simplified.
    pub fn substitute(&self, var: &Var, with: &Expr) -> Expr {
        self.map_vars(&|v| (v == var).then(|| with.clone()))
    }

    /// Rebuilds the tree, replacing each variable for which `f` returns `Some`.
    pub fn map_vars(&self, f: &dyn Fn(&Var) -> Option<Expr>) -> Expr {
        let rec = |a: &Expr| Box::new(a.map_vars(f));
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(v) => f(v).unwrap_or_else(|| self.clone()),
            Expr::Neg(a) => Expr::Neg(rec(a)),
            Expr::Add(a, b) => Expr::Add(rec(a), rec(b)),
            Expr::Sub(a, b) => Expr::Sub(rec(a), rec(b)),
            Expr::Mul(a, b) => Expr::Mul(rec(a), rec(b)),
            Expr::Div(a, b) => Expr::Div(rec(a), rec(b)),
            Expr::Pow(a, k) => Expr::Pow(rec(a), *k),
            Expr::Call(g, a) => Expr::Call(*g, rec(a)),
            Expr::Tab(t, a) => Expr::Tab(t.clone(), rec(a)),
        }
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) | Expr::Tab(_, a) => 1 + a.size(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                1 + a.size() + b.size()
            }
        }
    }

    /// Sum of a list of expressions (`0` when empty).
    pub fn sum(terms: impl IntoIterator<Item = Expr>) -> Expr {
        terms
            .into_iter()
            .reduce(|acc, t| Expr::Add(Box::new(acc), Box::new(t)))
            .unwrap_or_else(Expr::zero)
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Pow(_, k) if *k < 0 => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            Expr::Const(c) if *c < 0.0 || c.is_sign_negative() => 3,
            _ => 5,
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if e.precedence() < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

fn write_const(f: &mut fmt::Formatter<'_>, c: f64) -> fmt::Result {
    if c.is_finite() {
        // `{:?}` keeps exponents for very large / small magnitudes and
        // round-trips exactly.
        let s = format!("{c:?}");
        f.write_str(s.strip_suffix(".0").unwrap_or(&s))
    } else {
        write!(f, "{c}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write_const(f, *c),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(a) => {
                f.write_str("-")?;
                write_child(f, a, 2)
            }
            Expr::Add(a, b) => {
                write_child(f, a, 1)?;
                f.write_str(" + ")?;
                write_child(f, b, 2)
            }
            Expr::Sub(a, b) => {
                write_child(f, a, 1)?;
                f.write_str(" - ")?;
                write_child(f, b, 2)
            }
            Expr::Mul(a, b) => {
                write_child(f, a, 2)?;
                f.write_str("*")?;
                write_child(f, b, 3)
            }
            Expr::Div(a, b) => {
                write_child(f, a, 2)?;
                f.write_str("/")?;
                write_child(f, b, 4)
            }
            Expr::Pow(a, k) => {
                if *k < 0 {
                    f.write_str("1/")?;
                    write_child(f, a, 5)?;
                    if *k != -1 {
                        write!(f, "^{}", -k)?;
                    }
                    Ok(())
                } else {
                    write_child(f, a, 5)?;
                    write!(f, "^{k}")
                }
            }
            Expr::Call(g, a) => write!(f, "{}({a})", g.name()),
            Expr::Tab(t, a) => write!(f, "{}({a})", t.label()),
        }
    }
}

impl ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::Add(Box::new(self), Box::new(rhs))
    }
}

impl ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::Sub(Box::new(self), Box::new(rhs))
    }
}

impl ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::Mul(Box::new(self), Box::new(rhs))
    }
}

impl ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::Div(Box::new(self), Box::new(rhs))
    }
}

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Self {
        Expr::Const(v)
    }
}
