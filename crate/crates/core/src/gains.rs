//! Class-K and class-KL comparison functions as symbolic generator trees,
//! with grid-validated class membership and the standard gain compositions
//! used to assemble stability bounds from component estimates.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{simplify, Expr, Func};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GainError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("class-K check failed at s = {s:e}: {reason}")]
    NotClassK { s: f64, reason: String },
    #[error("class-KL check failed at (s, t) = ({s:e}, {t:e}): {reason}")]
    NotClassKL { s: f64, t: f64, reason: String },
    #[error("function vanishes off zero on the grid at |z| = {at:e}")]
    VanishesOffZero { at: f64 },
}

/// Log-spaced validation grid on `[1e-6, 1e9]`, preceded by `0`.
pub fn validation_grid() -> Vec<f64> {
    let mut g = vec![0.0];
    g.extend((0..=60).map(|k| 10f64.powf(-6.0 + 15.0 * k as f64 / 60.0)));
    g
}

const TIME_GRID: [f64; 8] = [0.0, 0.1, 1.0, 10.0, 100.0, 1e3, 1e4, 1e6];

/// Generator tree of a class-K function.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum KNode {
    /// `coeff * s^power`.
    Power { coeff: f64, power: u32 },
    /// `factor * k(s)`.
    ScaleOut { factor: f64, k: Arc<KNode> },
    /// `k(factor * s)`.
    ScaleIn { factor: f64, k: Arc<KNode> },
    Sum { terms: Vec<Arc<KNode>> },
    /// `outer(inner(s))`.
    Compose { outer: Arc<KNode>, inner: Arc<KNode> },
    /// Piecewise-linear through `(0,0)` and `points`, extended linearly.
    Table { points: Vec<(f64, f64)> },
    /// `beta(inner(s), t)` at a fixed time.
    KlAt { beta: Arc<KlNode>, t: f64, inner: Arc<KNode> },
}

/// Generator tree of a class-KL function.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum KlNode {
    /// The zero function (admitted as a degenerate bound term).
    Zero,
    /// `kappa(s) * exp(-rate * t)`.
    Separable { kappa: Arc<KNode>, rate: f64 },
    Sum { terms: Vec<Arc<KlNode>> },
    /// `k(beta(s, t))`.
    KAfter { k: Arc<KNode>, beta: Arc<KlNode> },
    /// `beta(k(s), t)`.
    KInside { beta: Arc<KlNode>, k: Arc<KNode> },
    /// `outer(inner(s, t), t)`.
    Nested { outer: Arc<KlNode>, inner: Arc<KlNode> },
    /// `beta(s, factor * t)`.
    TimeScale { beta: Arc<KlNode>, factor: f64 },
}

impl KNode {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            KNode::Power { coeff, power } => coeff * s.powi(*power as i32),
            KNode::ScaleOut { factor, k } => factor * k.eval(s),
            KNode::ScaleIn { factor, k } => k.eval(factor * s),
            KNode::Sum { terms } => terms.iter().map(|k| k.eval(s)).sum(),
            KNode::Compose { outer, inner } => outer.eval(inner.eval(s)),
            KNode::Table { points } => table_eval(points, s),
            KNode::KlAt { beta, t, inner } => beta.eval(inner.eval(s), *t),
        }
    }

    fn to_expr(&self, s: &Expr) -> Option<Expr> {
        Some(match self {
            KNode::Power { coeff, power } => {
                let p = if *power == 1 {
                    s.clone()
                } else {
                    s.clone().powi(*power as i32)
                };
                Expr::Const(*coeff) * p
            }
            KNode::ScaleOut { factor, k } => Expr::Const(*factor) * k.to_expr(s)?,
            KNode::ScaleIn { factor, k } => k.to_expr(&(Expr::Const(*factor) * s.clone()))?,
            KNode::Sum { terms } => Expr::sum(terms.iter().map(|k| k.to_expr(s)).collect::<Option<Vec<_>>>()?),
            KNode::Compose { outer, inner } => outer.to_expr(&inner.to_expr(s)?)?,
            KNode::Table { .. } => return None,
            KNode::KlAt { beta, t, inner } => beta.to_expr(&inner.to_expr(s)?, &Expr::Const(*t))?,
        })
    }
}

fn table_eval(points: &[(f64, f64)], s: f64) -> f64 {
    let mut prev = (0.0, 0.0);
    for &(x, y) in points {
        if s <= x {
            return prev.1 + (y - prev.1) * (s - prev.0) / (x - prev.0);
        }
        prev = (x, y);
    }
    let n = points.len();
    let before = if n >= 2 { points[n - 2] } else { (0.0, 0.0) };
    let slope = (prev.1 - before.1) / (prev.0 - before.0);
    prev.1 + slope * (s - prev.0)
}

impl KlNode {
    pub fn eval(&self, s: f64, t: f64) -> f64 {
        match self {
            KlNode::Zero => 0.0,
            KlNode::Separable { kappa, rate } => kappa.eval(s) * (-rate * t).exp(),
            KlNode::Sum { terms } => terms.iter().map(|b| b.eval(s, t)).sum(),
            KlNode::KAfter { k, beta } => k.eval(beta.eval(s, t)),
            KlNode::KInside { beta, k } => beta.eval(k.eval(s), t),
            KlNode::Nested { outer, inner } => outer.eval(inner.eval(s, t), t),
            KlNode::TimeScale { beta, factor } => beta.eval(s, factor * t),
        }
    }

    fn to_expr(&self, s: &Expr, t: &Expr) -> Option<Expr> {
        Some(match self {
            KlNode::Zero => Expr::zero(),
            KlNode::Separable { kappa, rate } => {
                kappa.to_expr(s)? * Expr::call(Func::Exp, -(Expr::Const(*rate) * t.clone()))
            }
            KlNode::Sum { terms } => Expr::sum(
                terms
                    .iter()
                    .map(|b| b.to_expr(s, t))
                    .collect::<Option<Vec<_>>>()?,
            ),
            KlNode::KAfter { k, beta } => k.to_expr(&beta.to_expr(s, t)?)?,
            KlNode::KInside { beta, k } => beta.to_expr(&k.to_expr(s)?, t)?,
            KlNode::Nested { outer, inner } => outer.to_expr(&inner.to_expr(s, t)?, t)?,
            KlNode::TimeScale { beta, factor } => beta.to_expr(s, &(Expr::Const(*factor) * t.clone()))?,
        })
    }
}

/// Outcome of the grid membership check.
#[derive(Debug, Clone, Serialize)]
pub struct Validation {
    pub grid: Vec<f64>,
    pub pass: bool,
}

/// A class-K∞ function.
#[derive(Debug, Clone, Serialize)]
pub struct ClassKFn {
    pub node: Arc<KNode>,
}

/// A class-KL function.
#[derive(Debug, Clone, Serialize)]
pub struct ClassKLFn {
    pub node: Arc<KlNode>,
}

fn positive(name: &str, v: f64) -> Result<(), GainError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(GainError::Parameter(format!("{name} must be positive and finite, got {v}")))
    }
}

impl ClassKFn {
    /// Wraps `node` after checking class-K∞ membership on the validation grid.
    pub fn new(node: KNode) -> Result<Self, GainError> {
        let k = ClassKFn { node: Arc::new(node) };
        k.check()?;
        Ok(k)
    }

    fn check(&self) -> Result<(), GainError> {
        let grid = validation_grid();
        let at0 = self.eval(0.0);
        if at0 != 0.0 {
            return Err(GainError::NotClassK {
                s: 0.0,
                reason: format!("value {at0} at zero"),
            });
        }
        let mut prev = at0;
        for &s in &grid[1..] {
            let v = self.eval(s);
            if !(v > prev) || !v.is_finite() {
                return Err(GainError::NotClassK {
                    s,
                    reason: format!("not strictly increasing ({prev} then {v})"),
                });
            }
            prev = v;
        }
        if !(self.eval(1e9) > self.eval(1.0)) {
            return Err(GainError::NotClassK {
                s: 1e9,
                reason: "not unbounded".into(),
            });
        }
        Ok(())
    }

    pub fn validate(&self) -> Validation {
        Validation {
            grid: validation_grid(),
            pass: self.check().is_ok(),
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.node.eval(s)
    }

    /// `a * s`.
    pub fn linear(a: f64) -> Result<Self, GainError> {
        Self::power(a, 1)
    }

    pub fn identity() -> Self {
        Self::linear(1.0).expect("identity is class K")
    }

    /// `a * s^p`.
    pub fn power(a: f64, p: u32) -> Result<Self, GainError> {
        positive("coefficient", a)?;
        if p == 0 {
            return Err(GainError::Parameter("power must be at least 1".into()));
        }
        Self::new(KNode::Power { coeff: a, power: p })
    }

    /// `Σ a_i s^i` for `coeffs = [a_1, a_2, ...]`, skipping zero entries.
    pub fn polynomial(coeffs: &[f64]) -> Result<Self, GainError> {
        let terms: Vec<ClassKFn> = coeffs
            .iter()
            .enumerate()
            .filter(|(_, a)| **a != 0.0)
            .map(|(i, a)| Self::power(*a, i as u32 + 1))
            .collect::<Result<_, _>>()?;
        Self::sum(&terms)
    }

    /// Piecewise-linear interpolant through `(0,0)` and `points`.
    pub fn table(points: Vec<(f64, f64)>) -> Result<Self, GainError> {
        if points.is_empty() {
            return Err(GainError::Parameter("empty table".into()));
        }
        let mut prev = (0.0, 0.0);
        for &(x, y) in &points {
            if !(x > prev.0 && y > prev.1) {
                return Err(GainError::Parameter(format!(
                    "table not strictly increasing at ({x}, {y})"
                )));
            }
            prev = (x, y);
        }
        Self::new(KNode::Table { points })
    }

    /// `factor * self(s)`.
    pub fn scale_out(&self, factor: f64) -> Result<Self, GainError> {
        positive("factor", factor)?;
        Ok(ClassKFn {
            node: Arc::new(KNode::ScaleOut {
                factor,
                k: self.node.clone(),
            }),
        })
    }

    /// `self(factor * s)`.
    pub fn scale_in(&self, factor: f64) -> Result<Self, GainError> {
        positive("factor", factor)?;
        Ok(ClassKFn {
            node: Arc::new(KNode::ScaleIn {
                factor,
                k: self.node.clone(),
            }),
        })
    }

    /// `self(inner(s))`.
    pub fn after(&self, inner: &ClassKFn) -> Self {
        ClassKFn {
            node: Arc::new(KNode::Compose {
                outer: self.node.clone(),
                inner: inner.node.clone(),
            }),
        }
    }

    pub fn sum(terms: &[ClassKFn]) -> Result<Self, GainError> {
        match terms {
            [] => Err(GainError::Parameter("empty sum".into())),
            [one] => Ok(one.clone()),
            _ => Ok(ClassKFn {
                node: Arc::new(KNode::Sum {
                    terms: terms.iter().map(|k| k.node.clone()).collect(),
                }),
            }),
        }
    }

    pub fn plus(&self, other: &ClassKFn) -> Self {
        Self::sum(&[self.clone(), other.clone()]).expect("two terms")
    }

    /// Symbolic form over the parameter `s`; `None` for tabulated pieces.
    pub fn to_expr(&self) -> Option<Expr> {
        self.node.to_expr(&Expr::param("s")).map(|e| simplify(&e))
    }
}

impl ClassKLFn {
    pub fn new(node: KlNode) -> Result<Self, GainError> {
        let b = ClassKLFn { node: Arc::new(node) };
        b.check()?;
        Ok(b)
    }

    fn check(&self) -> Result<(), GainError> {
        if matches!(*self.node, KlNode::Zero) {
            return Ok(());
        }
        let grid = validation_grid();
        for &t in &TIME_GRID {
            let mut prev = self.eval(0.0, t);
            if prev != 0.0 {
                return Err(GainError::NotClassKL {
                    s: 0.0,
                    t,
                    reason: format!("value {prev} at s = 0"),
                });
            }
            for &s in &grid[1..] {
                let v = self.eval(s, t);
                // Exponential factors underflow for large t; only
                // representable values are required to increase.
                let strict_required = v > f64::MIN_POSITIVE * 1e10;
                if !v.is_finite() || v < prev || (strict_required && !(v > prev)) {
                    return Err(GainError::NotClassKL {
                        s,
                        t,
                        reason: format!("not increasing in s ({prev} then {v})"),
                    });
                }
                prev = v;
            }
        }
        for &s in &grid[1..] {
            let mut prev = self.eval(s, 0.0);
            for &t in &TIME_GRID[1..] {
                let v = self.eval(s, t);
                if v > prev {
                    return Err(GainError::NotClassKL {
                        s,
                        t,
                        reason: format!("increasing in t ({prev} then {v})"),
                    });
                }
                prev = v;
            }
            let start = self.eval(s, 0.0);
            if !(prev < start) {
                return Err(GainError::NotClassKL {
                    s,
                    t: TIME_GRID[TIME_GRID.len() - 1],
                    reason: "does not decay".into(),
                });
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Validation {
        Validation {
            grid: validation_grid(),
            pass: self.check().is_ok(),
        }
    }

    pub fn eval(&self, s: f64, t: f64) -> f64 {
        self.node.eval(s, t)
    }

    pub fn zero() -> Self {
        ClassKLFn {
            node: Arc::new(KlNode::Zero),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(*self.node, KlNode::Zero)
    }

    /// `kappa(s) * e^(-rate t)`.
    pub fn separable(kappa: &ClassKFn, rate: f64) -> Result<Self, GainError> {
        positive("rate", rate)?;
        Ok(ClassKLFn {
            node: Arc::new(KlNode::Separable {
                kappa: kappa.node.clone(),
                rate,
            }),
        })
    }

    /// `a * s * e^(-rate t)`; the zero function when `a == 0`.
    pub fn exponential(a: f64, rate: f64) -> Result<Self, GainError> {
        if a == 0.0 {
            return Ok(Self::zero());
        }
        Self::separable(&ClassKFn::linear(a)?, rate)
    }

    /// `a * s^p * e^(-rate t)`.
    pub fn power_exponential(a: f64, p: u32, rate: f64) -> Result<Self, GainError> {
        Self::separable(&ClassKFn::power(a, p)?, rate)
    }

    pub fn sum(terms: &[ClassKLFn]) -> Self {
        let nonzero: Vec<_> = terms.iter().filter(|b| !b.is_zero()).collect();
        match nonzero.as_slice() {
            [] => Self::zero(),
            [one] => (*one).clone(),
            _ => ClassKLFn {
                node: Arc::new(KlNode::Sum {
                    terms: nonzero.iter().map(|b| b.node.clone()).collect(),
                }),
            },
        }
    }

    pub fn plus(&self, other: &ClassKLFn) -> Self {
        Self::sum(&[self.clone(), other.clone()])
    }

    /// `k(self(s, t))`.
    pub fn then(&self, k: &ClassKFn) -> Self {
        if self.is_zero() {
            return Self::zero();
        }
        ClassKLFn {
            node: Arc::new(KlNode::KAfter {
                k: k.node.clone(),
                beta: self.node.clone(),
            }),
        }
    }

    /// `self(k(s), t)`.
    pub fn after(&self, k: &ClassKFn) -> Self {
        if self.is_zero() {
            return Self::zero();
        }
        ClassKLFn {
            node: Arc::new(KlNode::KInside {
                beta: self.node.clone(),
                k: k.node.clone(),
            }),
        }
    }

    /// `self(inner(s, t), t)`.
    pub fn nest(&self, inner: &ClassKLFn) -> Self {
        if self.is_zero() || inner.is_zero() {
            return Self::zero();
        }
        ClassKLFn {
            node: Arc::new(KlNode::Nested {
                outer: self.node.clone(),
                inner: inner.node.clone(),
            }),
        }
    }

    /// `self(s, factor * t)`.
    pub fn time_scale(&self, factor: f64) -> Result<Self, GainError> {
        positive("time factor", factor)?;
        if self.is_zero() {
            return Ok(Self::zero());
        }
        Ok(ClassKLFn {
            node: Arc::new(KlNode::TimeScale {
                beta: self.node.clone(),
                factor,
            }),
        })
    }

    /// The class-K function `s ↦ self(inner(s), t)` at fixed `t`.
    pub fn at_time(&self, t: f64, inner: &ClassKFn) -> Option<ClassKFn> {
        if self.is_zero() {
            return None;
        }
        Some(ClassKFn {
            node: Arc::new(KNode::KlAt {
                beta: self.node.clone(),
                t,
                inner: inner.node.clone(),
            }),
        })
    }

    /// Symbolic form over the parameters `s`, `t`.
    pub fn to_expr(&self) -> Option<Expr> {
        self.node
            .to_expr(&Expr::param("s"), &Expr::param("t"))
            .map(|e| simplify(&e))
    }
}

/// `ρ(s1 + s2) <= ρ(2 s1) + ρ(2 s2)`.
#[derive(Debug, Clone)]
pub struct RelaxedSum {
    pub doubled: ClassKFn,
}

impl RelaxedSum {
    pub fn eval(&self, s1: f64, s2: f64) -> f64 {
        self.doubled.eval(s1) + self.doubled.eval(s2)
    }
}

pub fn relax_sum(rho: &ClassKFn) -> RelaxedSum {
    RelaxedSum {
        doubled: rho.scale_in(2.0).expect("positive factor"),
    }
}

fn lin(a: f64) -> ClassKFn {
    ClassKFn::linear(a).expect("positive slope")
}

/// `a * k(s)`.
fn times(a: f64, k: &ClassKFn) -> ClassKFn {
    lin(a).after(k)
}

/// `a * beta(s, 0)` as a class-K function; `None` for the zero function.
fn scaled_at0(a: f64, beta: &ClassKLFn) -> Option<ClassKFn> {
    beta.at_time(0.0, &ClassKFn::identity()).map(|k| times(a, &k))
}

/// `beta(k(s), 0)` as a class-K function; the zero contribution is dropped.
fn at_zero(beta: &ClassKLFn, k: &ClassKFn) -> Option<ClassKFn> {
    beta.at_time(0.0, k)
}

fn half(beta: &ClassKLFn) -> ClassKLFn {
    beta.time_scale(0.5).expect("positive factor")
}

fn quarter(beta: &ClassKLFn) -> ClassKLFn {
    beta.time_scale(0.25).expect("positive factor")
}

fn k_sum(terms: Vec<Option<ClassKFn>>) -> ClassKFn {
    let terms: Vec<ClassKFn> = terms.into_iter().flatten().collect();
    ClassKFn::sum(&terms).expect("at least one class-K term")
}

/// `(β, γ)` from a relative-degree bound `|u| <= ρ1(|x|) + ρ2(|y^(r)|)` and a
/// detectability bound `|x(t)| <= β̄(|x(0)|, t) + γ̄(||y^k||)`:
/// `β = ρ1(2β̄) + β̄`, `γ = ρ1(2γ̄) + ρ2 + γ̄`.
pub fn output_input_gains(
    rho1: &ClassKFn,
    rho2: &ClassKFn,
    beta_bar: &ClassKLFn,
    gamma_bar: &ClassKFn,
) -> (ClassKLFn, ClassKFn) {
    let beta = ClassKLFn::sum(&[beta_bar.then(&rho1.after(&lin(2.0))), beta_bar.clone()]);
    let gamma = ClassKFn::sum(&[rho1.after(&times(2.0, gamma_bar)), rho2.clone(), gamma_bar.clone()])
        .expect("three terms");
    (beta, gamma)
}

/// Composed bounds for a cascade of a 0-detectable system with a strongly
/// minimum-phase one:
/// `|x1(t)| <= β̄1(|x1(0)|,t) + β̄2(|x2(0)|,t) + γ̄0(||u1||) + γ̄1(||y2^r||)`.
#[derive(Debug, Clone)]
pub struct CascadeGains {
    pub beta1_bar: ClassKLFn,
    pub beta2_bar: ClassKLFn,
    pub gamma0_bar: ClassKFn,
    pub gamma1_bar: ClassKFn,
}

pub fn cascade_gains(
    beta1: &ClassKLFn,
    beta2: &ClassKLFn,
    gamma0: &ClassKFn,
    gamma1: &ClassKFn,
    gamma2: &ClassKFn,
    rho1: &ClassKFn,
    rho2: &ClassKFn,
) -> CascadeGains {
    let b1h = half(beta1);
    // β1(3β1(s,t/2),t/2)
    let beta1_bar = b1h.nest(&b1h.then(&lin(3.0)));

    // β1(9γ1(3ρ1(2β2(s,0))),t/2) + γ1(3ρ1(2β2(s,t/2)))
    let chain = |inner: ClassKFn| times(9.0, &gamma1.after(&times(3.0, &rho1.after(&inner))));
    let b2_zero = scaled_at0(2.0, beta2);
    let first = b2_zero.map(|k| b1h.after(&chain(k)));
    let second = half(beta2)
        .then(&lin(2.0))
        .then(rho1)
        .then(&lin(3.0))
        .then(gamma1);
    let beta2_bar = ClassKLFn::sum(&[first.unwrap_or_else(ClassKLFn::zero), second]);

    // γ0(s) + β1(3γ0(s),0)
    let gamma0_bar = k_sum(vec![Some(gamma0.clone()), at_zero(beta1, &times(3.0, gamma0))]);

    // β1(9γ1(3ρ1(2γ2(s))),0) + β1(9γ1(3ρ2(s)),0) + γ1(3ρ1(2γ2(s))) + γ1(3ρ2(s))
    let via_x2 = gamma1.after(&times(3.0, &rho1.after(&times(2.0, gamma2))));
    let via_y = gamma1.after(&times(3.0, rho2));
    let gamma1_bar = k_sum(vec![
        at_zero(beta1, &times(9.0, &via_x2)),
        at_zero(beta1, &times(9.0, &via_y)),
        Some(via_x2),
        Some(via_y),
    ]);
    CascadeGains {
        beta1_bar,
        beta2_bar,
        gamma0_bar,
        gamma1_bar,
    }
}

/// A composed gain and whether it was reconstructed rather than transcribed.
#[derive(Debug, Clone)]
pub struct Flagged<T> {
    pub value: T,
    pub reconstructed: bool,
}

#[derive(Debug, Clone)]
pub struct Cascade3Gains {
    pub beta1_hat: Flagged<ClassKLFn>,
    pub beta2_hat: Flagged<ClassKLFn>,
    pub gamma0_hat: Flagged<ClassKFn>,
    pub gamma4_hat: Flagged<ClassKFn>,
    pub beta1_tilde: Flagged<ClassKLFn>,
    pub beta2_tilde: Flagged<ClassKLFn>,
    pub gamma0_tilde: Flagged<ClassKFn>,
    pub gamma4_tilde: Flagged<ClassKFn>,
}

fn given<T>(value: T) -> Flagged<T> {
    Flagged {
        value,
        reconstructed: false,
    }
}

fn rebuilt<T>(value: T) -> Flagged<T> {
    Flagged {
        value,
        reconstructed: true,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cascade3_gains(
    beta1: &ClassKLFn,
    beta2: &ClassKLFn,
    beta3: &ClassKLFn,
    gamma0: &ClassKFn,
    gamma1: &ClassKFn,
    gamma2: &ClassKFn,
    gamma3: &ClassKFn,
    gamma4: &ClassKFn,
    rho1: &ClassKFn,
    rho2: &ClassKFn,
) -> Cascade3Gains {
    let b1h = half(beta1);
    let b2h = half(beta2);
    let b3h = half(beta3);

    // β2(6γ2(4β3(s,0)),t/2) + γ2(4β3(s,t/2))
    let beta1_hat = ClassKLFn::sum(&[
        scaled_at0(4.0, beta3)
            .map(|k| b2h.after(&times(6.0, &gamma2.after(&k))))
            .unwrap_or_else(ClassKLFn::zero),
        b3h.then(&lin(4.0)).then(gamma2),
    ]);
    // β2(3β2(s,t/2),t/2)
    let beta2_hat = b2h.nest(&b2h.then(&lin(3.0)));
    // β2(6γ2(4γ4(s)),0) + γ2(4γ4(s))
    let g2g4 = gamma2.after(&times(4.0, gamma4));
    let gamma0_hat = k_sum(vec![at_zero(beta2, &times(6.0, &g2g4)), Some(g2g4.clone())]);
    // γ2(2s) + β2(3γ2(2s),0)
    let g2_2 = gamma2.after(&lin(2.0));
    let gamma4_hat = k_sum(vec![Some(g2_2.clone()), at_zero(beta2, &times(3.0, &g2_2))]);

    // β1(12γ1(3ρ1(2β2(s,0))),t/2) + γ1(4ρ1(4β2(2β2(s,t/4),t/4)))
    let beta2_tilde = ClassKLFn::sum(&[
        scaled_at0(2.0, beta2)
            .map(|k| b1h.after(&times(12.0, &gamma1.after(&times(3.0, &rho1.after(&k))))))
            .unwrap_or_else(ClassKLFn::zero),
        quarter(beta2)
            .nest(&quarter(beta2).then(&lin(2.0)))
            .then(&lin(4.0))
            .then(rho1)
            .then(&lin(4.0))
            .then(gamma1),
    ]);

    // Same splitting for the members the derivation leaves implicit.
    let via_x2 = |k: &ClassKFn| gamma1.after(&times(4.0, &rho1.after(&times(4.0, k))));
    let beta1_hat_half = beta1_hat.time_scale(0.5).expect("positive factor");
    let beta1_tilde = ClassKLFn::sum(&[
        b1h.nest(&b1h.then(&lin(3.0))),
        scaled_at0(2.0, &beta1_hat)
            .map(|k| b1h.after(&times(12.0, &gamma1.after(&times(3.0, &rho1.after(&k))))))
            .unwrap_or_else(ClassKLFn::zero),
        beta1_hat_half.then(&lin(4.0)).then(rho1).then(&lin(4.0)).then(gamma1),
        scaled_at0(2.0, beta3)
            .map(|k| b1h.after(&times(12.0, &gamma3.after(&k))))
            .unwrap_or_else(ClassKLFn::zero),
        b3h.then(&lin(2.0)).then(gamma3),
    ]);
    let gamma0_tilde = k_sum(vec![
        Some(gamma0.clone()),
        at_zero(beta1, &times(3.0, gamma0)),
        at_zero(beta1, &times(12.0, &gamma1.after(&times(3.0, &rho1.after(&times(2.0, &gamma0_hat)))))),
        Some(via_x2(&gamma0_hat)),
        at_zero(beta1, &times(12.0, &gamma3.after(&times(2.0, gamma4)))),
        Some(gamma3.after(&times(2.0, gamma4))),
    ]);
    let gamma4_tilde = k_sum(vec![
        at_zero(beta1, &times(12.0, &gamma1.after(&times(3.0, &rho1.after(&times(2.0, &gamma4_hat)))))),
        at_zero(beta1, &times(12.0, &gamma1.after(&times(3.0, rho2)))),
        Some(via_x2(&gamma4_hat)),
        Some(gamma1.after(&times(4.0, rho2))),
    ]);

    Cascade3Gains {
        beta1_hat: given(beta1_hat),
        beta2_hat: given(beta2_hat),
        gamma0_hat: given(gamma0_hat),
        gamma4_hat: given(gamma4_hat),
        beta1_tilde: rebuilt(beta1_tilde),
        beta2_tilde: given(beta2_tilde),
        gamma0_tilde: rebuilt(gamma0_tilde),
        gamma4_tilde: rebuilt(gamma4_tilde),
    }
}

/// Diagnostics from [`envelope_from_function`].
#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeReport {
    /// Largest relative gap `1 - α/γ` introduced by strictification.
    pub strictification_slack: f64,
    /// Worst `|z| - ρ(H(z))` over the nodes (must be `<= 0`).
    pub worst_violation: f64,
}

/// Given samples `(|z|, H(z))`, builds `ρ ∈ K∞` with `|z| <= ρ(H(z))` at
/// every sample: the minorant `γ(s) = min_{|z| >= s} H(z)` is made strictly
/// increasing by a factor rising from 0.99 to 1, then inverted piecewise.
pub fn envelope_from_function(samples: &[(f64, f64)]) -> Result<(ClassKFn, EnvelopeReport), GainError> {
    let mut pts: Vec<(f64, f64)> = samples.iter().copied().filter(|(z, _)| *z > 0.0).collect();
    if pts.is_empty() {
        return Err(GainError::Parameter("no samples off zero".into()));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut minorant = vec![0.0; pts.len()];
    let mut running = f64::INFINITY;
    for i in (0..pts.len()).rev() {
        running = running.min(pts[i].1);
        minorant[i] = running;
    }
    if let Some(i) = minorant.iter().position(|g| *g <= 0.0) {
        return Err(GainError::VanishesOffZero { at: pts[i].0 });
    }
    // Collapse duplicate |z| values (keep the smallest minorant, i.e. the first).
    let mut nodes: Vec<(f64, f64)> = Vec::new();
    for (i, &(z, _)) in pts.iter().enumerate() {
        if nodes.last().is_some_and(|n| n.0 == z) {
            continue;
        }
        nodes.push((z, minorant[i]));
    }
    let k = nodes.len() as f64;
    let mut table = Vec::with_capacity(nodes.len());
    let mut slack: f64 = 0.0;
    let mut prev_alpha = 0.0;
    for (i, &(z, g)) in nodes.iter().enumerate() {
        let factor = 1.0 - 0.01 * (1.0 - (i as f64 + 1.0) / k);
        let mut alpha = g * factor;
        if alpha <= prev_alpha {
            alpha = prev_alpha + (g - prev_alpha) * 1e-3;
        }
        slack = slack.max(1.0 - alpha / g);
        table.push((alpha, z));
        prev_alpha = alpha;
    }
    let rho = ClassKFn::table(table)?;
    let worst = samples
        .iter()
        .map(|(z, h)| z - rho.eval(*h))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((
        rho,
        EnvelopeReport {
            strictification_slack: slack,
            worst_violation: worst,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn se(rate: f64) -> ClassKLFn {
        ClassKLFn::exponential(1.0, rate).unwrap()
    }

    #[test]
    fn degenerate_functions_rejected() {
        assert!(ClassKFn::linear(0.0).is_err());
        assert!(ClassKFn::table(vec![(1.0, 1.0), (2.0, 1.0)]).is_err());
        let flat = KNode::Table {
            points: vec![(1.0, 1.0), (2.0, 1.0)],
        };
        assert!(ClassKFn::new(flat).is_err());
        let growing = KlNode::Separable {
            kappa: Arc::new(KNode::Power { coeff: 1.0, power: 1 }),
            rate: -1.0,
        };
        assert!(ClassKLFn::new(growing).is_err());
    }

    #[test]
    fn relax_sum_bounds() {
        let cube = relax_sum(&ClassKFn::power(1.0, 3).unwrap());
        assert_eq!(cube.eval(3.0, 5.0), 1216.0);
        let sq = relax_sum(&ClassKFn::power(1.0, 2).unwrap());
        assert!(sq.eval(1.0, 2.0) >= 9.0);
    }

    #[test]
    fn output_input_identity_instance() {
        let id = ClassKFn::identity();
        let (beta, gamma) = output_input_gains(&id, &id, &se(1.0), &id);
        assert_eq!(beta.eval(2.0, 0.0), 6.0);
        assert_eq!(gamma.eval(1.5), 6.0);
        assert_eq!(beta.to_expr().unwrap(), se(1.0).then(&ClassKFn::linear(3.0).unwrap()).to_expr().unwrap());
        assert!(beta.validate().pass && gamma.validate().pass);
    }

    #[test]
    fn cascade_identity_instance() {
        let id = ClassKFn::identity();
        let g = cascade_gains(&se(1.0), &se(1.0), &id, &id, &id, &id, &id);
        let expected = simplify(&crate::expr::parse("3*s*exp(-t)").unwrap());
        assert_eq!(g.beta1_bar.to_expr().unwrap(), expected);
        assert_eq!(g.gamma0_bar.eval(2.0), 8.0);
        assert!(g.beta2_bar.eval(1.0, 0.0) >= g.beta2_bar.eval(1.0, 10.0));
        assert!(g.beta1_bar.validate().pass && g.beta2_bar.validate().pass);
        assert!(g.gamma0_bar.validate().pass && g.gamma1_bar.validate().pass);
    }

    #[test]
    fn cascade3_identity_instance() {
        let id = ClassKFn::identity();
        let b = se(1.0);
        let g = cascade3_gains(&b, &b, &b, &id, &id, &id, &id, &id, &id, &id);
        let expected = simplify(&crate::expr::parse("3*s*exp(-t)").unwrap());
        assert_eq!(g.beta2_hat.value.to_expr().unwrap(), expected);
        assert_eq!(g.gamma4_hat.value.eval(1.0), 8.0);
        assert!(g.beta1_tilde.reconstructed && !g.beta2_tilde.reconstructed);
        for k in [&g.gamma0_hat, &g.gamma4_hat, &g.gamma0_tilde, &g.gamma4_tilde] {
            assert!(k.value.validate().pass);
        }
        for b in [&g.beta1_hat, &g.beta2_hat, &g.beta1_tilde, &g.beta2_tilde] {
            assert!(b.value.validate().pass);
        }
    }

    #[test]
    fn composition_matches_pointwise() {
        let a = ClassKFn::polynomial(&[1.0, 0.5]).unwrap();
        let b = ClassKFn::power(2.0, 3).unwrap();
        let c = a.after(&b);
        for s in [0.1, 1.0, 7.5] {
            let direct = a.eval(b.eval(s));
            assert!((c.eval(s) - direct).abs() <= 1e-12 * direct);
        }
    }

    #[test]
    fn envelope_of_identity_and_square() {
        let grid: Vec<f64> = (0..=200).map(|k| k as f64 * 0.05).collect();
        let (rho, rep) = envelope_from_function(&grid.iter().map(|z| (*z, *z)).collect::<Vec<_>>()).unwrap();
        assert!(rep.worst_violation <= 0.0);
        assert!(rep.strictification_slack <= 0.01);
        assert!((rho.eval(5.0) - 5.0).abs() / 5.0 <= 0.011);

        let (rho, rep) = envelope_from_function(&grid.iter().map(|z| (*z, z * z)).collect::<Vec<_>>()).unwrap();
        assert!(rep.worst_violation <= 0.0);
        assert!((rho.eval(16.0) - 4.0).abs() < 0.1);
    }

    #[test]
    fn envelope_across_plateau() {
        let samples: Vec<(f64, f64)> = (1..=100)
            .map(|k| {
                let z = k as f64 * 0.1;
                (z, if (3.0..6.0).contains(&z) { 3.0 } else { z })
            })
            .collect();
        let (_, rep) = envelope_from_function(&samples).unwrap();
        assert!(rep.worst_violation <= 0.0);
        assert!(envelope_from_function(&[(1.0, 0.0), (2.0, 3.0)]).is_err());
    }
}
