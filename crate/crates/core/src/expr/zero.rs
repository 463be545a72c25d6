use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{simplify, Bindings, Expr, Var};

/// Relative threshold for declaring a sampled value nonzero.
pub const ZERO_TOLERANCE: f64 = 1e-9;

const SAMPLES: usize = 48;

#[derive(Clone, Debug, PartialEq)]
pub enum ZeroVerdict {
    /// `probabilistic` is false when the simplifier reduced the expression
    /// to the literal `0`.
    Zero { probabilistic: bool },
    /// A point where the expression is clearly nonzero.
    Nonzero { witness: Vec<(Var, f64)>, value: f64 },
    /// No sample point could be evaluated.
    Unknown,
}

impl ZeroVerdict {
    pub fn is_zero(&self) -> bool {
        matches!(self, ZeroVerdict::Zero { .. })
    }

    pub fn is_nonzero(&self) -> bool {
        matches!(self, ZeroVerdict::Nonzero { .. })
    }
}

fn additive_terms<'a>(e: &'a Expr, out: &mut Vec<&'a Expr>) {
    match e {
        Expr::Add(a, b) | Expr::Sub(a, b) => {
            additive_terms(a, out);
            additive_terms(b, out);
        }
        Expr::Neg(a) => additive_terms(a, out),
        _ => out.push(e),
    }
}

/// Decides whether `e` vanishes identically: symbolic simplification first,
/// then evaluation at seeded random points (half in `[-1, 1]`, half in
/// `[-10, 10]` per variable, parameters included).
pub fn is_identically_zero(e: &Expr, seed: u64) -> ZeroVerdict {
    let s = simplify(e);
    match s.as_const() {
        Some(c) if c == 0.0 => return ZeroVerdict::Zero { probabilistic: false },
        Some(c) => {
            return ZeroVerdict::Nonzero {
                witness: Vec::new(),
                value: c,
            }
        }
        None => {}
    }
    let vars: Vec<Var> = s.vars().into_iter().collect();
    let mut terms = Vec::new();
    additive_terms(&s, &mut terms);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut evaluated = 0;
    for k in 0..SAMPLES {
        let radius = if k % 2 == 0 { 1.0 } else { 10.0 };
        let point: Vec<(Var, f64)> = vars
            .iter()
            .map(|v| (v.clone(), rng.gen_range(-radius..=radius)))
            .collect();
        let mut b = Bindings::new();
        for (v, x) in &point {
            b.set(v.clone(), *x);
        }
        let Ok(value) = s.eval(&b) else { continue };
        let scale: f64 = terms
            .iter()
            .filter_map(|t| t.eval(&b).ok())
            .map(f64::abs)
            .sum();
        evaluated += 1;
        if value.abs() > ZERO_TOLERANCE * scale.max(1.0) {
            return ZeroVerdict::Nonzero {
                witness: point,
                value,
            };
        }
    }
    if evaluated == 0 {
        ZeroVerdict::Unknown
    } else {
        ZeroVerdict::Zero { probabilistic: true }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn literal_zero_is_not_probabilistic() {
        let v = is_identically_zero(&parse("x1 - x1").unwrap(), 1);
        assert_eq!(v, ZeroVerdict::Zero { probabilistic: false });
    }

    #[test]
    fn trig_identity_needs_sampling() {
        let v = is_identically_zero(&parse("sin(x1)^2 + cos(x1)^2 - 1").unwrap(), 1);
        assert_eq!(v, ZeroVerdict::Zero { probabilistic: true });
    }

    #[test]
    fn nonzero_carries_witness() {
        match is_identically_zero(&parse("x1*u1").unwrap(), 3) {
            ZeroVerdict::Nonzero { witness, value } => {
                assert_eq!(witness.len(), 2);
                assert!(value.abs() > 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn undefined_everywhere_is_unknown() {
        let v = is_identically_zero(&parse("1/(x1 - x1 + 0.0)").unwrap(), 1);
        assert!(!v.is_zero());
    }
}
