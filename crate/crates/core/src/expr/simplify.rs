//! Canonical polynomial normal form.
//!
//! An expression is rewritten as a sum of monomials `c * a1^k1 * ... * an^kn`
//! over atoms: variables, function calls with simplified arguments, and sums
//! that appear in denominators or under powers. Products of sums are
//! distributed; powers of sums are kept as atoms. The result is idempotent.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashMap};

use super::{Expr, Func, Var};

type Monomial = BTreeMap<String, i32>;

#[derive(Clone, Debug, Default)]
struct Poly {
    terms: BTreeMap<Monomial, f64>,
}

#[derive(Default)]
struct Atoms {
    table: HashMap<String, Expr>,
}

impl Poly {
    fn constant(c: f64) -> Self {
        let mut p = Poly::default();
        if c != 0.0 {
            p.terms.insert(Monomial::new(), c);
        }
        p
    }

    fn monomial(key: String, power: i32) -> Self {
        let mut m = Monomial::new();
        m.insert(key, power);
        let mut p = Poly::default();
        p.terms.insert(m, 1.0);
        p
    }

    fn add_term(&mut self, m: Monomial, c: f64) {
        match self.terms.entry(m) {
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if *o.get() == 0.0 {
                    o.remove();
                }
            }
            Entry::Vacant(v) => {
                if c != 0.0 {
                    v.insert(c);
                }
            }
        }
    }

    fn add(mut self, other: Poly, sign: f64) -> Self {
        for (m, c) in other.terms {
            self.add_term(m, sign * c);
        }
        self
    }

    fn scale(mut self, s: f64) -> Self {
        if s == 0.0 {
            return Poly::default();
        }
        for c in self.terms.values_mut() {
            *c *= s;
        }
        self
    }

    fn mul(&self, other: &Poly) -> Self {
        let mut out = Poly::default();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(mul_monomials(ma, mb), ca * cb);
            }
        }
        out
    }

    fn single(&self) -> Option<(&Monomial, f64)> {
        if self.terms.len() == 1 {
            self.terms.iter().next().map(|(m, c)| (m, *c))
        } else {
            None
        }
    }

    fn as_const(&self) -> Option<f64> {
        match self.terms.len() {
            0 => Some(0.0),
            1 => self.terms.get(&Monomial::new()).copied(),
            _ => None,
        }
    }
}

fn mul_monomials(a: &Monomial, b: &Monomial) -> Monomial {
    let mut out = a.clone();
    for (k, e) in b {
        let entry = out.entry(k.clone()).or_insert(0);
        *entry += e;
        if *entry == 0 {
            out.remove(k);
        }
    }
    out
}

fn var_key(v: &Var) -> String {
    match v {
        Var::State(i) => format!("0a{i:08}"),
        Var::Input { channel, order } => format!("0b{channel:06}_{order:04}"),
        Var::Param(name) => format!("0c{name}"),
    }
}

impl Atoms {
    fn intern(&mut self, key: String, e: Expr) -> String {
        self.table.entry(key.clone()).or_insert(e);
        key
    }

    fn atom(&mut self, e: Expr) -> String {
        let key = match &e {
            Expr::Var(v) => var_key(v),
            Expr::Call(..) | Expr::Tab(..) => format!("1{e}"),
            _ => format!("2{e}"),
        };
        self.intern(key, e)
    }

    fn to_poly(&mut self, e: &Expr) -> Poly {
        match e {
            Expr::Const(c) => Poly::constant(*c),
            Expr::Var(_) => Poly::monomial(self.atom(e.clone()), 1),
            Expr::Neg(a) => self.to_poly(a).scale(-1.0),
            Expr::Add(a, b) => {
                let pa = self.to_poly(a);
                pa.add(self.to_poly(b), 1.0)
            }
            Expr::Sub(a, b) => {
                let pa = self.to_poly(a);
                pa.add(self.to_poly(b), -1.0)
            }
            Expr::Mul(a, b) => {
                let pa = self.to_poly(a);
                if pa.terms.is_empty() {
                    return pa;
                }
                let pb = self.to_poly(b);
                self.merge_exp(pa.mul(&pb))
            }
            Expr::Div(a, b) => {
                let pa = self.to_poly(a);
                let pb = self.to_poly(b);
                if pa.terms.is_empty() && pb.as_const() != Some(0.0) {
                    return pa;
                }
                match self.reciprocal(&pb) {
                    Some(r) => self.merge_exp(pa.mul(&r)),
                    None => {
                        let num = self.from_poly(&pa);
                        let den = self.from_poly(&pb);
                        Poly::monomial(self.atom(num / den), 1)
                    }
                }
            }
            Expr::Pow(a, k) => {
                let pa = self.to_poly(a);
                match self.power(pa.clone(), *k) {
                    Some(p) => self.merge_exp(p),
                    None => {
                        let base = self.from_poly(&pa);
                        Poly::monomial(self.atom(base.powi(*k)), 1)
                    }
                }
            }
            Expr::Call(f, a) => {
                let arg = self.simplified(a);
                if let Some(c) = arg.as_const() {
                    return Poly::constant(f.apply(c));
                }
                Poly::monomial(self.atom(Expr::call(*f, arg)), 1)
            }
            Expr::Tab(t, a) => {
                let arg = self.simplified(a);
                Poly::monomial(self.atom(Expr::Tab(t.clone(), Box::new(arg))), 1)
            }
        }
    }

    /// Combines the `exp` factors of each monomial into a single
    /// `exp(sum k_i a_i)`.
    fn merge_exp(&mut self, p: Poly) -> Poly {
        let is_exp = |k: &String| k.starts_with("1exp(");
        if !p.terms.keys().any(|m| {
            let mut exps = m.iter().filter(|(k, _)| is_exp(k));
            match (exps.next(), exps.next()) {
                (Some((_, e)), None) => *e != 1,
                (Some(_), Some(_)) => true,
                _ => false,
            }
        }) {
            return p;
        }
        let mut out = Poly::default();
        for (m, c) in p.terms {
            let mut rest = Monomial::new();
            let mut args = Vec::new();
            for (k, e) in m {
                if is_exp(&k) {
                    if let Expr::Call(_, arg) = &self.table[&k] {
                        args.push(Expr::Const(f64::from(e)) * (**arg).clone());
                    }
                } else {
                    rest.insert(k, e);
                }
            }
            let arg = self.simplified(&Expr::sum(args));
            let mut coeff = c;
            match arg.as_const() {
                Some(v) => coeff *= v.exp(),
                None => {
                    let key = self.atom(Expr::call(Func::Exp, arg));
                    rest.insert(key, 1);
                }
            }
            out.add_term(rest, coeff);
        }
        out
    }

    /// `1/p` when `p` is a single nonzero monomial, or a sum kept as an atom.
    fn reciprocal(&mut self, p: &Poly) -> Option<Poly> {
        if let Some((m, c)) = p.single() {
            if c == 0.0 {
                return None;
            }
            let inv: Monomial = m.iter().map(|(k, e)| (k.clone(), -e)).collect();
            let mut out = Poly::default();
            out.terms.insert(inv, 1.0 / c);
            return Some(out);
        }
        if p.terms.is_empty() {
            return None;
        }
        let sum = self.from_poly(p);
        Some(Poly::monomial(self.atom(sum), -1))
    }

    fn power(&mut self, p: Poly, k: i32) -> Option<Poly> {
        if k == 0 {
            return Some(Poly::constant(1.0));
        }
        if k == 1 {
            return Some(p);
        }
        if let Some((m, c)) = p.single() {
            if c == 0.0 && k < 0 {
                return None;
            }
            let raised: Monomial = m.iter().map(|(key, e)| (key.clone(), e * k)).collect();
            let mut out = Poly::default();
            out.add_term(raised, c.powi(k));
            return Some(out);
        }
        if p.terms.is_empty() {
            return if k > 0 { Some(Poly::default()) } else { None };
        }
        let sum = self.from_poly(&p);
        Some(Poly::monomial(self.atom(sum), k))
    }

    fn simplified(&mut self, e: &Expr) -> Expr {
        let p = self.to_poly(e);
        self.from_poly(&p)
    }

    fn from_poly(&self, p: &Poly) -> Expr {
        let mut terms: Vec<(&Monomial, f64)> = p.terms.iter().map(|(m, c)| (m, *c)).collect();
        terms.sort_by(|a, b| degree(b.0).cmp(&degree(a.0)).then_with(|| a.0.cmp(b.0)));

        let mut out: Option<Expr> = None;
        for (m, c) in terms {
            let magnitude = self.term(m, c.abs());
            out = Some(match (out, c < 0.0) {
                (None, false) => magnitude,
                (None, true) => -magnitude,
                (Some(acc), false) => acc + magnitude,
                (Some(acc), true) => acc - magnitude,
            });
        }
        out.unwrap_or_else(Expr::zero)
    }

    fn term(&self, m: &Monomial, c: f64) -> Expr {
        let factor = |key: &String, e: i32| {
            let base = self.table[key].clone();
            if e == 1 {
                base
            } else {
                base.powi(e)
            }
        };
        let num: Vec<Expr> = m.iter().filter(|(_, e)| **e > 0).map(|(k, e)| factor(k, *e)).collect();
        let den: Vec<Expr> = m.iter().filter(|(_, e)| **e < 0).map(|(k, e)| factor(k, -e)).collect();

        let mut numerator = if c == 1.0 && !num.is_empty() {
            None
        } else {
            Some(Expr::Const(c))
        };
        for f in num {
            numerator = Some(match numerator {
                None => f,
                Some(acc) => acc * f,
            });
        }
        let numerator = numerator.unwrap_or_else(Expr::one);
        match den.into_iter().reduce(|a, b| a * b) {
            None => numerator,
            Some(d) => numerator / d,
        }
    }
}

fn degree(m: &Monomial) -> i32 {
    m.values().filter(|e| **e > 0).sum()
}

/// Rewrites `e` into canonical sum-of-monomials form. Preserves the value
/// wherever `e` is defined.
pub fn simplify(e: &Expr) -> Expr {
    let mut atoms = Atoms::default();
    atoms.simplified(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Bindings};

    fn s(src: &str) -> String {
        simplify(&parse(src).unwrap()).to_string()
    }

    #[test]
    fn collects_like_terms() {
        assert_eq!(s("x1 + x1 - 2*x1"), "0");
        assert_eq!(s("x1*x2 + x2*x1"), "2*x1*x2");
        assert_eq!(s("3 + x1*0"), "3");
    }

    #[test]
    fn distributes_products() {
        assert_eq!(s("(x1 + 1)*(x1 - 1)"), "x1^2 - 1");
    }

    #[test]
    fn cancels_monomial_division() {
        assert_eq!(s("x1^3 / x1"), "x1^2");
        assert_eq!(s("(2*x1*u1) / (4*u1)"), "0.5*x1");
    }

    #[test]
    fn merges_denominator_powers() {
        assert_eq!(s("1/(1 + u1^2) * 1/(1 + u1^2)"), "1/(u1^2 + 1)^2");
    }

    #[test]
    fn folds_constants_in_calls() {
        assert_eq!(s("sin(0) + cos(x1 - x1)"), "1");
        assert_eq!(s("atan(2*u1 - u1)"), "atan(u1)");
    }

    #[test]
    fn merges_exponentials() {
        assert_eq!(s("exp(-0.5*t)*3*s*exp(-0.5*t)"), "3*s*exp(-t)");
        assert_eq!(s("exp(x1)/exp(x1)"), "1");
        assert_eq!(s("exp(x1)^2"), "exp(2*x1)");
    }

    #[test]
    fn idempotent_on_samples() {
        for src in [
            "x1/(x2 + 1) - 3*x1^2/(x2 + 1)^2",
            "-(x1 - sin(x2*u1))^3 / (2 + cos(x1))",
            "exp(-x1^2)*tanh(u1_d2) - 1/x1",
            "-x1",
            "0.1 + 0.2 - x1",
        ] {
            let once = simplify(&parse(src).unwrap());
            let twice = simplify(&once);
            assert_eq!(once, twice, "{src}");
            let reparsed = simplify(&parse(&once.to_string()).unwrap());
            assert_eq!(once, reparsed, "{src}");
        }
    }

    #[test]
    fn preserves_value() {
        let e = parse("(x1 + u1)^2 / (x1 - 3) - x1*(u1 - 2)/(x1 - 3)").unwrap();
        let b = Bindings::new().with_state(&[0.7]).with_input(&[-1.3]);
        let a = e.eval(&b).unwrap();
        let c = simplify(&e).eval(&b).unwrap();
        assert!((a - c).abs() < 1e-12);
    }
}
