//! Nonlinear system models `x' = f(x, u)`, `y = h(x)`: validation, affine
//! structure detection, the text model format and the built-in corpus.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{
    differentiate, is_identically_zero, parse, simplify, Expr, ParseError, Var, ZeroVerdict,
};
use crate::linear::LinearSystem;
use crate::simulation::phi::{CascadeLyapunov, CascadeOutput, Phi};

/// Seed used for every zero test performed by this module.
pub const MODEL_SEED: u64 = 0x5eed_0001;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("line {line}: {source}")]
    Expression { line: usize, source: ParseError },
    #[error("unknown corpus key `{0}`")]
    UnknownKey(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug)]
pub struct SystemModel {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub f: Vec<Expr>,
    pub h: Vec<Expr>,
    /// Matrix data for models built from a linear system.
    pub linear: Option<LinearSystem>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub clean: bool,
    pub violations: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct AffineDecomposition {
    pub f0: Vec<Expr>,
    /// `g[j][i]` is component `i` of the column multiplying `u_{j+1}`.
    pub g: Vec<Vec<Expr>>,
    /// Set when some linearity test was decided by sampling.
    pub probabilistic: bool,
}

#[derive(Clone, Debug)]
pub enum Affinity {
    Affine(AffineDecomposition),
    /// 1-based component of `f` and input channel that break affinity.
    NotAffine { component: usize, input: usize },
}

impl SystemModel {
    pub fn new(name: &str, n: usize, m: usize, f: Vec<Expr>, h: Vec<Expr>) -> Self {
        SystemModel {
            name: name.to_string(),
            n,
            m,
            l: h.len(),
            f,
            h,
            linear: None,
        }
    }

    /// The symbolic form of `x' = Ax + Bu`, `y = Cx`, keeping the matrices.
    pub fn from_linear(name: &str, sys: &LinearSystem) -> Self {
        let row = |coeffs: &[(f64, Expr)]| {
            simplify(&Expr::sum(
                coeffs
                    .iter()
                    .filter(|(c, _)| *c != 0.0)
                    .map(|(c, v)| Expr::Const(*c) * v.clone()),
            ))
        };
        let (n, m) = (sys.n(), sys.m());
        let f = (0..n)
            .map(|i| {
                let mut terms: Vec<(f64, Expr)> =
                    (0..n).map(|j| (sys.a[(i, j)], Expr::x(j + 1))).collect();
                terms.extend((0..m).map(|j| (sys.b[(i, j)], Expr::u(j + 1))));
                row(&terms)
            })
            .collect();
        let h = (0..sys.l())
            .map(|i| row(&(0..n).map(|j| (sys.c[(i, j)], Expr::x(j + 1))).collect::<Vec<_>>()))
            .collect();
        let mut model = SystemModel::new(name, n, m, f, h);
        model.linear = Some(sys.clone());
        model
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if self.f.len() != self.n {
            violations.push(format!("{} state equations for {} states", self.f.len(), self.n));
        }
        if self.h.len() != self.l {
            violations.push(format!("{} output equations for {} outputs", self.h.len(), self.l));
        }
        let mut check = |what: &str, i: usize, e: &Expr, outputs: bool| {
            for v in e.vars() {
                match v {
                    Var::State(k) if k > self.n => {
                        violations.push(format!("{what}{i} references x{k} but n = {}", self.n))
                    }
                    Var::Input { .. } if outputs => {
                        violations.push(format!("{what}{i}: output depends on input ({v})"))
                    }
                    Var::Input { order, .. } if order > 0 => {
                        violations.push(format!("{what}{i}: dynamics reference input derivative {v}"))
                    }
                    Var::Input { channel, .. } if channel > self.m => violations.push(format!(
                        "{what}{i} references u{channel} but m = {}",
                        self.m
                    )),
                    Var::Param(p) => violations.push(format!("{what}{i}: unbound parameter `{p}`")),
                    _ => {}
                }
            }
        };
        for (i, e) in self.f.iter().enumerate() {
            check("x'", i + 1, e, false);
        }
        for (i, e) in self.h.iter().enumerate() {
            check("y", i + 1, e, true);
        }
        ValidationReport {
            clean: violations.is_empty(),
            violations,
        }
    }

    /// Splits `f = f0(x) + Σ_j g_j(x) u_j` when every component is affine in `u`.
    pub fn affine_decompose(&self) -> Affinity {
        let mut probabilistic = false;
        let inputs: Vec<Var> = (1..=self.m).map(Var::input).collect();
        let mut zero = |e: &Expr| match is_identically_zero(e, MODEL_SEED) {
            ZeroVerdict::Zero { probabilistic: p } => {
                probabilistic |= p;
                true
            }
            _ => false,
        };
        let mut g = vec![Vec::with_capacity(self.n); self.m];
        for (i, fi) in self.f.iter().enumerate() {
            for (j, uj) in inputs.iter().enumerate() {
                let d = differentiate(fi, uj);
                for uk in &inputs[j..] {
                    if !zero(&differentiate(&d, uk)) {
                        return Affinity::NotAffine {
                            component: i + 1,
                            input: j + 1,
                        };
                    }
                }
                g[j].push(d);
            }
        }
        let at_zero = |e: &Expr| {
            simplify(&e.map_vars(&|v| v.is_input().then(Expr::zero)))
        };
        let f0: Vec<Expr> = self.f.iter().map(at_zero).collect();
        let g: Vec<Vec<Expr>> = g.into_iter().map(|col| col.iter().map(at_zero).collect()).collect();
        for (i, fi) in self.f.iter().enumerate() {
            let recombined = Expr::sum(
                std::iter::once(f0[i].clone())
                    .chain((0..self.m).map(|j| g[j][i].clone() * Expr::u(j + 1))),
            );
            debug_assert!(zero(&(fi.clone() - recombined)));
        }
        Affinity::Affine(AffineDecomposition {
            f0,
            g,
            probabilistic,
        })
    }

    /// Text model format, one declaration per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "system {}", self.name);
        let _ = writeln!(s, "states {}", self.n);
        let _ = writeln!(s, "inputs {}", self.m);
        for (i, e) in self.f.iter().enumerate() {
            let _ = writeln!(s, "x{}' = {e}", i + 1);
        }
        for (i, e) in self.h.iter().enumerate() {
            let _ = writeln!(s, "y{} = {e}", i + 1);
        }
        s
    }

    pub fn parse_text(text: &str) -> Result<Self, ModelError> {
        let mut name = None;
        let (mut n, mut m) = (None, None);
        let mut f: Vec<(usize, Expr)> = Vec::new();
        let mut h: Vec<(usize, Expr)> = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let err = |message: String| ModelError::Format { line, message };
            let count = |v: &str| v.trim().parse::<usize>().map_err(|_| err(format!("bad count `{}`", v.trim())));
            if let Some(rest) = body.strip_prefix("system ") {
                name = Some(rest.trim().to_string());
            } else if let Some(rest) = body.strip_prefix("states ") {
                n = Some(count(rest)?);
            } else if let Some(rest) = body.strip_prefix("inputs ") {
                m = Some(count(rest)?);
            } else if let Some((lhs, rhs)) = body.split_once('=') {
                let lhs = lhs.trim();
                let e = parse(rhs).map_err(|source| ModelError::Expression { line, source })?;
                let index = |s: &str| s.parse::<usize>().ok().filter(|i| *i >= 1);
                if let Some(i) = lhs.strip_prefix('x').and_then(|s| s.strip_suffix('\'')).and_then(index) {
                    f.push((i, e));
                } else if let Some(i) = lhs.strip_prefix('y').and_then(index) {
                    h.push((i, e));
                } else {
                    return Err(err(format!("expected `x<i>' =` or `y<i> =`, found `{lhs}`")));
                }
            } else {
                return Err(err(format!("unrecognised line `{body}`")));
            }
        }
        let n = n.ok_or_else(|| ModelError::Invalid("missing `states` line".into()))?;
        let m = m.unwrap_or(0);
        let ordered = |mut v: Vec<(usize, Expr)>, what: &str, want: Option<usize>| {
            v.sort_by_key(|p| p.0);
            let count = want.unwrap_or(v.len());
            if v.len() != count || v.iter().enumerate().any(|(k, p)| p.0 != k + 1) {
                return Err(ModelError::Invalid(format!(
                    "{what} equations must be numbered 1..{count} exactly once"
                )));
            }
            Ok(v.into_iter().map(|p| p.1).collect::<Vec<_>>())
        };
        let f = ordered(f, "state", Some(n))?;
        let h = ordered(h, "output", None)?;
        Ok(SystemModel::new(
            name.as_deref().unwrap_or("unnamed"),
            n,
            m,
            f,
            h,
        ))
    }
}

fn parsed(name: &str, m: usize, f: &[&str], h: &[&str]) -> SystemModel {
    let all = |v: &[&str]| -> Vec<Expr> {
        v.iter()
            .map(|s| parse(s).expect("corpus expressions parse"))
            .collect()
    };
    SystemModel::new(name, f.len(), m, all(f), all(h))
}

/// Plateau count and edge fraction of the corpus `phi`.
pub const CORPUS_PHI_KMAX: usize = 50;
pub const CORPUS_PHI_EDGE: f64 = 0.1;

/// Corpus keys with a one-line description each.
pub const CORPUS: &[(&str, &str)] = &[
    ("example1_linear", "companion SISO x' = Ax + bu, poles -1,-2,-3, c = (4, 1, 0)"),
    ("eq25", "x1' = u, x2' = -x2 + u^2, y = x1"),
    ("example4", "4 states, 2 inputs, y = (x1, x2); no relative degree, output-input stable"),
    ("example5", "4 states, 2 inputs, y = (x1, x2); not output-input stable"),
    ("example6_cascade", "x1' = 1, x2' = h1(x1), y = x2 with h1 built from phi"),
    ("normal_form_r", "r = 3 chain, xi3' = sin(eta) + (2 + tanh(eta)) u, eta' = -eta + xi1"),
    ("integrator", "x' = u, y = x"),
    ("ysq", "y' = u^2"),
    ("yatan", "y' = atan(u)"),
];

/// Companion-form SISO model with characteristic coefficients `coeffs`
/// (ascending, monic implied) and output row `c`.
pub fn companion_model(coeffs: &[f64], c: &[f64]) -> Result<SystemModel, ModelError> {
    let sys = LinearSystem::companion(coeffs, c).map_err(|e| ModelError::Invalid(e.to_string()))?;
    Ok(SystemModel::from_linear("example1_linear", &sys))
}

/// Global normal form with an `r`-chain `x1..xr`, internal state
/// `x_{r+1}..x_n`, `x_r' = b + a u` and `eta' = q`. `a`, `b`, `q` are
/// written over the model's state names.
pub fn normal_form_r(r: usize, a: &str, b: &str, q: &[&str]) -> Result<SystemModel, ModelError> {
    if r == 0 {
        return Err(ModelError::Invalid("r must be at least 1".into()));
    }
    let expr = |s: &str| {
        parse(s).map_err(|source| ModelError::Expression { line: 1, source })
    };
    let mut f: Vec<Expr> = (2..=r).map(Expr::x).collect();
    f.push(simplify(&(expr(b)? + expr(a)? * Expr::u(1))));
    for qi in q {
        f.push(expr(qi)?);
    }
    let model = SystemModel::new("normal_form_r", f.len(), 1, f, vec![Expr::x(1)]);
    let report = model.validate();
    if !report.clean {
        return Err(ModelError::Invalid(report.violations.join("; ")));
    }
    Ok(model)
}

/// The source subsystem of the cascade: `x1' = 1`, `y1 = h1(x1)`.
pub fn phi_sigma1(phi: &Phi) -> SystemModel {
    let h1 = Arc::new(CascadeOutput { phi: phi.clone() });
    SystemModel::new(
        "phi_sigma1",
        1,
        0,
        vec![Expr::one()],
        vec![Expr::tabulated(h1, Expr::x(1))],
    )
}

/// `x1' = 1`, `x2' = h1(x1)`, `y = x2`.
pub fn phi_cascade(phi: &Phi) -> SystemModel {
    let h1 = Arc::new(CascadeOutput { phi: phi.clone() });
    SystemModel::new(
        "example6_cascade",
        2,
        0,
        vec![Expr::one(), Expr::tabulated(h1, Expr::x(1))],
        vec![Expr::x(2)],
    )
}

/// The Lyapunov function of the cascade source as an expression in `x1`.
pub fn phi_lyapunov(phi: &Phi) -> Expr {
    Expr::tabulated(Arc::new(CascadeLyapunov { phi: phi.clone() }), Expr::x(1))
}

/// Looks up a corpus model.
pub fn builtin(name: &str) -> Result<SystemModel, ModelError> {
    let model = match name {
        "example1_linear" => companion_model(&[6.0, 11.0, 6.0], &[4.0, 1.0, 0.0])?,
        "eq25" => parsed("eq25", 1, &["u1", "-x2 + u1^2"], &["x1"]),
        "example4" => parsed(
            "example4",
            2,
            &["u1", "x3 + u1^2", "u2", "-x4 + x1^3"],
            &["x1", "x2"],
        ),
        "example5" => parsed(
            "example5",
            2,
            &["u1", "x3 + x2*u2", "u2", "-x4 + x1^3"],
            &["x1", "x2"],
        ),
        "example6_cascade" => phi_cascade(&Phi::new(CORPUS_PHI_KMAX, CORPUS_PHI_EDGE)),
        "normal_form_r" => normal_form_r(3, "2 + tanh(x4)", "sin(x4)", &["-x4 + x1"])?,
        "integrator" => parsed("integrator", 1, &["u1"], &["x1"]),
        "ysq" => parsed("ysq", 1, &["u1^2"], &["x1"]),
        "yatan" => parsed("yatan", 1, &["atan(u1)"], &["x1"]),
        other => return Err(ModelError::UnknownKey(other.to_string())),
    };
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_clean() {
        for (key, _) in CORPUS {
            let model = builtin(key).unwrap();
            let report = model.validate();
            assert!(report.clean, "{key}: {:?}", report.violations);
        }
        assert!(matches!(builtin("nope"), Err(ModelError::UnknownKey(_))));
    }

    #[test]
    fn validation_catches_violations() {
        let bad_output = parsed("bad", 1, &["u1"], &["x1 + u1"]);
        let report = bad_output.validate();
        assert!(!report.clean);
        assert!(report.violations[0].contains("output depends on input"));

        let mut out_of_range = parsed("bad", 1, &["x5", "x1"], &["x1"]);
        out_of_range.n = 2;
        assert!(!out_of_range.validate().clean);

        let derivative = parsed("bad", 1, &["u1_d1"], &["x1"]);
        assert!(!derivative.validate().clean);
    }

    #[test]
    fn eq25_is_not_affine() {
        match builtin("eq25").unwrap().affine_decompose() {
            Affinity::NotAffine { component, input } => assert_eq!((component, input), (2, 1)),
            Affinity::Affine(_) => panic!("eq25 is quadratic in u"),
        }
    }

    #[test]
    fn normal_form_is_affine() {
        let model = builtin("normal_form_r").unwrap();
        let Affinity::Affine(dec) = model.affine_decompose() else {
            panic!("normal form is affine");
        };
        assert_eq!(dec.g[0][0], Expr::zero());
        assert_eq!(dec.g[0][1], Expr::zero());
        assert_eq!(dec.g[0][2].to_string(), "tanh(x4) + 2");
        assert_eq!(dec.f0[2].to_string(), "sin(x4)");
    }

    #[test]
    fn inputless_model_is_affine() {
        let model = parsed("decay", 0, &["-x1"], &["x1"]);
        let Affinity::Affine(dec) = model.affine_decompose() else {
            panic!("no inputs");
        };
        assert!(dec.g.is_empty());
        assert_eq!(dec.f0[0].to_string(), "-x1");
    }

    #[test]
    fn text_round_trip() {
        for key in ["eq25", "example4", "example5", "normal_form_r", "yatan", "example1_linear"] {
            let model = builtin(key).unwrap();
            let back = SystemModel::parse_text(&model.to_text()).unwrap();
            assert_eq!((back.n, back.m, back.l), (model.n, model.m, model.l));
            assert_eq!(back.name, model.name);
            for (a, b) in back.f.iter().chain(&back.h).zip(model.f.iter().chain(&model.h)) {
                assert!(is_identically_zero(&(a.clone() - b.clone()), 7).is_zero(), "{key}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn parse_errors_have_lines() {
        let err = SystemModel::parse_text("system s\nstates 1\nx1' = (u1\n").unwrap_err();
        assert!(matches!(err, ModelError::Expression { line: 3, .. }));
        let err = SystemModel::parse_text("system s\nstates 2\nx1' = u1\n").unwrap_err();
        assert!(matches!(err, ModelError::Invalid(_)));
        let err = SystemModel::parse_text("states x\n").unwrap_err();
        assert!(matches!(err, ModelError::Format { line: 1, .. }));
    }

    #[test]
    fn linear_model_keeps_matrices() {
        let model = builtin("example1_linear").unwrap();
        assert!(model.linear.is_some());
        assert_eq!(model.h[0].to_string(), "4*x1 + x2");
        assert_eq!(model.f[2].to_string(), "-6*x1 - 11*x2 - 6*x3 + u1");
    }
}
