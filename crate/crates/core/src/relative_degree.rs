//! Relative degree: the exact Lie-derivative criterion for affine SISO
//! systems and the sampled growth criterion for general and MIMO systems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{
    differentiate, is_identically_zero, simplify, CompiledExpr, EvalError, Expr, Var, VarLayout,
    ZeroVerdict,
};
use crate::jets::{next_jet, JET_CAP};
use crate::system::{Affinity, SystemModel};

/// `L_f^r h(0)` must vanish to this tolerance.
pub const ORIGIN_TOLERANCE: f64 = 1e-9;
/// Values of `|H_r|` or `|a(x)|` at or below this count as zero.
pub const VANISH_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RelDegError {
    #[error("system is not affine in u (component {component}, input u{input})")]
    NotAffine { component: usize, input: usize },
    #[error("system is not SISO (m = {m}, l = {l})")]
    NotSiso { m: usize, l: usize },
    #[error("{0}")]
    Options(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Degree {
    Siso(usize),
    Mimo(Vec<usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    HasDegree,
    NoDegree,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub witness: Option<Witness>,
}

/// The sampled region a verdict is relative to.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompactSpec {
    pub box_radius: f64,
    pub points_per_axis: usize,
    pub k_grid: Vec<f64>,
    pub u_cap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelDegVerdict {
    pub outcome: Outcome,
    pub r: Option<Degree>,
    pub reason: Option<String>,
    pub path: String,
    pub conditions: Vec<ConditionCheck>,
    pub probabilistic: bool,
    pub seed: u64,
    pub compact: CompactSpec,
}

impl RelDegVerdict {
    pub fn degree(&self) -> Option<&Degree> {
        match self.outcome {
            Outcome::HasDegree => self.r.as_ref(),
            _ => None,
        }
    }

    pub fn siso_degree(&self) -> Option<usize> {
        match self.degree() {
            Some(Degree::Siso(r)) => Some(*r),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RelDegOptions {
    pub box_radius: f64,
    /// `None` picks `min(21, floor(4096^(1/n)))`.
    pub points_per_axis: Option<usize>,
    pub k_grid: Vec<f64>,
    pub u_cap: f64,
    /// Smallest `|u0|` on the condition-3 grid.
    pub u_min: f64,
    pub seed: u64,
    /// User-proposed orders (needed for MIMO systems whose outputs never see the input).
    pub candidate: Option<Vec<usize>>,
}

impl Default for RelDegOptions {
    fn default() -> Self {
        RelDegOptions {
            box_radius: 1.0,
            points_per_axis: None,
            k_grid: vec![1.0, 10.0, 100.0],
            u_cap: 1e4,
            u_min: 1e-3,
            seed: 1,
            candidate: None,
        }
    }
}

impl RelDegOptions {
    pub fn points(&self, n: usize) -> usize {
        self.points_per_axis.unwrap_or_else(|| {
            let p = 4096f64.powf(1.0 / n.max(1) as f64).floor() as usize;
            p.clamp(2, 21)
        })
    }

    fn compact(&self, n: usize) -> CompactSpec {
        CompactSpec {
            box_radius: self.box_radius,
            points_per_axis: self.points(n),
            k_grid: self.k_grid.clone(),
            u_cap: self.u_cap,
        }
    }

    fn check(&self) -> Result<(), RelDegError> {
        let ok = self.box_radius > 0.0
            && self.u_cap > self.u_min
            && self.u_min > 0.0
            && !self.k_grid.is_empty()
            && self.k_grid.iter().all(|k| *k > 0.0);
        if ok {
            Ok(())
        } else {
            Err(RelDegError::Options(
                "need box radius > 0, 0 < u_min < u_cap and positive K values".into(),
            ))
        }
    }
}

/// Points of the uniform grid on `[-radius, radius]^n`, plus the origin.
pub fn state_grid(n: usize, radius: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let per_axis = per_axis.max(2);
    let axis: Vec<f64> = (0..per_axis)
        .map(|i| -radius + 2.0 * radius * i as f64 / (per_axis - 1) as f64)
        .collect();
    let total = per_axis.pow(n as u32);
    let mut out = Vec::with_capacity(total + 1);
    out.push(vec![0.0; n]);
    for mut idx in 0..total {
        let mut p = Vec::with_capacity(n);
        for _ in 0..n {
            p.push(axis[idx % per_axis]);
            idx /= per_axis;
        }
        out.push(p);
    }
    out
}

fn zero_verdict(e: &Expr, seed: u64, probabilistic: &mut bool) -> bool {
    match is_identically_zero(e, seed) {
        ZeroVerdict::Zero { probabilistic: p } => {
            *probabilistic |= p;
            true
        }
        _ => false,
    }
}

fn lie(e: &Expr, field: &[Expr]) -> Expr {
    simplify(&Expr::sum(
        field
            .iter()
            .enumerate()
            .map(|(i, fi)| differentiate(e, &Var::State(i + 1)) * fi.clone()),
    ))
}

/// Exact criterion for affine SISO systems: smallest `r` with
/// `L_g L_f^(r-1) h` not identically zero, nonvanishing on the sampled box,
/// and `L_f^r h(0) = 0`.
pub fn affine_relative_degree(
    model: &SystemModel,
    opts: &RelDegOptions,
) -> Result<RelDegVerdict, RelDegError> {
    opts.check()?;
    if model.m != 1 || model.l != 1 {
        return Err(RelDegError::NotSiso { m: model.m, l: model.l });
    }
    let dec = match model.affine_decompose() {
        Affinity::Affine(d) => d,
        Affinity::NotAffine { component, input } => {
            return Err(RelDegError::NotAffine { component, input })
        }
    };
    let mut probabilistic = dec.probabilistic;
    let g = &dec.g[0];
    let mut verdict = RelDegVerdict {
        outcome: Outcome::Inconclusive,
        r: None,
        reason: None,
        path: "affine".into(),
        conditions: Vec::new(),
        probabilistic: false,
        seed: opts.seed,
        compact: opts.compact(model.n),
    };
    let mut lf = simplify(&model.h[0]);
    let mut found = None;
    for k in 0..model.n {
        let a = lie(&lf, g);
        if !zero_verdict(&a, opts.seed ^ k as u64, &mut probabilistic) {
            found = Some((k + 1, a));
            break;
        }
        verdict.conditions.push(ConditionCheck {
            name: format!("L_g L_f^{k} h == 0"),
            pass: true,
            detail: "identically zero".into(),
            witness: None,
        });
        lf = lie(&lf, &dec.f0);
    }
    let Some((r, a)) = found else {
        verdict.reason = Some(format!("L_g L_f^k h vanishes identically for all k < n = {}", model.n));
        verdict.probabilistic = probabilistic;
        return Ok(verdict);
    };
    let b = lie(&lf, &dec.f0);
    let layout = VarLayout::standard(model.n, 0, 0);
    let ca = CompiledExpr::compile(&a, &layout)?;
    let cb = CompiledExpr::compile(&b, &layout)?;
    let grid = state_grid(model.n, opts.box_radius, opts.points(model.n));
    let values: Vec<f64> = grid
        .par_iter()
        .map(|x| ca.eval(x).unwrap_or(f64::NAN))
        .collect();
    let a0 = values[0];
    let bad = values
        .iter()
        .position(|v| !v.is_finite() || v.abs() <= VANISH_TOLERANCE || v.signum() != a0.signum());
    let cond_a = ConditionCheck {
        name: format!("L_g L_f^{} h(x) != 0", r - 1),
        pass: bad.is_none(),
        detail: match bad {
            None => format!("no zero or sign change on {} sampled states", grid.len()),
            Some(i) => format!("a(x) = {:e} at a sampled state (a(0) = {a0:e})", values[i]),
        },
        witness: bad.map(|i| Witness {
            x: grid[i].clone(),
            u: Vec::new(),
            value: values[i],
        }),
    };
    let b0 = cb.eval(&vec![0.0; model.n])?;
    let cond_b = ConditionCheck {
        name: format!("L_f^{r} h(0) = 0"),
        pass: b0.abs() <= ORIGIN_TOLERANCE,
        detail: format!("L_f^{r} h(0) = {b0:e}"),
        witness: (b0.abs() > ORIGIN_TOLERANCE).then(|| Witness {
            x: vec![0.0; model.n],
            u: Vec::new(),
            value: b0,
        }),
    };
    let pass = cond_a.pass && cond_b.pass;
    verdict.outcome = if pass { Outcome::HasDegree } else { Outcome::NoDegree };
    verdict.r = Some(Degree::Siso(r));
    if !pass {
        verdict.reason = Some(if cond_a.pass { cond_b.detail.clone() } else { cond_a.detail.clone() });
    }
    verdict.conditions.push(cond_a);
    verdict.conditions.push(cond_b);
    verdict.probabilistic = probabilistic;
    Ok(verdict)
}

fn input_dependence(e: &Expr, seed: u64, probabilistic: &mut bool) -> bool {
    e.vars()
        .into_iter()
        .filter(Var::is_input)
        .any(|v| !zero_verdict(&differentiate(e, &v), seed, probabilistic))
}

/// Unit directions in `R^m` used to sample `u0`.
fn directions(m: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for j in 0..m {
        for s in [1.0, -1.0] {
            let mut d = vec![0.0; m];
            d[j] = s;
            out.push(d);
        }
    }
    if m > 1 {
        let c = 1.0 / (m as f64).sqrt();
        out.push(vec![c; m]);
        out.push(vec![-c; m]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..8 {
            let v: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            out.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    out
}

/// `u_cap, u_cap/2, ...` down to `u_min`, ascending.
fn magnitude_ladder(u_min: f64, u_cap: f64) -> Vec<f64> {
    let mut v = Vec::new();
    let mut x = u_cap;
    while x >= u_min {
        v.push(x);
        x /= 2.0;
    }
    v.reverse();
    v
}

struct StackedH {
    compiled: Vec<CompiledExpr>,
    n: usize,
}

impl StackedH {
    /// `|(H_{r_1}^1; ...; H_{r_l}^l)(x, u)|` and the components.
    fn eval(&self, x: &[f64], u: &[f64], buf: &mut Vec<f64>, stack: &mut Vec<f64>) -> Vec<f64> {
        buf.clear();
        buf.extend_from_slice(&x[..self.n]);
        buf.extend_from_slice(u);
        self.compiled
            .iter()
            .map(|c| c.eval_with(buf, stack).unwrap_or(f64::NAN))
            .collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Sampled criterion: candidate orders from the first input dependence,
/// then for each `K` a threshold `M <= u_cap` with `|H_r| >= K` on the box
/// whenever `|u0| >= M`, and `H_r(0, u0) != 0` for `u0 != 0`.
pub fn general_relative_degree(
    model: &SystemModel,
    opts: &RelDegOptions,
) -> Result<RelDegVerdict, RelDegError> {
    opts.check()?;
    let mut probabilistic = false;
    let mut verdict = RelDegVerdict {
        outcome: Outcome::Inconclusive,
        r: None,
        reason: None,
        path: "general".into(),
        conditions: Vec::new(),
        probabilistic: false,
        seed: opts.seed,
        compact: opts.compact(model.n),
    };
    if let Some(c) = &opts.candidate {
        if c.len() != model.l || c.iter().any(|r| *r == 0 || *r > JET_CAP) {
            return Err(RelDegError::Options(format!(
                "candidate orders must be {} values in 1..={JET_CAP}",
                model.l
            )));
        }
    }
    let mut orders = Vec::with_capacity(model.l);
    let mut tops = Vec::with_capacity(model.l);
    for (i, h) in model.h.iter().enumerate() {
        let seed = opts.seed ^ ((i as u64 + 1) << 16);
        let mut e = simplify(h);
        let mut level = 0;
        let wanted = opts.candidate.as_ref().map(|c| c[i]);
        loop {
            let depends = input_dependence(&e, seed ^ level as u64, &mut probabilistic);
            match wanted {
                Some(r) if level < r && depends => {
                    verdict.outcome = Outcome::NoDegree;
                    verdict.r = Some(Degree::Mimo(opts.candidate.clone().unwrap_or_default()));
                    verdict.reason = Some(format!("H_{level} of output {} depends on the input", i + 1));
                    verdict.conditions.push(ConditionCheck {
                        name: "condition 1: H_k independent of u for k < r".into(),
                        pass: false,
                        detail: format!("output {}: H_{level} = {e}", i + 1),
                        witness: None,
                    });
                    verdict.probabilistic = probabilistic;
                    return Ok(verdict);
                }
                Some(r) if level == r => break,
                None if depends => break,
                _ => {}
            }
            if level == JET_CAP {
                verdict.reason = Some(format!(
                    "output {} shows no input dependence up to order {JET_CAP}",
                    i + 1
                ));
                verdict.probabilistic = probabilistic;
                return Ok(verdict);
            }
            e = next_jet(&e, &model.f);
            level += 1;
        }
        orders.push(level);
        tops.push(e);
    }
    let degree = if model.l == 1 {
        Degree::Siso(orders[0])
    } else {
        Degree::Mimo(orders.clone())
    };
    verdict.r = Some(degree);
    verdict.conditions.push(ConditionCheck {
        name: "condition 1: H_k independent of u for k < r".into(),
        pass: true,
        detail: format!("orders {orders:?}"),
        witness: None,
    });

    let layout = VarLayout::standard(model.n, model.m, 0);
    let stacked = StackedH {
        compiled: tops
            .iter()
            .map(|e| CompiledExpr::compile(e, &layout))
            .collect::<Result<_, _>>()?,
        n: model.n,
    };
    let grid = state_grid(model.n, opts.box_radius, opts.points(model.n));
    let dirs = directions(model.m, opts.seed);
    let ladder = magnitude_ladder(opts.u_min, opts.u_cap);

    // Per state: min |H| per ladder rung (with its direction) and the u-spread.
    struct Scan {
        mins: Vec<(f64, usize)>,
        spread: f64,
    }
    let scans: Vec<Scan> = grid
        .par_iter()
        .map(|x| {
            let (mut buf, mut stack) = (Vec::new(), Vec::new());
            let mut mins = vec![(f64::INFINITY, 0); ladder.len()];
            let mut lo = vec![f64::INFINITY; tops.len()];
            let mut hi = vec![f64::NEG_INFINITY; tops.len()];
            for (k, v) in ladder.iter().enumerate() {
                for (d, dir) in dirs.iter().enumerate() {
                    let u: Vec<f64> = dir.iter().map(|c| c * v).collect();
                    let h = stacked.eval(x, &u, &mut buf, &mut stack);
                    let size = if h.iter().all(|a| a.is_finite()) { norm(&h) } else { f64::NAN };
                    if !(size >= mins[k].0) {
                        mins[k] = (size, d);
                    }
                    for (c, a) in h.iter().enumerate() {
                        lo[c] = lo[c].min(*a);
                        hi[c] = hi[c].max(*a);
                    }
                }
            }
            let spread = hi.iter().zip(&lo).map(|(h, l)| h - l).fold(0.0, f64::max);
            Scan { mins, spread }
        })
        .collect();

    let witness = |xi: usize, k: usize, d: usize, value: f64| Witness {
        x: grid[xi].clone(),
        u: dirs[d].iter().map(|c| c * ladder[k]).collect(),
        value,
    };
    let mut pass2 = true;
    for &kk in &opts.k_grid {
        // Worst state per rung, then suffix minima over rungs.
        let mut worst: Vec<(f64, usize, usize)> = vec![(f64::INFINITY, 0, 0); ladder.len()];
        for (xi, s) in scans.iter().enumerate() {
            for (k, (v, d)) in s.mins.iter().enumerate() {
                if !(*v >= worst[k].0) {
                    worst[k] = (*v, xi, *d);
                }
            }
        }
        let mut suffix = f64::INFINITY;
        let mut threshold = None;
        for k in (0..ladder.len()).rev() {
            suffix = suffix.min(worst[k].0);
            if suffix >= kk {
                threshold = Some(ladder[k]);
            } else {
                break;
            }
        }
        let top = ladder.len() - 1;
        let check = match threshold {
            Some(m) => ConditionCheck {
                name: format!("condition 2 (K = {kk})"),
                pass: true,
                detail: format!("|H_r| >= {kk} on the box whenever |u0| >= {m:e}"),
                witness: None,
            },
            None => {
                pass2 = false;
                let (v, xi, d) = worst[top];
                ConditionCheck {
                    name: format!("condition 2 (K = {kk})"),
                    pass: false,
                    detail: format!("|H_r| = {v:e} < {kk} at |u0| = u_cap = {:e}", opts.u_cap),
                    witness: Some(witness(xi, top, d, v)),
                }
            }
        };
        verdict.conditions.push(check);
    }

    let origin = &scans[0];
    let zero_at = origin
        .mins
        .iter()
        .enumerate()
        .find(|(_, (v, _))| !(*v > VANISH_TOLERANCE));
    let pass3 = zero_at.is_none();
    verdict.conditions.push(ConditionCheck {
        name: "condition 3: H_r(0, u0) != 0 for u0 != 0".into(),
        pass: pass3,
        detail: match zero_at {
            None => format!("nonzero on {} magnitudes in [{:e}, {:e}]", ladder.len(), opts.u_min, opts.u_cap),
            Some((k, (v, _))) => format!("|H_r(0, u0)| = {v:e} at |u0| = {:e}", ladder[k]),
        },
        witness: zero_at.map(|(k, (v, d))| witness(0, k, *d, *v)),
    });

    let flat: Vec<usize> = scans
        .iter()
        .enumerate()
        .filter(|(_, s)| !(s.spread > VANISH_TOLERANCE))
        .map(|(i, _)| i)
        .collect();
    verdict.conditions.push(ConditionCheck {
        name: "H_r(x0, .) not constant in u0".into(),
        pass: flat.is_empty(),
        detail: format!("{} of {} sampled states give a constant H_r", flat.len(), grid.len()),
        witness: flat.first().map(|&i| Witness {
            x: grid[i].clone(),
            u: Vec::new(),
            value: scans[i].spread,
        }),
    });

    verdict.probabilistic = probabilistic;
    if flat.len() == grid.len() {
        verdict.outcome = Outcome::Inconclusive;
        verdict.reason = Some("input dependence of H_r is invisible on the sample grid".into());
    } else if pass2 && pass3 && flat.is_empty() {
        verdict.outcome = Outcome::HasDegree;
    } else {
        verdict.outcome = Outcome::NoDegree;
        verdict.reason = verdict
            .conditions
            .iter()
            .find(|c| !c.pass)
            .map(|c| format!("{}: {}", c.name, c.detail));
    }
    Ok(verdict)
}

/// Feedback `u = (-L_f^r h + v) / L_g L_f^(r-1) h` with `v = -Σ p_k y^(k)`
/// and the closed loop it produces.
#[derive(Clone, Debug)]
pub struct FeedbackLaw {
    pub r: usize,
    /// `h, L_f h, ..., L_f^(r-1) h`.
    pub chain: Vec<Expr>,
    /// The control as an expression over the states.
    pub u: Expr,
    /// Autonomous closed loop (`m = 0`).
    pub closed: SystemModel,
}

/// [`FeedbackLaw`] of an affine SISO system; `p` holds the ascending
/// coefficients `p_0..p_{r-1}` of a monic polynomial of degree `r`, or is
/// empty for the zero-output feedback `v = 0`.
pub fn feedback_law(model: &SystemModel, p: &[f64]) -> Result<FeedbackLaw, RelDegError> {
    if model.m != 1 || model.l != 1 {
        return Err(RelDegError::NotSiso { m: model.m, l: model.l });
    }
    let dec = match model.affine_decompose() {
        Affinity::Affine(d) => d,
        Affinity::NotAffine { component, input } => {
            return Err(RelDegError::NotAffine { component, input })
        }
    };
    let g = &dec.g[0];
    let mut lf = vec![simplify(&model.h[0])];
    let mut probabilistic = false;
    let a = loop {
        let last = lf.last().expect("nonempty");
        let a = lie(last, g);
        if !zero_verdict(&a, 11, &mut probabilistic) {
            break a;
        }
        if lf.len() > model.n {
            return Err(RelDegError::Options("no relative degree within n".into()));
        }
        let next = lie(last, &dec.f0);
        lf.push(next);
    };
    let r = lf.len();
    if !p.is_empty() && p.len() != r {
        return Err(RelDegError::Options(format!(
            "need {r} polynomial coefficients, got {}",
            p.len()
        )));
    }
    let lfr = lie(&lf[r - 1], &dec.f0);
    let v = Expr::sum(
        p.iter()
            .zip(&lf)
            .map(|(c, e)| Expr::Const(-c) * e.clone()),
    );
    let u = simplify(&((v - lfr) / a));
    let f = model
        .f
        .iter()
        .map(|fi| simplify(&fi.substitute(&Var::input(1), &u)))
        .collect();
    let mut closed = SystemModel::new(&format!("{}_closed_loop", model.name), model.n, 0, f, model.h.clone());
    closed.linear = None;
    Ok(FeedbackLaw { r, chain: lf, u, closed })
}

/// Closed loop of an affine SISO system under the [`feedback_law`] with a
/// full set of coefficients. Returns the autonomous model and `r`.
pub fn linearizing_feedback(
    model: &SystemModel,
    p: &[f64],
) -> Result<(SystemModel, usize), RelDegError> {
    let law = feedback_law(model, p)?;
    if p.len() != law.r {
        return Err(RelDegError::Options(format!(
            "need {} polynomial coefficients, got {}",
            law.r,
            p.len()
        )));
    }
    Ok((law.closed, law.r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::system::builtin;

    fn general(key: &str) -> RelDegVerdict {
        general_relative_degree(&builtin(key).unwrap(), &RelDegOptions::default()).unwrap()
    }

    #[test]
    fn scalar_examples() {
        assert_eq!(general("ysq").siso_degree(), Some(1));
        assert_eq!(general("eq25").siso_degree(), Some(1));
        assert_eq!(general("integrator").siso_degree(), Some(1));
        let atan = general("yatan");
        assert_eq!(atan.outcome, Outcome::NoDegree);
        let failed: Vec<_> = atan.conditions.iter().filter(|c| !c.pass).collect();
        assert!(failed.iter().all(|c| c.name.starts_with("condition 2")));
        assert!(failed[0].witness.as_ref().unwrap().value < std::f64::consts::FRAC_PI_2 + 1e-12);
    }

    #[test]
    fn example4_has_no_degree() {
        let v = general("example4");
        assert_eq!(v.outcome, Outcome::NoDegree);
        assert_eq!(v.r, Some(Degree::Mimo(vec![1, 1])));
    }

    #[test]
    fn normal_form_paths_agree() {
        let model = builtin("normal_form_r").unwrap();
        let opts = RelDegOptions::default();
        let a = affine_relative_degree(&model, &opts).unwrap();
        let g = general_relative_degree(&model, &opts).unwrap();
        assert_eq!(a.siso_degree(), Some(3));
        assert_eq!(g.siso_degree(), Some(3));
    }

    #[test]
    fn double_integrator() {
        let model = SystemModel::new("di", 2, 1, vec![parse("x2").unwrap(), parse("u1").unwrap()], vec![parse("x1").unwrap()]);
        let v = affine_relative_degree(&model, &RelDegOptions::default()).unwrap();
        assert_eq!(v.siso_degree(), Some(2));
    }

    #[test]
    fn vanishing_gain_has_no_degree() {
        let model = SystemModel::new("vanish", 1, 1, vec![parse("x1*u1").unwrap()], vec![parse("x1").unwrap()]);
        let v = affine_relative_degree(&model, &RelDegOptions::default()).unwrap();
        assert_eq!(v.outcome, Outcome::NoDegree);
        assert!(matches!(
            affine_relative_degree(&builtin("eq25").unwrap(), &RelDegOptions::default()),
            Err(RelDegError::NotAffine { .. })
        ));
    }

    #[test]
    fn origin_drift_breaks_degree() {
        let model = SystemModel::new("drift", 1, 1, vec![parse("1 + u1").unwrap()], vec![parse("x1").unwrap()]);
        let v = affine_relative_degree(&model, &RelDegOptions::default()).unwrap();
        assert_eq!(v.outcome, Outcome::NoDegree);
    }

    #[test]
    fn feedback_closes_the_chain() {
        let model = builtin("normal_form_r").unwrap();
        let (closed, r) = linearizing_feedback(&model, &[1.0, 3.0, 3.0]).unwrap();
        assert_eq!(r, 3);
        assert_eq!(closed.m, 0);
        assert!(closed.validate().clean);
        let x = [0.3, -0.2, 0.5, 0.7];
        let b = crate::expr::Bindings::new().with_state(&x);
        let xi3 = closed.f[2].eval(&b).unwrap();
        assert!((xi3 - (-0.3 - 3.0 * -0.2 - 3.0 * 0.5)).abs() < 1e-12);
    }
}
