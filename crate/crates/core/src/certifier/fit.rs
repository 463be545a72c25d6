//! Least-max fit of a fixed gain template to an ensemble.

use serde::Serialize;

use super::{running_sup, CertifyError, Member};
use crate::gains::{ClassKFn, ClassKLFn};
use crate::jets::{jet_along_trajectory, JetTable};
use crate::system::SystemModel;

/// Upper bound on the template coefficients `a`, `b`, `c`.
pub const C_MAX: f64 = 1e3;
/// Range of the decay rate `λ`.
pub const LAMBDA_RANGE: (f64, f64) = (1e-3, 1e2);
/// Nodes kept per trajectory.
pub const NODES_PER_TRAJECTORY: usize = 2000;
/// The decay rate is maximised with `a` held at this multiple of its
/// smallest feasible value at the slowest rate.
pub const A_SLACK: f64 = 2.0;
const EXPONENTS: [u32; 3] = [1, 2, 3];
const BISECTIONS: usize = 48;

/// `β(s, t) = a s^p e^(-λt)`, `γ(s) = b s + c s^q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FitTemplate {
    pub a: f64,
    pub p: u32,
    pub lambda: f64,
    pub b: f64,
    pub c: f64,
    pub q: u32,
}

impl FitTemplate {
    fn rhs(&self, s0: f64, t: f64, y: f64) -> f64 {
        self.a * s0.powi(self.p as i32) * (-self.lambda * t).exp()
            + self.b * y
            + self.c * y.powi(self.q as i32)
    }

    pub fn beta(&self) -> Result<ClassKLFn, CertifyError> {
        ClassKLFn::power_exponential(self.a, self.p, self.lambda).map_err(|e| CertifyError::Spec(e.to_string()))
    }

    /// `None` when both output coefficients vanish.
    pub fn gamma(&self) -> Result<Option<ClassKFn>, CertifyError> {
        let mut terms = Vec::new();
        if self.b > 0.0 {
            terms.push(ClassKFn::linear(self.b).map_err(|e| CertifyError::Spec(e.to_string()))?);
        }
        if self.c > 0.0 {
            terms.push(ClassKFn::power(self.c, self.q).map_err(|e| CertifyError::Spec(e.to_string()))?);
        }
        if terms.is_empty() {
            return Ok(None);
        }
        ClassKFn::sum(&terms).map(Some).map_err(|e| CertifyError::Spec(e.to_string()))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EnvelopeFit {
    pub template: FitTemplate,
    /// `max (lhs - rhs) / (1 + lhs)` over the nodes; `<= 0` certifies.
    pub residual: f64,
    /// Every left-hand side is zero, so any template fits.
    pub vacuous: bool,
    pub nodes: usize,
    pub trajectories: usize,
}

impl EnvelopeFit {
    pub fn certifies(&self) -> bool {
        self.residual <= 0.0 && !self.vacuous
    }
}

#[derive(Clone, Copy)]
struct Sample {
    s0: f64,
    t: f64,
    y: f64,
    lhs: f64,
}

fn residual(nodes: &[Sample], tpl: &FitTemplate) -> f64 {
    nodes
        .iter()
        .map(|n| (n.lhs - tpl.rhs(n.s0, n.t, n.y)) / (1.0 + n.lhs))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Stride-sampled nodes plus the node with the largest left-hand side.
fn thin(series: Vec<Sample>) -> Vec<Sample> {
    let len = series.len();
    if len <= NODES_PER_TRAJECTORY {
        return series;
    }
    let stride = len.div_ceil(NODES_PER_TRAJECTORY);
    let peak = (0..len)
        .max_by(|&i, &j| series[i].lhs.total_cmp(&series[j].lhs))
        .unwrap_or(0);
    series
        .iter()
        .enumerate()
        .filter(|(k, _)| k % stride == 0 || *k == peak || *k == len - 1)
        .map(|(_, s)| *s)
        .collect()
}

/// Largest feasible value of a monotone parameter on `[lo, hi]` in log scale;
/// `feasible(lo)` must hold.
fn bisect_up(lo: f64, hi: f64, feasible: impl Fn(f64) -> bool) -> f64 {
    if feasible(hi) {
        return hi;
    }
    let (mut good, mut bad) = (lo.ln(), hi.ln());
    for _ in 0..BISECTIONS {
        let mid = 0.5 * (good + bad);
        if feasible(mid.exp()) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    good.exp()
}

/// Smallest feasible value on `[lo, hi]`, or 0 when 0 is feasible;
/// `feasible(hi)` must hold.
fn bisect_down(lo: f64, hi: f64, feasible: impl Fn(f64) -> bool) -> f64 {
    if feasible(0.0) {
        return 0.0;
    }
    if feasible(lo) {
        return lo;
    }
    let (mut bad, mut good) = (lo.ln(), hi.ln());
    for _ in 0..BISECTIONS {
        let mid = 0.5 * (good + bad);
        if feasible(mid.exp()) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    good.exp()
}

fn fit_samples(nodes: &[Sample], with_gamma: bool, trajectories: usize) -> EnvelopeFit {
    let vacuous = nodes.iter().all(|n| n.lhs == 0.0);
    let cap = if with_gamma { C_MAX } else { 0.0 };
    let mut best: Option<(FitTemplate, f64)> = None;
    let qs: &[u32] = if with_gamma { &EXPONENTS } else { &[1] };
    for &p in &EXPONENTS {
        for &q in qs {
            let widest = FitTemplate { a: C_MAX, p, lambda: LAMBDA_RANGE.0, b: cap, c: cap, q };
            let res = residual(nodes, &widest);
            let tpl = if res <= 0.0 {
                let ok = |t: &FitTemplate| residual(nodes, t) <= 0.0;
                let mut t = widest;
                let a_min = bisect_down(1e-9, C_MAX, |a| a > 0.0 && ok(&FitTemplate { a, ..t }));
                t.a = (A_SLACK * a_min).clamp(1e-9, C_MAX);
                t.lambda = bisect_up(LAMBDA_RANGE.0, LAMBDA_RANGE.1, |l| ok(&FitTemplate { lambda: l, ..t }));
                t.a = bisect_down(1e-9, t.a, |a| a > 0.0 && ok(&FitTemplate { a, ..t }));
                if with_gamma {
                    t.b = bisect_down(1e-9, cap, |b| ok(&FitTemplate { b, ..t }));
                    t.c = bisect_down(1e-9, cap, |c| ok(&FitTemplate { c, ..t }));
                }
                t
            } else {
                widest
            };
            let res = residual(nodes, &tpl);
            let better = match &best {
                None => true,
                Some((b, r)) => {
                    if (res <= 0.0) != (*r <= 0.0) {
                        res <= 0.0
                    } else if res <= 0.0 {
                        tpl.lambda > b.lambda || (tpl.lambda == b.lambda && tpl.a < b.a)
                    } else {
                        res < *r
                    }
                }
            };
            if better {
                best = Some((tpl, res));
            }
        }
    }
    let (template, residual) = best.expect("template grid is nonempty");
    EnvelopeFit {
        template,
        residual: if nodes.is_empty() { f64::NEG_INFINITY } else { residual },
        vacuous,
        nodes: nodes.len(),
        trajectories,
    }
}

/// Fits `|(u; x)| <= β(|x0|, t) + γ(||y^N||_[0,t])` over the members.
pub fn fit_envelope(model: &SystemModel, n_order: usize, members: &[Member]) -> Result<EnvelopeFit, CertifyError> {
    let table = JetTable::uniform(model, n_order)?;
    let mut nodes = Vec::new();
    for m in members {
        let traj = &m.traj;
        if traj.is_empty() {
            continue;
        }
        let s0 = traj.state_norm(0);
        let y = running_sup(jet_along_trajectory(&table, traj)?.norms());
        let series = (0..traj.len())
            .map(|k| {
                let u = traj.input_norm(k);
                let x = traj.state_norm(k);
                Sample { s0, t: traj.times[k], y: y[k], lhs: (u * u + x * x).sqrt() }
            })
            .collect();
        nodes.extend(thin(series));
    }
    Ok(fit_samples(&nodes, true, members.len()))
}

/// Fits `|x| <= β(|x0|, t)` alone, for autonomous or closed-loop ensembles.
pub fn fit_kl(members: &[Member]) -> EnvelopeFit {
    let mut nodes = Vec::new();
    for m in members {
        let traj = &m.traj;
        if traj.is_empty() {
            continue;
        }
        let s0 = traj.state_norm(0);
        let series = (0..traj.len())
            .map(|k| Sample { s0, t: traj.times[k], y: 0.0, lhs: traj.state_norm(k) })
            .collect();
        nodes.extend(thin(series));
    }
    fit_samples(&nodes, false, members.len())
}
