//! Ensemble verification and falsification of the stability and
//! detectability inequalities, envelope fitting, and the Lyapunov
//! dissipation test.

mod ensemble;
mod falsify;
mod fit;
mod lyapunov;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::gains::{ClassKFn, ClassKLFn};
use crate::jets::{jet_along_trajectory, JetError, JetTable};
use crate::simulation::{ProbeError, SimError, Trajectory, TrajectoryStatus};
use crate::system::SystemModel;

pub use ensemble::{simulate_ensemble, EnsembleDescriptor, EnsembleSpec, InputFamily, Member};
pub use falsify::{falsify, FalsifyCandidate, FalsifyOptions, FalsifyReport, STRONG_EVIDENCE};
pub use fit::{fit_envelope, fit_kl, EnvelopeFit, FitTemplate, C_MAX};
pub use lyapunov::{lyapunov_check, LyapunovGrid, LyapunovReport};

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("{0}")]
    Spec(String),
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

/// Which inequality is checked.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropertyKind {
    /// `|(u; x)| <= β(|x0|, t) + γ(||y^N||)`.
    OutputInput { n: usize },
    /// `|x| <= β(|x0|, t) + γ(||y^k||)` plus `γ_u(||u||)` unless uniform.
    Detectability { orders: Vec<usize>, uniform: bool },
    /// `|x| <= β(|x0|, t) + γ(||u||)`.
    Iss,
    /// `|y| <= β(|x0|, t) + γ(||u||)`.
    Ios,
}

impl PropertyKind {
    pub fn label(&self) -> String {
        match self {
            PropertyKind::OutputInput { n } => format!("output_input(N={n})"),
            PropertyKind::Detectability { orders, uniform } => format!(
                "detectability(orders={orders:?}, {})",
                if *uniform { "uniform" } else { "non-uniform" }
            ),
            PropertyKind::Iss => "iss".into(),
            PropertyKind::Ios => "ios".into(),
        }
    }

    /// Jet orders per output, if the property needs output jets.
    fn jet_orders(&self, l: usize) -> Option<Vec<usize>> {
        match self {
            PropertyKind::OutputInput { n } => Some(vec![*n; l]),
            PropertyKind::Detectability { orders, .. } => Some(orders.clone()),
            _ => None,
        }
    }
}

/// A node passes when `lhs <= rhs + abs + rel * rhs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Slack {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Slack {
    fn default() -> Self {
        Slack { abs: 1e-6, rel: 1e-3 }
    }
}

#[derive(Clone, Debug)]
pub struct BoundSpec {
    pub kind: PropertyKind,
    pub beta: ClassKLFn,
    pub gamma: ClassKFn,
    /// Input gain of the non-uniform detectability variant.
    pub gamma_u: Option<ClassKFn>,
    pub slack: Slack,
    /// Extra window starts spread over each trajectory. The system is time
    /// invariant, so the tail from `t0` is itself a trajectory from `x(t0)`.
    pub restarts: usize,
}

impl BoundSpec {
    pub fn new(kind: PropertyKind, beta: ClassKLFn, gamma: ClassKFn) -> Self {
        BoundSpec {
            kind,
            beta,
            gamma,
            gamma_u: None,
            slack: Slack::default(),
            restarts: 0,
        }
    }

    pub fn with_input_gain(mut self, gamma_u: ClassKFn) -> Self {
        self.gamma_u = Some(gamma_u);
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn with_slack(mut self, slack: Slack) -> Self {
        self.slack = slack;
        self
    }

    /// Input-derivative order the trajectories must carry.
    pub fn input_order(&self, table: Option<&JetTable>) -> usize {
        let jets = table.and_then(JetTable::max_input_order).unwrap_or(0);
        let extension = match &self.kind {
            PropertyKind::Detectability { orders, .. } => {
                orders.iter().max().copied().unwrap_or(0).saturating_sub(1)
            }
            _ => 0,
        };
        jets.max(extension)
    }
}

/// One checked grid node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Node {
    /// Start of the restart window.
    pub t0: f64,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Violated,
    Vacuous,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WorstNode {
    pub traj: usize,
    pub t0: f64,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateReport {
    pub property: String,
    pub verdict: Verdict,
    /// Minimum of `rhs - lhs` over every node.
    pub margin: f64,
    pub ensemble: EnsembleDescriptor,
    pub worst: Option<WorstNode>,
    /// Trajectories that left the escape radius; checked up to that time.
    pub escaped: Vec<usize>,
    pub violations: usize,
}

fn running_sup(v: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut best = 0.0f64;
    v.into_iter()
        .map(|x| {
            best = best.max(x);
            best
        })
        .collect()
}

/// Euclidean norm of `(u_j^(d))` for `d <= max_order` at each node.
fn input_norms(traj: &Trajectory, max_order: usize) -> Vec<f64> {
    (0..traj.len())
        .map(|k| {
            let mut s = 0.0;
            for j in 1..=traj.m {
                for d in 0..=max_order.min(traj.input_order) {
                    s += traj.input(k, j, d).powi(2);
                }
            }
            s.sqrt()
        })
        .collect()
}

/// `lhs` and `rhs` of the spec's inequality at every node of `traj`, once
/// per restart window.
pub fn bound_series(
    model: &SystemModel,
    spec: &BoundSpec,
    table: Option<&JetTable>,
    traj: &Trajectory,
) -> Result<Vec<Node>, CertifyError> {
    let len = traj.len();
    if len == 0 {
        return Ok(Vec::new());
    }
    let jet_norm = match table {
        Some(t) => Some(jet_along_trajectory(t, traj)?.norms()),
        None => None,
    };
    let extension = match &spec.kind {
        PropertyKind::Detectability { orders, .. } => {
            orders.iter().max().copied().unwrap_or(0).saturating_sub(1)
        }
        _ => 0,
    };
    let u_ext = input_norms(traj, extension);
    let output_norm = match &spec.kind {
        PropertyKind::Ios => {
            let outputs = JetTable::uniform(model, 0)?;
            Some(jet_along_trajectory(&outputs, traj)?.norms())
        }
        _ => None,
    };
    let gamma_u = spec.gamma_u.as_ref();
    let mut starts: Vec<usize> = (0..=spec.restarts).map(|j| j * len / (spec.restarts + 1)).collect();
    starts.dedup();
    let mut out = Vec::with_capacity(len * starts.len());
    for k0 in starts {
        let t0 = traj.times[k0];
        let s0 = traj.state_norm(k0);
        let jet_sup = jet_norm.as_ref().map(|j| running_sup(j[k0..].iter().copied()));
        let u_sup = running_sup(u_ext[k0..].iter().copied());
        for k in k0..len {
            let w = k - k0;
            let t = traj.times[k];
            let x = traj.state_norm(k);
            let beta = spec.beta.eval(s0, t - t0);
            let y = jet_sup.as_ref().map_or(0.0, |j| j[w]);
            let (lhs, rhs) = match &spec.kind {
                PropertyKind::OutputInput { .. } => {
                    let u = traj.input_norm(k);
                    ((u * u + x * x).sqrt(), beta + spec.gamma.eval(y))
                }
                PropertyKind::Detectability { uniform, .. } => {
                    let mut rhs = beta + spec.gamma.eval(y);
                    if !uniform {
                        rhs += gamma_u.map_or(0.0, |g| g.eval(u_sup[w]));
                    }
                    (x, rhs)
                }
                PropertyKind::Iss => (x, beta + spec.gamma.eval(u_sup[w])),
                PropertyKind::Ios => {
                    let yo = output_norm.as_ref().map_or(0.0, |o| o[k]);
                    (yo, beta + spec.gamma.eval(u_sup[w]))
                }
            };
            out.push(Node { t0, t, lhs, rhs });
        }
    }
    Ok(out)
}

/// Checks `spec` on every node of every ensemble member.
pub fn certify(
    model: &SystemModel,
    spec: &BoundSpec,
    ensemble: &EnsembleSpec,
) -> Result<CertificateReport, CertifyError> {
    let table = match spec.kind.jet_orders(model.l) {
        Some(orders) => Some(JetTable::compute(model, &orders)?),
        None => None,
    };
    if let PropertyKind::Detectability { uniform: false, .. } = spec.kind {
        if spec.gamma_u.is_none() {
            return Err(CertifyError::Spec(
                "non-uniform detectability needs an input gain".into(),
            ));
        }
    }
    let input_order = spec.input_order(table.as_ref());
    let members = simulate_ensemble(model, ensemble, input_order)?;
    certify_members(model, spec, table.as_ref(), &members, ensemble.descriptor())
}

/// [`certify`] on already simulated members.
pub fn certify_members(
    model: &SystemModel,
    spec: &BoundSpec,
    table: Option<&JetTable>,
    members: &[Member],
    descriptor: EnsembleDescriptor,
) -> Result<CertificateReport, CertifyError> {
    let per: Vec<Result<(usize, Vec<Node>), CertifyError>> = members
        .par_iter()
        .map(|m| {
            Ok((m.id, bound_series(model, spec, table, &m.traj)?))
        })
        .collect();
    let mut margin = f64::INFINITY;
    let mut worst = None;
    let mut violations = 0;
    let mut any_positive = false;
    let mut escaped = Vec::new();
    for (m, res) in members.iter().zip(per) {
        let (id, nodes) = res?;
        if matches!(m.traj.status, TrajectoryStatus::Escaped { .. } | TrajectoryStatus::StiffRejected { .. }) {
            escaped.push(id);
        }
        for n in nodes {
            any_positive |= n.lhs > 0.0;
            let gap = n.rhs - n.lhs;
            if n.lhs > n.rhs + spec.slack.abs + spec.slack.rel * n.rhs.abs() || gap.is_nan() {
                violations += 1;
            }
            if gap < margin || gap.is_nan() {
                margin = gap;
                worst = Some(WorstNode {
                    traj: id,
                    t0: n.t0,
                    t: n.t,
                    lhs: n.lhs,
                    rhs: n.rhs,
                });
            }
        }
    }
    let verdict = if violations > 0 {
        Verdict::Violated
    } else if !any_positive {
        Verdict::Vacuous
    } else {
        Verdict::Holds
    };
    Ok(CertificateReport {
        property: spec.kind.label(),
        verdict,
        margin,
        ensemble: descriptor,
        worst,
        escaped,
        violations,
    })
}
