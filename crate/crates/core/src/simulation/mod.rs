//! Trajectory generation: fixed-step RK4, input families, the switching
//! schedule that separates output-input stability from uniform detectability,
//! probe inputs that flatten high output derivatives, and the constructed
//! functions of the cascade counterexample.

mod input;
pub mod phi;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{differentiate, CompiledExpr, EvalError, Var, VarLayout};
use crate::jets::{JetError, JetTable};
use crate::system::SystemModel;

pub use input::{InputSignal, Segment, SignalDescriptor, SineTerm};
pub use phi::{shared_phi, CascadeLyapunov, CascadeOutput, Phi};

/// States with a component beyond this magnitude count as escaped.
pub const ESCAPE_RADIUS: f64 = 1e8;
/// Pivots `|dH_r/du_0|` below this make a probe degenerate.
pub const PROBE_PIVOT_MIN: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{0}")]
    Setup(String),
    #[error("input is C^{supported} but derivatives of order {requested} were requested")]
    Smoothness { requested: usize, supported: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrajectoryStatus {
    Completed,
    Escaped { t: f64 },
    StiffRejected { t: f64, reason: String },
}

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Per node, `u_j^(d)` channel-major for `d = 0..=input_order`.
    pub inputs: Vec<Vec<f64>>,
    pub m: usize,
    pub input_order: usize,
    pub status: TrajectoryStatus,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn input_labels(&self) -> Vec<String> {
        (1..=self.m)
            .flat_map(|j| {
                (0..=self.input_order).map(move |d| {
                    if d == 0 {
                        format!("u{j}")
                    } else {
                        format!("u{j}_d{d}")
                    }
                })
            })
            .collect()
    }

    /// `u_j^(d)` at node `k`, with 1-based channel `j`.
    pub fn input(&self, k: usize, channel: usize, order: usize) -> f64 {
        self.inputs[k][(channel - 1) * (self.input_order + 1) + order]
    }

    pub fn state_norm(&self, k: usize) -> f64 {
        norm(&self.states[k])
    }

    /// Euclidean norm of `u(t_k)` (order 0 only).
    pub fn input_norm(&self, k: usize) -> f64 {
        (1..=self.m)
            .map(|j| self.input(k, j, 0).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map_or(&[], Vec::as_slice)
    }
}

fn escaped(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > ESCAPE_RADIUS)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, Default)]
pub struct IntegrateOptions {
    /// Input derivatives sampled at each node.
    pub input_order: usize,
    /// Extra times at which RK4 steps are split, besides input switches.
    pub time_breaks: Vec<f64>,
}

struct Rhs {
    compiled: Vec<CompiledExpr>,
    n: usize,
    m: usize,
    slots: Vec<f64>,
    stack: Vec<f64>,
}

impl Rhs {
    fn new(model: &SystemModel) -> Result<Self, SimError> {
        let layout = VarLayout::standard(model.n, model.m, 0);
        let compiled = model
            .f
            .iter()
            .map(|e| CompiledExpr::compile(e, &layout))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Rhs {
            compiled,
            n: model.n,
            m: model.m,
            slots: vec![0.0; layout.len()],
            stack: Vec::new(),
        })
    }

    fn eval(
        &mut self,
        x: &[f64],
        u: &InputSignal,
        t: f64,
        anchor: f64,
        out: &mut [f64],
    ) -> Result<(), EvalError> {
        self.slots[..self.n].copy_from_slice(x);
        for j in 0..self.m {
            self.slots[self.n + j] = u.derivative_on_piece(j, 0, t, anchor);
        }
        for (o, c) in out.iter_mut().zip(&self.compiled) {
            *o = c.eval_with(&self.slots, &mut self.stack)?;
        }
        Ok(())
    }

    /// One RK4 step; `Ok(false)` when a stage state leaves the escape radius.
    fn rk4(&mut self, x: &mut [f64], u: &InputSignal, t0: f64, t1: f64) -> Result<bool, EvalError> {
        let h = t1 - t0;
        let anchor = t0 + 0.5 * h;
        let n = self.n;
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut tmp = vec![0.0; n];
        self.eval(x, u, t0, anchor, &mut k1)?;
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        if escaped(&tmp) {
            return Ok(false);
        }
        self.eval(&tmp, u, t0 + 0.5 * h, anchor, &mut k2)?;
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        if escaped(&tmp) {
            return Ok(false);
        }
        self.eval(&tmp, u, t0 + 0.5 * h, anchor, &mut k3)?;
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        if escaped(&tmp) {
            return Ok(false);
        }
        self.eval(&tmp, u, t1, anchor, &mut k4)?;
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(!escaped(x))
    }
}

/// Classical RK4 on a uniform grid with input derivatives of order 0.
pub fn integrate(
    model: &SystemModel,
    x0: &[f64],
    u: &InputSignal,
    horizon: f64,
    dt: f64,
) -> Result<Trajectory, SimError> {
    integrate_with(model, x0, u, horizon, dt, &IntegrateOptions::default())
}

pub fn integrate_with(
    model: &SystemModel,
    x0: &[f64],
    u: &InputSignal,
    horizon: f64,
    dt: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory, SimError> {
    if !(dt > 0.0 && dt.is_finite()) || !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(SimError::Setup(format!("need dt > 0 and horizon >= 0, got dt = {dt}, horizon = {horizon}")));
    }
    if x0.len() != model.n {
        return Err(SimError::Setup(format!("x0 has {} entries, model has {} states", x0.len(), model.n)));
    }
    if u.channels() != model.m && model.m > 0 {
        return Err(SimError::Setup(format!("input has {} channels, model has {}", u.channels(), model.m)));
    }
    if let Some(s) = u.smoothness() {
        if opts.input_order > s {
            return Err(SimError::Smoothness {
                requested: opts.input_order,
                supported: s,
            });
        }
    }
    let mut rhs = Rhs::new(model)?;
    let ratio = horizon / dt;
    let steps = if (ratio - ratio.round()).abs() < 1e-9 * ratio.max(1.0) {
        ratio.round() as usize
    } else {
        ratio.ceil() as usize
    };
    let mut breaks: Vec<f64> = u.breakpoints();
    breaks.extend(&opts.time_breaks);
    breaks.retain(|b| b.is_finite());
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let m = model.m;
    let sample = |t: f64| {
        let mut row = Vec::with_capacity(m * (opts.input_order + 1));
        if m > 0 {
            u.sample_into(t, opts.input_order, &mut row);
        }
        row
    };
    let mut traj = Trajectory {
        dt,
        times: vec![0.0],
        states: vec![x0.to_vec()],
        inputs: vec![sample(0.0)],
        m,
        input_order: opts.input_order,
        status: TrajectoryStatus::Completed,
    };
    let mut x = x0.to_vec();
    for k in 0..steps {
        let t0 = k as f64 * dt;
        let t1 = (k + 1) as f64 * dt;
        let mut a = t0;
        let first = breaks.partition_point(|b| *b <= t0);
        let inner = breaks[first..].iter().take_while(|b| **b < t1).copied();
        let mut outcome = Ok(true);
        for b in inner.chain(std::iter::once(t1)) {
            if b > a {
                outcome = rhs.rk4(&mut x, u, a, b);
                if !matches!(outcome, Ok(true)) {
                    break;
                }
                a = b;
            }
        }
        match outcome {
            Ok(true) => {}
            Ok(false) => {
                traj.status = TrajectoryStatus::Escaped { t: a };
                break;
            }
            Err(e) => {
                traj.status = TrajectoryStatus::StiffRejected {
                    t: a,
                    reason: e.to_string(),
                };
                break;
            }
        }
        traj.times.push(t1);
        traj.states.push(x.clone());
        traj.inputs.push(sample(t1));
    }
    Ok(traj)
}

/// Default horizon of [`alternating_switching_input`].
pub const SWITCHING_HORIZON: f64 = 12.0;

/// The `±1` schedule: `+1` on `[0, 1)`, `-1` on `[1, 2)`, then on each
/// `[k, k + 1)` with `k >= 2` alternating `+1, -1` with dwell `2^-(k-1)`.
pub fn alternating_switching_input() -> InputSignal {
    alternating_switching_input_until(SWITCHING_HORIZON)
}

/// The same schedule truncated after `horizon` (at most 20); the last value
/// holds afterwards.
pub fn alternating_switching_input_until(horizon: f64) -> InputSignal {
    let horizon = horizon.clamp(2.0, 20.0);
    let mut switches = vec![0.0, 1.0];
    let mut values = vec![vec![1.0], vec![-1.0]];
    let mut k = 2u32;
    while (k as f64) < horizon {
        let dwell = 0.5f64.powi(k as i32 - 1);
        let pieces = 1usize << (k - 1);
        for p in 0..pieces {
            switches.push(k as f64 + p as f64 * dwell);
            values.push(vec![if p % 2 == 0 { 1.0 } else { -1.0 }]);
        }
        k += 1;
    }
    InputSignal::PiecewiseConstant { switches, values }
}

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("degenerate probe: |dH_r/du| = {pivot:e} < {PROBE_PIVOT_MIN:e}")]
    Degenerate { pivot: f64 },
    #[error("probe needs jets up to order {needed}, table has {available}")]
    Order { needed: usize, available: usize },
    #[error("input u{channel} does not exist")]
    Channel { channel: usize },
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Which output and input channel a probe works on (0-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ProbeTarget {
    pub output: usize,
    pub channel: usize,
    pub r: usize,
}

/// Polynomial input of degree `N - r` on `target.channel` (other channels
/// zero) with `u(0) = u0` and `u^(i)(0) = -G_i / (dH_r/du_0)` so that
/// `y^(r+1)(0) = ... = y^(N)(0) = 0` for the target output.
pub fn probe_input_for(
    table: &JetTable,
    target: ProbeTarget,
    n_order: usize,
    x0: &[f64],
    u0: f64,
) -> Result<InputSignal, ProbeError> {
    let ProbeTarget { output, channel, r } = target;
    if channel >= table.m {
        return Err(ProbeError::Channel { channel: channel + 1 });
    }
    let available = table.entries[output].len() - 1;
    if n_order > available || r > n_order {
        return Err(ProbeError::Order {
            needed: n_order.max(r),
            available,
        });
    }
    let layout = VarLayout::standard(table.n, table.m, n_order);
    let mut slots = vec![0.0; layout.len()];
    slots[..table.n].copy_from_slice(x0);
    let slot = |d: usize| {
        layout
            .slot(&Var::Input { channel: channel + 1, order: d })
            .expect("standard layout has every input derivative")
    };
    slots[slot(0)] = u0;
    let pivot_expr = differentiate(table.h(output, r), &Var::input(channel + 1));
    let pivot = CompiledExpr::compile(&pivot_expr, &layout)?.eval(&slots)?;
    if pivot.abs() < PROBE_PIVOT_MIN || !pivot.is_finite() {
        return Err(ProbeError::Degenerate { pivot });
    }
    let mut derivs = vec![u0];
    for i in 1..=(n_order - r) {
        let g = CompiledExpr::compile(table.h(output, r + i), &layout)?.eval(&slots)?;
        let d = -g / pivot;
        slots[slot(i)] = d;
        derivs.push(d);
    }
    let mut coeffs = vec![vec![0.0]; table.m];
    let mut fact = 1.0;
    coeffs[channel] = derivs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            if i > 0 {
                fact *= i as f64;
            }
            d / fact
        })
        .collect();
    Ok(InputSignal::Polynomial { coeffs })
}

/// SISO probe on output 1 and channel 1.
pub fn probe_input(
    model: &SystemModel,
    r: usize,
    n_order: usize,
    x0: &[f64],
    u0: f64,
) -> Result<InputSignal, ProbeError> {
    let table = JetTable::uniform(model, n_order)?;
    probe_input_for(
        &table,
        ProbeTarget {
            output: 0,
            channel: 0,
            r,
        },
        n_order,
        x0,
        u0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::system::builtin;

    fn decay() -> SystemModel {
        SystemModel::new("decay", 1, 0, vec![parse("-x1").unwrap()], vec![parse("x1").unwrap()])
    }

    #[test]
    fn exponential_decay() {
        let tr = integrate(&decay(), &[1.0], &InputSignal::zero(0), 1.0, 1e-3).unwrap();
        assert_eq!(tr.len(), 1001);
        assert!((tr.final_state()[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn eq25_constant_input() {
        let tr = integrate(&builtin("eq25").unwrap(), &[0.0, 0.0], &InputSignal::constant(&[1.0]), 1.0, 1e-3).unwrap();
        assert!((tr.final_state()[1] - (1.0 - (-1.0f64).exp())).abs() < 1e-6);
    }

    #[test]
    fn finite_escape() {
        let model = SystemModel::new("blowup", 1, 0, vec![parse("x1^2").unwrap()], vec![parse("x1").unwrap()]);
        let tr = integrate(&model, &[1.0], &InputSignal::zero(0), 2.0, 1e-3).unwrap();
        match tr.status {
            TrajectoryStatus::Escaped { t } => assert!(t <= 1.0, "{t}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn switching_schedule() {
        let u = alternating_switching_input();
        assert_eq!(u.value(0.5), vec![1.0]);
        assert_eq!(u.value(1.5), vec![-1.0]);
        assert_eq!(u.value(2.25), vec![1.0]);
        assert_eq!(u.value(2.75), vec![-1.0]);
        assert_eq!(u.value(3.1), vec![1.0]);
        assert_eq!(u.value(3.3), vec![-1.0]);
    }

    #[test]
    fn trivial_probe_is_constant() {
        let u = probe_input(&builtin("integrator").unwrap(), 1, 1, &[0.3], 2.0).unwrap();
        assert_eq!(u, InputSignal::Polynomial { coeffs: vec![vec![2.0]] });
        let u = probe_input(&builtin("eq25").unwrap(), 1, 2, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(u, InputSignal::Polynomial { coeffs: vec![vec![1.0, 0.0]] });
    }

    #[test]
    fn degenerate_probe() {
        // y' = u^2 at u = 0 has a zero pivot.
        let err = probe_input(&builtin("ysq").unwrap(), 1, 2, &[0.0], 0.0).unwrap_err();
        assert!(matches!(err, ProbeError::Degenerate { .. }));
    }
}
