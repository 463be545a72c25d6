//! Probe-based search for violations of the output-input bound.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;

use super::CertifyError;
use crate::expr::{differentiate, CompiledExpr, Var, VarLayout};
use crate::jets::{jet_along_trajectory, JetTable};
use crate::simulation::{integrate_with, norm, probe_input_for, IntegrateOptions, InputSignal, ProbeTarget};
use crate::system::SystemModel;

/// Scores above this count as strong evidence against the bound.
pub const STRONG_EVIDENCE: f64 = 100.0;
/// Keeps the score finite when the state and jets vanish.
pub const SCORE_EPSILON: f64 = 1e-3;
/// Probe magnitudes are drawn from `10^U(0, 4)`.
const PROBE_LOG_MAX: f64 = 4.0;
/// Initial-state components are drawn from `10^U(-6, -1)`.
const STATE_LOG_RANGE: (f64, f64) = (-6.0, -1.0);
/// Draws tried per valid probe before giving up.
const DRAW_ATTEMPTS: usize = 64;

#[derive(Clone, Debug, Serialize)]
pub struct ProbeDraw {
    pub target: ProbeTarget,
    pub x0: Vec<f64>,
    pub input: InputSignal,
    pub horizon: f64,
    pub u0: f64,
}

/// Jets, targets and the compiled `H_r` of each target.
pub(crate) struct ProbeContext {
    table: JetTable,
    n_order: usize,
    targets: Vec<ProbeTarget>,
    /// Per target: `H_r` and its state gradient.
    constraint: Vec<(CompiledExpr, Vec<CompiledExpr>)>,
    layout: VarLayout,
}

impl ProbeContext {
    pub(crate) fn new(model: &SystemModel, n_order: usize) -> Result<Self, CertifyError> {
        let table = JetTable::uniform(model, n_order)?;
        let layout = VarLayout::standard(model.n, model.m, n_order);
        let mut targets = Vec::new();
        let mut constraint = Vec::new();
        let compile = |e: &crate::expr::Expr| {
            CompiledExpr::compile(e, &layout).map_err(|e| CertifyError::Sim(e.into()))
        };
        for output in 0..model.l {
            for channel in 0..model.m {
                let u = Var::input(channel + 1);
                let Some(r) = (0..=n_order).find(|&k| table.h(output, k).vars().contains(&u)) else {
                    continue;
                };
                let h = table.h(output, r);
                let grad = (1..=model.n)
                    .map(|i| compile(&differentiate(h, &Var::State(i))))
                    .collect::<Result<Vec<_>, _>>()?;
                targets.push(ProbeTarget { output, channel, r });
                constraint.push((compile(h)?, grad));
            }
        }
        if targets.is_empty() {
            return Err(CertifyError::Spec(format!(
                "no output jet up to order {n_order} depends on an input"
            )));
        }
        Ok(ProbeContext {
            table,
            n_order,
            targets,
            constraint,
            layout,
        })
    }

    pub(crate) fn input_order(&self) -> usize {
        self.table.max_input_order().unwrap_or(0)
    }

    pub(crate) fn table(&self) -> &JetTable {
        &self.table
    }

    /// One draw; `None` when the probe is degenerate.
    pub(crate) fn draw(&self, rng: &mut ChaCha8Rng) -> Result<Option<ProbeDraw>, CertifyError> {
        let pick = rng.gen_range(0..self.targets.len());
        let target = self.targets[pick];
        let n = self.table.n;
        let mut x0: Vec<f64> = (0..n)
            .map(|_| {
                let mag = 10f64.powf(rng.gen_range(STATE_LOG_RANGE.0..STATE_LOG_RANGE.1));
                if rng.gen_bool(0.5) { mag } else { -mag }
            })
            .collect();
        let w = 10f64.powf(rng.gen_range(0.0..PROBE_LOG_MAX)) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        self.correct(&mut x0, target, pick, w)?;
        let input = match probe_input_for(&self.table, target, self.n_order, &x0, w) {
            Ok(u) => u,
            Err(crate::simulation::ProbeError::Degenerate { .. }) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let InputSignal::Polynomial { coeffs } = &input else {
            unreachable!("probes are polynomial")
        };
        let mut rate = 0.0f64;
        let mut fact = 1.0;
        for (i, c) in coeffs[target.channel].iter().enumerate().skip(1) {
            fact *= i as f64;
            rate = rate.max((c * fact).abs().powf(1.0 / i as f64));
        }
        let horizon = SCORE_EPSILON / (1.0 + rate);
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Ok(None);
        }
        Ok(Some(ProbeDraw {
            target,
            x0,
            input,
            horizon,
            u0: w,
        }))
    }

    pub(crate) fn draw_until_valid(&self, rng: &mut ChaCha8Rng) -> Result<ProbeDraw, CertifyError> {
        for _ in 0..DRAW_ATTEMPTS {
            if let Some(d) = self.draw(rng)? {
                return Ok(d);
            }
        }
        Err(CertifyError::Spec(format!("no valid probe in {DRAW_ATTEMPTS} draws")))
    }

    /// Newton steps on `x0` toward `H_r(x0, u0) = 0` for the target output.
    fn correct(&self, x: &mut [f64], target: ProbeTarget, pick: usize, w: f64) -> Result<(), CertifyError> {
        let (h, grad) = &self.constraint[pick];
        let n = x.len();
        let mut slots = vec![0.0; self.layout.len()];
        let u_slot = self
            .layout
            .slot(&Var::input(target.channel + 1))
            .expect("standard layout has every input");
        let eval = |c: &CompiledExpr, s: &[f64]| c.eval(s).map_err(|e| CertifyError::Sim(e.into()));
        for _ in 0..20 {
            slots[..n].copy_from_slice(x);
            slots[u_slot] = w;
            let v = eval(h, &slots)?;
            let g = grad.iter().map(|c| eval(c, &slots)).collect::<Result<Vec<_>, _>>()?;
            let g2: f64 = g.iter().map(|a| a * a).sum();
            if v.abs() < 1e-14 || g2 == 0.0 || !g2.is_finite() {
                break;
            }
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi -= v * gi / g2;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FalsifyOptions {
    pub order: usize,
    pub budget: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FalsifyCandidate {
    pub draw: usize,
    pub score: f64,
    pub target: ProbeTarget,
    pub x0: Vec<f64>,
    pub u0: f64,
    pub horizon: f64,
    pub jet_sup: f64,
    pub input: InputSignal,
}

#[derive(Clone, Debug, Serialize)]
pub struct FalsifyReport {
    pub order: usize,
    pub budget: usize,
    pub seed: u64,
    pub valid_draws: usize,
    pub best: Option<FalsifyCandidate>,
    pub strong_evidence: bool,
}

/// Random probe search: each draw is scored by
/// `|u(0)| / (ε + |x0| + ||y^N||_[0,T])` on its short horizon.
pub fn falsify(model: &SystemModel, opts: &FalsifyOptions) -> Result<FalsifyReport, CertifyError> {
    let ctx = ProbeContext::new(model, opts.order)?;
    let input_order = ctx.input_order();
    let scored: Vec<Option<FalsifyCandidate>> = (0..opts.budget)
        .into_par_iter()
        .map(|id| -> Result<Option<FalsifyCandidate>, CertifyError> {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(id as u64);
            let Some(d) = ctx.draw(&mut rng)? else {
                return Ok(None);
            };
            let options = IntegrateOptions {
                input_order,
                time_breaks: Vec::new(),
            };
            let traj = integrate_with(model, &d.x0, &d.input, d.horizon, d.horizon / 20.0, &options)?;
            if traj.status != crate::simulation::TrajectoryStatus::Completed {
                return Ok(None);
            }
            let jets = jet_along_trajectory(ctx.table(), &traj)?;
            let jet_sup = jets.norms().into_iter().fold(0.0f64, f64::max);
            let u0 = norm(&d.input.value(0.0));
            let score = u0 / (SCORE_EPSILON + norm(&d.x0) + jet_sup);
            Ok(Some(FalsifyCandidate {
                draw: id,
                score: if score.is_finite() { score } else { 0.0 },
                target: d.target,
                x0: d.x0,
                u0: d.u0,
                horizon: d.horizon,
                jet_sup,
                input: d.input,
            }))
        })
        .collect::<Result<_, _>>()?;
    let valid_draws = scored.iter().filter(|c| c.is_some()).count();
    let best = scored
        .into_iter()
        .flatten()
        .fold(None::<FalsifyCandidate>, |best, c| match best {
            Some(b) if b.score >= c.score => Some(b),
            _ => Some(c),
        });
    let strong_evidence = best.as_ref().is_some_and(|b| b.score > STRONG_EVIDENCE);
    Ok(FalsifyReport {
        order: opts.order,
        budget: opts.budget,
        seed: opts.seed,
        valid_draws,
        best,
        strong_evidence,
    })
}
