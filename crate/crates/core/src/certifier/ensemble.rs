//! Seeded trajectory ensembles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::falsify::ProbeContext;
use super::CertifyError;
use crate::expr::{differentiate, CompiledExpr, Var, VarLayout};
use crate::jets::next_jet;
use crate::relative_degree::{feedback_law, FeedbackLaw};
use crate::simulation::{
    integrate_with, alternating_switching_input_until, IntegrateOptions, InputSignal, SineTerm,
    Trajectory, TrajectoryStatus,
};
use crate::system::SystemModel;

/// How the input of an ensemble member is drawn.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InputFamily {
    Zero,
    /// Per channel `U(-1, 1) * u_scale`.
    Constant,
    /// Coefficient of `t^k` drawn from `U(-1, 1) * u_scale / T^k`.
    Polynomial { degree: usize },
    /// Amplitude `U(0, u_scale)`, frequency `U(0.1, 3)`, phase `U(0, 2π)`.
    Sinusoid { terms: usize },
    /// The `±u_scale` switching schedule on channel 1.
    Switching,
    /// Affine SISO only: `x0` projected onto `h = L_f h = ... = 0` and the
    /// feedback that keeps the output at zero.
    ZeroOutput,
    /// A flattening probe on a short horizon, with jets up to `order`.
    Probe { order: usize },
}

impl InputFamily {
    pub fn label(&self) -> String {
        match self {
            InputFamily::Zero => "zero".into(),
            InputFamily::Constant => "constant".into(),
            InputFamily::Polynomial { degree } => format!("polynomial(degree={degree})"),
            InputFamily::Sinusoid { terms } => format!("sinusoid(terms={terms})"),
            InputFamily::Switching => "switching".into(),
            InputFamily::ZeroOutput => "zero_output".into(),
            InputFamily::Probe { order } => format!("probe(order={order})"),
        }
    }

    /// Families that every model accepts.
    pub fn smooth_defaults() -> Vec<InputFamily> {
        vec![
            InputFamily::Zero,
            InputFamily::Constant,
            InputFamily::Polynomial { degree: 2 },
            InputFamily::Sinusoid { terms: 2 },
        ]
    }
}

/// Member `i` uses family `families[i % len]` and the ChaCha8 stream `i`
/// of `seed`, so every member is replayable on its own.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleSpec {
    pub seed: u64,
    pub count: usize,
    pub families: Vec<InputFamily>,
    /// `x0` is drawn uniformly from `[-x0_box, x0_box]^n`.
    pub x0_box: f64,
    pub u_scale: f64,
    pub horizon: f64,
    pub dt: f64,
}

impl EnsembleSpec {
    pub fn new(seed: u64, count: usize, horizon: f64, dt: f64) -> Self {
        EnsembleSpec {
            seed,
            count,
            families: InputFamily::smooth_defaults(),
            x0_box: 1.0,
            u_scale: 1.0,
            horizon,
            dt,
        }
    }

    pub fn with_families(mut self, families: Vec<InputFamily>) -> Self {
        self.families = families;
        self
    }

    pub fn with_box(mut self, x0_box: f64) -> Self {
        self.x0_box = x0_box;
        self
    }

    pub fn with_u_scale(mut self, u_scale: f64) -> Self {
        self.u_scale = u_scale;
        self
    }

    pub fn descriptor(&self) -> EnsembleDescriptor {
        EnsembleDescriptor {
            seed: self.seed,
            count: self.count,
            families: self.families.iter().map(InputFamily::label).collect(),
            x0_box: self.x0_box,
            u_scale: self.u_scale,
            horizon: self.horizon,
            dt: self.dt,
        }
    }

    pub fn member_rng(&self, id: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id as u64);
        rng
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleDescriptor {
    pub seed: u64,
    pub count: usize,
    pub families: Vec<String>,
    pub x0_box: f64,
    pub u_scale: f64,
    pub horizon: f64,
    pub dt: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Member {
    pub id: usize,
    pub family: String,
    pub x0: Vec<f64>,
    pub input: Option<InputSignal>,
    pub traj: Trajectory,
}

/// Zero-output feedback compiled for repeated use.
struct ZeroOutput {
    law: FeedbackLaw,
    chain: Vec<CompiledExpr>,
    gradient: Vec<Vec<CompiledExpr>>,
    /// `u, u', u'', ...` along the closed loop.
    controls: Vec<CompiledExpr>,
}

impl ZeroOutput {
    fn new(model: &SystemModel, input_order: usize) -> Result<Self, CertifyError> {
        let law = feedback_law(model, &[])
            .map_err(|e| CertifyError::Spec(format!("zero-output family: {e}")))?;
        let layout = VarLayout::standard(model.n, 0, 0);
        let compile = |e: &crate::expr::Expr| {
            CompiledExpr::compile(e, &layout).map_err(|e| CertifyError::Sim(e.into()))
        };
        let chain = law.chain.iter().map(compile).collect::<Result<Vec<_>, _>>()?;
        let gradient = law
            .chain
            .iter()
            .map(|c| {
                (1..=model.n)
                    .map(|i| compile(&differentiate(c, &Var::State(i))))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut exprs = vec![law.u.clone()];
        for _ in 0..input_order {
            let next = next_jet(exprs.last().expect("nonempty"), &law.closed.f);
            exprs.push(next);
        }
        let controls = exprs.iter().map(compile).collect::<Result<Vec<_>, _>>()?;
        Ok(ZeroOutput { law, chain, gradient, controls })
    }

    /// Gauss-Newton projection onto the zero-output manifold.
    fn project(&self, x: &mut [f64]) -> Result<(), CertifyError> {
        let r = self.chain.len();
        let eval = |c: &CompiledExpr, x: &[f64]| c.eval(x).map_err(|e| CertifyError::Sim(e.into()));
        for _ in 0..50 {
            let f = self.chain.iter().map(|c| eval(c, x)).collect::<Result<Vec<_>, _>>()?;
            if f.iter().all(|v| v.abs() < 1e-13) {
                break;
            }
            let mut j = nalgebra::DMatrix::zeros(r, x.len());
            for (a, row) in self.gradient.iter().enumerate() {
                for (b, g) in row.iter().enumerate() {
                    j[(a, b)] = eval(g, x)?;
                }
            }
            let jjt = &j * j.transpose();
            let Some(lambda) = jjt.lu().solve(&nalgebra::DVector::from_vec(f)) else {
                break;
            };
            let step = j.transpose() * lambda;
            for (xi, s) in x.iter_mut().zip(step.iter()) {
                *xi -= s;
            }
        }
        Ok(())
    }

    fn simulate(&self, x0: &[f64], horizon: f64, dt: f64, input_order: usize) -> Result<Trajectory, CertifyError> {
        let u = InputSignal::zero(1);
        let mut traj = integrate_with(&self.law.closed, x0, &u, horizon, dt, &IntegrateOptions::default())?;
        let mut inputs = Vec::with_capacity(traj.len());
        for (k, x) in traj.states.iter().enumerate() {
            let row = self.controls[..=input_order]
                .iter()
                .map(|c| c.eval(x))
                .collect::<Result<Vec<_>, _>>();
            match row {
                Ok(row) if row.iter().all(|v| v.is_finite()) => inputs.push(row),
                _ => {
                    traj.status = TrajectoryStatus::StiffRejected {
                        t: traj.times[k],
                        reason: "feedback not evaluable".into(),
                    };
                    break;
                }
            }
        }
        let kept = inputs.len();
        traj.times.truncate(kept);
        traj.states.truncate(kept);
        traj.inputs = inputs;
        traj.m = 1;
        traj.input_order = input_order;
        Ok(traj)
    }
}

fn uniform(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    if half > 0.0 {
        rng.gen_range(-half..=half)
    } else {
        0.0
    }
}

fn smooth_signal(family: &InputFamily, m: usize, spec: &EnsembleSpec, rng: &mut ChaCha8Rng) -> InputSignal {
    let s = spec.u_scale;
    match family {
        InputFamily::Constant => InputSignal::constant(&(0..m).map(|_| uniform(rng, s)).collect::<Vec<_>>()),
        InputFamily::Polynomial { degree } => InputSignal::Polynomial {
            coeffs: (0..m)
                .map(|_| {
                    (0..=*degree)
                        .map(|k| uniform(rng, s) / spec.horizon.max(1.0).powi(k as i32))
                        .collect()
                })
                .collect(),
        },
        InputFamily::Sinusoid { terms } => InputSignal::Sinusoid {
            terms: (0..m)
                .map(|_| {
                    (0..*terms)
                        .map(|_| SineTerm {
                            amp: rng.gen_range(0.0..=s.max(0.0)),
                            freq: rng.gen_range(0.1..3.0),
                            phase: rng.gen_range(0.0..std::f64::consts::TAU),
                        })
                        .collect()
                })
                .collect(),
        },
        InputFamily::Switching => {
            let InputSignal::PiecewiseConstant { switches, values } = alternating_switching_input_until(spec.horizon) else {
                unreachable!("the schedule is piecewise constant")
            };
            let values = values
                .into_iter()
                .map(|v| (0..m).map(|j| if j == 0 { v[0] * s } else { 0.0 }).collect())
                .collect();
            InputSignal::PiecewiseConstant { switches, values }
        }
        _ => InputSignal::zero(m),
    }
}

/// Simulates every member of `spec`, carrying input derivatives up to
/// `input_order`. Members are independent and run in parallel.
pub fn simulate_ensemble(
    model: &SystemModel,
    spec: &EnsembleSpec,
    input_order: usize,
) -> Result<Vec<Member>, CertifyError> {
    if spec.families.is_empty() {
        return Err(CertifyError::Spec("ensemble has no input families".into()));
    }
    let zero_output = if spec.families.contains(&InputFamily::ZeroOutput) {
        Some(ZeroOutput::new(model, input_order)?)
    } else {
        None
    };
    let mut probes = Vec::new();
    for f in &spec.families {
        if let InputFamily::Probe { order } = f {
            if !probes.iter().any(|(o, _)| o == order) {
                probes.push((*order, ProbeContext::new(model, *order)?));
            }
        }
    }
    (0..spec.count)
        .into_par_iter()
        .map(|id| {
            let family = &spec.families[id % spec.families.len()];
            let mut rng = spec.member_rng(id);
            let mut x0: Vec<f64> = (0..model.n).map(|_| uniform(&mut rng, spec.x0_box)).collect();
            let (input, traj) = match family {
                InputFamily::ZeroOutput => {
                    let z = zero_output.as_ref().expect("built above");
                    z.project(&mut x0)?;
                    (None, z.simulate(&x0, spec.horizon, spec.dt, input_order)?)
                }
                InputFamily::Probe { order } => {
                    let ctx = &probes.iter().find(|(o, _)| o == order).expect("built above").1;
                    let draw = ctx.draw_until_valid(&mut rng)?;
                    x0.clone_from(&draw.x0);
                    let opts = IntegrateOptions {
                        input_order: input_order.max(ctx.input_order()),
                        time_breaks: Vec::new(),
                    };
                    let traj = integrate_with(model, &x0, &draw.input, draw.horizon, draw.horizon / 20.0, &opts)?;
                    (Some(draw.input), traj)
                }
                _ => {
                    let u = smooth_signal(family, model.m, spec, &mut rng);
                    let opts = IntegrateOptions {
                        input_order,
                        time_breaks: Vec::new(),
                    };
                    let traj = integrate_with(model, &x0, &u, spec.horizon, spec.dt, &opts)?;
                    (Some(u), traj)
                }
            };
            Ok(Member {
                id,
                family: family.label(),
                x0,
                input,
                traj,
            })
        })
        .collect()
}
