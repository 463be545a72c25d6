//! Grid check of the dissipation inequality `∇V·f <= -α(|x|) + χ(|y^k|)`.

use serde::Serialize;

use super::CertifyError;
use crate::expr::{differentiate, simplify, CompiledExpr, Expr, Var, VarLayout};
use crate::gains::ClassKFn;
use crate::jets::JetTable;
use crate::relative_degree::state_grid;
use crate::simulation::norm;
use crate::system::SystemModel;

/// Relative tolerance on the inequality.
pub const LYAPUNOV_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LyapunovGrid {
    pub x_box: f64,
    pub x_points: usize,
    pub u_box: f64,
    pub u_points: usize,
}

impl Default for LyapunovGrid {
    fn default() -> Self {
        LyapunovGrid {
            x_box: 2.0,
            x_points: 41,
            u_box: 10.0,
            u_points: 11,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LyapunovWorst {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub dv: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub holds: bool,
    /// Minimum of `rhs - ∇V·f` over the grid.
    pub worst_slack: f64,
    pub worst: Option<LyapunovWorst>,
    pub nodes: usize,
    pub violations: usize,
    pub positive_definite: bool,
    pub radially_growing: bool,
    pub dv: String,
    pub grid: LyapunovGrid,
}

fn u_grid(m: usize, u_box: f64, points: usize) -> Vec<Vec<f64>> {
    if m == 0 {
        return vec![Vec::new()];
    }
    let points = points.max(2);
    let axis: Vec<f64> = (0..points)
        .map(|i| -u_box + 2.0 * u_box * i as f64 / (points - 1) as f64)
        .collect();
    let mut out = Vec::new();
    for mut idx in 0..points.pow(m as u32) {
        let mut p = Vec::with_capacity(m);
        for _ in 0..m {
            p.push(axis[idx % points]);
            idx /= points;
        }
        out.push(p);
    }
    out
}

/// Checks the inequality with `y^k` the output jet of order `order` at every
/// node of `x-box × u-box` (input derivatives set to zero), then spot-checks
/// `V(0) = 0`, `V > 0` off the origin and growth of `V` toward the box rim.
pub fn lyapunov_check(
    model: &SystemModel,
    v: &Expr,
    alpha: &ClassKFn,
    chi: &ClassKFn,
    order: usize,
    grid: &LyapunovGrid,
) -> Result<LyapunovReport, CertifyError> {
    if let Some(var) = v.vars().into_iter().find(|x| !matches!(x, Var::State(_))) {
        return Err(CertifyError::Spec(format!("V must depend on states only, found {var:?}")));
    }
    let dv = simplify(&Expr::sum(
        model
            .f
            .iter()
            .enumerate()
            .map(|(i, fi)| differentiate(v, &Var::State(i + 1)) * fi.clone()),
    ));
    let table = JetTable::uniform(model, order)?;
    let in_order = table.max_input_order().unwrap_or(0);
    let layout = VarLayout::standard(model.n, model.m, in_order);
    let compile = |e: &Expr| CompiledExpr::compile(e, &layout).map_err(|e| CertifyError::Sim(e.into()));
    let dv_c = compile(&dv)?;
    let v_c = compile(v)?;
    let jets: Vec<CompiledExpr> = (0..model.l)
        .flat_map(|i| (0..=order).map(move |k| (i, k)))
        .map(|(i, k)| compile(table.h(i, k)))
        .collect::<Result<_, _>>()?;
    let u_slots: Vec<usize> = (1..=model.m)
        .map(|j| layout.slot(&Var::input(j)).expect("standard layout"))
        .collect();
    let eval = |c: &CompiledExpr, s: &[f64]| c.eval(s).map_err(|e| CertifyError::Sim(e.into()));

    let xs = state_grid(model.n, grid.x_box, grid.x_points);
    let us = u_grid(model.m, grid.u_box, grid.u_points);
    let mut slots = vec![0.0; layout.len()];
    let mut worst_slack = f64::INFINITY;
    let mut worst = None;
    let mut violations = 0;
    let mut nodes = 0;
    for x in &xs {
        slots[..model.n].copy_from_slice(x);
        for u in &us {
            for (s, val) in u_slots.iter().zip(u) {
                slots[*s] = *val;
            }
            let d = eval(&dv_c, &slots)?;
            let y: Vec<f64> = jets.iter().map(|c| eval(c, &slots)).collect::<Result<_, _>>()?;
            let a = alpha.eval(norm(x));
            let c = chi.eval(norm(&y));
            let rhs = -a + c;
            let slack = rhs - d;
            nodes += 1;
            if slack < -LYAPUNOV_TOLERANCE * (1.0 + d.abs() + a + c) || slack.is_nan() {
                violations += 1;
            }
            if slack < worst_slack || slack.is_nan() {
                worst_slack = slack;
                worst = Some(LyapunovWorst { x: x.clone(), u: u.clone(), dv: d, rhs });
            }
        }
    }

    let v_at = |x: &[f64]| -> Result<f64, CertifyError> {
        let mut s = vec![0.0; layout.len()];
        s[..model.n].copy_from_slice(x);
        eval(&v_c, &s)
    };
    let mut positive_definite = v_at(&vec![0.0; model.n])?.abs() <= LYAPUNOV_TOLERANCE;
    for x in &xs[1..] {
        if norm(x) > 0.0 && !(v_at(x)? > 0.0) {
            positive_definite = false;
        }
    }
    let mut radially_growing = true;
    for x in &xs[1..] {
        let rim = x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if (rim - grid.x_box).abs() > 1e-12 * grid.x_box {
            continue;
        }
        let scaled = |f: f64| x.iter().map(|v| v * f).collect::<Vec<_>>();
        let (v1, v2, v4) = (v_at(x)?, v_at(&scaled(0.5))?, v_at(&scaled(0.25))?);
        if !(v1 > v2 && v2 > v4) {
            radially_growing = false;
        }
    }
    Ok(LyapunovReport {
        holds: violations == 0 && positive_definite && radially_growing,
        worst_slack,
        worst,
        nodes,
        violations,
        positive_definite,
        radially_growing,
        dv: dv.to_string(),
        grid: grid.clone(),
    })
}
