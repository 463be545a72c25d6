//! Output-derivative functions `H_k`: `y^(k) = H_k(x, u, u', ..., u^(k-1))`,
//! their input dependence, and exact evaluation along trajectories.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{
    differentiate, is_identically_zero, simplify, CompiledExpr, EvalError, Expr, Var, VarLayout,
    ZeroVerdict,
};
use crate::simulation::Trajectory;
use crate::system::{SystemModel, MODEL_SEED};

/// Highest jet order computed.
pub const JET_CAP: usize = 8;

#[derive(Debug, Error)]
pub enum JetError {
    #[error("jet order {requested} exceeds the supported maximum {JET_CAP}")]
    OrderCap { requested: usize },
    #[error("expected {expected} jet orders (one per output), got {got}")]
    Orders { expected: usize, got: usize },
    #[error("jet needs u{channel}_d{order} but the trajectory carries derivatives up to order {available}")]
    MissingInput {
        channel: usize,
        order: usize,
        available: usize,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Debug)]
pub struct JetEntry {
    pub expr: Expr,
    /// Input variables with a partial derivative that is not identically zero.
    pub dependence: Vec<Var>,
    /// Highest input-derivative order referenced by `expr`.
    pub max_input_order: Option<usize>,
    /// Set when an independence claim rests on sampling.
    pub probabilistic: bool,
}

#[derive(Clone, Debug)]
pub struct JetTable {
    pub n: usize,
    pub m: usize,
    /// `entries[i][k]` is `H_k` for output `i`.
    pub entries: Vec<Vec<JetEntry>>,
}

/// One step of the recursion: `dH/dx f + Σ dH/du_j^(d) u_j^(d+1)`.
pub fn next_jet(h: &Expr, f: &[Expr]) -> Expr {
    let mut terms: Vec<Expr> = f
        .iter()
        .enumerate()
        .map(|(i, fi)| differentiate(h, &Var::State(i + 1)) * fi.clone())
        .collect();
    for v in h.vars() {
        if let Var::Input { channel, order } = v {
            let d = differentiate(h, &v);
            terms.push(d * Expr::Var(Var::Input { channel, order: order + 1 }));
        }
    }
    simplify(&Expr::sum(terms))
}

fn entry(expr: Expr, seed: u64) -> JetEntry {
    let mut dependence = Vec::new();
    let mut probabilistic = false;
    let mut max_input_order = None;
    for v in expr.vars() {
        if let Var::Input { order, .. } = v {
            max_input_order = max_input_order.max(Some(order));
            match is_identically_zero(&differentiate(&expr, &v), seed) {
                ZeroVerdict::Zero { probabilistic: p } => probabilistic |= p,
                _ => dependence.push(v),
            }
        }
    }
    JetEntry {
        expr,
        dependence,
        max_input_order,
        probabilistic,
    }
}

impl JetTable {
    /// `H_0..H_{orders[i]}` for each output `i`.
    pub fn compute(model: &SystemModel, orders: &[usize]) -> Result<Self, JetError> {
        if orders.len() != model.l {
            return Err(JetError::Orders {
                expected: model.l,
                got: orders.len(),
            });
        }
        if let Some(&requested) = orders.iter().find(|k| **k > JET_CAP) {
            return Err(JetError::OrderCap { requested });
        }
        let entries = model
            .h
            .iter()
            .zip(orders)
            .enumerate()
            .map(|(i, (h, &k))| {
                let mut h = simplify(h);
                let mut row = Vec::with_capacity(k + 1);
                for level in 0..=k {
                    if level > 0 {
                        h = next_jet(&h, &model.f);
                    }
                    row.push(entry(h.clone(), MODEL_SEED ^ ((i as u64) << 8 | level as u64)));
                }
                row
            })
            .collect();
        Ok(JetTable {
            n: model.n,
            m: model.m,
            entries,
        })
    }

    /// Same order `k` for every output.
    pub fn uniform(model: &SystemModel, k: usize) -> Result<Self, JetError> {
        Self::compute(model, &vec![k; model.l])
    }

    pub fn h(&self, output: usize, order: usize) -> &Expr {
        &self.entries[output][order].expr
    }

    pub fn orders(&self) -> Vec<usize> {
        self.entries.iter().map(|r| r.len() - 1).collect()
    }

    /// Highest input-derivative order referenced anywhere in the table.
    pub fn max_input_order(&self) -> Option<usize> {
        self.entries
            .iter()
            .flatten()
            .filter_map(|e| e.max_input_order)
            .max()
    }

    pub fn probabilistic(&self) -> bool {
        self.entries.iter().flatten().any(|e| e.probabilistic)
    }

    /// Column labels `y<i>_d<k>` in `(i, k)` order.
    pub fn labels(&self) -> Vec<String> {
        self.entries
            .iter()
            .enumerate()
            .flat_map(|(i, row)| (0..row.len()).map(move |k| format!("y{}_d{k}", i + 1)))
            .collect()
    }

    /// Every `H_k^i` compiled against `layout`, in [`labels`](Self::labels) order.
    pub fn compile(&self, layout: &VarLayout) -> Result<Vec<CompiledExpr>, EvalError> {
        self.entries
            .iter()
            .flatten()
            .map(|e| CompiledExpr::compile(&e.expr, layout))
            .collect()
    }
}

pub fn compute_jets(model: &SystemModel, orders: &[usize]) -> Result<JetTable, JetError> {
    JetTable::compute(model, orders)
}

#[derive(Clone, Debug, Serialize)]
pub struct DependenceRow {
    pub output: usize,
    pub order: usize,
    pub depends: bool,
    pub variables: Vec<String>,
    pub probabilistic: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DependenceProfile {
    pub rows: Vec<DependenceRow>,
    /// Per output (1-based in `rows`), the first order whose `H_k` depends on an input.
    pub earliest: Vec<Option<usize>>,
    pub probabilistic: bool,
}

pub fn dependence_profile(table: &JetTable) -> DependenceProfile {
    let mut rows = Vec::new();
    let mut earliest = Vec::new();
    for (i, row) in table.entries.iter().enumerate() {
        let mut first = None;
        for (k, e) in row.iter().enumerate() {
            let depends = !e.dependence.is_empty();
            if depends && first.is_none() {
                first = Some(k);
            }
            rows.push(DependenceRow {
                output: i + 1,
                order: k,
                depends,
                variables: e.dependence.iter().map(ToString::to_string).collect(),
                probabilistic: e.probabilistic,
            });
        }
        earliest.push(first);
    }
    DependenceProfile {
        probabilistic: rows.iter().any(|r| r.probabilistic),
        rows,
        earliest,
    }
}

/// Output jets sampled at every trajectory node.
#[derive(Clone, Debug, Serialize)]
pub struct JetSamples {
    pub columns: Vec<String>,
    /// `values[node][column]`.
    pub values: Vec<Vec<f64>>,
}

impl JetSamples {
    /// Euclidean norm of the stacked jet at each node.
    pub fn norms(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }
}

/// Exact `y_i^(k)` at each node, from the state and input-derivative samples.
pub fn jet_along_trajectory(table: &JetTable, traj: &Trajectory) -> Result<JetSamples, JetError> {
    for e in table.entries.iter().flatten() {
        for v in &e.dependence {
            if let Var::Input { channel, order } = v {
                if *order > traj.input_order {
                    return Err(JetError::MissingInput {
                        channel: *channel,
                        order: *order,
                        available: traj.input_order,
                    });
                }
            }
        }
    }
    let layout = VarLayout::standard(table.n, table.m, traj.input_order);
    let compiled = table.compile(&layout).map_err(|err| match err {
        EvalError::Unbound(Var::Input { channel, order }) => JetError::MissingInput {
            channel,
            order,
            available: traj.input_order,
        },
        other => JetError::Eval(other),
    })?;
    let mut slots = Vec::with_capacity(layout.len());
    let mut stack = Vec::new();
    let mut values = Vec::with_capacity(traj.len());
    for (x, u) in traj.states.iter().zip(&traj.inputs) {
        slots.clear();
        slots.extend_from_slice(x);
        slots.extend_from_slice(u);
        let row = compiled
            .iter()
            .map(|c| c.eval_with(&slots, &mut stack))
            .collect::<Result<Vec<f64>, _>>()?;
        values.push(row);
    }
    Ok(JetSamples {
        columns: table.labels(),
        values,
    })
}

/// CSV with `t`, states, input channels, then jet columns.
pub fn jet_csv(traj: &Trajectory, jets: Option<&JetSamples>) -> String {
    let mut out = String::new();
    let mut header = vec!["t".to_string()];
    header.extend((1..=traj.n()).map(|i| format!("x{i}")));
    header.extend(traj.input_labels());
    if let Some(j) = jets {
        header.extend(j.columns.iter().cloned());
    }
    let _ = writeln!(out, "{}", header.join(","));
    for (k, t) in traj.times.iter().enumerate() {
        let mut row: Vec<String> = vec![format!("{t:e}")];
        row.extend(traj.states[k].iter().map(|v| format!("{v:e}")));
        row.extend(traj.inputs[k].iter().map(|v| format!("{v:e}")));
        if let Some(j) = jets {
            row.extend(j.values[k].iter().map(|v| format!("{v:e}")));
        }
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::system::builtin;

    fn same(a: &Expr, b: &str) -> bool {
        is_identically_zero(&(a.clone() - parse(b).unwrap()), 3).is_zero()
    }

    #[test]
    fn eq25_jets() {
        let t = JetTable::uniform(&builtin("eq25").unwrap(), 2).unwrap();
        assert_eq!(t.h(0, 0).to_string(), "x1");
        assert_eq!(t.h(0, 1).to_string(), "u1");
        assert_eq!(t.h(0, 2).to_string(), "u1_d1");
        let p = dependence_profile(&t);
        assert_eq!(p.earliest, vec![Some(1)]);
        assert!(!p.probabilistic);
    }

    #[test]
    fn affine_second_jet() {
        // x1' = x2, x2' = -x1 + x1*u, y = x1 + x2^2.
        let model = crate::system::SystemModel::new(
            "affine",
            2,
            1,
            vec![parse("x2").unwrap(), parse("-x1 + x1*u1").unwrap()],
            vec![parse("x1 + x2^2").unwrap()],
        );
        let t = JetTable::uniform(&model, 2).unwrap();
        let lf = |e: &Expr| {
            differentiate(e, &Var::State(1)) * Expr::x(2) - differentiate(e, &Var::State(2)) * Expr::x(1)
        };
        let lg = |e: &Expr| differentiate(e, &Var::State(2)) * Expr::x(1);
        let h = &model.h[0];
        let h1 = lf(h) + lg(h) * Expr::u(1);
        let h2 = lf(&lf(h))
            + (lg(&lf(h)) + lf(&lg(h))) * Expr::u(1)
            + lg(&lg(h)) * Expr::u(1).powi(2)
            + lg(h) * Expr::u_deriv(1, 1);
        assert!(same(t.h(0, 1), &h1.to_string()));
        assert!(same(t.h(0, 2), &h2.to_string()));
    }

    #[test]
    fn example4_profile() {
        let t = JetTable::uniform(&builtin("example4").unwrap(), 2).unwrap();
        assert_eq!(t.h(1, 1).to_string(), "u1^2 + x3");
        assert_eq!(t.h(0, 1).to_string(), "u1");
        let p = dependence_profile(&t);
        assert_eq!(p.earliest, vec![Some(1), Some(1)]);
    }

    #[test]
    fn normal_form_profile() {
        let t = JetTable::uniform(&builtin("normal_form_r").unwrap(), 3).unwrap();
        let p = dependence_profile(&t);
        assert_eq!(p.earliest, vec![Some(3)]);
    }

    #[test]
    fn order_cap() {
        let model = builtin("integrator").unwrap();
        assert!(matches!(
            JetTable::uniform(&model, JET_CAP + 1),
            Err(JetError::OrderCap { .. })
        ));
    }
}
