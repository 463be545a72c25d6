use std::collections::HashMap;
use std::sync::Arc;

use super::eval::{guarded_div, guarded_powi};
use super::{EvalError, Expr, Func, SmoothFn, Var};

/// Assignment of variables to slots of a flat `f64` buffer.
#[derive(Clone, Debug, Default)]
pub struct VarLayout {
    vars: Vec<Var>,
    index: HashMap<Var, usize>,
}

impl VarLayout {
    pub fn new(vars: impl IntoIterator<Item = Var>) -> Self {
        let mut layout = VarLayout::default();
        for v in vars {
            layout.push(v);
        }
        layout
    }

    /// `x1..xn`, then `u_j^(d)` for each channel `j` and `d = 0..=max_order`.
    pub fn standard(n: usize, m: usize, max_order: usize) -> Self {
        let states = (1..=n).map(Var::State);
        let inputs = (1..=m).flat_map(move |channel| {
            (0..=max_order).map(move |order| Var::Input { channel, order })
        });
        Self::new(states.chain(inputs))
    }

    /// Appends `v` unless present; returns its slot.
    pub fn push(&mut self, v: Var) -> usize {
        if let Some(&i) = self.index.get(&v) {
            return i;
        }
        self.index.insert(v.clone(), self.vars.len());
        self.vars.push(v);
        self.vars.len() - 1
    }

    pub fn slot(&self, v: &Var) -> Option<usize> {
        self.index.get(v).copied()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Clone, Debug)]
enum Op {
    Const(f64),
    Load(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Powi(i32),
    Call(Func),
    Tab(Arc<dyn SmoothFn>, usize),
}

/// Stack bytecode for fast repeated evaluation of one expression.
#[derive(Clone, Debug)]
pub struct CompiledExpr {
    ops: Vec<Op>,
    depth: usize,
}

impl CompiledExpr {
    pub fn compile(e: &Expr, layout: &VarLayout) -> Result<Self, EvalError> {
        let mut ops = Vec::with_capacity(e.size());
        emit(e, layout, &mut ops)?;
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Load(_) => depth += 1,
                Op::Add | Op::Sub | Op::Mul | Op::Div => depth -= 1,
                _ => {}
            }
            max_depth = max_depth.max(depth);
        }
        Ok(CompiledExpr {
            ops,
            depth: max_depth,
        })
    }

    pub fn eval(&self, slots: &[f64]) -> Result<f64, EvalError> {
        let mut stack = Vec::with_capacity(self.depth);
        self.eval_with(slots, &mut stack)
    }

    /// As [`eval`](Self::eval) with a caller-provided scratch stack.
    pub fn eval_with(&self, slots: &[f64], stack: &mut Vec<f64>) -> Result<f64, EvalError> {
        stack.clear();
        for op in &self.ops {
            match op {
                Op::Const(c) => stack.push(*c),
                Op::Load(i) => stack.push(slots[*i]),
                Op::Neg => {
                    let a = stack.last_mut().expect("stack underflow");
                    *a = -*a;
                }
                Op::Powi(k) => {
                    let a = stack.last_mut().expect("stack underflow");
                    *a = guarded_powi(*a, *k)?;
                }
                Op::Call(f) => {
                    let a = stack.last_mut().expect("stack underflow");
                    *a = f.apply(*a);
                }
                Op::Tab(func, order) => {
                    let a = stack.last_mut().expect("stack underflow");
                    *a = func.derivative(*order, *a)?;
                }
                Op::Add | Op::Sub | Op::Mul | Op::Div => {
                    let b = stack.pop().expect("stack underflow");
                    let a = stack.last_mut().expect("stack underflow");
                    *a = match op {
                        Op::Add => *a + b,
                        Op::Sub => *a - b,
                        Op::Mul => *a * b,
                        _ => guarded_div(*a, b)?,
                    };
                }
            }
        }
        let v = stack.pop().expect("empty program");
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }
}

fn emit(e: &Expr, layout: &VarLayout, ops: &mut Vec<Op>) -> Result<(), EvalError> {
    match e {
        Expr::Const(c) => ops.push(Op::Const(*c)),
        Expr::Var(v) => ops.push(Op::Load(
            layout.slot(v).ok_or_else(|| EvalError::Unbound(v.clone()))?,
        )),
        Expr::Neg(a) => {
            emit(a, layout, ops)?;
            ops.push(Op::Neg);
        }
        Expr::Pow(a, k) => {
            emit(a, layout, ops)?;
            ops.push(Op::Powi(*k));
        }
        Expr::Call(f, a) => {
            emit(a, layout, ops)?;
            ops.push(Op::Call(*f));
        }
        Expr::Tab(t, a) => {
            emit(a, layout, ops)?;
            ops.push(Op::Tab(t.func.clone(), t.order));
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            emit(a, layout, ops)?;
            emit(b, layout, ops)?;
            ops.push(match e {
                Expr::Add(..) => Op::Add,
                Expr::Sub(..) => Op::Sub,
                Expr::Mul(..) => Op::Mul,
                _ => Op::Div,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Bindings};

    #[test]
    fn matches_tree_evaluation() {
        let e = parse("x1*sin(u1_d1) - x2^3/(1 + u1^2) + tanh(x1 - 2*x2)").unwrap();
        let layout = VarLayout::standard(2, 1, 1);
        let c = CompiledExpr::compile(&e, &layout).unwrap();
        let slots = [0.3, -1.2, 0.8, 2.5];
        let b = Bindings::new()
            .with_state(&slots[..2])
            .with(Var::input(1), 0.8)
            .with(Var::Input { channel: 1, order: 1 }, 2.5);
        assert_eq!(c.eval(&slots).unwrap(), e.eval(&b).unwrap());
    }

    #[test]
    fn unbound_variable_rejected() {
        let e = parse("x3").unwrap();
        let err = CompiledExpr::compile(&e, &VarLayout::standard(2, 0, 0)).unwrap_err();
        assert_eq!(err, EvalError::Unbound(Var::State(3)));
    }

    #[test]
    fn division_guard() {
        let e = parse("1/x1").unwrap();
        let c = CompiledExpr::compile(&e, &VarLayout::standard(1, 0, 0)).unwrap();
        assert!(matches!(c.eval(&[0.0]), Err(EvalError::DivisionGuard { .. })));
    }
}
