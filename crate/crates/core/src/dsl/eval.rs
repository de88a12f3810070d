use std::collections::HashMap;

use thiserror::Error;

use super::ast::{BinOp, CmpOp, Expr, Func, Guard, Program};
use super::Pos;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("square root of negative value {0}")]
    SqrtOfNegative(f64),
    #[error("non-finite result")]
    NonFinite,
    #[error("unbound variable `{0}`")]
    Unbound(String),
}

/// An evaluation failure located at the update (or rule) that raised it.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{pos}: {error}")]
pub struct LocatedEvalError {
    pub pos: Pos,
    pub error: EvalError,
}

#[inline]
fn finite(v: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite)
    }
}

#[inline]
fn binary(op: BinOp, a: f64, b: f64) -> Result<f64, EvalError> {
    let v = match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                return Err(EvalError::DivisionByZero);
            }
            a / b
        }
    };
    finite(v)
}

#[inline]
fn call(func: Func, a: f64, b: f64) -> Result<f64, EvalError> {
    let v = match func {
        Func::Sin => a.sin(),
        Func::Cos => a.cos(),
        Func::Tan => a.tan(),
        Func::Abs => a.abs(),
        Func::Sqrt => {
            if a < 0.0 {
                return Err(EvalError::SqrtOfNegative(a));
            }
            a.sqrt()
        }
        Func::Sign => {
            if a > 0.0 {
                1.0
            } else if a < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        Func::Min => a.min(b),
        Func::Max => a.max(b),
    };
    finite(v)
}

fn eval_lookup(expr: &Expr, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, EvalError> {
    match expr {
        Expr::Num(n) => finite(*n),
        Expr::Var(name) => lookup(name).ok_or_else(|| EvalError::Unbound(name.clone())),
        Expr::Neg(e) => Ok(-eval_lookup(e, lookup)?),
        Expr::Binary(op, a, b) => binary(*op, eval_lookup(a, lookup)?, eval_lookup(b, lookup)?),
        Expr::Call(func, args) => {
            let a = eval_lookup(&args[0], lookup)?;
            let b = match args.get(1) {
                Some(e) => eval_lookup(e, lookup)?,
                None => 0.0,
            };
            call(*func, a, b)
        }
    }
}

/// Evaluates `expr` with variables taken from `bindings`.
pub fn eval(expr: &Expr, bindings: &HashMap<String, f64>) -> Result<f64, EvalError> {
    eval_lookup(expr, &|name| bindings.get(name).copied())
}

pub fn eval_guard(guard: &Guard, bindings: &HashMap<String, f64>) -> Result<bool, EvalError> {
    Ok(match guard {
        Guard::Cmp(op, a, b) => op.apply(eval(a, bindings)?, eval(b, bindings)?),
        Guard::And(a, b) => eval_guard(a, bindings)? && eval_guard(b, bindings)?,
        Guard::Or(a, b) => eval_guard(a, bindings)? || eval_guard(b, bindings)?,
        Guard::Not(g) => !eval_guard(g, bindings)?,
    })
}

/// Applies one step of `program` to `bindings`: the first rule whose guard
/// holds supplies its updates, the default block the rest. Every right-hand
/// side reads the pre-step bindings.
pub fn step_map(
    program: &Program,
    bindings: &HashMap<String, f64>,
) -> Result<HashMap<String, f64>, LocatedEvalError> {
    let mut fired = None;
    for rule in &program.rules {
        let pos = rule.updates.first().map(|u| u.pos).unwrap_or(Pos { line: 0, col: 0 });
        if eval_guard(&rule.guard, bindings).map_err(|error| LocatedEvalError { pos, error })? {
            fired = Some(rule);
            break;
        }
    }
    let mut out = bindings.clone();
    let overridden = |t: &str| fired.is_some_and(|r| r.updates.iter().any(|u| u.target == t));
    for u in program
        .defaults
        .iter()
        .filter(|u| !overridden(&u.target))
        .chain(fired.into_iter().flat_map(|r| r.updates.iter()))
    {
        let v = eval(&u.expr, bindings).map_err(|error| LocatedEvalError { pos: u.pos, error })?;
        out.insert(u.target.clone(), v);
    }
    Ok(out)
}

/// Expression with variables resolved to slots of a flat binding vector.
#[derive(Debug, Clone)]
pub enum SlotExpr {
    Num(f64),
    Slot(usize),
    Neg(Box<SlotExpr>),
    Binary(BinOp, Box<SlotExpr>, Box<SlotExpr>),
    Call(Func, Box<SlotExpr>, Option<Box<SlotExpr>>),
}

impl SlotExpr {
    pub fn compile(
        expr: &Expr,
        resolve: &dyn Fn(&str) -> Option<usize>,
    ) -> Result<SlotExpr, EvalError> {
        Ok(match expr {
            Expr::Num(n) => SlotExpr::Num(*n),
            Expr::Var(v) => SlotExpr::Slot(resolve(v).ok_or_else(|| EvalError::Unbound(v.clone()))?),
            Expr::Neg(e) => SlotExpr::Neg(Box::new(SlotExpr::compile(e, resolve)?)),
            Expr::Binary(op, a, b) => SlotExpr::Binary(
                *op,
                Box::new(SlotExpr::compile(a, resolve)?),
                Box::new(SlotExpr::compile(b, resolve)?),
            ),
            Expr::Call(f, args) => SlotExpr::Call(
                *f,
                Box::new(SlotExpr::compile(&args[0], resolve)?),
                match args.get(1) {
                    Some(b) => Some(Box::new(SlotExpr::compile(b, resolve)?)),
                    None => None,
                },
            ),
        })
    }

    pub fn eval(&self, slots: &[f64]) -> Result<f64, EvalError> {
        match self {
            SlotExpr::Num(n) => Ok(*n),
            SlotExpr::Slot(i) => Ok(slots[*i]),
            SlotExpr::Neg(e) => Ok(-e.eval(slots)?),
            SlotExpr::Binary(op, a, b) => binary(*op, a.eval(slots)?, b.eval(slots)?),
            SlotExpr::Call(f, a, b) => {
                let a = a.eval(slots)?;
                let b = match b {
                    Some(b) => b.eval(slots)?,
                    None => 0.0,
                };
                call(*f, a, b)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum SlotGuard {
    Cmp(CmpOp, SlotExpr, SlotExpr),
    And(Box<SlotGuard>, Box<SlotGuard>),
    Or(Box<SlotGuard>, Box<SlotGuard>),
    Not(Box<SlotGuard>),
}

impl SlotGuard {
    pub fn compile(
        guard: &Guard,
        resolve: &dyn Fn(&str) -> Option<usize>,
    ) -> Result<SlotGuard, EvalError> {
        Ok(match guard {
            Guard::Cmp(op, a, b) => {
                SlotGuard::Cmp(*op, SlotExpr::compile(a, resolve)?, SlotExpr::compile(b, resolve)?)
            }
            Guard::And(a, b) => SlotGuard::And(
                Box::new(SlotGuard::compile(a, resolve)?),
                Box::new(SlotGuard::compile(b, resolve)?),
            ),
            Guard::Or(a, b) => SlotGuard::Or(
                Box::new(SlotGuard::compile(a, resolve)?),
                Box::new(SlotGuard::compile(b, resolve)?),
            ),
            Guard::Not(g) => SlotGuard::Not(Box::new(SlotGuard::compile(g, resolve)?)),
        })
    }

    pub fn eval(&self, slots: &[f64]) -> Result<bool, EvalError> {
        Ok(match self {
            SlotGuard::Cmp(op, a, b) => op.apply(a.eval(slots)?, b.eval(slots)?),
            SlotGuard::And(a, b) => a.eval(slots)? && b.eval(slots)?,
            SlotGuard::Or(a, b) => a.eval(slots)? || b.eval(slots)?,
            SlotGuard::Not(g) => !g.eval(slots)?,
        })
    }
}
