//! Shared bookkeeping for the box-constrained minimizers.

use serde::{Deserialize, Serialize};

use crate::model::ParamVector;

/// Why a minimizer stopped early or could not make progress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimFlag {
    BudgetExhausted,
    NonFiniteStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    /// Best-so-far objective after each iteration; entry 0 is `f(x0)`.
    pub trace: Vec<f64>,
    pub evaluations: usize,
    pub iterations: usize,
    pub flag: Option<OptimFlag>,
}

/// Stopping rules shared by both minimizers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub max_iterations: usize,
    pub max_evaluations: usize,
    pub tolerance: f64,
}

/// Box bounds and the clamped starting point from a parameter vector.
pub(crate) fn unpack(x0: &ParamVector) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (lo, hi) = (x0.lower(), x0.upper());
    let x = x0
        .values()
        .iter()
        .zip(lo.iter().zip(&hi))
        .map(|(v, (l, h))| v.clamp(*l, *h))
        .collect();
    (x, lo, hi)
}

/// NaN is treated as +infinity so comparisons stay total.
pub(crate) fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Counts evaluations, enforces the budget and remembers the best point.
pub(crate) struct Counted<F> {
    f: F,
    pub evaluations: usize,
    budget: usize,
    pub best_x: Vec<f64>,
    pub best_f: f64,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    pub fn new(f: F, budget: usize, x0: &[f64]) -> Self {
        Counted {
            f,
            evaluations: 0,
            budget,
            best_x: x0.to_vec(),
            best_f: f64::INFINITY,
        }
    }

    pub fn exhausted(&self) -> bool {
        self.evaluations >= self.budget
    }

    /// `+inf` once the budget is spent.
    pub fn eval(&mut self, x: &[f64]) -> f64 {
        if self.exhausted() {
            return f64::INFINITY;
        }
        self.evaluations += 1;
        let v = sanitize((self.f)(x));
        if v < self.best_f {
            self.best_f = v;
            self.best_x.copy_from_slice(x);
        }
        v
    }

    pub fn finish(self, trace: Vec<f64>, iterations: usize, flag: Option<OptimFlag>) -> OptimResult {
        let flag = flag.or(if self.exhausted() {
            Some(OptimFlag::BudgetExhausted)
        } else {
            None
        });
        OptimResult {
            x: self.best_x,
            f: self.best_f,
            trace,
            evaluations: self.evaluations,
            iterations,
            flag,
        }
    }
}

/// Projects `x` into `[lo, hi]` in place.
pub(crate) fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}
