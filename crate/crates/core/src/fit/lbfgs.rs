//! Limited-memory BFGS with central finite-difference gradients and
//! projected backtracking for box bounds.

use std::collections::VecDeque;

use super::optim::{project, sanitize, unpack, Counted, OptimFlag, OptimResult, StopRule};
use crate::model::ParamVector;

const MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-20;

fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Central-difference gradient, one-sided where a probe would leave the box
/// or returns a non-finite value. A coordinate with no finite probe gets 0.
pub fn fd_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    fx: f64,
    lower: &[f64],
    upper: &[f64],
) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut at = |probe: &mut Vec<f64>, i: usize, v: f64| {
        probe[i] = v;
        let r = sanitize(f(probe));
        probe[i] = x[i];
        r
    };
    (0..x.len())
        .map(|i| {
            let h = fd_step(x[i]);
            let up = (x[i] + h <= upper[i]).then(|| at(&mut probe, i, x[i] + h));
            let down = (x[i] - h >= lower[i]).then(|| at(&mut probe, i, x[i] - h));
            match (up.filter(|v| v.is_finite()), down.filter(|v| v.is_finite())) {
                (Some(u), Some(d)) => (u - d) / (2.0 * h),
                (Some(u), None) if fx.is_finite() => (u - fx) / h,
                (None, Some(d)) if fx.is_finite() => (fx - d) / h,
                _ => 0.0,
            }
        })
        .collect()
}

/// Zeroes gradient components that push against an active bound.
fn projected_gradient(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            if (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0) {
                0.0
            } else {
                g[i]
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-loop recursion: returns `-H g`.
fn direction(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    } else {
        let norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if norm > 0.0 {
            q.iter_mut().for_each(|v| *v /= norm);
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

pub fn lbfgs_fd_minimize(
    f: impl FnMut(&[f64]) -> f64,
    x0: &ParamVector,
    stop: &StopRule,
) -> OptimResult {
    let (mut x, lo, hi) = unpack(x0);
    let n = x.len();
    let mut obj = Counted::new(f, stop.max_evaluations, &x);
    let mut fx = obj.eval(&x);
    let mut trace = vec![fx];
    if !fx.is_finite() {
        return obj.finish(trace, 0, Some(OptimFlag::NonFiniteStart));
    }
    if n == 0 {
        return obj.finish(trace, 0, None);
    }

    let grad = |obj: &mut Counted<_>, x: &[f64], fx: f64| fd_gradient(|p| obj.eval(p), x, fx, &lo, &hi);
    let mut g = grad(&mut obj, &x, fx);
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut trial = vec![0.0; n];

    while iterations < stop.max_iterations && !obj.exhausted() {
        iterations += 1;
        let pg = projected_gradient(&x, &g, &lo, &hi);
        if pg.iter().all(|v| *v == 0.0) {
            break;
        }
        let mut d = direction(&pg, &memory);
        for i in 0..n {
            if (x[i] <= lo[i] && d[i] < 0.0) || (x[i] >= hi[i] && d[i] > 0.0) {
                d[i] = 0.0;
            }
        }
        if dot(&pg, &d) >= 0.0 {
            memory.clear();
            d = direction(&pg, &memory);
        }

        let mut t = 1.0;
        let mut accepted = None;
        while t >= MIN_STEP && !obj.exhausted() {
            for i in 0..n {
                trial[i] = x[i] + t * d[i];
            }
            project(&mut trial, &lo, &hi);
            let ft = obj.eval(&trial);
            let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if ft <= fx + ARMIJO * dot(&g, &moved) && ft.is_finite() {
                accepted = Some((ft, moved));
                break;
            }
            t *= 0.5;
        }
        let Some((ft, s)) = accepted else {
            if memory.is_empty() {
                break;
            }
            memory.clear();
            trace.push(obj.best_f);
            continue;
        };

        let decrease = fx - ft;
        x.copy_from_slice(&trial);
        fx = ft;
        let g_new = grad(&mut obj, &x, fx);
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if memory.len() == MEMORY {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        g = g_new;
        trace.push(obj.best_f);
        if decrease < stop.tolerance {
            break;
        }
    }
    obj.finish(trace, iterations, None)
}
