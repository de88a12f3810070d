//! Powell's conjugate-direction method with bounded golden-section line
//! searches.

use super::optim::{unpack, Counted, OptimFlag, OptimResult, StopRule};
use crate::model::ParamVector;

const GOLDEN: f64 = 1.618_033_988_749_895;
const INV_GOLDEN: f64 = 0.618_033_988_749_895;
const LINE_TOLERANCE: f64 = 1e-8;
const INITIAL_STEP: f64 = 0.05;

/// Feasible step range `[a, b]` along `d` from `x` inside the box.
fn feasible_segment(x: &[f64], d: &[f64], lo: &[f64], hi: &[f64]) -> (f64, f64) {
    let (mut a, mut b) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..x.len() {
        if d[i] > 0.0 {
            a = a.max((lo[i] - x[i]) / d[i]);
            b = b.min((hi[i] - x[i]) / d[i]);
        } else if d[i] < 0.0 {
            a = a.max((hi[i] - x[i]) / d[i]);
            b = b.min((lo[i] - x[i]) / d[i]);
        }
    }
    (a.min(0.0), b.max(0.0))
}

/// Minimizes `phi(t)` over `[a, b]` (which contains 0, where `phi = f0`).
/// Returns the best step found and its value; never worse than `(0, f0)`.
fn line_minimize(mut phi: impl FnMut(f64) -> f64, a: f64, b: f64, f0: f64) -> (f64, f64) {
    let width = b - a;
    if !(width > LINE_TOLERANCE) {
        return (0.0, f0);
    }
    let mut best = (0.0, f0);
    let mut eval = |t: f64, best: &mut (f64, f64)| {
        let v = phi(t);
        if v < best.1 {
            *best = (t, v);
        }
        v
    };

    // pick a descent side
    let step = INITIAL_STEP * width;
    let mut bracket = None;
    for sign in [1.0, -1.0] {
        let t1 = (sign * step).clamp(a, b);
        if t1 == 0.0 {
            continue;
        }
        let f1 = eval(t1, &mut best);
        if f1 < f0 {
            // expand until the value rises or the boundary is reached
            let limit = if sign > 0.0 { b } else { a };
            let (mut prev, mut cur, mut fcur) = (0.0, t1, f1);
            loop {
                if cur == limit {
                    bracket = Some((prev, cur));
                    break;
                }
                let next = (cur + GOLDEN * (cur - prev)).clamp(a, b);
                let fnext = eval(next, &mut best);
                if fnext >= fcur {
                    bracket = Some((prev, next));
                    break;
                }
                (prev, cur, fcur) = (cur, next, fnext);
            }
            break;
        }
    }
    let (lo, hi) = match bracket {
        Some((p, q)) => (p.min(q), p.max(q)),
        None => ((-step).max(a), step.min(b)),
    };

    // golden-section search on [lo, hi]
    let (mut lo, mut hi) = (lo, hi);
    let mut c = hi - INV_GOLDEN * (hi - lo);
    let mut d = lo + INV_GOLDEN * (hi - lo);
    let mut fc = eval(c, &mut best);
    let mut fd = eval(d, &mut best);
    while hi - lo > LINE_TOLERANCE {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_GOLDEN * (hi - lo);
            fc = eval(c, &mut best);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_GOLDEN * (hi - lo);
            fd = eval(d, &mut best);
        }
    }
    best
}

fn coordinate_basis(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Minimizes `f` inside the box of `x0`, starting from its values.
pub fn powell_minimize(
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

    let mut dirs = coordinate_basis(n);
    let mut on_basis = true;
    let mut iterations = 0;
    let mut probe = vec![0.0; n];
    let mut search = |obj: &mut Counted<_>, x: &mut Vec<f64>, fx: f64, d: &[f64]| -> f64 {
        let (a, b) = feasible_segment(x, d, &lo, &hi);
        let (t, ft) = line_minimize(
            |t| {
                for i in 0..n {
                    probe[i] = (x[i] + t * d[i]).clamp(lo[i], hi[i]);
                }
                obj.eval(&probe)
            },
            a,
            b,
            fx,
        );
        if t != 0.0 && ft < fx {
            for i in 0..n {
                x[i] = (x[i] + t * d[i]).clamp(lo[i], hi[i]);
            }
            ft
        } else {
            fx
        }
    };

    while iterations < stop.max_iterations && !obj.exhausted() {
        iterations += 1;
        let (start, f_start) = (x.clone(), fx);
        let (mut biggest, mut biggest_at) = (0.0, 0);
        for (i, d) in dirs.iter().enumerate() {
            let before = fx;
            fx = search(&mut obj, &mut x, fx, d);
            if before - fx > biggest {
                biggest = before - fx;
                biggest_at = i;
            }
        }

        let displacement: Vec<f64> = x.iter().zip(&start).map(|(a, b)| a - b).collect();
        let norm = displacement.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            let d: Vec<f64> = displacement.iter().map(|v| v / norm).collect();
            fx = search(&mut obj, &mut x, fx, &d);
            dirs.remove(biggest_at);
            dirs.push(d);
            on_basis = false;
        }
        trace.push(obj.best_f.min(fx));

        if f_start - fx < stop.tolerance {
            // the direction set may have collapsed; retry once from the basis
            if on_basis {
                break;
            }
            dirs = coordinate_basis(n);
            on_basis = true;
        }
    }
    obj.finish(trace, iterations, None)
}
