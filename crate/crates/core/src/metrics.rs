//! Velocity error for ball clips and frame-quality scores for rendered
//! predictions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Frame, Trajectory};

/// PSNR reported for identical inputs.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

fn mismatch<T>(msg: String) -> Result<T, MetricError> {
    Err(MetricError::ShapeMismatch(msg))
}

/// Mean absolute difference between predicted and true per-frame velocities
/// `x_t - x_{t-1}` over balls and over `t = last_seen + 1 ..`. Positions are
/// indexed `[ball][frame]` and must cover frames `0..=T` on both sides.
pub fn velocity_error(
    predicted: &[Vec<f64>],
    truth: &[Vec<f64>],
    last_seen: usize,
) -> Result<f64, MetricError> {
    if predicted.is_empty() || predicted.len() != truth.len() {
        return mismatch(format!("{} predicted balls vs {} true", predicted.len(), truth.len()));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, q) in predicted.iter().zip(truth) {
        if p.len() != q.len() || p.len() < last_seen + 2 {
            return mismatch(format!(
                "{} predicted frames vs {} true after conditioning frame {last_seen}",
                p.len(),
                q.len()
            ));
        }
        for t in last_seen + 1..p.len() {
            sum += ((p[t] - p[t - 1]) - (q[t] - q[t - 1])).abs();
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// Horizontal ball positions `[ball][frame]` of a ball trajectory.
pub fn ball_positions(traj: &Trajectory) -> Vec<Vec<f64>> {
    (1..)
        .map_while(|k| traj.series(&format!("x{k}")).ok())
        .collect()
}

fn check_frames(a: &[Frame], b: &[Frame]) -> Result<(), MetricError> {
    if a.len() != b.len() || a.is_empty() {
        return mismatch(format!("{} frames vs {}", a.len(), b.len()));
    }
    for (t, (x, y)) in a.iter().zip(b).enumerate() {
        if !x.same_dims(y) {
            return mismatch(format!(
                "frame {t}: {}x{} vs {}x{}",
                x.width(),
                x.height(),
                y.width(),
                y.height()
            ));
        }
    }
    Ok(())
}

/// Sums `g(|a - b|)` over every channel, with pixels scaled to `[0, 1]`.
fn accumulate(a: &[Frame], b: &[Frame], g: impl Fn(f64) -> f64) -> Result<f64, MetricError> {
    check_frames(a, b)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.pixels().iter().zip(y.pixels()) {
            total += g((*p as f64 - *q as f64).abs() / 255.0);
        }
        count += x.pixels().len();
    }
    Ok(total / count as f64)
}

pub fn mae(a: &[Frame], b: &[Frame]) -> Result<f64, MetricError> {
    accumulate(a, b, |d| d)
}

pub fn mse(a: &[Frame], b: &[Frame]) -> Result<f64, MetricError> {
    accumulate(a, b, |d| d * d)
}

/// `10 log10(1 / MSE)` with unit peak, capped at [`PSNR_CAP`].
pub fn psnr(a: &[Frame], b: &[Frame]) -> Result<f64, MetricError> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// One line of a metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub env: String,
    pub split: String,
    pub metric: String,
    pub value: f64,
    pub n_videos: usize,
}
