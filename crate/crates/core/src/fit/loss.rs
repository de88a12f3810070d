//! Training objectives: squared state residuals and squared pixel residuals.

use crate::dynamics::DynamicsProgram;
use crate::model::{Frame, State, StateSchema, Trajectory};
use crate::perceive::wrap_angle;
use crate::render::{render_state, RenderConfig};

use super::FitError;

/// One training clip: perceived states, the index of the last conditioning
/// frame, and optionally the frames themselves (needed by the pixel loss).
#[derive(Debug, Clone)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub last_seen: usize,
    pub frames: Vec<Frame>,
}

impl Episode {
    fn check(&self, schema: &StateSchema) -> Result<(), FitError> {
        if **self.trajectory.schema() != *schema {
            return Err(FitError::SchemaMismatch {
                expected: schema.env_id().to_string(),
                found: self.trajectory.schema().env_id().to_string(),
            });
        }
        if self.trajectory.len() < self.last_seen + 2 {
            return Err(FitError::TooShort {
                len: self.trajectory.len(),
                last_seen: self.last_seen,
            });
        }
        Ok(())
    }

    fn horizon(&self) -> usize {
        self.trajectory.len() - 1 - self.last_seen
    }

    fn start(&self) -> &[f64] {
        self.trajectory.states()[self.last_seen].values()
    }
}

pub(crate) fn check_episodes(prog: &DynamicsProgram, episodes: &[Episode]) -> Result<(), FitError> {
    if episodes.is_empty() {
        return Err(FitError::EmptyDataset);
    }
    episodes.iter().try_for_each(|e| e.check(prog.schema()))
}

/// Which attributes have their residuals wrapped.
pub(crate) fn periodic_mask(schema: &StateSchema) -> Vec<bool> {
    schema.attributes().iter().map(|a| a.role.is_periodic()).collect()
}

/// Loss for raw parameter values; evaluation errors give `+inf`. Episodes
/// must already be checked.
pub(crate) fn surrogate_raw(prog: &DynamicsProgram, theta: &[f64], episodes: &[Episode]) -> f64 {
    let periodic = periodic_mask(prog.schema());
    let mut total = 0.0;
    for ep in episodes {
        let states = ep.trajectory.states();
        let r = prog.simulate(theta, ep.start(), ep.horizon(), |step, values, _| {
            let target = states[ep.last_seen + step].values();
            for i in 0..values.len() {
                let d = values[i] - target[i];
                let d = if periodic[i] { wrap_angle(d) } else { d };
                total += d * d;
            }
        });
        if r.is_err() {
            return f64::INFINITY;
        }
    }
    if total.is_nan() {
        f64::INFINITY
    } else {
        total
    }
}

/// Sum over episodes and predicted steps of squared attribute residuals,
/// rolling out from each episode's last conditioning state.
pub fn surrogate_loss(prog: &DynamicsProgram, episodes: &[Episode]) -> Result<f64, FitError> {
    check_episodes(prog, episodes)?;
    Ok(surrogate_raw(prog, &prog.params().values(), episodes))
}

/// Sum of squared channel differences with pixels scaled to `[0, 1]`.
pub fn frame_sq_error(a: &Frame, b: &Frame) -> f64 {
    a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = (x as f64 - y as f64) / 255.0;
            d * d
        })
        .sum()
}

pub(crate) fn pixel_raw(
    prog: &DynamicsProgram,
    theta: &[f64],
    episodes: &[Episode],
    render: &RenderConfig,
    sigma: f64,
) -> f64 {
    let mut total = 0.0;
    for ep in episodes {
        let mut failed = false;
        let r = prog.simulate(theta, ep.start(), ep.horizon(), |step, values, _| {
            let state = State::new_unchecked(prog.schema().clone(), values.to_vec());
            match render_state(&state, render) {
                Ok(frame) => total += frame_sq_error(&frame, &ep.frames[ep.last_seen + step]),
                Err(_) => failed = true,
            }
        });
        if r.is_err() || failed {
            return f64::INFINITY;
        }
    }
    let v = total / (sigma * sigma);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Rolls out, renders, and sums squared pixel differences against the
/// episode frames for every predicted step, divided by `sigma^2`.
pub fn pixel_loss(
    prog: &DynamicsProgram,
    episodes: &[Episode],
    render: &RenderConfig,
    sigma: f64,
) -> Result<f64, FitError> {
    check_episodes(prog, episodes)?;
    check_frames(episodes)?;
    Ok(pixel_raw(prog, &prog.params().values(), episodes, render, sigma))
}

pub(crate) fn check_frames(episodes: &[Episode]) -> Result<(), FitError> {
    match episodes.iter().position(|e| e.frames.len() != e.trajectory.len()) {
        Some(i) => Err(FitError::MissingFrames(i)),
        None => Ok(()),
    }
}
