//! End-to-end prediction: perceive the conditioning frames, roll the fitted
//! program forward, render the future, and score it.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{rollout, ClampEvent, DynamicsError, DynamicsProgram};
use crate::env::EnvKind;
use crate::error::CoreError;
use crate::metrics::{ball_positions, mae, psnr, velocity_error, MetricError, MetricRow};
use crate::model::{Frame, State, Trajectory, Video};
use crate::perceive::{perceive_frame, perceive_frames, PerceiveError};
use crate::render::{render_state, RenderConfig, RenderError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Perceive(#[from] PerceiveError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("video has no ground truth")]
    NoGroundTruth,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    /// Perceived states for the seen frames followed by predicted states.
    pub states: Trajectory,
    /// Seen frames followed by rendered predictions, `T + 1` in total.
    pub frames: Vec<Frame>,
    pub last_seen: usize,
    pub clamped: Vec<ClampEvent>,
}

impl Prediction {
    pub fn predicted_frames(&self) -> &[Frame] {
        &self.frames[self.last_seen + 1..]
    }
}

/// Predicts frames `F+1..=T` from the first `F+1` frames of `video`.
pub fn predict(
    prog: &DynamicsProgram,
    video: &Video,
    render: &RenderConfig,
) -> Result<Prediction, PipelineError> {
    let seen = &video.frames()[..=video.last_seen()];
    let perceived = perceive_frames(seen, render, prog.schema())?;
    predict_from(prog, &perceived, seen, video.total_frames() - video.last_seen(), render)
}

/// Rolls out `steps` transitions from the last perceived state and renders
/// them after the given seen frames.
pub fn predict_from(
    prog: &DynamicsProgram,
    perceived: &Trajectory,
    seen: &[Frame],
    steps: usize,
    render: &RenderConfig,
) -> Result<Prediction, PipelineError> {
    let last_seen = perceived.len() - 1;
    let r = rollout(prog, &perceived.states()[last_seen], steps)?;
    let future = &r.trajectory.states()[1..];
    let mut frames = seen.to_vec();
    for s in future {
        frames.push(render_state(s, render)?);
    }
    let states: Vec<State> = perceived.states().iter().chain(future).cloned().collect();
    Ok(Prediction {
        states: Trajectory::new(states)?,
        frames,
        last_seen,
        clamped: r.clamped,
    })
}

/// Per-video scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoScores {
    /// Velocity error between centroids perceived in the predicted and the
    /// true frames.
    pub velocity_error: Option<f64>,
    /// Velocity error from the predicted states directly.
    pub velocity_error_state: Option<f64>,
    pub mae: f64,
    pub psnr: f64,
}

pub fn score(video: &Video, pred: &Prediction, render: &RenderConfig) -> Result<VideoScores, PipelineError> {
    let truth = video.ground_truth().ok_or(PipelineError::NoGroundTruth)?;
    let f = video.last_seen();
    let actual = &video.frames()[f + 1..];
    let (mut vel, mut vel_state) = (None, None);
    if render.env.is_phyworld() {
        vel_state = Some(velocity_error(&ball_positions(&pred.states), &ball_positions(truth), f)?);
        vel = Some(velocity_error(
            &perceived_positions(&pred.frames, render)?,
            &perceived_positions(video.frames(), render)?,
            f,
        )?);
    }
    Ok(VideoScores {
        velocity_error: vel,
        velocity_error_state: vel_state,
        mae: mae(pred.predicted_frames(), actual)?,
        psnr: psnr(pred.predicted_frames(), actual)?,
    })
}

/// Ball centroid x per ball and frame, `[ball][frame]`.
pub fn perceived_positions(frames: &[Frame], render: &RenderConfig) -> Result<Vec<Vec<f64>>, PipelineError> {
    let per_frame = frames
        .par_iter()
        .enumerate()
        .map(|(t, f)| {
            perceive_frame(f, render).map_err(|e| PerceiveError::AtFrame {
                frame: t,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((0..render.env.ball_count())
        .map(|k| per_frame.iter().map(|obs| obs[k].centroid.0).collect())
        .collect())
}

/// Predicts and scores every video in parallel, in input order.
pub fn evaluate(
    prog: &DynamicsProgram,
    videos: &[Video],
    render: &RenderConfig,
) -> Result<Vec<VideoScores>, PipelineError> {
    videos
        .par_iter()
        .map(|v| {
            let p = predict(prog, v, render)?;
            score(v, &p, render)
        })
        .collect()
}

/// Averages per-video scores into report rows. Velocity rows appear only for
/// ball environments and only when some video has that score.
pub fn summarize(env: EnvKind, split: &str, scores: &[VideoScores]) -> Vec<MetricRow> {
    let n = scores.len();
    let mean = |xs: Vec<f64>| xs.iter().sum::<f64>() / xs.len() as f64;
    let row = |metric: &str, value: f64| MetricRow {
        env: env.to_string(),
        split: split.to_string(),
        metric: metric.to_string(),
        value,
        n_videos: n,
    };
    let mut rows = Vec::new();
    if n == 0 {
        return rows;
    }
    if env.is_phyworld() {
        let full: Vec<f64> = scores.iter().filter_map(|s| s.velocity_error).collect();
        let state: Vec<f64> = scores.iter().filter_map(|s| s.velocity_error_state).collect();
        if !full.is_empty() {
            rows.push(row("velocity_error", mean(full)));
        }
        if !state.is_empty() {
            rows.push(row("velocity_error_state", mean(state)));
        }
    }
    rows.push(row("mae", mean(scores.iter().map(|s| s.mae).collect())));
    rows.push(row("psnr", mean(scores.iter().map(|s| s.psnr).collect())));
    rows
}
