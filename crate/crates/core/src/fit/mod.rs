//! Two-stage training: pick a program hypothesis, then fit its continuous
//! parameters against perceived training clips.
//!
//! Optimizers run in the unit cube: each parameter is mapped affinely onto
//! its bounds, so step sizes and tolerances mean the same thing for every
//! parameter regardless of its physical scale.

mod lbfgs;
mod loss;
mod optim;
mod powell;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DynamicsError, DynamicsProgram};
use crate::error::CoreError;
use crate::model::{Dataset, Param, ParamVector};
use crate::perceive::{perceive_frames, PerceiveError};
use crate::render::RenderConfig;

pub use lbfgs::{fd_gradient, lbfgs_fd_minimize};
pub use loss::{frame_sq_error, pixel_loss, surrogate_loss, Episode};
pub use optim::{OptimFlag, OptimResult, StopRule};
pub use powell::powell_minimize;

/// Loss values closer than this are treated as tied during selection.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("no training clips")]
    EmptyDataset,
    #[error("no candidate programs")]
    NoCandidates,
    #[error("clip schema `{found}` does not match program schema `{expected}`")]
    SchemaMismatch { expected: String, found: String },
    #[error("clip of {len} states cannot be rolled out past conditioning state {last_seen}")]
    TooShort { len: usize, last_seen: usize },
    #[error("clip {0} has no frames for the pixel loss")]
    MissingFrames(usize),
    #[error("every restart of `{0}` ended with a non-finite loss")]
    AllRestartsFailed(String),
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Perceive(#[from] PerceiveError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Core(#[from] CoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Surrogate,
    Pixel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Powell,
    LbfgsFd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub max_iterations: usize,
    pub max_evaluations: usize,
    pub tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Isotropic pixel noise scale; divides the pixel loss by `sigma^2`.
    pub sigma: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            loss: LossKind::Surrogate,
            optimizer: OptimizerKind::Powell,
            max_iterations: 200,
            max_evaluations: 20_000,
            tolerance: 1e-10,
            restarts: 5,
            seed: 0,
            sigma: 1.0,
        }
    }
}

impl FitConfig {
    pub fn check(&self) -> Result<(), FitError> {
        let bad = |m: &str| Err(FitError::InvalidConfig(m.into()));
        if self.max_evaluations < self.max_iterations {
            return bad("evaluation budget is below the iteration cap");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        if self.restarts == 0 {
            return bad("at least one restart is required");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive and finite");
        }
        Ok(())
    }

    pub fn stop_rule(&self) -> StopRule {
        StopRule {
            max_iterations: self.max_iterations,
            max_evaluations: self.max_evaluations,
            tolerance: self.tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub start: Vec<f64>,
    pub params: Vec<f64>,
    pub loss: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub flag: Option<OptimFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub program_id: String,
    pub loss: f64,
    pub n_params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub program_id: String,
    pub params: ParamVector,
    pub loss: f64,
    /// Best-so-far loss per iteration of the winning restart.
    pub trace: Vec<f64>,
    /// Objective evaluations summed over restarts.
    pub evaluations: usize,
    /// Clamped attribute updates when replaying the fitted program.
    pub clamp_count: usize,
    /// Clips whose replay at the fitted parameters failed to evaluate.
    pub eval_error_count: usize,
    pub restarts: Vec<RestartSummary>,
    /// Every candidate considered in stage 1 (one entry after stage 2 only).
    pub candidates: Vec<CandidateSummary>,
}

/// Perceives every video of a dataset into a training clip.
pub fn episodes_from_dataset(
    dataset: &Dataset,
    render: &RenderConfig,
    keep_frames: bool,
) -> Result<Vec<Episode>, FitError> {
    let schema = render.env.schema();
    dataset
        .videos()
        .iter()
        .map(|v| {
            Ok(Episode {
                trajectory: perceive_frames(v.frames(), render, &schema)?,
                last_seen: v.last_seen(),
                frames: if keep_frames { v.frames().to_vec() } else { Vec::new() },
            })
        })
        .collect()
}

fn to_unit(p: &Param) -> f64 {
    let w = p.upper - p.lower;
    if w > 0.0 {
        (p.value - p.lower) / w
    } else {
        0.0
    }
}

fn from_unit(params: &ParamVector, u: &[f64]) -> Vec<f64> {
    params
        .entries()
        .iter()
        .zip(u)
        .map(|(p, ui)| (p.lower + ui * (p.upper - p.lower)).clamp(p.lower, p.upper))
        .collect()
}

fn unit_start(params: &ParamVector, u: Vec<f64>) -> ParamVector {
    let entries = params
        .entries()
        .iter()
        .zip(u)
        .map(|(p, value)| Param {
            name: p.name.clone(),
            value,
            lower: 0.0,
            upper: 1.0,
        })
        .collect();
    ParamVector::new(entries).expect("unit box is valid")
}

/// Objective over raw parameter values.
fn objective<'a>(
    prog: &'a DynamicsProgram,
    episodes: &'a [Episode],
    render: Option<&'a RenderConfig>,
    config: &'a FitConfig,
) -> impl Fn(&[f64]) -> f64 + Sync + 'a {
    move |theta: &[f64]| match (config.loss, render) {
        (LossKind::Pixel, Some(r)) => loss::pixel_raw(prog, theta, episodes, r, config.sigma),
        _ => loss::surrogate_raw(prog, theta, episodes),
    }
}

fn replay_counts(prog: &DynamicsProgram, theta: &[f64], episodes: &[Episode]) -> (usize, usize) {
    let (mut clamps, mut errors) = (0, 0);
    for ep in episodes {
        let start = ep.trajectory.states()[ep.last_seen].values();
        let n = ep.trajectory.len() - 1 - ep.last_seen;
        let r = prog.simulate(theta, start, n, |_, _, c| {
            clamps += c.iter().filter(|x| **x).count();
        });
        errors += r.is_err() as usize;
    }
    (clamps, errors)
}

/// Stage 2: fits the program's parameters, shared across all clips.
///
/// Restart 0 starts from the program's current values; the others start
/// from seeded uniform draws inside the bounds. `render` is required for the
/// pixel loss.
pub fn fit_params(
    prog: &DynamicsProgram,
    episodes: &[Episode],
    render: Option<&RenderConfig>,
    config: &FitConfig,
) -> Result<FitReport, FitError> {
    config.check()?;
    loss::check_episodes(prog, episodes)?;
    if config.loss == LossKind::Pixel {
        if render.is_none() {
            return Err(FitError::InvalidConfig("the pixel loss needs a render config".into()));
        }
        loss::check_frames(episodes)?;
    }
    let params = prog.params();
    let f = objective(prog, episodes, render, config);

    let report = |restarts: Vec<RestartSummary>, best: usize, trace: Vec<f64>| {
        let r = &restarts[best];
        let (clamp_count, eval_error_count) = replay_counts(prog, &r.params, episodes);
        Ok(FitReport {
            program_id: prog.id().to_string(),
            params: params.with_values(&r.params)?,
            loss: r.loss,
            trace,
            evaluations: restarts.iter().map(|r| r.evaluations).sum(),
            clamp_count,
            eval_error_count,
            candidates: vec![CandidateSummary {
                program_id: prog.id().to_string(),
                loss: r.loss,
                n_params: params.len(),
            }],
            restarts,
        })
    };

    if params.is_empty() {
        let loss = f(&[]);
        if !loss.is_finite() {
            return Err(FitError::AllRestartsFailed(prog.id().to_string()));
        }
        let summary = RestartSummary {
            start: vec![],
            params: vec![],
            loss,
            evaluations: 1,
            iterations: 0,
            flag: None,
        };
        return report(vec![summary], 0, vec![loss]);
    }

    let mut rng = SplitMix64::seed_from_u64(config.seed);
    let starts: Vec<Vec<f64>> = (0..config.restarts)
        .map(|k| {
            if k == 0 {
                params.entries().iter().map(to_unit).collect()
            } else {
                (0..params.len()).map(|_| rng.random::<f64>()).collect()
            }
        })
        .collect();

    let stop = config.stop_rule();
    let runs: Vec<(RestartSummary, Vec<f64>)> = starts
        .into_par_iter()
        .map(|u0| {
            let x0 = unit_start(params, u0.clone());
            let unit_f = |u: &[f64]| f(&from_unit(params, u));
            let r = match config.optimizer {
                OptimizerKind::Powell => powell_minimize(unit_f, &x0, &stop),
                OptimizerKind::LbfgsFd => lbfgs_fd_minimize(unit_f, &x0, &stop),
            };
            let summary = RestartSummary {
                start: from_unit(params, &u0),
                params: from_unit(params, &r.x),
                loss: r.f,
                evaluations: r.evaluations,
                iterations: r.iterations,
                flag: r.flag,
            };
            (summary, r.trace)
        })
        .collect();

    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, (s, _))| s.loss.is_finite())
        .min_by(|a, b| a.1 .0.loss.total_cmp(&b.1 .0.loss).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .ok_or_else(|| FitError::AllRestartsFailed(prog.id().to_string()))?;
    let trace = runs[best].1.clone();
    report(runs.into_iter().map(|(s, _)| s).collect(), best, trace)
}

/// Stage 1: fits every candidate and keeps the lowest loss. Losses within
/// [`TIE_TOLERANCE`] prefer fewer parameters, then the smaller id.
pub fn select_program(
    candidates: &[DynamicsProgram],
    episodes: &[Episode],
    render: Option<&RenderConfig>,
    config: &FitConfig,
) -> Result<FitReport, FitError> {
    if candidates.is_empty() {
        return Err(FitError::NoCandidates);
    }
    let results: Vec<Result<FitReport, FitError>> = candidates
        .par_iter()
        .map(|c| fit_params(c, episodes, render, config))
        .collect();

    let mut best: Option<FitReport> = None;
    let mut summaries = Vec::with_capacity(candidates.len());
    let mut first_error = None;
    for (c, r) in candidates.iter().zip(results) {
        match r {
            Ok(rep) => {
                summaries.push(CandidateSummary {
                    program_id: c.id().to_string(),
                    loss: rep.loss,
                    n_params: c.params().len(),
                });
                let better = match &best {
                    None => true,
                    Some(b) => {
                        if rep.loss < b.loss - TIE_TOLERANCE {
                            true
                        } else if (rep.loss - b.loss).abs() <= TIE_TOLERANCE {
                            (rep.params.len(), rep.program_id.as_str()) < (b.params.len(), b.program_id.as_str())
                        } else {
                            false
                        }
                    }
                };
                if better {
                    best = Some(rep);
                }
            }
            Err(FitError::AllRestartsFailed(id)) => {
                summaries.push(CandidateSummary {
                    program_id: id.clone(),
                    loss: f64::INFINITY,
                    n_params: c.params().len(),
                });
                first_error.get_or_insert(FitError::AllRestartsFailed(id));
            }
            Err(e) => return Err(e),
        }
    }
    match best {
        Some(mut rep) => {
            rep.candidates = summaries;
            Ok(rep)
        }
        None => Err(first_error.unwrap_or(FitError::NoCandidates)),
    }
}
