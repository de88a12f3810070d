//! On-disk layout of datasets, predictions and reports.
//!
//! A dataset directory holds `manifest.json` and one `video_<k>` directory
//! per clip with `frame_<t>.ppm` files and `truth.json`. Predictions hold the
//! predicted frames plus `states.json`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use progvid_core::dynamics::ClampEvent;
use progvid_core::fit::FitReport;
use progvid_core::{
    Dataset, DynamicsProgram, EnvConfig, EnvKind, Frame, ParamVector, State, StateSchema, Trajectory, Video,
    VideoMeta,
};

use crate::error::{CliError, CliResult};
use crate::ppm;

pub const MANIFEST: &str = "manifest.json";
pub const TRUTH: &str = "truth.json";
pub const STATES: &str = "states.json";
pub const TRACE: &str = "trace.json";

pub fn frame_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("frame_{t}.ppm"))
}

pub fn video_dir_name(k: usize) -> String {
    format!("video_{k}")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::data)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Reads JSON, reporting parse errors with their line and column.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub dir: String,
    pub seed: u64,
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub env_config: EnvConfig,
    pub videos: Vec<ManifestEntry>,
}

/// Ground truth of one generated clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub env: EnvKind,
    pub env_config_id: String,
    pub total_frames: usize,
    pub conditioning_frames: usize,
    pub schema: StateSchema,
    pub states: Vec<Vec<f64>>,
}

/// Perceived and predicted states written next to predicted frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatesFile {
    pub env: EnvKind,
    pub total_frames: usize,
    pub last_seen: usize,
    pub schema: StateSchema,
    pub states: Vec<Vec<f64>>,
    #[serde(default)]
    pub clamped: Vec<ClampEvent>,
}

fn rows(traj: &Trajectory) -> Vec<Vec<f64>> {
    traj.states().iter().map(|s| s.values().to_vec()).collect()
}

/// Rebuilds a trajectory, insisting the stored schema is the environment's.
pub fn trajectory_from_rows(env: EnvKind, schema: &StateSchema, rows: &[Vec<f64>]) -> Result<Trajectory, String> {
    let expected = env.schema();
    if *expected != *schema {
        return Err(format!("stored schema does not match the {env} schema"));
    }
    let states = rows
        .iter()
        .enumerate()
        .map(|(t, r)| {
            if r.len() != expected.len() {
                return Err(format!("state {t} has {} values, expected {}", r.len(), expected.len()));
            }
            State::new(expected.clone(), r.clone()).map_err(|e| format!("state {t}: {e}"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Trajectory::new(states).map_err(|e| e.to_string())
}

impl TruthFile {
    pub fn new(env: EnvKind, video: &Video, truth: &Trajectory) -> Self {
        TruthFile {
            env,
            env_config_id: video.env_config_id().to_string(),
            total_frames: video.total_frames(),
            conditioning_frames: video.conditioning(),
            schema: (**truth.schema()).clone(),
            states: rows(truth),
        }
    }

    pub fn trajectory(&self) -> Result<Trajectory, String> {
        trajectory_from_rows(self.env, &self.schema, &self.states)
    }
}

impl StatesFile {
    pub fn new(env: EnvKind, states: &Trajectory, total_frames: usize, last_seen: usize, clamped: Vec<ClampEvent>) -> Self {
        StatesFile {
            env,
            total_frames,
            last_seen,
            schema: (**states.schema()).clone(),
            states: rows(states),
            clamped,
        }
    }

    pub fn trajectory(&self) -> Result<Trajectory, String> {
        trajectory_from_rows(self.env, &self.schema, &self.states)
    }

    /// Loads either a `states.json` or a `truth.json`, taking the last
    /// conditioning frame from whichever field is present.
    pub fn load_any(path: &Path) -> CliResult<StatesFile> {
        let value: serde_json::Value = read_json(path)?;
        let parsed = if value.get("conditioning_frames").is_some() {
            serde_json::from_value::<TruthFile>(value).map(|t| StatesFile {
                env: t.env,
                total_frames: t.total_frames,
                last_seen: t.conditioning_frames.saturating_sub(1),
                schema: t.schema,
                states: t.states,
                clamped: Vec::new(),
            })
        } else {
            serde_json::from_value::<StatesFile>(value)
        };
        let file = parsed.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if file.states.len() != file.total_frames + 1 || file.last_seen >= file.total_frames {
            return Err(CliError::Data(format!(
                "{}: {} states for T = {} with last seen frame {}",
                path.display(),
                file.states.len(),
                file.total_frames,
                file.last_seen
            )));
        }
        Ok(file)
    }
}

pub fn write_png(path: &Path, frame: &Frame) -> CliResult<()> {
    let img = image::RgbImage::from_raw(frame.width(), frame.height(), frame.pixels().to_vec())
        .ok_or_else(|| CliError::data("frame buffer does not match its dimensions"))?;
    img.save(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Writes `frames` as `frame_<first + i>.ppm` (and `.png` when asked).
pub fn write_frames(dir: &Path, first: usize, frames: &[Frame], png: bool) -> CliResult<()> {
    create_dir(dir)?;
    for (i, f) in frames.iter().enumerate() {
        let path = frame_path(dir, first + i);
        ppm::write(&path, f)?;
        if png {
            write_png(&path.with_extension("png"), f)?;
        }
    }
    Ok(())
}

/// Reads consecutive frames `frame_<first>`, `frame_<first+1>`, ... until one
/// is missing.
pub fn read_frames_from(dir: &Path, first: usize) -> CliResult<Vec<Frame>> {
    let mut frames = Vec::new();
    while frame_path(dir, first + frames.len()).is_file() {
        frames.push(ppm::read(&frame_path(dir, first + frames.len()))?);
    }
    Ok(frames)
}

pub fn write_video(dir: &Path, env: EnvKind, video: &Video, png: bool) -> CliResult<()> {
    write_frames(dir, 0, video.frames(), png)?;
    if let Some(truth) = video.ground_truth() {
        write_json(&dir.join(TRUTH), &TruthFile::new(env, video, truth))?;
    }
    Ok(())
}

/// Reads a video directory with its `truth.json`.
pub fn read_video(dir: &Path) -> CliResult<(EnvKind, Video)> {
    let truth_path = dir.join(TRUTH);
    if !truth_path.is_file() {
        return Err(CliError::Data(format!("{}: missing {TRUTH}", dir.display())));
    }
    let truth: TruthFile = read_json(&truth_path)?;
    let traj = truth
        .trajectory()
        .map_err(|e| CliError::Data(format!("{}: {e}", truth_path.display())))?;
    let frames = read_frames_from(dir, 0)?;
    let video = Video::new(
        frames,
        truth.total_frames,
        truth.conditioning_frames,
        truth.env_config_id.clone(),
        Some(traj),
    )
    .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    Ok((truth.env, video))
}

pub fn is_dataset(dir: &Path) -> bool {
    dir.join(MANIFEST).is_file()
}

pub fn write_dataset(dir: &Path, config: &EnvConfig, dataset: &Dataset, png: bool) -> CliResult<Manifest> {
    create_dir(dir)?;
    let videos = dataset
        .manifest()
        .iter()
        .enumerate()
        .map(|(k, m)| ManifestEntry {
            dir: video_dir_name(k),
            seed: m.seed,
            params: m.params.clone(),
        })
        .collect::<Vec<_>>();
    dataset
        .videos()
        .par_iter()
        .zip(&videos)
        .try_for_each(|(v, e)| write_video(&dir.join(&e.dir), config.kind, v, png))?;
    let manifest = Manifest {
        env_config: config.clone(),
        videos,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> CliResult<Manifest> {
    if !is_dataset(dir) {
        return Err(CliError::Data(format!(
            "dataset not found: {} has no {MANIFEST}",
            dir.display()
        )));
    }
    let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
    if manifest.videos.is_empty() {
        return Err(CliError::Data(format!("dataset not found: {} lists no videos", dir.display())));
    }
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> CliResult<(EnvConfig, Dataset)> {
    let manifest = read_manifest(dir)?;
    let cfg = manifest.env_config;
    let videos = manifest
        .videos
        .par_iter()
        .map(|e| {
            let (env, video) = read_video(&dir.join(&e.dir))?;
            if env != cfg.kind {
                return Err(CliError::Data(format!("{}: {env} video in a {} dataset", e.dir, cfg.kind)));
            }
            Ok(video)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let metas = manifest
        .videos
        .iter()
        .map(|e| VideoMeta {
            seed: e.seed,
            params: e.params.clone(),
        })
        .collect();
    let dataset = Dataset::new(videos, metas).map_err(CliError::data)?;
    Ok((cfg, dataset))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposerSummary {
    pub mode: String,
    pub candidates: Vec<String>,
    pub used_fallback: bool,
    pub diagnostics: Vec<String>,
}

/// Everything needed to run a trained model on new clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub env: EnvKind,
    pub env_config: EnvConfig,
    pub program_id: String,
    pub program_source: String,
    pub params: ParamVector,
    pub fit: FitReport,
    pub proposer: ProposerSummary,
}

impl Report {
    pub fn load(path: &Path) -> CliResult<Report> {
        if !path.is_file() {
            return Err(CliError::Data(format!("report not found: {}", path.display())));
        }
        read_json(path)
    }

    pub fn program(&self) -> CliResult<DynamicsProgram> {
        self.params
            .check()
            .map_err(|e| CliError::Data(format!("report parameters: {e}")))?;
        let schema: Arc<StateSchema> = self.env.schema();
        DynamicsProgram::from_source(&self.program_id, schema, self.params.clone(), &self.program_source)
            .map_err(|e| CliError::Data(format!("report program `{}`: {e}", self.program_id)))
    }
}
