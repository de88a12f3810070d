//! Experiment configuration files.
//!
//! ```json
//! {
//!   "env": { "kind": "phyworld-uniform", "seed": 1000 },
//!   "videos": 10,
//!   "fit": { "optimizer": "powell", "restarts": 5 },
//!   "proposer": { "mode": "registry" },
//!   "thresholds": { "velocity_error": { "max": 0.02 } }
//! }
//! ```
//!
//! Every `env` key other than `kind` overrides the environment's defaults.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use progvid_core::envsim::CartPoleConstants;
use progvid_core::fit::FitConfig;
use progvid_core::proposer::{RemoteConfig, DEFAULT_MAX_CANDIDATES};
use progvid_core::{EnvConfig, EnvKind};

use crate::error::{CliError, CliResult};

pub const METRICS: [&str; 4] = ["velocity_error", "velocity_error_state", "mae", "psnr"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub kind: EnvKind,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub total_frames: Option<usize>,
    pub conditioning_frames: Option<usize>,
    pub seed: Option<u64>,
    pub velocity_range: Option<[f64; 2]>,
    pub radius_range: Option<[f64; 2]>,
    pub angle_range: Option<[f64; 2]>,
    pub angular_velocity_range: Option<[f64; 2]>,
    pub cartpole: Option<CartPoleConstants>,
}

impl EnvSection {
    pub fn resolve(&self) -> EnvConfig {
        let d = EnvConfig::default_for(self.kind);
        EnvConfig {
            kind: self.kind,
            width: self.width.unwrap_or(d.width),
            height: self.height.unwrap_or(d.height),
            total_frames: self.total_frames.unwrap_or(d.total_frames),
            conditioning_frames: self.conditioning_frames.unwrap_or(d.conditioning_frames),
            seed: self.seed.unwrap_or(d.seed),
            velocity_range: self.velocity_range.unwrap_or(d.velocity_range),
            radius_range: self.radius_range.unwrap_or(d.radius_range),
            angle_range: self.angle_range.unwrap_or(d.angle_range),
            angular_velocity_range: self.angular_velocity_range.unwrap_or(d.angular_velocity_range),
            cartpole: self.cartpole.unwrap_or(d.cartpole),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposerMode {
    #[default]
    Registry,
    Remote,
}

impl ProposerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ProposerMode::Registry => "registry",
            ProposerMode::Remote => "remote",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposerConfig {
    pub mode: ProposerMode,
    pub remote: RemoteConfig,
    pub max_candidates: usize,
}

impl Default for ProposerConfig {
    fn default() -> Self {
        ProposerConfig {
            mode: ProposerMode::Registry,
            remote: RemoteConfig::default(),
            max_candidates: DEFAULT_MAX_CANDIDATES,
        }
    }
}

/// Acceptable range for one metric; either side may be open.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bound {
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl Bound {
    pub fn admits(&self, v: f64) -> bool {
        self.min.is_none_or(|m| v >= m) && self.max.is_none_or(|m| v <= m)
    }
}

fn default_videos() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSection,
    #[serde(default = "default_videos")]
    pub videos: usize,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub proposer: ProposerConfig,
    #[serde(default)]
    pub thresholds: BTreeMap<String, Bound>,
}

impl ExperimentConfig {
    pub fn for_env(kind: EnvKind) -> Self {
        ExperimentConfig {
            env: EnvSection {
                kind,
                width: None,
                height: None,
                total_frames: None,
                conditioning_frames: None,
                seed: None,
                velocity_range: None,
                radius_range: None,
                angle_range: None,
                angular_velocity_range: None,
                cartpole: None,
            },
            videos: default_videos(),
            fit: FitConfig::default(),
            proposer: ProposerConfig::default(),
            thresholds: BTreeMap::new(),
        }
    }

    /// Parses and validates a config; errors carry the line and column.
    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
        cfg.check().map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn check(&self) -> Result<(), String> {
        self.env.resolve().check().map_err(|e| format!("env: {e}"))?;
        self.fit.check().map_err(|e| format!("fit: {e}"))?;
        if self.videos == 0 {
            return Err("videos must be at least 1".into());
        }
        if self.proposer.max_candidates == 0 {
            return Err("proposer.max_candidates must be at least 1".into());
        }
        if self.proposer.mode == ProposerMode::Remote && self.proposer.remote.endpoint.is_empty() {
            return Err("proposer.remote.endpoint is required in remote mode".into());
        }
        if let Some(name) = self.thresholds.keys().find(|k| !METRICS.contains(&k.as_str())) {
            return Err(format!("unknown threshold metric `{name}`, expected one of {METRICS:?}"));
        }
        Ok(())
    }
}
