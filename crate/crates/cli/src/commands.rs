//! The CLI verbs. Each returns the text to print on success.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;

use progvid_core::envsim::sample_dataset;
use progvid_core::fit::{episodes_from_dataset, select_program, FitError, LossKind};
use progvid_core::metrics::{ball_positions, mae, psnr, velocity_error, MetricRow};
use progvid_core::pipeline::{perceived_positions, summarize, VideoScores};
use progvid_core::proposer::{registry_propose, remote_propose, ProposalRequest};
use progvid_core::render::{render_state, RenderConfig};
use progvid_core::{rollout, DynamicsProgram, EnvConfig, EnvKind, Frame, State, Trajectory};

use crate::algorithm::{predict_traced, TraceEvent};
use crate::config::{ExperimentConfig, ProposerMode, METRICS};
use crate::edit::{apply_edits, EditSpec};
use crate::error::{CliError, CliResult};
use crate::store::{
    self, frame_path, read_frames_from, read_manifest, read_video, write_frames, write_json, Report, StatesFile,
    STATES, TRACE,
};

#[derive(Debug, Parser)]
#[command(name = "progvid", version, about = "Program-based video world models: generate, train, predict, evaluate, edit")]
pub struct Cli {
    /// Worker threads for per-video work (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Select a dynamics program and fit its parameters on a dataset.
    Train(TrainArgs),
    /// Predict future frames of a video or of every video in a dataset.
    Predict(PredictArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Edit the last conditioning state and re-simulate.
    Edit(EditArgs),
    /// Describe a report, dataset or states file.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Experiment config; `--env` alone uses the environment defaults.
    #[arg(long, required_unless_present = "env")]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "config")]
    pub env: Option<EnvKind>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the base seed; video k uses seed + k.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub videos: Option<usize>,
    /// Scale the velocity ranges for an out-of-distribution split.
    #[arg(long, num_args = 0..=1, default_missing_value = "4")]
    pub ood: Option<f64>,
    /// Also write PNG copies of every frame.
    #[arg(long)]
    pub png: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Experiment config supplying the fit and proposer sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the restart seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub report: PathBuf,
    /// A video directory, or a dataset directory to predict every video.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the step-by-step execution trace.
    #[arg(long)]
    pub trace: bool,
    #[arg(long)]
    pub png: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Ground-truth video or dataset directory.
    #[arg(long)]
    pub truth: PathBuf,
    /// Comma-separated metrics (default: all).
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<String>,
    /// Experiment config whose thresholds decide the exit code.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Write the metric rows here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    /// A `states.json` from predict or a `truth.json` from gen.
    #[arg(long)]
    pub states: PathBuf,
    /// `name:set:value`, `name:scale:factor` or `name:negate`; repeatable.
    #[arg(long = "edit", required = true)]
    pub edits: Vec<String>,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub png: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<String> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Edit(a) => cmd_edit(&a),
        Command::Inspect(a) => cmd_inspect(&a),
    }
}

fn load_config(path: Option<&Path>, env: Option<EnvKind>) -> CliResult<Option<ExperimentConfig>> {
    match (path, env) {
        (Some(p), _) => ExperimentConfig::load(p).map(Some),
        (None, Some(kind)) => Ok(Some(ExperimentConfig::for_env(kind))),
        (None, None) => Ok(None),
    }
}

pub fn cmd_gen(args: &GenArgs) -> CliResult<String> {
    let exp = load_config(args.config.as_deref(), args.env)?
        .ok_or_else(|| CliError::Config("either --config or --env is required".into()))?;
    let mut cfg = exp.env.resolve();
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(f) = args.ood {
        if !(f.is_finite() && f > 0.0) {
            return Err(CliError::Config(format!("--ood factor must be positive, got {f}")));
        }
        cfg = cfg.ood(f);
    }
    let n = args.videos.unwrap_or(exp.videos);
    if n == 0 {
        return Err(CliError::Config("--videos must be at least 1".into()));
    }
    cfg.check().map_err(|e| CliError::Config(e.to_string()))?;
    let dataset = sample_dataset(&cfg, n, cfg.seed).map_err(CliError::data)?;
    store::write_dataset(&args.out, &cfg, &dataset, args.png)?;
    info!("wrote {n} videos to {}", args.out.display());
    Ok(format!(
        "generated {n} {} videos of {} frames in {}\n",
        cfg.kind,
        cfg.total_frames + 1,
        args.out.display()
    ))
}

fn fit_error(e: FitError) -> CliError {
    match e {
        FitError::Perceive(p) => CliError::Data(format!("perception failed: {p}")),
        FitError::InvalidConfig(m) => CliError::Config(m),
        other => CliError::Fit(other.to_string()),
    }
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<String> {
    let (env_cfg, dataset) = store::read_dataset(&args.data)?;
    let kind = env_cfg.kind;
    let exp = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::for_env(kind),
    };
    let mut fit = exp.fit.clone();
    if let Some(seed) = args.seed {
        fit.seed = seed;
    }
    let render = env_cfg.render_config();
    let pixel = fit.loss == LossKind::Pixel;
    let episodes = episodes_from_dataset(&dataset, &render, pixel).map_err(fit_error)?;
    let examples: Vec<Trajectory> = episodes.iter().map(|e| e.trajectory.clone()).collect();
    let request = ProposalRequest::new(kind, &examples, exp.proposer.max_candidates)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let (candidates, used_fallback, diagnostics) = match exp.proposer.mode {
        ProposerMode::Registry => (
            registry_propose(&request).map_err(|e| CliError::Config(e.to_string()))?,
            false,
            Vec::new(),
        ),
        ProposerMode::Remote => {
            let out = remote_propose(&request, &exp.proposer.remote).map_err(|e| CliError::Config(e.to_string()))?;
            for d in &out.diagnostics {
                warn!("proposer: {d}");
            }
            (out.programs, out.used_fallback, out.diagnostics)
        }
    };
    let report = select_program(&candidates, &episodes, pixel.then_some(&render), &fit).map_err(fit_error)?;
    let chosen = candidates
        .iter()
        .find(|c| c.id() == report.program_id)
        .ok_or_else(|| CliError::Fit(format!("selected program `{}` is not a candidate", report.program_id)))?;
    let out = Report {
        env: kind,
        env_config: env_cfg,
        program_id: report.program_id.clone(),
        program_source: chosen.source(),
        params: report.params.clone(),
        proposer: store::ProposerSummary {
            mode: exp.proposer.mode.as_str().to_string(),
            candidates: candidates.iter().map(|c| c.id().to_string()).collect(),
            used_fallback,
            diagnostics,
        },
        fit: report,
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        store::create_dir(parent)?;
    }
    write_json(&args.out, &out)?;
    Ok(format!(
        "selected {} (loss {:.6e}) from {} candidates on {} videos; report written to {}\n",
        out.program_id,
        out.fit.loss,
        out.proposer.candidates.len(),
        dataset.len(),
        args.out.display()
    ))
}

struct Model {
    prog: DynamicsProgram,
    config: EnvConfig,
    render: RenderConfig,
}

impl Model {
    fn load(path: &Path) -> CliResult<Model> {
        let report = Report::load(path)?;
        let prog = report.program()?;
        let render = report.env_config.render_config();
        Ok(Model {
            prog,
            config: report.env_config,
            render,
        })
    }
}

/// Predicts one video directory into `out`. Returns the number of frames
/// written.
fn predict_dir(model: &Model, input: &Path, out: &Path, trace: bool, png: bool) -> CliResult<usize> {
    let cond = model.config.conditioning_frames;
    let t_total = model.config.total_frames;
    let frames = read_frames_from(input, 0)?;
    if frames.len() < cond {
        return Err(CliError::Data(format!(
            "{}: {} frames found but {cond} conditioning frames are required",
            input.display(),
            frames.len()
        )));
    }
    let seen = &frames[..cond];
    if let Some(f) = seen.iter().find(|f| f.width() != model.config.width || f.height() != model.config.height) {
        return Err(CliError::Data(format!(
            "{}: frames are {}x{}, the model expects {}x{}",
            input.display(),
            f.width(),
            f.height(),
            model.config.width,
            model.config.height
        )));
    }
    let mut events: Vec<TraceEvent> = Vec::new();
    let pred = predict_traced(&model.prog, seen, t_total + 1 - cond, &model.render, &mut events)
        .map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    let future = pred.predicted_frames();
    write_frames(out, cond, future, png)?;
    write_json(
        &out.join(STATES),
        &StatesFile::new(model.config.kind, &pred.states, t_total, pred.last_seen, pred.clamped.clone()),
    )?;
    if trace {
        write_json(&out.join(TRACE), &events)?;
    }
    Ok(future.len())
}

pub fn cmd_predict(args: &PredictArgs) -> CliResult<String> {
    let model = Model::load(&args.report)?;
    if store::is_dataset(&args.input) {
        let manifest = read_manifest(&args.input)?;
        if manifest.env_config.kind != model.config.kind {
            return Err(CliError::Data(format!(
                "report is for {} but the dataset is {}",
                model.config.kind, manifest.env_config.kind
            )));
        }
        let counts = manifest
            .videos
            .par_iter()
            .map(|e| predict_dir(&model, &args.input.join(&e.dir), &args.out.join(&e.dir), args.trace, args.png))
            .collect::<CliResult<Vec<_>>>()?;
        Ok(format!(
            "predicted {} frames for each of {} videos into {}\n",
            counts[0],
            counts.len(),
            args.out.display()
        ))
    } else {
        if !args.input.is_dir() {
            return Err(CliError::Data(format!("video not found: {}", args.input.display())));
        }
        let n = predict_dir(&model, &args.input, &args.out, args.trace, args.png)?;
        Ok(format!("predicted {n} frames into {}\n", args.out.display()))
    }
}

/// Scores one predicted video directory against one ground-truth directory.
fn score_dir(pred_dir: &Path, truth_dir: &Path) -> CliResult<(EnvKind, VideoScores)> {
    if !pred_dir.is_dir() {
        return Err(CliError::Data(format!("predictions not found: {}", pred_dir.display())));
    }
    let (env, video) = read_video(truth_dir)?;
    let first = video.conditioning();
    let actual = &video.frames()[first..];
    let predicted = (first..=video.total_frames())
        .map(|t| {
            let p = frame_path(pred_dir, t);
            if p.is_file() {
                crate::ppm::read(&p)
            } else {
                Err(CliError::Data(format!("missing predicted frame {}", p.display())))
            }
        })
        .collect::<CliResult<Vec<Frame>>>()?;
    let bad = |e: &dyn std::fmt::Display| CliError::Data(format!("{}: {e}", pred_dir.display()));
    let render = RenderConfig::for_env(env, video.frames()[0].width(), video.frames()[0].height());
    let (mut vel, mut vel_state) = (None, None);
    if env.is_phyworld() {
        let full: Vec<Frame> = video.frames()[..first].iter().chain(&predicted).cloned().collect();
        let truth_pos = perceived_positions(video.frames(), &render).map_err(|e| bad(&e))?;
        let pred_pos = perceived_positions(&full, &render).map_err(|e| bad(&e))?;
        vel = Some(velocity_error(&pred_pos, &truth_pos, video.last_seen()).map_err(|e| bad(&e))?);
        let states_path = pred_dir.join(STATES);
        if states_path.is_file() {
            let states = StatesFile::load_any(&states_path)?.trajectory().map_err(|e| bad(&e))?;
            let truth = video.ground_truth().expect("read_video loads ground truth");
            vel_state = Some(
                velocity_error(&ball_positions(&states), &ball_positions(truth), video.last_seen())
                    .map_err(|e| bad(&e))?,
            );
        }
    }
    Ok((
        env,
        VideoScores {
            velocity_error: vel,
            velocity_error_state: vel_state,
            mae: mae(&predicted, actual).map_err(|e| bad(&e))?,
            psnr: psnr(&predicted, actual).map_err(|e| bad(&e))?,
        },
    ))
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<String> {
    let exp = args.config.as_deref().map(ExperimentConfig::load).transpose()?;
    let metrics: Vec<String> = if args.metrics.is_empty() {
        METRICS.iter().map(|m| m.to_string()).collect()
    } else {
        args.metrics.iter().map(|m| m.trim().to_string()).collect()
    };
    if let Some(m) = metrics.iter().find(|m| !METRICS.contains(&m.as_str())) {
        return Err(CliError::Config(format!("unknown metric `{m}`, expected one of {METRICS:?}")));
    }
    if !args.truth.is_dir() {
        return Err(CliError::Data(format!("ground truth not found: {}", args.truth.display())));
    }
    if !args.predictions.is_dir() {
        return Err(CliError::Data(format!("predictions not found: {}", args.predictions.display())));
    }
    let pairs: Vec<(PathBuf, PathBuf)> = if store::is_dataset(&args.truth) {
        read_manifest(&args.truth)?
            .videos
            .iter()
            .map(|e| (args.predictions.join(&e.dir), args.truth.join(&e.dir)))
            .collect()
    } else {
        vec![(args.predictions.clone(), args.truth.clone())]
    };
    let scored = pairs
        .par_iter()
        .map(|(p, t)| score_dir(p, t))
        .collect::<CliResult<Vec<_>>>()?;
    let env = scored[0].0;
    let scores: Vec<VideoScores> = scored.into_iter().map(|(_, s)| s).collect();
    let rows: Vec<MetricRow> = summarize(env, &args.split, &scores)
        .into_iter()
        .filter(|r| metrics.contains(&r.metric))
        .collect();
    if let Some(path) = &args.out {
        write_json(path, &rows)?;
    }
    let mut text = serde_json::to_string_pretty(&rows).map_err(CliError::data)?;
    text.push('\n');
    if let Some(exp) = exp {
        let failed: Vec<String> = rows
            .iter()
            .filter_map(|r| {
                let b = exp.thresholds.get(&r.metric)?;
                (!b.admits(r.value)).then(|| format!("{} = {} outside {:?}", r.metric, r.value, b))
            })
            .collect();
        if !failed.is_empty() {
            print!("{text}");
            return Err(CliError::Threshold(failed.join("; ")));
        }
    }
    Ok(text)
}

pub fn cmd_edit(args: &EditArgs) -> CliResult<String> {
    let edits = args
        .edits
        .iter()
        .map(|s| s.parse::<EditSpec>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::Config)?;
    let model = Model::load(&args.report)?;
    let file = StatesFile::load_any(&args.states)?;
    if file.env != model.config.kind {
        return Err(CliError::Data(format!(
            "states are for {} but the report is for {}",
            file.env, model.config.kind
        )));
    }
    let traj = file
        .trajectory()
        .map_err(|e| CliError::Data(format!("{}: {e}", args.states.display())))?;
    let f = file.last_seen;
    let (edited, prog) = apply_edits(&traj.states()[f], &model.prog, &edits).map_err(CliError::Config)?;
    let r = rollout(&prog, &edited, file.total_frames - f).map_err(|e| CliError::Data(e.to_string()))?;
    let frames = r
        .trajectory
        .states()
        .iter()
        .map(|s| render_state(s, &model.render))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::data)?;
    write_frames(&args.out, f, &frames, args.png)?;
    let states: Vec<State> = traj.states()[..f].iter().chain(r.trajectory.states()).cloned().collect();
    let states = Trajectory::new(states).map_err(CliError::data)?;
    write_json(
        &args.out.join(STATES),
        &StatesFile::new(file.env, &states, file.total_frames, f, r.clamped),
    )?;
    Ok(format!(
        "applied {} edit(s) at frame {f}; wrote frames {f}..={} to {}\n",
        edits.len(),
        file.total_frames,
        args.out.display()
    ))
}

fn describe_report(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "environment: {} ({})", r.env, r.env_config.id());
    let _ = writeln!(s, "program: {}", r.program_id);
    let _ = writeln!(s, "loss: {:.6e}", r.fit.loss);
    let _ = writeln!(s, "evaluations: {}", r.fit.evaluations);
    let _ = writeln!(s, "clamped updates: {}", r.fit.clamp_count);
    let _ = writeln!(s, "parameters:");
    for p in r.params.entries() {
        let _ = writeln!(s, "  {:<12} {:>14.8} in [{}, {}]", p.name, p.value, p.lower, p.upper);
    }
    let _ = writeln!(s, "candidates ({} proposer{}):", r.proposer.mode, if r.proposer.used_fallback { ", fallback" } else { "" });
    for c in &r.fit.candidates {
        let _ = writeln!(s, "  {:<24} loss {:.6e} ({} params)", c.program_id, c.loss, c.n_params);
    }
    for d in &r.proposer.diagnostics {
        let _ = writeln!(s, "  note: {d}");
    }
    let _ = writeln!(s, "source:");
    for line in r.program_source.lines() {
        let _ = writeln!(s, "  {line}");
    }
    s
}

fn describe_states(f: &StatesFile) -> String {
    let mut s = String::new();
    let names: Vec<&str> = f.schema.names().collect();
    let _ = writeln!(s, "environment: {}, T = {}, last seen frame {}", f.env, f.total_frames, f.last_seen);
    let _ = write!(s, "{:>4}", "t");
    for n in &names {
        let _ = write!(s, " {n:>22}");
    }
    s.push('\n');
    for (t, row) in f.states.iter().enumerate() {
        let _ = write!(s, "{t:>4}");
        for v in row {
            let _ = write!(s, " {v:>22.10}");
        }
        s.push('\n');
    }
    if !f.clamped.is_empty() {
        let _ = writeln!(s, "clamped updates: {}", f.clamped.len());
    }
    s
}

pub fn cmd_inspect(args: &InspectArgs) -> CliResult<String> {
    let p = &args.path;
    if p.is_dir() {
        if store::is_dataset(p) {
            let m = read_manifest(p)?;
            let mut s = String::new();
            let _ = writeln!(s, "dataset: {} videos, {}", m.videos.len(), m.env_config.id());
            let _ = writeln!(s, "velocity range: {:?}", m.env_config.velocity_range);
            for e in &m.videos {
                let _ = writeln!(s, "  {:<10} seed {:<8} {}", e.dir, e.seed, e.params);
            }
            return Ok(s);
        }
        if p.join(STATES).is_file() {
            return Ok(describe_states(&StatesFile::load_any(&p.join(STATES))?));
        }
        if p.join(store::TRUTH).is_file() {
            return Ok(describe_states(&StatesFile::load_any(&p.join(store::TRUTH))?));
        }
        return Err(CliError::Data(format!("{}: nothing to inspect", p.display())));
    }
    if !p.is_file() {
        return Err(CliError::Data(format!("not found: {}", p.display())));
    }
    let value: serde_json::Value = store::read_json(p)?;
    if value.get("program_source").is_some() {
        return Ok(describe_report(&Report::load(p)?));
    }
    Ok(describe_states(&StatesFile::load_any(p)?))
}
