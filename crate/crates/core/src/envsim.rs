//! Ground-truth generators for the uniform-motion, collision and cart-pole
//! environments.
//!
//! Every generator is a pure function of `(config, seed)`. Random draws come
//! from a SplitMix64 stream seeded with the per-video seed, so datasets are
//! reproducible on every platform.

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::env::EnvKind;
use crate::error::CoreError;
use crate::model::{Dataset, State, Trajectory, Video, VideoMeta};
use crate::render::{render_trajectory, RenderConfig, RenderError};

/// Sampling attempts before a configuration is declared infeasible.
pub const MAX_RESAMPLES: usize = 100_000;

/// Sampled positions and velocities are snapped to multiples of this value so
/// uniform motion is exact in binary floating point.
const GRID: f64 = 1.0 / (1u64 << 24) as f64;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("expected a `{expected}` config, got `{found}`")]
    WrongKind { expected: EnvKind, found: EnvKind },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Physical constants of the cart-pole. Velocities in the state are per
/// frame; `time_step` converts them to the per-second quantities the
/// equations of motion use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartPoleConstants {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub length: f64,
    pub force: f64,
    pub time_step: f64,
}

impl Default for CartPoleConstants {
    fn default() -> Self {
        CartPoleConstants {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            length: 0.2,
            force: -1.0,
            time_step: 0.02,
        }
    }
}

impl CartPoleConstants {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.gravity,
            self.cart_mass,
            self.pole_mass,
            self.length,
            self.force,
            self.time_step,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub width: u32,
    pub height: u32,
    /// T: index of the last frame; a video holds T+1 frames.
    pub total_frames: usize,
    /// F+1: number of observed frames.
    pub conditioning_frames: usize,
    pub seed: u64,
    /// Ball speed magnitudes (sign drawn separately), or the signed cart
    /// velocity interval for the cart-pole. Per frame.
    pub velocity_range: [f64; 2],
    #[serde(default = "default_radius_range")]
    pub radius_range: [f64; 2],
    #[serde(default = "default_angle_range")]
    pub angle_range: [f64; 2],
    #[serde(default = "default_angular_velocity_range")]
    pub angular_velocity_range: [f64; 2],
    #[serde(default)]
    pub cartpole: CartPoleConstants,
}

fn default_radius_range() -> [f64; 2] {
    [0.03, 0.07]
}

fn default_angle_range() -> [f64; 2] {
    [-0.1, 0.1]
}

fn default_angular_velocity_range() -> [f64; 2] {
    [-0.02, 0.02]
}

/// Default multiplier applied to the velocity range for out-of-distribution
/// test sets.
pub const DEFAULT_OOD_FACTOR: f64 = 4.0;

impl EnvConfig {
    /// Defaults: 128x128 PhyWorld clips of 20 frames with 3 observed;
    /// 600x400 cart-pole clips of 20 frames with 10 observed.
    pub fn default_for(kind: EnvKind) -> Self {
        match kind {
            EnvKind::PhyworldUniform | EnvKind::PhyworldCollision => EnvConfig {
                kind,
                width: 128,
                height: 128,
                total_frames: 19,
                conditioning_frames: 3,
                seed: 0,
                velocity_range: [0.005, 0.03],
                radius_range: if kind == EnvKind::PhyworldUniform {
                    [0.03, 0.06]
                } else {
                    default_radius_range()
                },
                angle_range: default_angle_range(),
                angular_velocity_range: default_angular_velocity_range(),
                cartpole: CartPoleConstants::default(),
            },
            EnvKind::Cartpole => EnvConfig {
                kind,
                width: 600,
                height: 400,
                total_frames: 19,
                conditioning_frames: 10,
                seed: 0,
                velocity_range: [-0.01, 0.01],
                radius_range: default_radius_range(),
                angle_range: default_angle_range(),
                angular_velocity_range: default_angular_velocity_range(),
                cartpole: CartPoleConstants::default(),
            },
        }
    }

    /// The same environment with every velocity range scaled by `factor`.
    pub fn ood(&self, factor: f64) -> Self {
        let scale = |r: [f64; 2]| [r[0] * factor, r[1] * factor];
        EnvConfig {
            velocity_range: scale(self.velocity_range),
            angular_velocity_range: scale(self.angular_velocity_range),
            ..self.clone()
        }
    }

    pub fn id(&self) -> String {
        format!(
            "{}-{}x{}-t{}-c{}",
            self.kind, self.width, self.height, self.total_frames, self.conditioning_frames
        )
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig::for_env(self.kind, self.width, self.height)
    }

    pub fn check(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidConfig(m));
        for (name, r) in [
            ("velocity_range", self.velocity_range),
            ("radius_range", self.radius_range),
            ("angle_range", self.angle_range),
            ("angular_velocity_range", self.angular_velocity_range),
        ] {
            if !(r[0] <= r[1]) {
                return bad(format!("{name} has low {} above high {}", r[0], r[1]));
            }
        }
        if self.width < 32 || self.height < 32 {
            return bad(format!("frame {}x{} is smaller than 32x32", self.width, self.height));
        }
        if !(self.conditioning_frames >= 1 && self.conditioning_frames <= self.total_frames) {
            return bad(format!(
                "conditioning_frames {} must lie in 1..={}",
                self.conditioning_frames, self.total_frames
            ));
        }
        if self.kind.is_phyworld() && !(self.radius_range[0] > 0.0 && self.radius_range[1] <= 0.5) {
            return bad("radius_range must lie within (0, 0.5]".into());
        }
        if self.kind == EnvKind::Cartpole {
            let c = &self.cartpole;
            if !(c.time_step > 0.0 && c.length > 0.0 && c.cart_mass + c.pole_mass > 0.0) {
                return bad("cart-pole constants need positive time_step, length and mass".into());
            }
        }
        Ok(())
    }

    fn expect_kind(&self, kind: EnvKind) -> Result<(), EnvError> {
        if self.kind != kind {
            return Err(EnvError::WrongKind {
                expected: kind,
                found: self.kind,
            });
        }
        self.check()
    }
}

fn snap(v: f64) -> f64 {
    (v / GRID).round() * GRID
}

fn uniform(rng: &mut SplitMix64, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

fn finish(
    config: &EnvConfig,
    states: Vec<State>,
    seed: u64,
    params: serde_json::Value,
) -> Result<(Video, VideoMeta), EnvError> {
    let traj = Trajectory::new(states)?;
    let frames = render_trajectory(&traj, &config.render_config())?;
    let video = Video::new(
        frames,
        config.total_frames,
        config.conditioning_frames,
        config.id(),
        Some(traj),
    )?;
    Ok((video, VideoMeta { seed, params }))
}

pub fn gen_uniform(config: &EnvConfig, seed: u64) -> Result<Video, EnvError> {
    uniform_with_meta(config, seed).map(|(v, _)| v)
}

fn uniform_with_meta(config: &EnvConfig, seed: u64) -> Result<(Video, VideoMeta), EnvError> {
    config.expect_kind(EnvKind::PhyworldUniform)?;
    let mut rng = SplitMix64::seed_from_u64(seed);
    let t_max = config.total_frames as f64;
    for _ in 0..MAX_RESAMPLES {
        let r = snap(uniform(&mut rng, config.radius_range));
        let speed = snap(uniform(&mut rng, config.velocity_range));
        let v = if rng.random_bool(0.5) { speed } else { -speed };
        let travel = v * t_max;
        let lo = r + (-travel).max(0.0);
        let hi = 1.0 - r - travel.max(0.0);
        if lo > hi {
            continue;
        }
        let x0 = snap(uniform(&mut rng, [lo, hi]));
        let y = snap(uniform(&mut rng, [r.max(0.25), (1.0 - r).min(0.75)]));
        if !(lo..=hi).contains(&x0) {
            continue;
        }
        return uniform_from(config, seed, x0, y, v, r);
    }
    Err(EnvError::Infeasible(format!(
        "no ball placement keeps the ball inside the frame for {} frames",
        config.total_frames + 1
    )))
}

/// Uniform-motion clip from explicit initial conditions.
pub fn uniform_from(
    config: &EnvConfig,
    seed: u64,
    x0: f64,
    y: f64,
    v: f64,
    r: f64,
) -> Result<(Video, VideoMeta), EnvError> {
    let schema = EnvKind::PhyworldUniform.schema();
    let mut states = Vec::with_capacity(config.total_frames + 1);
    let mut x = x0;
    for _ in 0..=config.total_frames {
        if x - r < 0.0 || x + r > 1.0 {
            return Err(EnvError::Infeasible(format!(
                "ball leaves the frame (x = {x}, r = {r})"
            )));
        }
        states.push(State::new(schema.clone(), vec![x, y, v, r])?);
        x += v;
    }
    finish(
        config,
        states,
        seed,
        json!({"x0": x0, "y": y, "v": v, "r": r}),
    )
}

/// Post-collision velocities of a 1-D elastic collision.
pub fn elastic_outcome(m1: f64, v1: f64, m2: f64, v2: f64) -> (f64, f64) {
    let total = m1 + m2;
    (
        ((m1 - m2) * v1 + 2.0 * m2 * v2) / total,
        ((m2 - m1) * v2 + 2.0 * m1 * v1) / total,
    )
}

/// Ball masses scale with disk area.
pub fn mass(radius: f64) -> f64 {
    radius * radius
}

/// One step of the two-ball system. Contact is detected on the positions the
/// balls would reach under free motion: if that gap is non-positive while the
/// balls approach, the elastic velocities replace the old ones before moving.
/// Returns the new `[x1, vx1, x2, vx2]` and whether the collision fired.
pub fn collision_step(s: [f64; 4], r1: f64, r2: f64) -> ([f64; 4], bool) {
    let [x1, v1, x2, v2] = s;
    let gap = (x2 + v2) - (x1 + v1) - (r1 + r2);
    let (n1, n2, fired) = if gap <= 0.0 && v1 - v2 > 0.0 {
        let (a, b) = elastic_outcome(mass(r1), v1, mass(r2), v2);
        (a, b, true)
    } else {
        (v1, v2, false)
    };
    ([x1 + n1, n1, x2 + n2, n2], fired)
}

pub fn gen_collision(config: &EnvConfig, seed: u64) -> Result<Video, EnvError> {
    collision_with_meta(config, seed).map(|(v, _)| v)
}

fn collision_with_meta(config: &EnvConfig, seed: u64) -> Result<(Video, VideoMeta), EnvError> {
    config.expect_kind(EnvKind::PhyworldCollision)?;
    let mut rng = SplitMix64::seed_from_u64(seed);
    let t_max = config.total_frames;
    let first = config.conditioning_frames - 1;
    // collision fires at a state index in [F, T-3] so its outcome is predicted
    let last = t_max.saturating_sub(3).max(first);
    for _ in 0..MAX_RESAMPLES {
        let r1 = snap(uniform(&mut rng, config.radius_range));
        let r2 = snap(uniform(&mut rng, config.radius_range));
        let s1 = snap(uniform(&mut rng, config.velocity_range));
        let s2 = snap(uniform(&mut rng, config.velocity_range));
        let v1 = if rng.random_bool(0.5) { s1 } else { -s1 };
        let v2 = if rng.random_bool(0.5) { s2 } else { -s2 };
        let closing = v1 - v2;
        let k = rng.random_range(first..=last);
        let u: f64 = rng.random_range(0.1..0.9);
        let y = snap(uniform(&mut rng, [r1.max(r2).max(0.25), (1.0 - r1.max(r2)).min(0.75)]));
        let shift_u: f64 = rng.random();
        if closing <= 0.0 {
            continue;
        }
        let gap0 = (k as f64 + u) * closing;
        let mut s = [0.0, v1, r1 + r2 + gap0, v2];
        let mut raw = vec![s];
        let mut fired_at = Vec::new();
        for t in 0..t_max {
            let (next, fired) = collision_step(s, r1, r2);
            if fired {
                fired_at.push(t);
            }
            s = next;
            raw.push(s);
        }
        if fired_at != [k] {
            continue;
        }
        let lo = raw.iter().map(|s| s[0] - r1).fold(f64::INFINITY, f64::min);
        let hi = raw.iter().map(|s| s[2] + r2).fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > 1.0 {
            continue;
        }
        let shift = -lo + shift_u * (1.0 - (hi - lo));
        let schema = EnvKind::PhyworldCollision.schema();
        let states = raw
            .iter()
            .map(|s| {
                State::clamped(
                    schema.clone(),
                    vec![s[0] + shift, y, s[1], r1, s[2] + shift, y, s[3], r2],
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        return finish(
            config,
            states,
            seed,
            json!({"r1": r1, "r2": r2, "v1": v1, "v2": v2, "collision_step": k, "y": y}),
        );
    }
    Err(EnvError::Infeasible(format!(
        "no in-window collision found after {MAX_RESAMPLES} draws"
    )))
}

/// Cart-pole transition on `[x, v, theta, omega]` with per-frame velocities,
/// integrated with explicit Euler in per-second units.
pub fn cartpole_reference_step(s: [f64; 4], c: &CartPoleConstants) -> [f64; 4] {
    let [x, v, theta, omega] = s;
    let dt = c.time_step;
    let x_dot = v / dt;
    let theta_dot = omega / dt;
    let total_mass = c.cart_mass + c.pole_mass;
    let pole_mass_length = c.pole_mass * c.length;
    let (sin_theta, cos_theta) = theta.sin_cos();
    let temp = (c.force + pole_mass_length * theta_dot * theta_dot * sin_theta) / total_mass;
    let theta_acc = (c.gravity * sin_theta - cos_theta * temp)
        / (c.length * (4.0 / 3.0 - c.pole_mass * cos_theta * cos_theta / total_mass));
    let x_acc = temp - pole_mass_length * theta_acc * cos_theta / total_mass;
    [
        x + dt * x_dot,
        (x_dot + dt * x_acc) * dt,
        theta + dt * theta_dot,
        (theta_dot + dt * theta_acc) * dt,
    ]
}

pub fn gen_cartpole(config: &EnvConfig, seed: u64) -> Result<Video, EnvError> {
    cartpole_with_meta(config, seed).map(|(v, _)| v)
}

fn cartpole_with_meta(config: &EnvConfig, seed: u64) -> Result<(Video, VideoMeta), EnvError> {
    config.expect_kind(EnvKind::Cartpole)?;
    let mut rng = SplitMix64::seed_from_u64(seed);
    let schema = EnvKind::Cartpole.schema();
    let c = config.cartpole;
    'attempt: for _ in 0..MAX_RESAMPLES {
        let theta0 = uniform(&mut rng, config.angle_range);
        let v0 = uniform(&mut rng, config.velocity_range);
        let omega0 = uniform(&mut rng, config.angular_velocity_range);
        let mut s = [0.5, v0, theta0, omega0];
        let mut states = Vec::with_capacity(config.total_frames + 1);
        for t in 0..=config.total_frames {
            if t > 0 {
                s = cartpole_reference_step(s, &c);
            }
            match State::new(schema.clone(), vec![s[0], s[1], s[2], s[3], c.length]) {
                Ok(state) => states.push(state),
                Err(_) => continue 'attempt,
            }
        }
        return finish(
            config,
            states,
            seed,
            json!({"theta0": theta0, "v0": v0, "omega0": omega0}),
        );
    }
    Err(EnvError::Infeasible(format!(
        "cart-pole leaves its bounds within {} frames in {MAX_RESAMPLES} draws",
        config.total_frames + 1
    )))
}

/// Generates one video of the configured kind.
pub fn generate(config: &EnvConfig, seed: u64) -> Result<(Video, VideoMeta), EnvError> {
    match config.kind {
        EnvKind::PhyworldUniform => uniform_with_meta(config, seed),
        EnvKind::PhyworldCollision => collision_with_meta(config, seed),
        EnvKind::Cartpole => cartpole_with_meta(config, seed),
    }
}

/// `n` videos with seeds `base_seed..base_seed + n`.
pub fn sample_dataset(config: &EnvConfig, n: usize, base_seed: u64) -> Result<Dataset, EnvError> {
    if n == 0 {
        return Err(EnvError::InvalidConfig("dataset size must be at least 1".into()));
    }
    let pairs = (0..n as u64)
        .into_par_iter()
        .map(|k| generate(config, base_seed.wrapping_add(k)))
        .collect::<Result<Vec<_>, _>>()?;
    let (videos, manifest) = pairs.into_iter().unzip();
    Ok(Dataset::new(videos, manifest)?)
}
