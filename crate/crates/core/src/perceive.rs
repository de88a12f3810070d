//! Recovers symbolic states from frames: color-keyed segmentation, image
//! moments, and finite differencing across frames.
//!
//! Object identity is the object's color, so association across frames is
//! exact and needs no tracker.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{env_of, EnvKind};
use crate::error::CoreError;
use crate::model::{Frame, Rgb, Role, State, StateSchema, Trajectory};
use crate::render::{RenderConfig, RenderError};

/// Per-channel byte tolerance used when keying object colors.
pub const DEFAULT_TOLERANCE: u8 = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerceiveError {
    #[error("object `{0}` not found in frame")]
    MissingObject(String),
    #[error("frame {frame}: {source}")]
    AtFrame {
        frame: usize,
        #[source]
        source: Box<PerceiveError>,
    },
    #[error("moments of an empty mask are undefined")]
    EmptyMask,
    #[error("object sets differ between frame 0 and frame {0}")]
    InconsistentObjects(usize),
    #[error("need at least 2 frames of observations, got {0}")]
    TooFewFrames(usize),
    #[error("schema `{0}` is not supported by perception")]
    UnsupportedSchema(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Binary mask with the dimensions of the frame it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Pixel-center coordinates of every set pixel.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5))
    }
}

pub fn segment_color(frame: &Frame, key: Rgb, tolerance: u8) -> Mask {
    let bits = frame
        .pixels()
        .chunks_exact(3)
        .map(|p| p.iter().zip(key).all(|(&a, b)| a.abs_diff(b) <= tolerance))
        .collect();
    Mask {
        width: frame.width(),
        height: frame.height(),
        bits,
    }
}

/// Centroid and area normalized by the frame width, plus the orientation of
/// the major axis measured from vertical, clockwise positive, in
/// `(-pi/2, pi/2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub cx: f64,
    pub cy: f64,
    pub area: f64,
    pub angle: f64,
}

pub fn moments(mask: &Mask) -> Result<Moments, PerceiveError> {
    let (mut n, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (x, y) in mask.points() {
        n += 1.0;
        sx += x;
        sy += y;
    }
    if n == 0.0 {
        return Err(PerceiveError::EmptyMask);
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
    for (x, y) in mask.points() {
        let (dx, dy) = (x - mx, y - my);
        xx += dx * dx;
        yy += dy * dy;
        xy += dx * dy;
    }
    // major axis direction in image coordinates (y down), from +x
    let from_x = 0.5 * (2.0 * xy).atan2(xx - yy);
    let w = mask.width as f64;
    Ok(Moments {
        cx: mx / w,
        cy: my / w,
        area: n / (w * w),
        angle: wrap_half_turn(from_x + FRAC_PI_2),
    })
}

/// Maps an axis orientation into `(-pi/2, pi/2]`.
fn wrap_half_turn(a: f64) -> f64 {
    let mut a = a % PI;
    if a <= -FRAC_PI_2 {
        a += PI;
    } else if a > FRAC_PI_2 {
        a -= PI;
    }
    a
}

/// Wraps an angle difference into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI) % (2.0 * PI);
    if a <= 0.0 {
        a += 2.0 * PI;
    }
    a - PI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectObservation {
    pub object_id: String,
    /// Normalized by frame width.
    pub centroid: (f64, f64),
    /// Pixel count over width squared.
    pub area: f64,
    /// Signed angle from vertical (bars only).
    pub angle: Option<f64>,
    /// Extent along the major axis, normalized (bars only).
    pub length: Option<f64>,
}

fn observe(frame: &Frame, id: &str, key: Rgb) -> Result<(Mask, Moments), PerceiveError> {
    let mask = segment_color(frame, key, DEFAULT_TOLERANCE);
    let m = moments(&mask).map_err(|_| PerceiveError::MissingObject(id.to_string()))?;
    Ok((mask, m))
}

pub fn perceive_ball_frame(
    frame: &Frame,
    config: &RenderConfig,
) -> Result<Vec<ObjectObservation>, PerceiveError> {
    (1..=config.env.ball_count())
        .map(|k| {
            let id = format!("ball{k}");
            let (_, m) = observe(frame, &id, config.color(&id)?)?;
            Ok(ObjectObservation {
                object_id: id,
                centroid: (m.cx, m.cy),
                area: m.area,
                angle: None,
                length: None,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartPoleObservation {
    pub cart_x: f64,
    pub pole_angle: f64,
    pub pole_length: f64,
}

fn observe_cartpole(
    frame: &Frame,
    config: &RenderConfig,
) -> Result<Vec<ObjectObservation>, PerceiveError> {
    let w = config.width as f64;
    let (_, cart) = observe(frame, "cart", config.color("cart")?)?;
    let (pole_mask, pole) = observe(frame, "pole", config.color("pole")?)?;

    // the axis is unsigned; pick the direction pointing from the pivot
    // towards the pole's centroid
    let (px, py) = config.pivot_px(cart.cx)?;
    let (dx, dy) = (pole.cx * w - px, pole.cy * w - py);
    let flipped = if pole.angle > 0.0 {
        pole.angle - PI
    } else {
        pole.angle + PI
    };
    let pointing = |a: f64| a.sin() * dx - a.cos() * dy;
    let angle = if pointing(pole.angle) >= pointing(flipped) {
        pole.angle
    } else {
        flipped
    };

    let (s, c) = angle.sin_cos();
    let (lo, hi) = pole_mask
        .points()
        .map(|(x, y)| (x - px) * s - (y - py) * c)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| {
            (lo.min(a), hi.max(a))
        });
    let length = (hi - lo + 1.0) / w;

    Ok(vec![
        ObjectObservation {
            object_id: "cart".into(),
            centroid: (cart.cx, cart.cy),
            area: cart.area,
            angle: None,
            length: None,
        },
        ObjectObservation {
            object_id: "pole".into(),
            centroid: (pole.cx, pole.cy),
            area: pole.area,
            angle: Some(angle),
            length: Some(length),
        },
    ])
}

pub fn perceive_cartpole_frame(
    frame: &Frame,
    config: &RenderConfig,
) -> Result<CartPoleObservation, PerceiveError> {
    let obs = observe_cartpole(frame, config)?;
    Ok(CartPoleObservation {
        cart_x: obs[0].centroid.0,
        pole_angle: obs[1].angle.unwrap_or_default(),
        pole_length: obs[1].length.unwrap_or_default(),
    })
}

/// Observations for whichever environment `config` renders.
pub fn perceive_frame(
    frame: &Frame,
    config: &RenderConfig,
) -> Result<Vec<ObjectObservation>, PerceiveError> {
    match config.env {
        EnvKind::PhyworldUniform | EnvKind::PhyworldCollision => perceive_ball_frame(frame, config),
        EnvKind::Cartpole => observe_cartpole(frame, config),
    }
}

/// Where an attribute's per-frame value comes from.
enum Source {
    CentroidX(String),
    CentroidY(String),
    Radius(String),
    Angle(String),
    Length(String),
    DiffOf(usize),
}

fn sources(schema: &StateSchema) -> Result<Vec<Source>, PerceiveError> {
    let env = env_of(schema).ok_or_else(|| PerceiveError::UnsupportedSchema(schema.env_id().into()))?;
    let unsupported = || PerceiveError::UnsupportedSchema(schema.env_id().into());
    schema
        .attributes()
        .iter()
        .map(|a| {
            let name = a.name.as_str();
            Ok(match env {
                EnvKind::PhyworldUniform | EnvKind::PhyworldCollision => {
                    let (head, k) = name.split_at(name.find(|c: char| c.is_ascii_digit()).ok_or_else(unsupported)?);
                    let ball = format!("ball{k}");
                    match head {
                        "x" => Source::CentroidX(ball),
                        "y" => Source::CentroidY(ball),
                        "r" => Source::Radius(ball),
                        "vx" => Source::DiffOf(schema.index_of(&format!("x{k}")).ok_or_else(unsupported)?),
                        _ => return Err(unsupported()),
                    }
                }
                EnvKind::Cartpole => match name {
                    "cart_position" => Source::CentroidX("cart".into()),
                    "pole_angle" => Source::Angle("pole".into()),
                    "pole_length" => Source::Length("pole".into()),
                    "cart_velocity" => Source::DiffOf(schema.index_of("cart_position").ok_or_else(unsupported)?),
                    "pole_angular_velocity" => {
                        Source::DiffOf(schema.index_of("pole_angle").ok_or_else(unsupported)?)
                    }
                    _ => return Err(unsupported()),
                },
            })
        })
        .collect()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Builds a trajectory from per-frame observations. Rates are backward
/// differences of their position or angle (frame 0 copies frame 1); geometry
/// is the median over frames; every value is clamped to its bounds.
pub fn assemble_trajectory(
    observations: &[Vec<ObjectObservation>],
    schema: &std::sync::Arc<StateSchema>,
) -> Result<Trajectory, PerceiveError> {
    if observations.len() < 2 {
        return Err(PerceiveError::TooFewFrames(observations.len()));
    }
    fn ids(obs: &[ObjectObservation]) -> Vec<&str> {
        let mut v: Vec<&str> = obs.iter().map(|o| o.object_id.as_str()).collect();
        v.sort_unstable();
        v
    }
    let reference = ids(&observations[0]);
    if let Some(t) = observations.iter().position(|o| ids(o) != reference) {
        return Err(PerceiveError::InconsistentObjects(t));
    }

    let srcs = sources(schema)?;
    let n = observations.len();
    let find = |t: usize, id: &str| {
        observations[t]
            .iter()
            .find(|o| o.object_id == id)
            .ok_or_else(|| PerceiveError::MissingObject(id.to_string()))
    };
    let mut table = vec![vec![0.0; srcs.len()]; n];
    for (t, row) in table.iter_mut().enumerate() {
        for (i, src) in srcs.iter().enumerate() {
            row[i] = match src {
                Source::CentroidX(id) => find(t, id)?.centroid.0,
                Source::CentroidY(id) => find(t, id)?.centroid.1,
                Source::Radius(id) => (find(t, id)?.area / PI).sqrt(),
                Source::Angle(id) => find(t, id)?.angle.ok_or_else(|| PerceiveError::MissingObject(id.clone()))?,
                Source::Length(id) => find(t, id)?.length.ok_or_else(|| PerceiveError::MissingObject(id.clone()))?,
                Source::DiffOf(_) => 0.0,
            };
        }
    }
    let attrs = schema.attributes();
    for (i, src) in srcs.iter().enumerate() {
        if let Source::DiffOf(j) = src {
            let periodic = attrs[*j].role.is_periodic();
            for t in 1..n {
                let d = table[t][*j] - table[t - 1][*j];
                table[t][i] = if periodic { wrap_angle(d) } else { d };
            }
            table[0][i] = table[1][i];
        }
        if attrs[i].role == Role::Geometry {
            let m = median(table.iter().map(|r| r[i]).collect());
            table.iter_mut().for_each(|r| r[i] = m);
        }
    }
    let states = table
        .into_iter()
        .map(|row| State::clamped(schema.clone(), row))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Trajectory::new(states)?)
}

/// Perceives every frame (in parallel) and assembles the trajectory.
pub fn perceive_frames(
    frames: &[Frame],
    config: &RenderConfig,
    schema: &std::sync::Arc<StateSchema>,
) -> Result<Trajectory, PerceiveError> {
    let obs = frames
        .par_iter()
        .enumerate()
        .map(|(t, f)| {
            perceive_frame(f, config).map_err(|e| PerceiveError::AtFrame {
                frame: t,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    assemble_trajectory(&obs, schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{render_state, RED, WHITE};

    fn ball_state(x: f64, r: f64) -> State {
        State::new(EnvKind::PhyworldUniform.schema(), vec![x, 0.5, 0.0, r]).unwrap()
    }

    #[test]
    fn background_frame_has_empty_mask() {
        let f = Frame::filled(64, 64, WHITE).unwrap();
        assert!(segment_color(&f, RED, 10).is_empty());
        assert_eq!(segment_color(&f, RED, 255).count(), 64 * 64);
    }

    #[test]
    fn mask_matches_rendered_disk() {
        let cfg = RenderConfig::for_env(EnvKind::PhyworldUniform, 128, 128);
        let f = render_state(&ball_state(0.41, 0.05), &cfg).unwrap();
        let rendered = f.pixels().chunks(3).filter(|p| *p == RED).count();
        assert_eq!(segment_color(&f, RED, 10).count(), rendered);
    }

    #[test]
    fn single_pixel_moments() {
        let mut f = Frame::filled(32, 32, WHITE).unwrap();
        f.set(10, 10, RED);
        let m = moments(&segment_color(&f, RED, 0)).unwrap();
        assert_eq!((m.cx, m.cy, m.area), (10.5 / 32.0, 10.5 / 32.0, 1.0 / 1024.0));
    }

    #[test]
    fn horizontal_bar_axis() {
        let mut f = Frame::filled(32, 32, WHITE).unwrap();
        for x in 5..16 {
            for y in 10..13 {
                f.set(x, y, RED);
            }
        }
        let m = moments(&segment_color(&f, RED, 0)).unwrap();
        assert!((m.angle - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_moments_error() {
        let f = Frame::filled(8, 8, WHITE).unwrap();
        assert_eq!(moments(&segment_color(&f, RED, 0)), Err(PerceiveError::EmptyMask));
    }

    #[test]
    fn radius_from_area() {
        let cfg = RenderConfig::for_env(EnvKind::PhyworldUniform, 128, 128);
        let f = render_state(&ball_state(0.5, 0.05), &cfg).unwrap();
        let m = moments(&segment_color(&f, RED, 10)).unwrap();
        let r = (m.area / PI).sqrt();
        assert!((r - 0.05).abs() / 0.05 < 0.02, "radius {r}");
    }

    #[test]
    fn ball_outside_view_is_missing() {
        let cfg = RenderConfig::for_env(EnvKind::PhyworldUniform, 64, 64);
        let f = Frame::filled(64, 64, WHITE).unwrap();
        assert_eq!(
            perceive_ball_frame(&f, &cfg),
            Err(PerceiveError::MissingObject("ball1".into()))
        );
    }

    #[test]
    fn blank_cartpole_frame_is_missing() {
        let cfg = RenderConfig::for_env(EnvKind::Cartpole, 600, 400);
        let f = Frame::filled(600, 400, WHITE).unwrap();
        assert!(matches!(
            perceive_cartpole_frame(&f, &cfg),
            Err(PerceiveError::MissingObject(_))
        ));
    }

    #[test]
    fn pole_angle_round_trip() {
        let cfg = RenderConfig::for_env(EnvKind::Cartpole, 600, 400);
        for angle in [0.0, 0.3, -0.3, 1.2, -2.5, 3.0] {
            let s = State::new(EnvKind::Cartpole.schema(), vec![0.5, 0.0, angle, 0.0, 0.25]).unwrap();
            let obs = perceive_cartpole_frame(&render_state(&s, &cfg).unwrap(), &cfg).unwrap();
            assert!(wrap_angle(obs.pole_angle - angle).abs() < 0.02, "{angle} -> {}", obs.pole_angle);
        }
    }

    fn ball_obs(x: f64) -> Vec<ObjectObservation> {
        vec![ObjectObservation {
            object_id: "ball1".into(),
            centroid: (x, 0.5),
            area: PI * 0.05 * 0.05,
            angle: None,
            length: None,
        }]
    }

    #[test]
    fn velocities_from_differences() {
        let schema = EnvKind::PhyworldUniform.schema();
        let traj = assemble_trajectory(&[ball_obs(0.10), ball_obs(0.12), ball_obs(0.14)], &schema).unwrap();
        let v = traj.series("vx1").unwrap();
        for x in v {
            assert!((x - 0.02).abs() < 1e-12);
        }
    }

    #[test]
    fn single_frame_rejected() {
        let schema = EnvKind::PhyworldUniform.schema();
        assert_eq!(
            assemble_trajectory(&[ball_obs(0.1)], &schema),
            Err(PerceiveError::TooFewFrames(1))
        );
    }

    #[test]
    fn inconsistent_objects_rejected() {
        let schema = EnvKind::PhyworldUniform.schema();
        let mut other = ball_obs(0.2);
        other[0].object_id = "ball2".into();
        assert_eq!(
            assemble_trajectory(&[ball_obs(0.1), other], &schema),
            Err(PerceiveError::InconsistentObjects(1))
        );
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.1) - 0.1).abs() < 1e-15);
    }
}
