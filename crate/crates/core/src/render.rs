//! Deterministic rasterization of symbolic states into frames.
//!
//! Shapes are hard-edged: a pixel belongs to a shape when its center
//! (`x + 0.5`, `y + 0.5`) lies inside it. Objects are rigid, so only their
//! position and angle change between frames.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{env_of, EnvKind};
use crate::model::{Frame, Rgb, State, Trajectory};

pub const WHITE: Rgb = [255, 255, 255];
pub const RED: Rgb = [255, 0, 0];
pub const BLUE: Rgb = [0, 0, 255];
pub const BLACK: Rgb = [0, 0, 0];
pub const TAN: Rgb = [204, 153, 102];
pub const GRAY: Rgb = [128, 128, 128];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenderError {
    #[error("state for `{found}` cannot be rendered with a `{expected}` config")]
    SchemaMismatch { expected: String, found: String },
    #[error("render config has no style for object `{0}`")]
    MissingStyle(String),
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
    #[error("cannot render an empty trajectory")]
    EmptyTrajectory,
    #[error(transparent)]
    Core(#[from] crate::error::CoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Disk,
    Rect,
    Bar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectStyle {
    pub id: String,
    pub color: Rgb,
    pub shape: Shape,
}

/// Cart-pole geometry. Widths, heights and thickness are fractions of the
/// frame width; `track_y` is a fraction of the frame height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartGeometry {
    pub cart_width: f64,
    pub cart_height: f64,
    pub pole_thickness: f64,
    pub track_y: f64,
}

impl Default for CartGeometry {
    fn default() -> Self {
        CartGeometry {
            cart_width: 0.08,
            cart_height: 0.04,
            pole_thickness: 0.01,
            track_y: 0.85,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub env: EnvKind,
    pub background: Rgb,
    pub objects: Vec<ObjectStyle>,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cart: Option<CartGeometry>,
}

impl RenderConfig {
    /// Default palette and geometry for `env`.
    pub fn for_env(env: EnvKind, width: u32, height: u32) -> Self {
        let style = |id: &str, color, shape| ObjectStyle {
            id: id.into(),
            color,
            shape,
        };
        let (objects, cart) = match env {
            EnvKind::PhyworldUniform => (vec![style("ball1", RED, Shape::Disk)], None),
            EnvKind::PhyworldCollision => (
                vec![
                    style("ball1", RED, Shape::Disk),
                    style("ball2", BLUE, Shape::Disk),
                ],
                None,
            ),
            EnvKind::Cartpole => (
                vec![
                    style("track", GRAY, Shape::Rect),
                    style("cart", BLACK, Shape::Rect),
                    style("pole", TAN, Shape::Bar),
                ],
                Some(CartGeometry::default()),
            ),
        };
        RenderConfig {
            env,
            background: WHITE,
            objects,
            width,
            height,
            cart,
        }
    }

    pub fn check(&self) -> Result<(), RenderError> {
        if self.width == 0 || self.height == 0 {
            return Err(RenderError::InvalidConfig("zero frame dimension".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.color == self.background {
                return Err(RenderError::InvalidConfig(format!(
                    "object `{}` has the background color",
                    o.id
                )));
            }
            if self.objects[..i].iter().any(|p| p.color == o.color) {
                return Err(RenderError::InvalidConfig(format!(
                    "object `{}` shares its color with another object",
                    o.id
                )));
            }
        }
        if self.env == EnvKind::Cartpole && self.cart.is_none() {
            return Err(RenderError::InvalidConfig("cart-pole config lacks cart geometry".into()));
        }
        Ok(())
    }

    pub fn style(&self, id: &str) -> Result<&ObjectStyle, RenderError> {
        self.objects
            .iter()
            .find(|o| o.id == id)
            .ok_or_else(|| RenderError::MissingStyle(id.to_string()))
    }

    pub fn color(&self, id: &str) -> Result<Rgb, RenderError> {
        self.style(id).map(|s| s.color)
    }

    pub fn cart_geometry(&self) -> Result<CartGeometry, RenderError> {
        self.cart
            .ok_or_else(|| RenderError::InvalidConfig("missing cart geometry".into()))
    }

    /// Pixel coordinates of the pole pivot (top center of the cart).
    pub fn pivot_px(&self, cart_position: f64) -> Result<(f64, f64), RenderError> {
        let g = self.cart_geometry()?;
        let w = self.width as f64;
        Ok((
            cart_position * w,
            g.track_y * self.height as f64 - g.cart_height * w / 2.0,
        ))
    }
}

/// Inclusive pixel index range covering `[lo, hi]` in pixel units, clipped
/// to `[0, n)`. Returns `None` when empty.
fn span(lo: f64, hi: f64, n: u32) -> Option<(u32, u32)> {
    let a = (lo - 1.0).floor().max(0.0);
    let b = (hi + 1.0).ceil().min(n as f64 - 1.0);
    if !(a <= b) {
        return None;
    }
    Some((a as u32, b as u32))
}

pub fn fill_disk(frame: &mut Frame, cx: f64, cy: f64, radius: f64, color: Rgb) {
    let (w, h) = (frame.width(), frame.height());
    let r2 = radius * radius;
    let (Some((x0, x1)), Some((y0, y1))) = (span(cx - radius, cx + radius, w), span(cy - radius, cy + radius, h))
    else {
        return;
    };
    for y in y0..=y1 {
        let dy = y as f64 + 0.5 - cy;
        for x in x0..=x1 {
            let dx = x as f64 + 0.5 - cx;
            if dx * dx + dy * dy <= r2 {
                frame.set(x, y, color);
            }
        }
    }
}

/// Axis-aligned rectangle centered at `(cx, cy)`.
pub fn fill_rect(frame: &mut Frame, cx: f64, cy: f64, width: f64, height: f64, color: Rgb) {
    let (hw, hh) = (width / 2.0, height / 2.0);
    let (Some((x0, x1)), Some((y0, y1))) = (
        span(cx - hw, cx + hw, frame.width()),
        span(cy - hh, cy + hh, frame.height()),
    ) else {
        return;
    };
    for y in y0..=y1 {
        let dy = (y as f64 + 0.5 - cy).abs();
        if dy > hh {
            continue;
        }
        for x in x0..=x1 {
            if (x as f64 + 0.5 - cx).abs() <= hw {
                frame.set(x, y, color);
            }
        }
    }
}

/// Bar of `length` and `thickness` starting at the pivot and pointing along
/// `angle` from vertical (up), clockwise positive.
pub fn fill_bar(
    frame: &mut Frame,
    pivot: (f64, f64),
    angle: f64,
    length: f64,
    thickness: f64,
    color: Rgb,
) {
    let (s, c) = angle.sin_cos();
    let axis = (s, -c);
    let normal = (c, s);
    let half_t = thickness / 2.0;
    let corners = [
        (pivot.0 + normal.0 * half_t, pivot.1 + normal.1 * half_t),
        (pivot.0 - normal.0 * half_t, pivot.1 - normal.1 * half_t),
        (
            pivot.0 + axis.0 * length + normal.0 * half_t,
            pivot.1 + axis.1 * length + normal.1 * half_t,
        ),
        (
            pivot.0 + axis.0 * length - normal.0 * half_t,
            pivot.1 + axis.1 * length - normal.1 * half_t,
        ),
    ];
    let min_x = corners.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_x = corners.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = corners.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_y = corners.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let (Some((x0, x1)), Some((y0, y1))) = (
        span(min_x, max_x, frame.width()),
        span(min_y, max_y, frame.height()),
    ) else {
        return;
    };
    for y in y0..=y1 {
        let dy = y as f64 + 0.5 - pivot.1;
        for x in x0..=x1 {
            let dx = x as f64 + 0.5 - pivot.0;
            let along = dx * axis.0 + dy * axis.1;
            let across = dx * normal.0 + dy * normal.1;
            if (0.0..=length).contains(&along) && across.abs() <= half_t {
                frame.set(x, y, color);
            }
        }
    }
}

fn value(state: &State, name: &str) -> Result<f64, RenderError> {
    Ok(state.attribute(name)?)
}

pub fn render_state(state: &State, config: &RenderConfig) -> Result<Frame, RenderError> {
    if env_of(state.schema()) != Some(config.env) {
        return Err(RenderError::SchemaMismatch {
            expected: config.env.as_str().into(),
            found: state.schema().env_id().into(),
        });
    }
    let mut frame = Frame::filled(config.width, config.height, config.background)?;
    let w = config.width as f64;
    match config.env {
        EnvKind::PhyworldUniform | EnvKind::PhyworldCollision => {
            for k in 1..=config.env.ball_count() {
                let color = config.color(&format!("ball{k}"))?;
                let x = value(state, &format!("x{k}"))?;
                let y = value(state, &format!("y{k}"))?;
                let r = value(state, &format!("r{k}"))?;
                fill_disk(&mut frame, x * w, y * w, r * w, color);
            }
        }
        EnvKind::Cartpole => {
            let g = config.cart_geometry()?;
            let h = config.height as f64;
            let track_y = g.track_y * h;
            fill_rect(&mut frame, w / 2.0, track_y, w, 2.0, config.color("track")?);
            let x = value(state, "cart_position")?;
            fill_rect(
                &mut frame,
                x * w,
                track_y,
                g.cart_width * w,
                g.cart_height * w,
                config.color("cart")?,
            );
            fill_bar(
                &mut frame,
                config.pivot_px(x)?,
                value(state, "pole_angle")?,
                value(state, "pole_length")? * w,
                g.pole_thickness * w,
                config.color("pole")?,
            );
        }
    }
    Ok(frame)
}

pub fn render_trajectory(traj: &Trajectory, config: &RenderConfig) -> Result<Vec<Frame>, RenderError> {
    if traj.states().is_empty() {
        return Err(RenderError::EmptyTrajectory);
    }
    traj.states().iter().map(|s| render_state(s, config)).collect()
}
