//! Domain types shared by every stage of the pipeline: frames, state schemas,
//! symbolic states, trajectories, videos, datasets and parameter vectors.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

pub type Rgb = [u8; 3];

/// A raster RGB image stored row-major, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, CoreError> {
        if width == 0 || height == 0 {
            return Err(CoreError::InvalidFrame(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(CoreError::InvalidFrame(format!(
                "pixel buffer holds {} bytes, expected {expected}",
                pixels.len()
            )));
        }
        Ok(Frame {
            width,
            height,
            pixels,
        })
    }

    /// A frame with every pixel set to `color`.
    pub fn filled(width: u32, height: u32, color: Rgb) -> Result<Self, CoreError> {
        let pixels = color
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Frame::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn same_dims(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, color: Rgb) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&color);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Unit {
    NormalizedLength,
    #[serde(rename = "normalized-length/frame")]
    NormalizedLengthPerFrame,
    Radians,
    #[serde(rename = "radians/frame")]
    RadiansPerFrame,
    Dimensionless,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Position,
    Velocity,
    Angle,
    AngularVelocity,
    Geometry,
}

impl Role {
    /// Attributes recovered by differencing consecutive frames.
    pub fn is_rate(self) -> bool {
        matches!(self, Role::Velocity | Role::AngularVelocity)
    }

    /// Angles are compared modulo a full turn.
    pub fn is_periodic(self) -> bool {
        matches!(self, Role::Angle)
    }
}

/// Smallest admissible geometry value; geometry bounds are `(0, 0.5]`.
pub const GEOMETRY_MIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDescriptor {
    pub name: String,
    pub unit: Unit,
    pub lower: f64,
    pub upper: f64,
    pub role: Role,
}

impl AttributeDescriptor {
    /// Descriptor with the default bounds for its role.
    pub fn with_role(name: &str, role: Role) -> Self {
        let (unit, lower, upper) = match role {
            Role::Position => (Unit::NormalizedLength, 0.0, 1.0),
            Role::Velocity => (Unit::NormalizedLengthPerFrame, -1.0, 1.0),
            Role::Angle => (Unit::Radians, -PI, PI),
            Role::AngularVelocity => (Unit::RadiansPerFrame, -4.0 * PI, 4.0 * PI),
            Role::Geometry => (Unit::NormalizedLength, GEOMETRY_MIN, 0.5),
        };
        AttributeDescriptor {
            name: name.to_string(),
            unit,
            lower,
            upper,
            role,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.lower && value <= self.upper
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.lower, self.upper)
    }
}

/// Returns true when `name` is usable as an identifier in dynamics programs.
pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !crate::dsl::is_reserved_word(name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSchema {
    env_id: String,
    attributes: Vec<AttributeDescriptor>,
}

impl StateSchema {
    pub fn new(
        env_id: impl Into<String>,
        attributes: Vec<AttributeDescriptor>,
    ) -> Result<Arc<Self>, CoreError> {
        let schema = StateSchema {
            env_id: env_id.into(),
            attributes,
        };
        schema.check()?;
        Ok(Arc::new(schema))
    }

    /// Invariant check, also used after deserialization.
    pub fn check(&self) -> Result<(), CoreError> {
        if self.attributes.is_empty() {
            return Err(CoreError::InvalidSchema("schema has no attributes".into()));
        }
        for (i, a) in self.attributes.iter().enumerate() {
            if !is_identifier(&a.name) {
                return Err(CoreError::InvalidSchema(format!(
                    "`{}` is not a valid identifier",
                    a.name
                )));
            }
            if !(a.lower < a.upper) {
                return Err(CoreError::InvalidSchema(format!(
                    "attribute `{}` has lower bound {} not below upper bound {}",
                    a.name, a.lower, a.upper
                )));
            }
            if self.attributes[..i].iter().any(|b| b.name == a.name) {
                return Err(CoreError::InvalidSchema(format!(
                    "duplicate attribute `{}`",
                    a.name
                )));
            }
        }
        Ok(())
    }

    pub fn env_id(&self) -> &str {
        &self.env_id
    }

    pub fn attributes(&self) -> &[AttributeDescriptor] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }
}

/// One bound or shape breach found by [`validate_state`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Length { expected: usize, found: usize },
    OutOfBounds {
        attribute: String,
        value: f64,
        lower: f64,
        upper: f64,
    },
    NonFinite { attribute: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Length { expected, found } => {
                write!(f, "expected {expected} values, found {found}")
            }
            Violation::OutOfBounds {
                attribute,
                value,
                lower,
                upper,
            } => write!(f, "`{attribute}` = {value} outside [{lower}, {upper}]"),
            Violation::NonFinite { attribute } => write!(f, "`{attribute}` is not finite"),
        }
    }
}

/// A symbolic state: values aligned with the attributes of a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    schema: Arc<StateSchema>,
    values: Vec<f64>,
}

impl State {
    pub fn new(schema: Arc<StateSchema>, values: Vec<f64>) -> Result<Self, CoreError> {
        let state = State { schema, values };
        let violations = validate_state(&state);
        if violations.is_empty() {
            Ok(state)
        } else {
            Err(CoreError::InvalidState(violations))
        }
    }

    /// Builds a state without checking bounds. Use [`validate_state`] to inspect it.
    pub fn new_unchecked(schema: Arc<StateSchema>, values: Vec<f64>) -> Self {
        State { schema, values }
    }

    /// Builds a state with every value clamped into its attribute bounds.
    pub fn clamped(schema: Arc<StateSchema>, mut values: Vec<f64>) -> Result<Self, CoreError> {
        for (v, a) in values.iter_mut().zip(schema.attributes()) {
            *v = a.clamp(*v);
        }
        State::new(schema, values)
    }

    pub fn schema(&self) -> &Arc<StateSchema> {
        &self.schema
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn attribute(&self, name: &str) -> Result<f64, CoreError> {
        attribute(self, name)
    }
}

/// Lists every length or bound violation of `state`; empty means valid.
pub fn validate_state(state: &State) -> Vec<Violation> {
    let attrs = state.schema.attributes();
    let mut out = Vec::new();
    if attrs.len() != state.values.len() {
        out.push(Violation::Length {
            expected: attrs.len(),
            found: state.values.len(),
        });
        return out;
    }
    for (a, &v) in attrs.iter().zip(&state.values) {
        if !v.is_finite() {
            out.push(Violation::NonFinite {
                attribute: a.name.clone(),
            });
        } else if !a.contains(v) {
            out.push(Violation::OutOfBounds {
                attribute: a.name.clone(),
                value: v,
                lower: a.lower,
                upper: a.upper,
            });
        }
    }
    out
}

pub fn attribute(state: &State, name: &str) -> Result<f64, CoreError> {
    state
        .schema
        .index_of(name)
        .and_then(|i| state.values.get(i).copied())
        .ok_or_else(|| CoreError::UnknownAttribute(name.to_string()))
}

/// Ordered, non-empty sequence of states over one schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<State>,
}

impl Trajectory {
    pub fn new(states: Vec<State>) -> Result<Self, CoreError> {
        let first = states
            .first()
            .ok_or_else(|| CoreError::InvalidTrajectory("trajectory is empty".into()))?;
        if let Some(i) = states
            .iter()
            .position(|s| !Arc::ptr_eq(s.schema(), first.schema()) && s.schema() != first.schema())
        {
            return Err(CoreError::InvalidTrajectory(format!(
                "state {i} uses a different schema"
            )));
        }
        Ok(Trajectory { states })
    }

    pub fn schema(&self) -> &Arc<StateSchema> {
        self.states[0].schema()
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, t: usize) -> Option<&State> {
        self.states.get(t)
    }

    /// Values of one attribute across all states.
    pub fn series(&self, name: &str) -> Result<Vec<f64>, CoreError> {
        let i = self
            .schema()
            .index_of(name)
            .ok_or_else(|| CoreError::UnknownAttribute(name.to_string()))?;
        Ok(self.states.iter().map(|s| s.values()[i]).collect())
    }

    pub fn truncated(&self, len: usize) -> Trajectory {
        Trajectory {
            states: self.states[..len.clamp(1, self.states.len())].to_vec(),
        }
    }
}

/// A rendered clip of `total_frames + 1` frames, the first `conditioning`
/// of which are observed.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    frames: Vec<Frame>,
    total_frames: usize,
    conditioning: usize,
    env_config_id: String,
    ground_truth: Option<Trajectory>,
}

impl Video {
    /// `total_frames` is T (the clip holds T+1 frames); `conditioning` is F+1.
    pub fn new(
        frames: Vec<Frame>,
        total_frames: usize,
        conditioning: usize,
        env_config_id: impl Into<String>,
        ground_truth: Option<Trajectory>,
    ) -> Result<Self, CoreError> {
        if frames.len() != total_frames + 1 {
            return Err(CoreError::InvalidVideo(format!(
                "{} frames for T = {total_frames}",
                frames.len()
            )));
        }
        if conditioning == 0 || conditioning > total_frames {
            return Err(CoreError::InvalidVideo(format!(
                "conditioning count {conditioning} must satisfy 1 <= F+1 <= T = {total_frames}"
            )));
        }
        if frames.iter().any(|f| !f.same_dims(&frames[0])) {
            return Err(CoreError::InvalidVideo("frames differ in size".into()));
        }
        if let Some(gt) = &ground_truth {
            if gt.len() != frames.len() {
                return Err(CoreError::InvalidVideo(format!(
                    "ground truth has {} states for {} frames",
                    gt.len(),
                    frames.len()
                )));
            }
        }
        Ok(Video {
            frames,
            total_frames,
            conditioning,
            env_config_id: env_config_id.into(),
            ground_truth,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    /// T: index of the last frame.
    pub fn total_frames(&self) -> usize {
        self.total_frames
    }

    /// F+1: number of observed frames.
    pub fn conditioning(&self) -> usize {
        self.conditioning
    }

    /// F: index of the last observed frame.
    pub fn last_seen(&self) -> usize {
        self.conditioning - 1
    }

    pub fn env_config_id(&self) -> &str {
        &self.env_config_id
    }

    pub fn ground_truth(&self) -> Option<&Trajectory> {
        self.ground_truth.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub seed: u64,
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    videos: Vec<Video>,
    manifest: Vec<VideoMeta>,
}

impl Dataset {
    pub fn new(videos: Vec<Video>, manifest: Vec<VideoMeta>) -> Result<Self, CoreError> {
        if videos.is_empty() {
            return Err(CoreError::InvalidDataset("dataset has no videos".into()));
        }
        if manifest.len() != videos.len() {
            return Err(CoreError::InvalidDataset(format!(
                "{} manifest entries for {} videos",
                manifest.len(),
                videos.len()
            )));
        }
        let schema_of = |v: &Video| v.ground_truth().map(|g| g.schema().clone());
        let first = schema_of(&videos[0]);
        for (k, v) in videos.iter().enumerate().skip(1) {
            if v.env_config_id() != videos[0].env_config_id() || schema_of(v) != first {
                return Err(CoreError::InvalidDataset(format!(
                    "video {k} does not share the environment of video 0"
                )));
            }
        }
        Ok(Dataset { videos, manifest })
    }

    pub fn videos(&self) -> &[Video] {
        &self.videos
    }

    pub fn manifest(&self) -> &[VideoMeta] {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Named continuous placeholders of a dynamics program, each with a box bound.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector {
    entries: Vec<Param>,
}

impl ParamVector {
    pub fn new(entries: Vec<Param>) -> Result<Self, CoreError> {
        let pv = ParamVector { entries };
        pv.check()?;
        Ok(pv)
    }

    pub fn empty() -> Self {
        ParamVector::default()
    }

    pub fn check(&self) -> Result<(), CoreError> {
        for (i, p) in self.entries.iter().enumerate() {
            if !is_identifier(&p.name) {
                return Err(CoreError::InvalidParams(format!(
                    "`{}` is not a valid identifier",
                    p.name
                )));
            }
            if self.entries[..i].iter().any(|q| q.name == p.name) {
                return Err(CoreError::InvalidParams(format!(
                    "duplicate parameter `{}`",
                    p.name
                )));
            }
            if !(p.lower <= p.value && p.value <= p.upper) || !p.value.is_finite() {
                return Err(CoreError::InvalidParams(format!(
                    "parameter `{}` = {} outside [{}, {}]",
                    p.name, p.value, p.lower, p.upper
                )));
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> &[Param] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|p| p.value).collect()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.entries.iter().map(|p| p.lower).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.entries.iter().map(|p| p.upper).collect()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    /// Same names and bounds with new values, which must lie in the box.
    pub fn with_values(&self, values: &[f64]) -> Result<Self, CoreError> {
        if values.len() != self.entries.len() {
            return Err(CoreError::InvalidParams(format!(
                "{} values for {} parameters",
                values.len(),
                self.entries.len()
            )));
        }
        let entries = self
            .entries
            .iter()
            .zip(values)
            .map(|(p, &value)| Param { value, ..p.clone() })
            .collect();
        ParamVector::new(entries)
    }
}
