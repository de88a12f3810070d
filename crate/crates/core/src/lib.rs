//! Program-structured world models for simple rendered physics videos.
//!
//! Frames are perceived into symbolic states, a dynamics program advances
//! the state, and a renderer turns predicted states back into frames. The
//! program structure is chosen from a small set of hypotheses and its
//! continuous parameters are fitted to training clips.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dsl;
pub mod dynamics;
pub mod env;
pub mod envsim;
pub mod error;
pub mod fit;
pub mod metrics;
pub mod model;
pub mod perceive;
pub mod pipeline;
pub mod proposer;
pub mod render;

pub use dynamics::{builtin_templates, rollout, transition, DynamicsProgram, TemplateRegistry};
pub use env::{env_of, EnvKind};
pub use envsim::EnvConfig;
pub use error::CoreError;
pub use fit::{FitConfig, FitReport};
pub use model::*;
pub use render::RenderConfig;
