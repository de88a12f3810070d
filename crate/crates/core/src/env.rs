//! Environment kinds and their fixed state schemas.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::{AttributeDescriptor, Role, StateSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EnvKind {
    #[serde(rename = "phyworld-uniform")]
    PhyworldUniform,
    #[serde(rename = "phyworld-collision")]
    PhyworldCollision,
    #[serde(rename = "cartpole")]
    Cartpole,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [
        EnvKind::PhyworldUniform,
        EnvKind::PhyworldCollision,
        EnvKind::Cartpole,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::PhyworldUniform => "phyworld-uniform",
            EnvKind::PhyworldCollision => "phyworld-collision",
            EnvKind::Cartpole => "cartpole",
        }
    }

    pub fn ball_count(self) -> usize {
        match self {
            EnvKind::PhyworldUniform => 1,
            EnvKind::PhyworldCollision => 2,
            EnvKind::Cartpole => 0,
        }
    }

    pub fn is_phyworld(self) -> bool {
        self != EnvKind::Cartpole
    }

    /// The fixed attribute layout for this environment.
    ///
    /// Balls carry `x{k}, y{k}, vx{k}, r{k}`; the cart-pole carries the four
    /// classic attributes plus the rendered pole length.
    pub fn schema(self) -> Arc<StateSchema> {
        let attrs = match self {
            EnvKind::PhyworldUniform | EnvKind::PhyworldCollision => (1..=self.ball_count())
                .flat_map(|k| {
                    [
                        AttributeDescriptor::with_role(&format!("x{k}"), Role::Position),
                        AttributeDescriptor::with_role(&format!("y{k}"), Role::Position),
                        AttributeDescriptor::with_role(&format!("vx{k}"), Role::Velocity),
                        AttributeDescriptor::with_role(&format!("r{k}"), Role::Geometry),
                    ]
                })
                .collect(),
            EnvKind::Cartpole => vec![
                AttributeDescriptor::with_role("cart_position", Role::Position),
                AttributeDescriptor::with_role("cart_velocity", Role::Velocity),
                AttributeDescriptor::with_role("pole_angle", Role::Angle),
                AttributeDescriptor::with_role("pole_angular_velocity", Role::AngularVelocity),
                AttributeDescriptor::with_role("pole_length", Role::Geometry),
            ],
        };
        StateSchema::new(self.as_str(), attrs).expect("built-in schema is valid")
    }

    pub fn description(self) -> &'static str {
        match self {
            EnvKind::PhyworldUniform => {
                "A single ball moves horizontally across a white background. \
                 Positions are normalized by the frame width; velocities are in \
                 frame-widths per frame."
            }
            EnvKind::PhyworldCollision => {
                "Two balls of different radii move horizontally on a shared line \
                 and collide once. Positions are normalized by the frame width; \
                 velocities are in frame-widths per frame."
            }
            EnvKind::Cartpole => {
                "A cart on a frictionless horizontal track carries a pole attached \
                 by an unactuated hinge. A constant force pushes the cart. The \
                 state holds the cart position, the cart velocity, the pole angle \
                 from vertical (clockwise positive), the pole angular velocity and \
                 the pole length. Velocities are per frame."
            }
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unsupported environment `{s}`"))
    }
}

/// Resolves the environment a schema belongs to.
pub fn env_of(schema: &StateSchema) -> Option<EnvKind> {
    schema.env_id().parse().ok()
}
