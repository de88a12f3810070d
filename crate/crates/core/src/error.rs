use thiserror::Error;

use crate::model::Violation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid state: {}", display_violations(.0))]
    InvalidState(Vec<Violation>),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid video: {0}")]
    InvalidVideo(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

fn display_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
