use thiserror::Error;

use crate::types::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {}", format_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("covariance matrix is not positive definite ({context})")]
    SingularCovariance { context: String },

    #[error("non-finite value encountered during {phase}")]
    NonFinite { phase: String },

    #[error("rotation matrix is not orthogonal (max deviation {deviation:e})")]
    NotOrthogonal { deviation: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown scenario {id} level {level}")]
    UnknownScenario { id: u32, level: usize },

    #[error("corrupt state encoding: {0}")]
    Decode(String),
}

pub type Result<T> = std::result::Result<T, Error>;

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
