use thiserror::Error;

use crate::model::Violation;
use crate::routing::IterationTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", format_violations(.0))]
    InvalidConfig(Vec<Violation>),

    #[error("failed to parse configuration: {0}")]
    Parse(String),

    #[error("malformed block generator: {0}")]
    InvalidGenerator(String),

    #[error("generator is not irreducible: {0}")]
    NotIrreducible(String),

    #[error("diagonal block at level {level} is singular")]
    SingularBlock { level: usize },

    #[error("level-0 censored chain not irreducible")]
    Level0NotIrreducible,

    #[error("stationary entry {value:e} at level {level}, phase {phase} is negative")]
    NegativeProbability { level: usize, phase: usize, value: f64 },

    #[error("level {level} out of range 1..={max}")]
    LevelOutOfRange { level: usize, max: usize },

    #[error("relative rate {name} must be positive, got {value}")]
    InvalidRate { name: String, value: f64 },

    #[error("state space has {count} states, above the cap of {cap}")]
    StateCapExceeded { count: u128, cap: u128 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        trace: Box<IterationTrace>,
    },

    #[error("state is not in the state space: {0}")]
    StateNotInSpace(String),

    #[error("malformed marginal query: {0}")]
    MalformedQuery(String),

    #[error("invalid simulation settings: {0}")]
    InvalidSimConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
