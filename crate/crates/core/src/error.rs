use thiserror::Error;

use crate::game::Violation;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("{what} index {index} out of range at step {step} (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        step: usize,
        index: usize,
        size: usize,
    },
    #[error("{0} must be at least 1")]
    ZeroSize(&'static str),
    #[error("invalid game: {}", summarize(.0))]
    Invalid(Vec<Violation>),
    #[error("capacity exceeded: {0}")]
    Capacity(&'static str),
    #[error("invalid instance parameters: {0}")]
    Spec(String),
    #[error("malformed game file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl GameError {
    pub(crate) fn index(what: &'static str, step: usize, index: usize, size: usize) -> Self {
        GameError::IndexOutOfRange {
            what,
            step,
            index,
            size,
        }
    }
}

fn summarize(v: &[Violation]) -> String {
    match v {
        [] => "no violations".to_string(),
        [one] => one.to_string(),
        [first, rest @ ..] => format!("{first} (and {} more)", rest.len()),
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("payoff matrix has a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("payoff matrix must have at least one row and one column")]
    Empty,
    #[error("gap tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("matrix solve did not reach tolerance at (h={step}, s={state}): gap {gap}")]
    NotConverged { step: usize, state: usize, gap: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("policy shape does not match the game ({0})")]
    Dimension(&'static str),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum LearnerError {
    #[error("visit count t must be at least 1")]
    ZeroVisitCount,
    #[error("invalid hyperparameter: {0}")]
    Hyper(String),
    #[error("Q-OL only works for informed games: the opponent action is required")]
    MissingOpponentAction,
    #[error("{what} index {index} out of range at step {step} (size {size})")]
    Index {
        what: &'static str,
        step: usize,
        index: usize,
        size: usize,
    },
    #[error("malformed learner snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("strong regret needs opponent snapshots; enable `keep_snapshots` in the config")]
    SnapshotsDisabled,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Json(#[from] serde_json::Error),
}
