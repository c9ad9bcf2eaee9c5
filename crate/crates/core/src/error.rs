use thiserror::Error;

use crate::game::GameTrace;
use crate::model::Assignment;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("path loss undefined for distance {0} km")]
    Domain(f64),
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("device {device} is processed locally; {what} is only defined for offloading devices")]
    NotOffloading { device: usize, what: &'static str },
    #[error("device index {0} out of range")]
    UnknownDevice(usize),
}

#[derive(Debug, Error)]
pub enum GameError {
    #[error("best-response dynamics did not converge within {max_outer} outer rounds")]
    NotConverged { max_outer: usize, assignment: Assignment, trace: Box<GameTrace> },
    #[error("exhaustive search refused: {profiles} profiles exceeds cap {cap}")]
    SearchTooLarge { profiles: u128, cap: u128 },
    #[error("no pure Nash equilibrium exists in the enumerated strategy space")]
    NoEquilibrium,
    #[error("invalid game configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum PowerError {
    #[error("power subproblem infeasible at MM iteration {iteration}; devices {devices:?}")]
    Infeasible { iteration: usize, devices: Vec<usize> },
    #[error("invalid power allocation input: {0}")]
    Input(String),
}

#[derive(Debug, Error)]
pub enum AoError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Power(#[from] PowerError),
    #[error("invalid alternating-optimization config: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("empty metrics table")]
    Empty,
}
