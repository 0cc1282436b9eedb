use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("invalid class network: {0}")]
    InvalidNetwork(String),

    #[error("infeasible mixing specification: {0}")]
    InfeasibleMixing(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid control schedule: {0}")]
    InvalidSchedule(String),

    #[error("step mismatch: {0}")]
    StepMismatch(String),

    #[error("integration drifted off the simplex by {deviation:e} at t = {time}")]
    IntegrationDrift { time: f64, deviation: f64 },

    #[error("schedule is not binary: class {class}, index {index}, value {value}")]
    NonBinarySchedule {
        class: usize,
        index: usize,
        value: f64,
    },

    #[error("at least one start is required")]
    NoStarts,

    #[error("graph construction failed: {0}")]
    GraphConstruction(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
