use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid mapping: {0}")]
    InvalidMapping(String),
    #[error("level {level} out of range for operand {operand} ({levels} levels)")]
    LevelOutOfRange { operand: crate::Operand, level: usize, levels: usize },
    #[error("missing cost parameter: {0}")]
    MissingCost(String),
    #[error("simulation cap exceeded: {macs} MACs > cap {cap}")]
    SimulationCap { macs: u64, cap: u64 },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
