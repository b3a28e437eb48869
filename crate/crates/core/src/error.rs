use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("regular tree (d={d}, n={n}) needs {vertices} vertices, more than the supported {max}")]
    TreeTooLarge { d: u32, n: u32, vertices: u128, max: u64 },

    #[error("vertex budget of {budget} exceeded while growing a Galton-Watson tree")]
    VertexBudgetExceeded { budget: u64 },

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("invalid offspring distribution: {0}")]
    InvalidDistribution(String),

    #[error("series for E[f(X)] did not converge within {iterations} terms (tail tolerance {tolerance:e})")]
    TruncationDiverged { iterations: u64, tolerance: f64 },

    #[error("duplicate link time {time} on edge {edge}")]
    DuplicateLinkTime { edge: u32, time: f64 },

    #[error("link index {index} out of range on edge {edge} ({len} links)")]
    LinkIndexOutOfRange { edge: u32, index: usize, len: usize },

    #[error("configuration has {config_edges} edges but the tree has {tree_edges}")]
    EdgeCountMismatch { tree_edges: usize, config_edges: usize },

    #[error("partition function overflowed f64 on a tree with {vertices} vertices; use the log value instead")]
    PartitionOverflow { vertices: usize },

    #[error("invalid sampler schedule: {0}")]
    InvalidSchedule(String),

    #[error("cached loop count {cached} disagrees with recomputation {actual} at step {step}")]
    LoopCountDrift { cached: u64, actual: u64, step: u64 },

    #[error("q_tilde has no sign change against 1 on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },

    #[error("q_tilde is not monotone on the bisection bracket near beta={beta}")]
    NotMonotone { beta: f64 },

    #[error("integer search exceeded its cap of {cap}: {what}")]
    SearchCapExceeded { cap: u64, what: String },

    #[error("no valid epsilon exists for these inputs: {0}")]
    NoValidEpsilon(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
