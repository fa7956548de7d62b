//! Error types shared across the simulator.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Model architecture that cannot be built (empty or non-positive layer sizes).
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    /// Two vectors (or a vector and a model) with incompatible layouts or dimensions.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An API precondition was broken by the caller (stale cache, unnormalized
    /// guidance, aggregator kind mismatch, ...).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// A configuration value violates an invariant. Always names the offending key.
    #[error("invalid config `{key}`: {message}")]
    InvalidConfig { key: String, message: String },

    /// Empty or otherwise unusable input to an operation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A binary input file does not follow its declared format.
    #[error("format error: {0}")]
    Format(String),

    /// Two inputs that must agree (e.g. image and label counts) do not.
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),

    /// A client allocation too small to split into train and test sets.
    #[error("shard too small: {got} samples, need at least {min}")]
    ShardTooSmall { got: usize, min: usize },

    /// Loss became non-finite during the exploration phase.
    #[error("exploration diverged for client {client} at epoch {epoch}")]
    ExplorationDiverged { client: usize, epoch: usize },

    /// Loss became non-finite during a local training round.
    #[error("client {client} diverged in round {round}")]
    ClientDiverged { client: usize, round: usize },

    /// A run cannot proceed (e.g. every explorer diverged).
    #[error("fatal configuration error: {0}")]
    FatalConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
