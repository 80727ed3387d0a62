use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no outer clusters given")]
    EmptyClusters,

    #[error("cluster {cluster} is empty")]
    EmptyCluster { cluster: usize },

    #[error("cluster {cluster} references unknown variable {var} (model has {num_vars})")]
    UnknownVariable { cluster: usize, var: usize, num_vars: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("model and region graph disagree: {0}")]
    Incompatible(String),

    #[error("beliefs invalid: {0}")]
    InvalidBeliefs(String),

    #[error("subset region {region} has n + c = {value}; the belief exponent 1/(n + c) is undefined")]
    Exponent { region: usize, value: f64 },

    #[error("the conv2 bound is not certified for this region graph (no allocation from negative to positive subsets); use conv1 instead")]
    Conv2NotCertified,

    #[error("warm-start messages do not match the active subset set")]
    WarmStartMismatch,

    #[error("free energy increased by {increase:e} at outer iteration {outer} despite an exactly solved inner loop")]
    DescentViolation { outer: usize, increase: f64 },

    #[error("state space of {states} joint states exceeds the enumeration limit of {limit}")]
    StateSpaceTooLarge { states: f64, limit: usize },

    #[error("no variants requested")]
    NoVariants,

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
