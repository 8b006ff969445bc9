use thiserror::Error;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("case parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("case io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported case schema_version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("case validation error: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerFlowError {
    #[error("power flow diverged after {iterations} iterations")]
    Diverged { iterations: usize },
    #[error("slack bus is islanded from all load")]
    IslandedSlack,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("infeasible start: {0}")]
    InfeasibleStart(PowerFlowError),
    #[error("episode is over; reset before stepping")]
    EpisodeOver,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("line id {0} out of range")]
    UnknownLine(usize),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported checkpoint schema_version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("tensor {name}: {reason}")]
    Shape { name: String, reason: String },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss in {policy} update (surrogate {surrogate}, value {value_loss}, entropy {entropy})")]
    NonFiniteLoss {
        policy: &'static str,
        surrogate: f64,
        value_loss: f64,
        entropy: f64,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("training log io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("invalid training configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum ScreenError {
    #[error("k = {k} out of range 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("missing result for contingency set {0}")]
    MissingResult(usize),
    #[error("agent mode requested without a policy checkpoint")]
    MissingAgent,
    #[error(transparent)]
    Env(EnvError),
    #[error("screening io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("screening csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("screening json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
