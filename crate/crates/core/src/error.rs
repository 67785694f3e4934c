use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("stale forward cache: parameters changed since the forward pass")]
    StaleCache,

    #[error("forward cache was produced in eval mode; backward needs a train-mode pass")]
    EvalCache,

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("parameter layout mismatch: {0}")]
    Layout(String),

    #[error("zero-norm noise: {0}")]
    ZeroNoise(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing init snapshot")]
    MissingInit,

    #[error("unknown layer tag `{0}`")]
    UnknownLayer(String),

    #[error("every selected client diverged in round {0}")]
    AllClientsDiverged(usize),
}
