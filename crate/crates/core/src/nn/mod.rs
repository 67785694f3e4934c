//! Minimal deterministic network engine: dense, conv, BatchNorm and ReLU
//! layers with a softmax cross-entropy head, manual backprop and SGD.

mod arch;
mod kernels;
mod model;
mod train;

pub use arch::{Architecture, BnInit, Layer, LayerParams};
pub use model::{
    softmax_cross_entropy, BnState, CrossEntropy, Evaluation, ForwardCache, Mode, Model, BN_MOMENTUM,
    DEFAULT_BN_EPSILON, EVAL_CHUNK,
};
pub use train::{train, train_with, EpochLog, LrSchedule, Regularizer, Sgd, TrainConfig, TrainHooks};
