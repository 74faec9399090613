//! Learned cache placement: a network scores every service, a quantizer
//! turns scores into candidate decisions and the allocation solver picks
//! the best candidate, which also serves as the training label.

pub mod mlp;
pub mod quantize;
pub mod train;

pub use mlp::{sgd_momentum_step, sigmoid, Forward, Mlp, Normalizer};
pub use quantize::{order_preserving_quantize, quantize, repair, stochastic_quantize, Budget, QuantizerConfig, QuantizerKind};
pub use train::{
    label_step, train, training_scenario, Checkpoint, Label, LabeledScenario, LossRow, ReplayBuffer, TestSet, TrainConfig, TrainOutcome,
    TrainedPolicy,
};
