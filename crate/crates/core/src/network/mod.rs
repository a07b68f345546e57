//! Side-output network: parameters, forward/backward passes, losses,
//! training and checkpoints.

pub mod checkpoint;
pub mod forward;
pub mod loss;
pub mod objective;
pub mod params;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader};
pub use forward::{
    backward, crop, forward, forward_trace, pad_to_multiple, ActivationGrads, ForwardTrace,
    SsoActivations,
};
pub use loss::{class_balance_weights, loc_loss, scale_loss, simplex_deviation, softmax_channels};
pub use objective::{total_objective, LossBreakdown, StageLoss};
pub use params::{first_stage_for_class, ConvLayer, Head, NetworkParams};
pub use train::{
    prepare_input, read_loss_totals, training_pair, LossLog, TrainConfig, TrainSample, Trainer,
};
