//! Occupancy loss kernels with exact gradients, a small BEV
//! encoder–decoder with hand-written backward passes, training loops and
//! evaluation.

mod checkpoint;
mod field;
mod layers;
mod loss;
mod metrics;
mod model;
mod optim;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader, TensorShape, CHECKPOINT_MAGIC};
pub use field::{softmax_backward, softmax_field, BevFeatures, Field};
pub use layers::{relu, relu_backward, Conv2d, ConvGrad, Linear};
pub use loss::{
    lovasz_loss, lovasz_softmax, lovasz_sort_pattern, total_loss, weighted_ce, LossOutput, LovaszClasses, LovaszOutput,
    Target, TotalLoss,
};
pub use metrics::{miou, ConfusionMatrix, MiouReport};
pub use model::{
    decoder_forward, encoder_forward, Activations, ModelConfig, ModelParams, PillarInput, ENCODER_TENSORS,
    OFFSET_FEATURES,
};
pub use optim::{Adam, OneCycle};
pub use train::{
    batch_gradient, evaluate, finetune_segmentation, pretrain, train_step, LossTrace, Sample, SampleSource, TrainConfig,
};
