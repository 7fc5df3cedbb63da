//! Velocity model, condition mixing layer, decoders and flow-matching
//! training.

mod decoders;
mod fusion_layer;
mod model;
mod ops;
mod train;

pub use decoders::{
    decode_occupancy, encode_crop, finetune_decoder, reconstruction_loss, DecoderCrop, EncodedCrop,
    ToyDecoders, APPEARANCE_CHANNELS, STRUCTURE_CHANNELS,
};
pub use fusion_layer::FusionLayer;
pub use model::{ConditionEmbedding, Frame, LatentField, ModelConfig, ToyFlowModel};
pub(crate) use ops::euler_values;
pub use ops::{euler_step, flow_matching_target, interpolate_noisy, FlowTime, Latent};
pub use train::{
    batch_loss_and_grad, train_flow_matching, validation_loss, TrainConfig, TrainLatent,
    TrainSample,
};
