//! Octant-wise resolution enhancement of sparse appearance latents.
mod model;
mod pairs;
mod sample;

pub use model::{
    assemble_condition, draw_adjacent_noise, enhancer_loss, enhancer_validation_loss,
    enhancer_velocity, finetune_enhancer, parent_query, AssembledInput, EnhancerCondition,
    EnhancerModel, EnhancerTrainConfig,
};
pub use pairs::{build_pairs, EnhancerPair, PairConfig, PairSet};
pub use sample::{enhance_world, sample_octants, EnhanceConfig};
