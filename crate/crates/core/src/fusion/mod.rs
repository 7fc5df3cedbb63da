//! Window-fused and segment-guided sampling.

mod sampler;
mod segment;
mod window;

pub use sampler::{
    denoise, resolve_conditions, sample_independent_windows, sample_latent_fusion, sample_plain,
    sample_segment_guided, sample_sparse_segment_guided, sample_world, sample_world_plain,
    SamplerConfig, WorldModels,
};
pub use segment::{fuse_segment_velocities, segment_normalization_deviation, SigmaSchedule};
pub use window::{fuse_window_velocities, window_normalization_deviation};
