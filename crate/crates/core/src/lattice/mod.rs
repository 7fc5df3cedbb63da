//! Grid geometry and the structured-latent data model.

pub mod grid;
pub mod interp;
pub mod mask;
pub mod octant;
pub mod window;

pub use grid::{
    Cropped, DenseLatentGrid, FeatureLookup, GridDims, OccupancyField, Pos, SparseLatent,
};
pub use interp::trilinear_sample_sparse;
pub use mask::{extrude_segment_map, smooth_mask, MaskVolume, SegmentMap};
pub use octant::{
    gather_adjacent, merge_octants, split_octants, truncate_latent, Direction, OctantIndex,
};
pub use window::{build_window_plan, gaussian_weight, gaussian_window_weights, Window, WindowPlan};
