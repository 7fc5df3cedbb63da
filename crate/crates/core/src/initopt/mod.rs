//! Initial-latent optimization in voxel or Fourier space, and the overlap
//! scores used to track it.

mod optimize;
mod spectral;

pub use optimize::{
    dice, iou, linear_loss, linear_traj_endpoint, masked_iou_dice, optimize_initial_latent,
    LatentGradient, LinearTrajectory, OptConfig, OptOutcome, OptStatus, Optimizer,
    Parameterization, TargetConstraint, TraceRow, VoxelBox,
};
pub use spectral::{
    fft3_adjoint, fft3_forward, fft3_inverse, inverse_imag_residual, SpectralLatent,
};
