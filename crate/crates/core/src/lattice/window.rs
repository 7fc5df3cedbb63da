//! Overlapping cubic windows and their Gaussian weights.

use crate::error::{Axis, Error, Result};
use crate::lattice::grid::GridDims;

/// One cubic window: its origin and the real-valued center of its voxels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub origin: [usize; 3],
    pub center: [f64; 3],
}

impl Window {
    pub fn contains(&self, p: [usize; 3], size: usize) -> bool {
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] < self.origin[a] + size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowPlan {
    pub dims: GridDims,
    pub window_size: usize,
    pub stride: usize,
    pub windows: Vec<Window>,
}

impl WindowPlan {
    /// Distinct window faces strictly inside the grid, per axis.
    pub fn boundary_planes(&self) -> [Vec<usize>; 3] {
        let extents = self.dims.spatial();
        let mut planes: [Vec<usize>; 3] = Default::default();
        for w in &self.windows {
            for a in 0..3 {
                for face in [w.origin[a], w.origin[a] + self.window_size] {
                    if face > 0 && face < extents[a] {
                        planes[a].push(face);
                    }
                }
            }
        }
        for p in planes.iter_mut() {
            p.sort_unstable();
            p.dedup();
        }
        planes
    }

    /// Indices of the windows that contain `p`, in plan order.
    pub fn covering(&self, p: [usize; 3]) -> impl Iterator<Item = usize> + '_ {
        self.windows
            .iter()
            .enumerate()
            .filter(move |(_, w)| w.contains(p, self.window_size))
            .map(|(j, _)| j)
    }
}

fn axis_origins(extent: usize, window: usize, stride: usize) -> Vec<usize> {
    let mut origins = Vec::new();
    let mut o = 0;
    loop {
        origins.push(o);
        if o + window >= extent {
            break;
        }
        o += stride;
        if o + window > extent {
            o = extent - window;
        }
    }
    origins.dedup();
    origins
}

/// Tiles `dims` with cubic windows of `window_size` voxels stepping by
/// `stride`; the last window on each axis is pulled back so its far face sits
/// on the grid boundary. Windows are ordered z-major, then y, then x.
pub fn build_window_plan(dims: GridDims, window_size: usize, stride: usize) -> Result<WindowPlan> {
    if window_size == 0 {
        return Err(Error::InvalidArgument("window_size must be >= 1".into()));
    }
    if stride == 0 || stride > window_size {
        return Err(Error::InvalidArgument(format!(
            "stride must be in 1..={window_size}, got {stride}"
        )));
    }
    for axis in Axis::ALL {
        let extent = dims.spatial()[axis.index()];
        if extent < window_size {
            return Err(Error::WindowTooLarge {
                axis,
                extent,
                window: window_size,
            });
        }
    }
    let per_axis: Vec<Vec<usize>> = dims
        .spatial()
        .iter()
        .map(|&e| axis_origins(e, window_size, stride))
        .collect();
    let half = (window_size as f64 - 1.0) / 2.0;
    let mut windows = Vec::with_capacity(per_axis.iter().map(Vec::len).product());
    for &z in &per_axis[0] {
        for &y in &per_axis[1] {
            for &x in &per_axis[2] {
                windows.push(Window {
                    origin: [z, y, x],
                    center: [z as f64 + half, y as f64 + half, x as f64 + half],
                });
            }
        }
    }
    Ok(WindowPlan {
        dims,
        window_size,
        stride,
        windows,
    })
}

/// Unnormalized Gaussian weight for an offset from a window center.
#[inline]
pub fn gaussian_weight(offset: [f64; 3], sigma: f64) -> f64 {
    let r2 = offset[0] * offset[0] + offset[1] * offset[1] + offset[2] * offset[2];
    (-r2 / (2.0 * sigma * sigma)).exp()
}

/// Per-voxel weights of one window, row-major over `window_size^3`, measured
/// from the window's voxel center.
pub fn gaussian_window_weights(window_size: usize, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "kernel sigma must be > 0, got {sigma}"
        )));
    }
    let half = (window_size as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(window_size.pow(3));
    for z in 0..window_size {
        for y in 0..window_size {
            for x in 0..window_size {
                out.push(gaussian_weight(
                    [z as f64 - half, y as f64 - half, x as f64 - half],
                    sigma,
                ));
            }
        }
    }
    Ok(out)
}
