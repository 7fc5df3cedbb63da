//! Discontinuity across window boundaries against a matched interior sample.

use std::fmt;

use rand::seq::index::sample as sample_indices;

use crate::error::{Error, Result};
use crate::lattice::{DenseLatentGrid, FeatureLookup, GridDims, SparseLatent, WindowPlan};
use crate::rng::{self, stream};

/// A latent whose face-neighbour differences can be measured.
pub trait SeamField: FeatureLookup {
    fn grid(&self) -> GridDims;
}

impl SeamField for DenseLatentGrid {
    fn grid(&self) -> GridDims {
        self.dims()
    }
}

impl SeamField for SparseLatent {
    fn grid(&self) -> GridDims {
        self.dims()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeamReport {
    /// Boundary planes per axis `[z, y, x]`; plane `k` separates voxel
    /// layers `k - 1` and `k`.
    pub planes: [Vec<usize>; 3],
    pub boundary_pairs: usize,
    pub interior_pairs: usize,
    pub boundary_mean: f64,
    pub interior_mean: f64,
    pub ratio: f64,
}

impl SeamReport {
    pub const CSV_HEADER: &'static str =
        "boundary_planes,boundary_pairs,interior_pairs,boundary_mean,interior_mean,ratio";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.planes.iter().map(Vec::len).sum::<usize>(),
            self.boundary_pairs,
            self.interior_pairs,
            self.boundary_mean,
            self.interior_mean,
            self.ratio
        )
    }
}

impl fmt::Display for SeamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "planes_z = {:?}", self.planes[0])?;
        writeln!(f, "planes_y = {:?}", self.planes[1])?;
        writeln!(f, "planes_x = {:?}", self.planes[2])?;
        writeln!(f, "boundary_pairs = {}", self.boundary_pairs)?;
        writeln!(f, "interior_pairs = {}", self.interior_pairs)?;
        writeln!(f, "boundary_mean = {}", self.boundary_mean)?;
        writeln!(f, "interior_mean = {}", self.interior_mean)?;
        write!(f, "ratio = {}", self.ratio)
    }
}

/// Mean absolute per-channel difference between two feature vectors.
fn pair_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Visits every face pair `(p, p + e_axis)` with both voxels present, in a
/// fixed order, passing whether the pair straddles a boundary plane.
fn for_each_pair<L: SeamField + ?Sized>(
    latent: &L,
    is_plane: &[Vec<bool>; 3],
    mut f: impl FnMut(bool, f64),
) {
    let ext = latent.grid().spatial();
    for axis in 0..3 {
        for z in 0..ext[0] {
            for y in 0..ext[1] {
                for x in 0..ext[2] {
                    let p = [z, y, x];
                    if p[axis] + 1 >= ext[axis] {
                        continue;
                    }
                    let Some(a) = latent.lookup(p.map(|v| v as i64)) else {
                        continue;
                    };
                    let mut q = p;
                    q[axis] += 1;
                    let Some(b) = latent.lookup(q.map(|v| v as i64)) else {
                        continue;
                    };
                    f(is_plane[axis][q[axis]], pair_diff(a, b));
                }
            }
        }
    }
}

/// Seam statistics for explicit boundary planes. The interior baseline is a
/// random sample of non-boundary pairs of the same size as the boundary set
/// (or all of them if there are fewer), drawn from `seed`.
pub fn seam_discontinuity_at<L: SeamField + ?Sized>(
    latent: &L,
    planes: &[Vec<usize>; 3],
    seed: u64,
) -> Result<SeamReport> {
    let ext = latent.grid().spatial();
    let mut is_plane: [Vec<bool>; 3] = std::array::from_fn(|a| vec![false; ext[a]]);
    for a in 0..3 {
        for &k in &planes[a] {
            if k == 0 || k >= ext[a] {
                return Err(Error::InvalidArgument(format!(
                    "plane {k} is not inside extent {}",
                    ext[a]
                )));
            }
            is_plane[a][k] = true;
        }
    }
    let (mut n_boundary, mut n_interior, mut boundary_sum) = (0usize, 0usize, 0.0);
    for_each_pair(latent, &is_plane, |boundary, d| {
        if boundary {
            n_boundary += 1;
            boundary_sum += d;
        } else {
            n_interior += 1;
        }
    });
    if n_boundary == 0 {
        return Err(Error::InvalidArgument(
            "no face pairs straddle a boundary plane".into(),
        ));
    }
    if n_interior == 0 {
        return Err(Error::NoInteriorPairs);
    }
    let m = n_boundary.min(n_interior);
    let mut chosen =
        sample_indices(&mut rng::stream_rng(seed, stream::METRICS), n_interior, m).into_vec();
    chosen.sort_unstable();
    let (mut next, mut k, mut interior_sum) = (0usize, 0usize, 0.0);
    for_each_pair(latent, &is_plane, |boundary, d| {
        if boundary {
            return;
        }
        if next < chosen.len() && chosen[next] == k {
            interior_sum += d;
            next += 1;
        }
        k += 1;
    });
    let boundary_mean = boundary_sum / n_boundary as f64;
    let interior_mean = interior_sum / m as f64;
    let ratio = if boundary_mean == 0.0 {
        0.0
    } else if interior_mean > 0.0 {
        boundary_mean / interior_mean
    } else {
        return Err(Error::Numerical(
            "interior pairs have zero discontinuity".into(),
        ));
    };
    Ok(SeamReport {
        planes: planes.clone(),
        boundary_pairs: n_boundary,
        interior_pairs: m,
        boundary_mean,
        interior_mean,
        ratio,
    })
}

/// Seam statistics at the faces of the windows in `plan`.
pub fn seam_discontinuity<L: SeamField + ?Sized>(
    latent: &L,
    plan: &WindowPlan,
    seed: u64,
) -> Result<SeamReport> {
    if !plan.dims.same_spatial(&latent.grid()) {
        return Err(Error::ShapeMismatch(format!(
            "plan {:?} does not match latent {:?}",
            plan.dims.spatial(),
            latent.grid().spatial()
        )));
    }
    seam_discontinuity_at(latent, &plan.boundary_planes(), seed)
}
