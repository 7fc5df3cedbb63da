//! Gaussian-weighted blending of per-window velocities.

use crate::error::{Error, Result};
use crate::flowmodel::{ConditionEmbedding, Frame, ToyFlowModel};
use crate::lattice::{
    gaussian_window_weights, Cropped, DenseLatentGrid, FeatureLookup, GridDims, Pos, SparseLatent,
    WindowPlan,
};

/// The points of one window, as indices into the support's point list, with
/// their Gaussian weights.
#[derive(Debug, Clone)]
pub(crate) struct WindowMembers {
    pub points: Vec<Pos>,
    pub index: Vec<usize>,
    pub weight: Vec<f64>,
}

/// Which support points each window of a plan sees.
#[derive(Debug, Clone)]
pub(crate) struct WindowAssignment {
    pub plan: WindowPlan,
    pub members: Vec<WindowMembers>,
    pub n_points: usize,
}

impl WindowAssignment {
    /// Every voxel of the plan's grid, in row-major order.
    pub fn dense(plan: &WindowPlan, kernel_sigma: f64) -> Result<Self> {
        let table = gaussian_window_weights(plan.window_size, kernel_sigma)?;
        let dims = plan.dims;
        let ws = plan.window_size;
        let members = plan
            .windows
            .iter()
            .map(|w| {
                let mut m = WindowMembers {
                    points: Vec::with_capacity(ws * ws * ws),
                    index: Vec::with_capacity(ws * ws * ws),
                    weight: Vec::with_capacity(ws * ws * ws),
                };
                let mut local = 0;
                for z in w.origin[0]..w.origin[0] + ws {
                    for y in w.origin[1]..w.origin[1] + ws {
                        for x in w.origin[2]..w.origin[2] + ws {
                            m.points.push([z as i64, y as i64, x as i64]);
                            m.index.push(dims.voxel_index([z, y, x]));
                            m.weight.push(table[local]);
                            local += 1;
                        }
                    }
                }
                m
            })
            .collect();
        Ok(Self {
            plan: plan.clone(),
            members,
            n_points: dims.voxels(),
        })
    }

    /// The active positions of `s`, in its sorted order.
    pub fn sparse(plan: &WindowPlan, s: &SparseLatent, kernel_sigma: f64) -> Result<Self> {
        if !plan.dims.same_spatial(&s.dims()) {
            return Err(Error::ShapeMismatch(
                "window plan and sparse latent grids differ".into(),
            ));
        }
        let table = gaussian_window_weights(plan.window_size, kernel_sigma)?;
        let ws = plan.window_size;
        let mut members: Vec<WindowMembers> = plan
            .windows
            .iter()
            .map(|_| WindowMembers {
                points: Vec::new(),
                index: Vec::new(),
                weight: Vec::new(),
            })
            .collect();
        for i in 0..s.len() {
            let p = s.position(i);
            let mut covered = false;
            for j in plan.covering(p) {
                covered = true;
                let o = plan.windows[j].origin;
                let local = ((p[0] - o[0]) * ws + (p[1] - o[1])) * ws + (p[2] - o[2]);
                let m = &mut members[j];
                m.points.push([p[0] as i64, p[1] as i64, p[2] as i64]);
                m.index.push(i);
                m.weight.push(table[local]);
            }
            if !covered {
                return Err(Error::Uncovered(p));
            }
        }
        Ok(Self {
            plan: plan.clone(),
            members,
            n_points: s.len(),
        })
    }

    pub fn frame(&self, j: usize) -> Frame {
        let o = self.plan.windows[j].origin;
        Frame {
            origin: [o[0] as i64, o[1] as i64, o[2] as i64],
            extent: [self.plan.window_size; 3],
        }
    }

    /// Blends one value block per window (each `members[j].points.len() * c`
    /// long). A point seen by a single window takes that window's value
    /// unchanged.
    pub fn fuse(&self, per_window: &[Vec<f64>], c: usize) -> Result<Vec<f64>> {
        if per_window.len() != self.members.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} windows but {} velocity blocks",
                self.members.len(),
                per_window.len()
            )));
        }
        let n = self.n_points;
        let mut num = vec![0.0; n * c];
        let mut den = vec![0.0; n];
        let mut count = vec![0u32; n];
        let mut single = vec![0.0; n * c];
        for (m, v) in self.members.iter().zip(per_window) {
            if v.len() != m.index.len() * c {
                return Err(Error::ShapeMismatch(
                    "velocity block does not match its window".into(),
                ));
            }
            for (k, (&i, &w)) in m.index.iter().zip(&m.weight).enumerate() {
                let src = &v[k * c..(k + 1) * c];
                count[i] += 1;
                den[i] += w;
                if count[i] == 1 {
                    single[i * c..(i + 1) * c].copy_from_slice(src);
                }
                for (a, b) in num[i * c..(i + 1) * c].iter_mut().zip(src) {
                    *a += w * b;
                }
            }
        }
        for i in 0..n {
            match count[i] {
                0 => return Err(self.uncovered(i)),
                1 => {}
                _ => {
                    let inv = 1.0 / den[i];
                    for (dst, a) in single[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(&num[i * c..(i + 1) * c])
                    {
                        *dst = a * inv;
                    }
                }
            }
        }
        Ok(single)
    }

    // Sparse assignments reject uncovered points at construction, so only
    // dense indices reach here.
    fn uncovered(&self, i: usize) -> Error {
        Error::Uncovered(self.plan.dims.position(i))
    }

    /// Evaluates `model` on every window of `field` and blends the results.
    pub fn velocity<F: FeatureLookup + Sync>(
        &self,
        model: &ToyFlowModel,
        field: &F,
        t: f64,
        cond: &ConditionEmbedding,
    ) -> Result<Vec<f64>> {
        let ws = self.plan.window_size as i64;
        let per_window = self
            .members
            .iter()
            .enumerate()
            .map(|(j, m)| {
                let frame = self.frame(j);
                let o = frame.origin;
                let view = Cropped {
                    inner: field,
                    lo: o,
                    hi: [o[0] + ws, o[1] + ws, o[2] + ws],
                };
                model.velocity_at(&view, &m.points, &frame, t, cond)
            })
            .collect::<Result<Vec<_>>>()?;
        self.fuse(&per_window, field.channels())
    }
}

/// Weighted average of window-shaped velocity blocks over the
/// plan's grid: `sum_j W(x - c_j) v_j(x) / sum_j W(x - c_j)`.
pub fn fuse_window_velocities(
    plan: &WindowPlan,
    per_window_v: &[DenseLatentGrid],
    kernel_sigma: f64,
) -> Result<DenseLatentGrid> {
    let c = plan.dims.c;
    for v in per_window_v {
        let d = v.dims();
        if d.spatial() != [plan.window_size; 3] || d.c != c {
            return Err(Error::ShapeMismatch(format!(
                "window block {:?} does not match window size {} with {c} channels",
                d.spatial(),
                plan.window_size
            )));
        }
    }
    let assign = WindowAssignment::dense(plan, kernel_sigma)?;
    let blocks: Vec<Vec<f64>> = per_window_v.iter().map(|v| v.data().to_vec()).collect();
    let fused = assign.fuse(&blocks, c)?;
    DenseLatentGrid::from_vec(plan.dims, fused)
}

/// Largest `|out - 1|` when every window contributes an all-ones field.
pub fn window_normalization_deviation(plan: &WindowPlan, kernel_sigma: f64) -> Result<f64> {
    let single = WindowPlan {
        dims: plan.dims.with_channels(1)?,
        ..plan.clone()
    };
    let block = DenseLatentGrid::filled(GridDims::cube(plan.window_size, 1)?, 1.0);
    let ones = vec![block; plan.windows.len()];
    let fused = fuse_window_velocities(&single, &ones, kernel_sigma)?;
    Ok(fused
        .data()
        .iter()
        .map(|v| (v - 1.0).abs())
        .fold(0.0, f64::max))
}
