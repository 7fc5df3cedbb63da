//! Mask-weighted mixing of per-label velocities.

use crate::error::{Error, Result};
use crate::lattice::{
    extrude_segment_map, smooth_mask, DenseLatentGrid, GridDims, MaskVolume, SegmentMap,
};

/// Blur width of the label masks as a function of flow time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaSchedule {
    /// `sigma_t = sigma_max * t`.
    Linear { sigma_max: f64 },
    /// The same blur at every step; `Constant(0.0)` is hard-mask mixing.
    Constant(f64),
}

impl Default for SigmaSchedule {
    fn default() -> Self {
        SigmaSchedule::Linear { sigma_max: 8.0 }
    }
}

impl SigmaSchedule {
    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            SigmaSchedule::Linear { sigma_max } => sigma_max,
            SigmaSchedule::Constant(s) => s,
        };
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma schedule value must be >= 0, got {v}"
            )));
        }
        Ok(())
    }

    pub fn sigma(&self, t: f64) -> f64 {
        match *self {
            SigmaSchedule::Linear { sigma_max } => sigma_max * t.clamp(0.0, 1.0),
            SigmaSchedule::Constant(s) => s,
        }
    }
}

/// Mixes per-point velocities: `sum_k m_k v_k / sum_k m_k`. `weights[k]`
/// holds one mask value per point, `velocities[k]` holds `c` values per
/// point. With one label the velocity is returned unchanged.
pub(crate) fn mix_labels(
    weights: &[Vec<f64>],
    velocities: &[Vec<f64>],
    c: usize,
) -> Result<Vec<f64>> {
    if weights.len() != velocities.len() || weights.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} masks for {} velocity fields",
            weights.len(),
            velocities.len()
        )));
    }
    if velocities.len() == 1 {
        return Ok(velocities[0].clone());
    }
    let n = weights[0].len();
    if weights.iter().any(|w| w.len() != n) || velocities.iter().any(|v| v.len() != n * c) {
        return Err(Error::ShapeMismatch(
            "masks and velocities cover different point sets".into(),
        ));
    }
    let mut out = vec![0.0; n * c];
    for i in 0..n {
        let mut den = 0.0;
        let dst = &mut out[i * c..(i + 1) * c];
        for (w, v) in weights.iter().zip(velocities) {
            let m = w[i];
            if m == 0.0 {
                continue;
            }
            den += m;
            for (o, x) in dst.iter_mut().zip(&v[i * c..(i + 1) * c]) {
                *o += m * x;
            }
        }
        if !(den > 0.0) {
            return Err(Error::ZeroMaskSum([i, 0, 0]));
        }
        if den != 1.0 {
            dst.iter_mut().for_each(|o| *o /= den);
        }
    }
    Ok(out)
}

/// `sum_k m_k(x) v_k(x) / sum_k m_k(x)` over dense grids, with the masks
/// already smoothed.
pub fn fuse_segment_velocities(
    masks: &[MaskVolume],
    per_label_v: &[DenseLatentGrid],
) -> Result<DenseLatentGrid> {
    let first = per_label_v
        .first()
        .ok_or_else(|| Error::InvalidArgument("no label velocities".into()))?;
    let dims = first.dims();
    for (m, v) in masks.iter().zip(per_label_v) {
        if !m.dims().same_spatial(&dims) || v.dims() != dims {
            return Err(Error::ShapeMismatch(
                "masks and velocities must share one grid".into(),
            ));
        }
    }
    let weights: Vec<Vec<f64>> = masks.iter().map(|m| m.weights().to_vec()).collect();
    let vels: Vec<Vec<f64>> = per_label_v.iter().map(|v| v.data().to_vec()).collect();
    let mixed = mix_labels(&weights, &vels, dims.c).map_err(|e| match e {
        Error::ZeroMaskSum([i, _, _]) => Error::ZeroMaskSum(dims.position(i)),
        other => other,
    })?;
    DenseLatentGrid::from_vec(dims, mixed)
}

/// Largest `|out - 1|` after mixing all-ones velocities under `masks`.
pub fn segment_normalization_deviation(masks: &[MaskVolume]) -> Result<f64> {
    let first = masks
        .first()
        .ok_or_else(|| Error::InvalidArgument("no masks".into()))?;
    let ones = DenseLatentGrid::filled(first.dims().with_channels(1)?, 1.0);
    let fused = fuse_segment_velocities(masks, &vec![ones; masks.len()])?;
    Ok(fused
        .data()
        .iter()
        .map(|v| (v - 1.0).abs())
        .fold(0.0, f64::max))
}

/// Per-label column masks of a world grid, kept two-dimensional: masks are
/// constant along the vertical axis, so blurring the top view is the same
/// as blurring the extruded volume.
#[derive(Debug, Clone)]
pub(crate) struct ColumnMasks {
    w: usize,
    base: Vec<MaskVolume>,
}

impl ColumnMasks {
    pub fn new(map: &SegmentMap, dims: GridDims) -> Result<Self> {
        let flat = GridDims::new(1, dims.h, dims.w, 1)?;
        Ok(Self {
            w: dims.w,
            base: extrude_segment_map(map, flat)?,
        })
    }

    /// Mask values at each point (`[z, y, x]`) for blur `sigma`.
    pub fn weights_at(&self, sigma: f64, points: &[[usize; 3]]) -> Result<Vec<Vec<f64>>> {
        self.base
            .iter()
            .map(|m| {
                let sm = smooth_mask(m, sigma)?;
                let wts = sm.weights();
                Ok(points.iter().map(|p| wts[p[1] * self.w + p[2]]).collect())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use std::collections::BTreeMap;

    fn random_field(seed: u64, dims: GridDims) -> DenseLatentGrid {
        DenseLatentGrid::from_vec(
            dims,
            rng::normal_vec(&mut rng::seeded(seed), dims.voxels() * dims.c),
        )
        .unwrap()
    }

    fn half_map(h: usize, w: usize) -> SegmentMap {
        let labels = (0..h * w)
            .map(|i| if i % w < w / 2 { 0 } else { 1 })
            .collect();
        let prompts: BTreeMap<u32, String> = [(0, "hills".into()), (1, "towers".into())].into();
        SegmentMap::new(h, w, labels, prompts).unwrap()
    }

    #[test]
    fn single_label_is_passthrough() {
        let dims = GridDims::new(3, 4, 5, 2).unwrap();
        let v = random_field(1, dims);
        let m = MaskVolume::ones(dims.with_channels(1).unwrap());
        assert_eq!(fuse_segment_velocities(&[m], std::slice::from_ref(&v)).unwrap(), v);
    }

    #[test]
    fn shared_field_is_unchanged_by_masks() {
        let dims = GridDims::new(3, 6, 8, 1).unwrap();
        let v = random_field(2, dims);
        let masks: Vec<_> = extrude_segment_map(&half_map(6, 8), dims)
            .unwrap()
            .iter()
            .map(|m| smooth_mask(m, 1.5).unwrap())
            .collect();
        let out = fuse_segment_velocities(&masks, &[v.clone(), v.clone()]).unwrap();
        for (a, b) in out.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_half_space_selects_each_label_exactly() {
        let dims = GridDims::new(2, 5, 8, 1).unwrap();
        let a = random_field(3, dims);
        let b = random_field(4, dims);
        let masks = extrude_segment_map(&half_map(5, 8), dims).unwrap();
        let out = fuse_segment_velocities(&masks, &[a.clone(), b.clone()]).unwrap();
        for i in 0..dims.voxels() {
            let p = dims.position(i);
            let expected = if p[2] < 4 { a.at(p) } else { b.at(p) };
            assert_eq!(out.at(p), expected, "at {p:?}");
        }
    }

    #[test]
    fn zero_mask_sum_rejected() {
        let dims = GridDims::new(1, 2, 2, 1).unwrap();
        let z = MaskVolume::new(dims, vec![0.0; 4]).unwrap();
        let v = random_field(5, dims);
        assert!(matches!(
            fuse_segment_velocities(&[z.clone(), z], &[v.clone(), v]),
            Err(Error::ZeroMaskSum(_))
        ));
    }

    #[test]
    fn three_label_normalization() {
        let dims = GridDims::new(4, 12, 12, 1).unwrap();
        let labels = (0..144).map(|i| ((i % 12) / 4) as u32).collect();
        let prompts: BTreeMap<u32, String> = (0..3).map(|l| (l, format!("p{l}"))).collect();
        let map = SegmentMap::new(12, 12, labels, prompts).unwrap();
        let masks: Vec<_> = extrude_segment_map(&map, dims)
            .unwrap()
            .iter()
            .map(|m| smooth_mask(m, 3.0).unwrap())
            .collect();
        assert!(segment_normalization_deviation(&masks).unwrap() <= 1e-6);
    }

    #[test]
    fn column_masks_match_extruded_smoothing() {
        let dims = GridDims::new(3, 6, 8, 1).unwrap();
        let map = half_map(6, 8);
        let cm = ColumnMasks::new(&map, dims).unwrap();
        let pts: Vec<[usize; 3]> = (0..dims.voxels()).map(|i| dims.position(i)).collect();
        let w = cm.weights_at(2.0, &pts).unwrap();
        let full = extrude_segment_map(&map, dims).unwrap();
        for (k, m) in full.iter().enumerate() {
            let sm = smooth_mask(m, 2.0).unwrap();
            for (a, b) in w[k].iter().zip(sm.weights()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_schedule_hits_zero() {
        let s = SigmaSchedule::default();
        assert_eq!(s.sigma(0.0), 0.0);
        assert_eq!(s.sigma(1.0), 8.0);
        assert!(s.sigma(0.3) <= s.sigma(0.6));
    }
}
