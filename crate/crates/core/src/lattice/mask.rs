//! Segment maps and the per-label 3D mask volumes derived from them.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::grid::GridDims;

/// A top-view label raster with one prompt per label.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    prompts: BTreeMap<u32, String>,
}

impl SegmentMap {
    pub fn new(
        height: usize,
        width: usize,
        labels: Vec<u32>,
        prompts: BTreeMap<u32, String>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDims(format!("raster {height}x{width}")));
        }
        if labels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "raster {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        let missing: Vec<u32> = labels
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .filter(|l| !prompts.contains_key(l))
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingPrompt(missing));
        }
        Ok(Self {
            height,
            width,
            labels,
            prompts,
        })
    }

    /// Single-label map.
    pub fn uniform(height: usize, width: usize, label: u32, prompt: &str) -> Self {
        let mut prompts = BTreeMap::new();
        prompts.insert(label, prompt.to_string());
        Self {
            height,
            width,
            labels: vec![label; height * width],
            prompts,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn raster(&self) -> &[u32] {
        &self.labels
    }

    pub fn label_at(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn prompts(&self) -> &BTreeMap<u32, String> {
        &self.prompts
    }

    /// Distinct labels present in the raster, ascending.
    pub fn labels(&self) -> Vec<u32> {
        self.labels
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn num_labels(&self) -> usize {
        self.labels().len()
    }

    /// Nearest-neighbor lookup of the raster at grid column `(y, x)`.
    pub fn label_for_column(&self, y: usize, x: usize, grid_h: usize, grid_w: usize) -> u32 {
        let row =
            (((y as f64 + 0.5) * self.height as f64 / grid_h as f64) as usize).min(self.height - 1);
        let col =
            (((x as f64 + 0.5) * self.width as f64 / grid_w as f64) as usize).min(self.width - 1);
        self.label_at(row, col)
    }
}

/// Per-voxel weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVolume {
    dims: GridDims,
    weights: Vec<f64>,
}

impl MaskVolume {
    pub fn new(dims: GridDims, weights: Vec<f64>) -> Result<Self> {
        let dims = dims.with_channels(1)?;
        if weights.len() != dims.voxels() {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?} needs {} weights, got {}",
                dims.spatial(),
                dims.voxels(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::InvalidArgument(format!(
                "mask weight {w} outside [0, 1]"
            )));
        }
        Ok(Self { dims, weights })
    }

    pub fn from_fn(dims: GridDims, f: impl Fn([usize; 3]) -> f64) -> Result<Self> {
        let dims = dims.with_channels(1)?;
        let weights = (0..dims.voxels()).map(|i| f(dims.position(i))).collect();
        Self::new(dims, weights)
    }

    pub fn ones(dims: GridDims) -> Self {
        let dims = GridDims { c: 1, ..dims };
        Self {
            dims,
            weights: vec![1.0; dims.voxels()],
        }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn at(&self, p: [usize; 3]) -> f64 {
        self.weights[self.dims.voxel_index(p)]
    }

    pub fn is_binary(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0 || w == 1.0)
    }

    pub fn count_nonzero(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }
}

/// Lifts the top-view map to one binary mask per label (ascending label
/// order) by extruding each column through the full vertical axis.
pub fn extrude_segment_map(map: &SegmentMap, dims: GridDims) -> Result<Vec<MaskVolume>> {
    let dims = dims.with_channels(1)?;
    let labels = map.labels();
    let mut column_label = vec![0usize; dims.h * dims.w];
    for y in 0..dims.h {
        for x in 0..dims.w {
            let l = map.label_for_column(y, x, dims.h, dims.w);
            column_label[y * dims.w + x] = labels.binary_search(&l).expect("label from raster");
        }
    }
    let masks = (0..labels.len())
        .map(|k| {
            let weights = (0..dims.voxels())
                .map(|i| {
                    let col = i % (dims.h * dims.w);
                    if column_label[col] == k {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            MaskVolume { dims, weights }
        })
        .collect();
    Ok(masks)
}

/// Reflects an out-of-range index back into `0..n` (edge sample repeated).
#[inline]
pub(crate) fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Normalized 1D Gaussian taps over `[-radius, radius]`, radius `ceil(3 sigma)`.
pub(crate) fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|o| (-(o * o) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Convolves a scalar volume with a separable kernel along each axis,
/// reflecting at the boundaries.
pub(crate) fn separable_convolve(values: &[f64], dims: [usize; 3], taps: &[f64]) -> Vec<f64> {
    let radius = (taps.len() / 2) as i64;
    let strides = [dims[1] * dims[2], dims[2], 1];
    let mut cur = values.to_vec();
    let mut next = vec![0.0; values.len()];
    for axis in 0..3 {
        let n = dims[axis];
        if n == 1 {
            // reflection of a single sample: every tap reads the same value
            continue;
        }
        let stride = strides[axis];
        let ntaps = taps.len();
        let table: Vec<usize> = (0..n)
            .flat_map(|c| (0..ntaps).map(move |k| reflect_index(c as i64 + k as i64 - radius, n)))
            .collect();
        let src = &cur;
        next.par_iter_mut().enumerate().for_each(|(i, out)| {
            let coord = (i / stride) % n;
            let base = i - coord * stride;
            let row = &table[coord * ntaps..(coord + 1) * ntaps];
            let mut acc = 0.0;
            for (&t, &j) in taps.iter().zip(row) {
                acc += t * src[base + j * stride];
            }
            *out = acc;
        });
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Blurs a mask with a normalized Gaussian (radius `ceil(3 sigma)`,
/// reflective boundary). `sigma == 0` returns the mask unchanged.
pub fn smooth_mask(mask: &MaskVolume, sigma: f64) -> Result<MaskVolume> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(mask.clone());
    }
    let taps = gaussian_taps(sigma);
    let mut weights = separable_convolve(&mask.weights, mask.dims.spatial(), &taps);
    for w in &mut weights {
        *w = w.clamp(0.0, 1.0);
    }
    Ok(MaskVolume {
        dims: mask.dims,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompts(n: u32) -> BTreeMap<u32, String> {
        (0..n).map(|l| (l, format!("label {l}"))).collect()
    }

    #[test]
    fn missing_prompt_lists_labels() {
        let err = SegmentMap::new(1, 3, vec![0, 4, 7], prompts(1)).unwrap_err();
        match err {
            Error::MissingPrompt(l) => assert_eq!(l, vec![4, 7]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn one_label_gives_all_ones() {
        let map = SegmentMap::new(2, 2, vec![0; 4], prompts(1)).unwrap();
        let masks = extrude_segment_map(&map, GridDims::cube(4, 1).unwrap()).unwrap();
        assert_eq!(masks.len(), 1);
        assert!(masks[0].weights().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn half_maps_are_complements() {
        let map = SegmentMap::new(2, 2, vec![0, 1, 0, 1], prompts(2)).unwrap();
        let masks = extrude_segment_map(&map, GridDims::new(3, 4, 6, 1).unwrap()).unwrap();
        assert_eq!(masks.len(), 2);
        for (a, b) in masks[0].weights().iter().zip(masks[1].weights()) {
            assert_eq!(a + b, 1.0);
        }
        assert_eq!(masks[0].at([2, 3, 2]), 1.0);
        assert_eq!(masks[0].at([0, 0, 3]), 0.0);
    }

    #[test]
    fn three_labels_partition_every_voxel() {
        let raster = vec![0, 1, 2, 2, 1, 0, 1, 1, 2];
        let map = SegmentMap::new(3, 3, raster, prompts(3)).unwrap();
        let dims = GridDims::new(4, 7, 5, 1).unwrap();
        let masks = extrude_segment_map(&map, dims).unwrap();
        for i in 0..dims.voxels() {
            let total: f64 = masks.iter().map(|m| m.weights()[i]).sum();
            assert_eq!(total, 1.0);
            assert_eq!(masks.iter().filter(|m| m.weights()[i] == 1.0).count(), 1);
        }
    }

    #[test]
    fn smoothing_zero_sigma_is_identity_and_constants_survive() {
        let dims = GridDims::new(5, 6, 7, 1).unwrap();
        let m = MaskVolume::from_fn(dims, |p| if p[2] < 3 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(smooth_mask(&m, 0.0).unwrap(), m);
        let ones = MaskVolume::ones(dims);
        let s = smooth_mask(&ones, 2.3).unwrap();
        assert!(s.weights().iter().all(|&w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn smoothed_half_space_matches_direct_convolution() {
        let dims = GridDims::new(3, 4, 12, 1).unwrap();
        let sigma = 2.0;
        let m = MaskVolume::from_fn(dims, |p| if p[2] < 6 { 1.0 } else { 0.0 }).unwrap();
        let s = smooth_mask(&m, sigma).unwrap();
        // brute-force 3D convolution with the full (non-separated) kernel
        let r = 6i64;
        let g = |o: i64| (-(o * o) as f64 / (2.0 * sigma * sigma)).exp();
        let norm: f64 = (-r..=r).map(g).sum::<f64>().powi(3);
        for x in [5usize, 6] {
            let p = [1usize, 2, x];
            let mut acc = 0.0;
            for dz in -r..=r {
                for dy in -r..=r {
                    for dx in -r..=r {
                        let q = [
                            reflect_index(p[0] as i64 + dz, 3),
                            reflect_index(p[1] as i64 + dy, 4),
                            reflect_index(p[2] as i64 + dx, 12),
                        ];
                        acc += g(dz) * g(dy) * g(dx) * m.at(q);
                    }
                }
            }
            assert!((s.at(p) - acc / norm).abs() < 1e-12, "x={x}");
        }
        // the two voxels straddling the boundary are mirror images
        assert!((s.at([1, 2, 5]) + s.at([1, 2, 6]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smoothing_preserves_partition_of_unity() {
        let raster = vec![0, 1, 2, 2, 1, 0, 1, 1, 2, 0, 0, 2];
        let map = SegmentMap::new(3, 4, raster, prompts(3)).unwrap();
        let dims = GridDims::new(4, 9, 10, 1).unwrap();
        let masks = extrude_segment_map(&map, dims).unwrap();
        let smoothed: Vec<_> = masks.iter().map(|m| smooth_mask(m, 1.7).unwrap()).collect();
        for i in 0..dims.voxels() {
            let total: f64 = smoothed.iter().map(|m| m.weights()[i]).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reflect_index_mirrors() {
        assert_eq!(reflect_index(-1, 5), 0);
        assert_eq!(reflect_index(-2, 5), 1);
        assert_eq!(reflect_index(5, 5), 4);
        assert_eq!(reflect_index(6, 5), 3);
        assert_eq!(reflect_index(12, 5), 2);
    }
}
