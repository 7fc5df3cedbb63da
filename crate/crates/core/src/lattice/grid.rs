use crate::error::{Error, Result};

/// Integer voxel position `[z, y, x]` in a frame that may extend past the
/// grid (negative or beyond the far face), as used by expanded enhancer sets.
pub type Pos = [i64; 3];

/// Voxel counts per axis plus channel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridDims {
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl GridDims {
    pub fn new(d: usize, h: usize, w: usize, c: usize) -> Result<Self> {
        if d == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::InvalidDims(format!(
                "all of d, h, w, c must be >= 1 (got {d}x{h}x{w}x{c})"
            )));
        }
        d.checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::InvalidDims(format!("{d}x{h}x{w}x{c} overflows usize")))?;
        Ok(Self { d, h, w, c })
    }

    pub fn cube(n: usize, c: usize) -> Result<Self> {
        Self::new(n, n, n, c)
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.d, self.h, self.w]
    }

    pub fn voxels(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn with_channels(&self, c: usize) -> Result<Self> {
        Self::new(self.d, self.h, self.w, c)
    }

    /// Row-major voxel index of `[z, y, x]`.
    #[inline]
    pub fn voxel_index(&self, p: [usize; 3]) -> usize {
        (p[0] * self.h + p[1]) * self.w + p[2]
    }

    #[inline]
    pub fn position(&self, index: usize) -> [usize; 3] {
        let x = index % self.w;
        let y = (index / self.w) % self.h;
        let z = index / (self.w * self.h);
        [z, y, x]
    }

    #[inline]
    pub fn contains(&self, p: Pos) -> bool {
        p[0] >= 0
            && p[1] >= 0
            && p[2] >= 0
            && (p[0] as usize) < self.d
            && (p[1] as usize) < self.h
            && (p[2] as usize) < self.w
    }

    pub fn same_spatial(&self, other: &GridDims) -> bool {
        self.spatial() == other.spatial()
    }
}

/// Read access to per-position feature vectors.
///
/// Absent positions (inactive sparse voxels, anything outside a dense grid
/// or a crop) return `None` and are treated as zero by consumers.
pub trait FeatureLookup {
    fn channels(&self) -> usize;
    fn lookup(&self, p: Pos) -> Option<&[f64]>;
}

/// Dense `d x h x w x c` field, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLatentGrid {
    dims: GridDims,
    data: Vec<f64>,
}

impl DenseLatentGrid {
    pub fn zeros(dims: GridDims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.voxels() * dims.c],
        }
    }

    pub fn filled(dims: GridDims, value: f64) -> Self {
        Self {
            dims,
            data: vec![value; dims.voxels() * dims.c],
        }
    }

    pub fn from_vec(dims: GridDims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.voxels() * dims.c {
            return Err(Error::ShapeMismatch(format!(
                "dense grid {:?} needs {} values, got {}",
                dims,
                dims.voxels() * dims.c,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite value at flat index {i}"
            )));
        }
        Ok(Self { dims, data })
    }

    /// Builds a grid without the finiteness check; used where a diverging
    /// computation must still be carried to its report.
    pub(crate) fn from_vec_unchecked(dims: GridDims, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.voxels() * dims.c);
        Self { dims, data }
    }

    pub fn from_fn(dims: GridDims, mut f: impl FnMut([usize; 3], usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.voxels() * dims.c);
        for i in 0..dims.voxels() {
            let p = dims.position(i);
            for ch in 0..dims.c {
                data.push(f(p, ch));
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, p: [usize; 3]) -> &[f64] {
        let c = self.dims.c;
        let i = self.dims.voxel_index(p) * c;
        &self.data[i..i + c]
    }

    #[inline]
    pub fn at_mut(&mut self, p: [usize; 3]) -> &mut [f64] {
        let c = self.dims.c;
        let i = self.dims.voxel_index(p) * c;
        &mut self.data[i..i + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Full sparse view: every voxel becomes an active position.
    pub fn to_sparse(&self) -> SparseLatent {
        let keys = (0..self.dims.voxels() as u64).collect();
        SparseLatent {
            dims: self.dims,
            keys,
            features: self.data.clone(),
        }
    }
}

impl FeatureLookup for DenseLatentGrid {
    fn channels(&self) -> usize {
        self.dims.c
    }

    #[inline]
    fn lookup(&self, p: Pos) -> Option<&[f64]> {
        if !self.dims.contains(p) {
            return None;
        }
        Some(self.at([p[0] as usize, p[1] as usize, p[2] as usize]))
    }
}

/// The structured latent: unique active positions with one feature vector
/// each.
///
/// Positions are stored sorted (z-major) as packed row-major keys so
/// equality is structural and lookups are a binary search.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLatent {
    dims: GridDims,
    keys: Vec<u64>,
    features: Vec<f64>,
}

impl SparseLatent {
    pub fn empty(dims: GridDims) -> Self {
        Self {
            dims,
            keys: Vec::new(),
            features: Vec::new(),
        }
    }

    /// Builds a latent from unordered `(position, feature)` pairs.
    pub fn new(dims: GridDims, positions: &[[usize; 3]], features: &[f64]) -> Result<Self> {
        let c = dims.c;
        if features.len() != positions.len() * c {
            return Err(Error::ShapeMismatch(format!(
                "{} positions need {} feature values, got {}",
                positions.len(),
                positions.len() * c,
                features.len()
            )));
        }
        let mut order: Vec<(u64, usize)> = Vec::with_capacity(positions.len());
        for (i, p) in positions.iter().enumerate() {
            if p[0] >= dims.d || p[1] >= dims.h || p[2] >= dims.w {
                return Err(Error::InvalidArgument(format!(
                    "position {:?} outside {:?}",
                    p,
                    dims.spatial()
                )));
            }
            order.push((dims.voxel_index(*p) as u64, i));
        }
        order.sort_unstable_by_key(|&(k, _)| k);
        if let Some(w) = order.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument(format!(
                "duplicate position {:?}",
                dims.position(w[0].0 as usize)
            )));
        }
        let mut keys = Vec::with_capacity(order.len());
        let mut feats = Vec::with_capacity(features.len());
        for (k, i) in order {
            keys.push(k);
            feats.extend_from_slice(&features[i * c..(i + 1) * c]);
        }
        Ok(Self {
            dims,
            keys,
            features: feats,
        })
    }

    /// Builds from keys already sorted and unique.
    pub(crate) fn from_sorted(dims: GridDims, keys: Vec<u64>, features: Vec<f64>) -> Self {
        debug_assert!(keys.windows(2).all(|w| w[0] < w[1]));
        debug_assert_eq!(features.len(), keys.len() * dims.c);
        Self {
            dims,
            keys,
            features,
        }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[u64] {
        &self.keys
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub fn position(&self, i: usize) -> [usize; 3] {
        self.dims.position(self.keys[i] as usize)
    }

    pub fn positions(&self) -> Vec<[usize; 3]> {
        self.keys
            .iter()
            .map(|&k| self.dims.position(k as usize))
            .collect()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        let c = self.dims.c;
        &self.features[i * c..(i + 1) * c]
    }

    pub fn index_of(&self, p: [usize; 3]) -> Option<usize> {
        if p[0] >= self.dims.d || p[1] >= self.dims.h || p[2] >= self.dims.w {
            return None;
        }
        self.keys
            .binary_search(&(self.dims.voxel_index(p) as u64))
            .ok()
    }

    pub fn get(&self, p: [usize; 3]) -> Option<&[f64]> {
        self.index_of(p).map(|i| self.feature(i))
    }

    /// Same positions, new features.
    pub fn with_features(&self, features: Vec<f64>) -> Result<Self> {
        if features.len() != self.features.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} feature values, got {}",
                self.features.len(),
                features.len()
            )));
        }
        Ok(Self {
            dims: self.dims,
            keys: self.keys.clone(),
            features,
        })
    }

    /// Scatters into a dense grid with zeros at inactive voxels.
    pub fn to_dense(&self) -> DenseLatentGrid {
        let c = self.dims.c;
        let mut out = DenseLatentGrid::zeros(self.dims);
        for (i, &k) in self.keys.iter().enumerate() {
            let k = k as usize;
            out.data_mut()[k * c..(k + 1) * c].copy_from_slice(self.feature(i));
        }
        out
    }
}

impl FeatureLookup for SparseLatent {
    fn channels(&self) -> usize {
        self.dims.c
    }

    #[inline]
    fn lookup(&self, p: Pos) -> Option<&[f64]> {
        if !self.dims.contains(p) {
            return None;
        }
        self.get([p[0] as usize, p[1] as usize, p[2] as usize])
    }
}

/// Restricts a lookup to the half-open box `[lo, hi)`.
pub struct Cropped<'a, F: ?Sized> {
    pub inner: &'a F,
    pub lo: Pos,
    pub hi: Pos,
}

impl<F: FeatureLookup + ?Sized> FeatureLookup for Cropped<'_, F> {
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    #[inline]
    fn lookup(&self, p: Pos) -> Option<&[f64]> {
        if (0..3).all(|a| p[a] >= self.lo[a] && p[a] < self.hi[a]) {
            self.inner.lookup(p)
        } else {
            None
        }
    }
}

/// Decoded stage-S scalar field; voxels above `threshold` are active.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyField {
    dims: GridDims,
    values: Vec<f64>,
    threshold: f64,
}

impl OccupancyField {
    pub fn new(dims: GridDims, values: Vec<f64>, threshold: f64) -> Result<Self> {
        if dims.c != 1 {
            return Err(Error::ShapeMismatch(format!(
                "occupancy needs c=1, got c={}",
                dims.c
            )));
        }
        if values.len() != dims.voxels() {
            return Err(Error::ShapeMismatch(format!(
                "occupancy {:?} needs {} values, got {}",
                dims.spatial(),
                dims.voxels(),
                values.len()
            )));
        }
        Ok(Self {
            dims,
            values,
            threshold,
        })
    }

    /// Binary field: 1 for active voxels, -1 otherwise.
    pub fn from_active(dims: GridDims, active: impl Fn([usize; 3]) -> bool) -> Result<Self> {
        let dims = dims.with_channels(1)?;
        let values = (0..dims.voxels())
            .map(|i| if active(dims.position(i)) { 1.0 } else { -1.0 })
            .collect();
        Self::new(dims, values, 0.0)
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    #[inline]
    pub fn is_active_index(&self, i: usize) -> bool {
        self.values[i] > self.threshold
    }

    pub fn is_active(&self, p: [usize; 3]) -> bool {
        self.is_active_index(self.dims.voxel_index(p))
    }

    pub fn active_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > self.threshold).count()
    }

    /// Active positions in row-major order.
    pub fn active_positions(&self) -> Vec<[usize; 3]> {
        (0..self.values.len())
            .filter(|&i| self.is_active_index(i))
            .map(|i| self.dims.position(i))
            .collect()
    }
}
