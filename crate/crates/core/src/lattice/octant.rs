//! Octant arithmetic: index `j = bx + 2*by + 4*bz`, where each bit selects the
//! upper half of a parent cube along x, y or z.

use std::collections::BTreeMap;

use crate::error::{Axis, Error, Result};
use crate::lattice::grid::{GridDims, SparseLatent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OctantIndex(u8);

impl OctantIndex {
    pub fn new(j: u8) -> Result<Self> {
        if j >= 8 {
            return Err(Error::InvalidArgument(format!(
                "octant index {j} not in 0..8"
            )));
        }
        Ok(Self(j))
    }

    pub fn all() -> impl Iterator<Item = OctantIndex> {
        (0..8u8).map(OctantIndex)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn bit(self, axis: Axis) -> usize {
        let shift = match axis {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        };
        ((self.0 >> shift) & 1) as usize
    }

    /// The sibling sharing the face perpendicular to `axis`.
    pub fn flip(self, axis: Axis) -> OctantIndex {
        let shift = match axis {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        };
        OctantIndex(self.0 ^ (1 << shift))
    }

    /// Bits in `[z, y, x]` order.
    pub fn bits_zyx(self) -> [usize; 3] {
        [self.bit(Axis::Z), self.bit(Axis::Y), self.bit(Axis::X)]
    }

    /// Local origin of this octant inside a parent of extent `parent`.
    pub fn origin(self, parent: [usize; 3]) -> [usize; 3] {
        let b = self.bits_zyx();
        [
            b[0] * parent[0] / 2,
            b[1] * parent[1] / 2,
            b[2] * parent[2] / 2,
        ]
    }

    pub fn containing(p: [usize; 3], parent: [usize; 3]) -> OctantIndex {
        let bz = (p[0] >= parent[0] / 2) as u8;
        let by = (p[1] >= parent[1] / 2) as u8;
        let bx = (p[2] >= parent[2] / 2) as u8;
        OctantIndex(bx | (by << 1) | (bz << 2))
    }
}

/// Where a neighbouring cube sits relative to the target: one cube-extent
/// step along `axis`, in the direction of `sign`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Direction {
    pub axis: Axis,
    pub sign: i8,
}

impl Direction {
    /// Offset of the neighbour's frame for cubes of extent `extent`.
    pub fn offset(self, extent: [usize; 3]) -> [i64; 3] {
        let mut o = [0i64; 3];
        let a = self.axis.index();
        o[a] = self.sign as i64 * extent[a] as i64;
        o
    }
}

fn check_even(dims: GridDims) -> Result<()> {
    for axis in Axis::ALL {
        let extent = dims.spatial()[axis.index()];
        if !extent.is_multiple_of(2) {
            return Err(Error::OddExtent { axis, extent });
        }
    }
    Ok(())
}

fn half_dims(dims: GridDims) -> GridDims {
    GridDims {
        d: dims.d / 2,
        h: dims.h / 2,
        w: dims.w / 2,
        c: dims.c,
    }
}

/// Splits a cube into its eight half-extent octants, re-based to each
/// octant's local origin.
pub fn split_octants(s: &SparseLatent) -> Result<[SparseLatent; 8]> {
    let dims = s.dims();
    check_even(dims)?;
    let half = half_dims(dims);
    let c = dims.c;
    let mut keys: [Vec<u64>; 8] = Default::default();
    let mut feats: [Vec<f64>; 8] = Default::default();
    // parent keys are z-major sorted; local keys stay sorted within each octant
    for i in 0..s.len() {
        let p = s.position(i);
        let j = OctantIndex::containing(p, dims.spatial());
        let o = j.origin(dims.spatial());
        let local = [p[0] - o[0], p[1] - o[1], p[2] - o[2]];
        keys[j.0 as usize].push(half.voxel_index(local) as u64);
        feats[j.0 as usize].extend_from_slice(s.feature(i));
    }
    debug_assert!(feats.iter().zip(&keys).all(|(f, k)| f.len() == k.len() * c));
    Ok(std::array::from_fn(|j| {
        SparseLatent::from_sorted(
            half,
            std::mem::take(&mut keys[j]),
            std::mem::take(&mut feats[j]),
        )
    }))
}

/// Inverse of [`split_octants`].
pub fn merge_octants(parts: &[SparseLatent; 8]) -> Result<SparseLatent> {
    let half = parts[0].dims();
    if let Some(bad) = parts.iter().find(|p| p.dims() != half) {
        return Err(Error::ShapeMismatch(format!(
            "octant dims differ: {:?} vs {:?}",
            half,
            bad.dims()
        )));
    }
    let dims = GridDims::new(half.d * 2, half.h * 2, half.w * 2, half.c)?;
    let mut positions = Vec::with_capacity(parts.iter().map(SparseLatent::len).sum());
    let mut features = Vec::with_capacity(parts.iter().map(|p| p.features().len()).sum());
    for j in OctantIndex::all() {
        let o = j.origin(dims.spatial());
        let part = &parts[j.0 as usize];
        for i in 0..part.len() {
            let p = part.position(i);
            positions.push([p[0] + o[0], p[1] + o[1], p[2] + o[2]]);
            features.extend_from_slice(part.feature(i));
        }
    }
    SparseLatent::new(dims, &positions, &features)
}

/// The part of `parent` inside octant `j`, in the octant's local frame.
pub fn truncate_latent(parent: &SparseLatent, j: OctantIndex) -> Result<SparseLatent> {
    let dims = parent.dims();
    check_even(dims)?;
    let half = half_dims(dims);
    let o = j.origin(dims.spatial());
    let mut keys = Vec::new();
    let mut feats = Vec::new();
    for i in 0..parent.len() {
        let p = parent.position(i);
        if OctantIndex::containing(p, dims.spatial()) == j {
            keys.push(half.voxel_index([p[0] - o[0], p[1] - o[1], p[2] - o[2]]) as u64);
            feats.extend_from_slice(parent.feature(i));
        }
    }
    Ok(SparseLatent::from_sorted(half, keys, feats))
}

/// Already-generated face neighbours of octant `j` among its siblings, at
/// most one per axis, visited in x, y, z order and truncated to
/// `count_limit`.
pub fn gather_adjacent(
    siblings: &BTreeMap<OctantIndex, SparseLatent>,
    j: OctantIndex,
    count_limit: usize,
) -> Result<Vec<(Direction, SparseLatent)>> {
    if count_limit > 3 {
        return Err(Error::InvalidArgument(format!(
            "adjacent count limit {count_limit} exceeds 3"
        )));
    }
    let mut out = Vec::new();
    for axis in [Axis::X, Axis::Y, Axis::Z] {
        if out.len() == count_limit {
            break;
        }
        if let Some(s) = siblings.get(&j.flip(axis)) {
            let sign = if j.bit(axis) == 1 { -1 } else { 1 };
            out.push((Direction { axis, sign }, s.clone()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_sparse(seed: u64, dims: GridDims, density: f64) -> SparseLatent {
        let mut r = rng::seeded(seed);
        let mut pos = Vec::new();
        let mut feats = Vec::new();
        for i in 0..dims.voxels() {
            if r.random::<f64>() < density {
                pos.push(dims.position(i));
                feats.extend(rng::normal_vec(&mut r, dims.c));
            }
        }
        SparseLatent::new(dims, &pos, &feats).unwrap()
    }

    #[test]
    fn empty_splits_to_empty() {
        let s = SparseLatent::empty(GridDims::cube(4, 2).unwrap());
        let parts = split_octants(&s).unwrap();
        assert!(parts.iter().all(|p| p.is_empty() && p.dims().d == 2));
        assert_eq!(merge_octants(&parts).unwrap(), s);
    }

    #[test]
    fn far_corner_lands_in_octant_seven() {
        let dims = GridDims::new(4, 6, 8, 1).unwrap();
        let s = SparseLatent::new(dims, &[[3, 5, 7]], &[2.5]).unwrap();
        let parts = split_octants(&s).unwrap();
        for (j, p) in parts.iter().enumerate() {
            assert_eq!(p.len(), usize::from(j == 7));
        }
        assert_eq!(parts[7].position(0), [1, 2, 3]);
    }

    #[test]
    fn bit_convention() {
        let j = OctantIndex::new(5).unwrap();
        assert_eq!(j.bits_zyx(), [1, 0, 1]);
        assert_eq!(j.origin([4, 4, 4]), [2, 0, 2]);
        assert!(OctantIndex::new(8).is_err());
    }

    #[test]
    fn odd_extent_rejected() {
        let s = SparseLatent::empty(GridDims::new(4, 5, 4, 1).unwrap());
        assert!(matches!(
            split_octants(&s),
            Err(Error::OddExtent { axis: Axis::Y, .. })
        ));
        assert!(truncate_latent(&s, OctantIndex::new(0).unwrap()).is_err());
    }

    #[test]
    fn merge_rejects_mismatched_parts() {
        let a = SparseLatent::empty(GridDims::cube(2, 1).unwrap());
        let b = SparseLatent::empty(GridDims::cube(2, 2).unwrap());
        let mut parts: [SparseLatent; 8] = std::array::from_fn(|_| a.clone());
        parts[3] = b;
        assert!(merge_octants(&parts).is_err());
    }

    #[test]
    fn truncate_matches_split_exhaustively() {
        for seed in 0..20 {
            let s = random_sparse(seed, GridDims::new(4, 6, 8, 3).unwrap(), 0.3);
            let parts = split_octants(&s).unwrap();
            for j in OctantIndex::all() {
                assert_eq!(truncate_latent(&s, j).unwrap(), parts[j.get() as usize]);
            }
        }
    }

    #[test]
    fn adjacency_of_last_octant() {
        let dims = GridDims::cube(2, 1).unwrap();
        let siblings: BTreeMap<_, _> = (0..7u8)
            .map(|j| (OctantIndex::new(j).unwrap(), SparseLatent::empty(dims)))
            .collect();
        let adj = gather_adjacent(&siblings, OctantIndex::new(7).unwrap(), 3).unwrap();
        let got: Vec<(Axis, i8)> = adj.iter().map(|(d, _)| (d.axis, d.sign)).collect();
        assert_eq!(got, vec![(Axis::X, -1), (Axis::Y, -1), (Axis::Z, -1)]);
        assert!(gather_adjacent(&siblings, OctantIndex::new(7).unwrap(), 0)
            .unwrap()
            .is_empty());
        assert_eq!(
            gather_adjacent(&siblings, OctantIndex::new(7).unwrap(), 2)
                .unwrap()
                .len(),
            2
        );
        assert!(
            gather_adjacent(&BTreeMap::new(), OctantIndex::new(0).unwrap(), 3)
                .unwrap()
                .is_empty()
        );
        assert!(gather_adjacent(&siblings, OctantIndex::new(0).unwrap(), 4).is_err());
    }

    #[test]
    fn adjacency_picks_the_flipped_sibling() {
        let dims = GridDims::cube(2, 1).unwrap();
        let siblings: BTreeMap<_, _> = (0..7u8)
            .map(|j| {
                (
                    OctantIndex::new(j).unwrap(),
                    SparseLatent::new(dims, &[[0, 0, 0]], &[j as f64]).unwrap(),
                )
            })
            .collect();
        let adj = gather_adjacent(&siblings, OctantIndex::new(7).unwrap(), 3).unwrap();
        let ids: Vec<f64> = adj.iter().map(|(_, s)| s.feature(0)[0]).collect();
        assert_eq!(ids, vec![6.0, 5.0, 3.0]);
    }

    proptest! {
        #[test]
        fn split_merge_round_trip(seed in 0u64..1000, hd in 1usize..4, hh in 1usize..4, hw in 1usize..4,
                                  c in 1usize..4, density in 0.0f64..1.0) {
            let dims = GridDims::new(2 * hd, 2 * hh, 2 * hw, c).unwrap();
            let s = random_sparse(seed, dims, density);
            let parts = split_octants(&s).unwrap();
            prop_assert_eq!(parts.iter().map(SparseLatent::len).sum::<usize>(), s.len());
            prop_assert_eq!(merge_octants(&parts).unwrap(), s);
        }
    }
}
