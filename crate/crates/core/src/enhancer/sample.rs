//! Auto-regressive octant sampling and recursive world enhancement.

use std::collections::BTreeMap;

use crate::error::{Axis, Error, Result};
use crate::flowmodel::ConditionEmbedding;
use crate::lattice::{
    merge_octants, truncate_latent, Direction, GridDims, OctantIndex, SparseLatent,
};
use crate::rng::{self, stream};

use super::model::{draw_adjacent_noise, enhancer_velocity, EnhancerCondition, EnhancerModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnhanceConfig {
    pub steps: usize,
    pub seed: u64,
    /// Edge of the parent cubes a world is tiled into; must be even.
    pub tile: usize,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            steps: 25,
            seed: 0,
            tile: 8,
        }
    }
}

impl EnhanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if self.tile < 2 || !self.tile.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "tile {} must be even and >= 2",
                self.tile
            )));
        }
        Ok(())
    }
}

/// Each parent voxel of the truncated octant becomes a 2x2x2 block.
fn upsampled_positions(trunc: &SparseLatent) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(trunc.len() * 8);
    for i in 0..trunc.len() {
        let p = trunc.position(i);
        for k in 0..8 {
            out.push([
                2 * p[0] + (k >> 2 & 1),
                2 * p[1] + (k >> 1 & 1),
                2 * p[2] + (k & 1),
            ]);
        }
    }
    out
}

fn cube_seed(seed: u64, level: usize, tile: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(seed, level as u64), tile as u64)
}

/// Generates the eight octants of `parent` in index order. `outside`
/// supplies lower-side neighbours from outside the cube (earlier tiles).
fn sample_cube(
    model: &EnhancerModel,
    parent: &SparseLatent,
    label: &ConditionEmbedding,
    steps: usize,
    seed: u64,
    outside: &dyn Fn(OctantIndex, Axis) -> Option<SparseLatent>,
) -> Result<[SparseLatent; 8]> {
    let child_dims = parent.dims();
    let c = child_dims.c;
    let dt = 1.0 / steps as f64;
    let mut done: BTreeMap<OctantIndex, SparseLatent> = BTreeMap::new();
    for j in OctantIndex::all() {
        let trunc = truncate_latent(parent, j)?;
        let mut adjacents = Vec::new();
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let neighbour = if j.bit(axis) == 1 {
                done.get(&j.flip(axis)).cloned()
            } else {
                outside(j, axis)
            };
            if let Some(s) = neighbour {
                adjacents.push((Direction { axis, sign: -1 }, s));
            }
        }
        let cond = EnhancerCondition {
            parent: trunc,
            adjacents,
            octant: j,
        };
        let octant_seed = rng::derive_seed(seed, j.get() as u64);
        let positions = upsampled_positions(&cond.parent);
        let eps = rng::normal_vec(
            &mut rng::stream_rng(octant_seed, stream::SPARSE_NOISE),
            positions.len() * c,
        );
        let extra = draw_adjacent_noise(
            &cond,
            &mut rng::stream_rng(octant_seed, stream::EXPANDED_NOISE),
        );
        let mut s = SparseLatent::new(child_dims, &positions, &eps)?;
        for k in 0..steps {
            let t = 1.0 - k as f64 / steps as f64;
            let v = enhancer_velocity(model, &s, t, label, &cond, &extra)?;
            for (x, dv) in s.features_mut().iter_mut().zip(v.features()) {
                *x -= dt * dv;
            }
        }
        if s.features().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite features in octant {}",
                j.get()
            )));
        }
        done.insert(j, s);
    }
    let mut out: [SparseLatent; 8] = std::array::from_fn(|_| SparseLatent::empty(child_dims));
    for (j, s) in done {
        out[j.get() as usize] = s;
    }
    Ok(out)
}

/// Regenerates `parent` at twice the lattice resolution, one octant at a
/// time from index 0 to 7. Octant 0 sees only the parent; later octants
/// also see their already generated face neighbours.
pub fn sample_octants(
    model: &EnhancerModel,
    parent: &SparseLatent,
    label: &ConditionEmbedding,
    cfg: &EnhanceConfig,
) -> Result<SparseLatent> {
    cfg.validate()?;
    let parts = sample_cube(
        model,
        parent,
        label,
        cfg.steps,
        cube_seed(cfg.seed, 0, 0),
        &|_, _| None,
    )?;
    merge_octants(&parts)
}

fn crop(world: &SparseLatent, origin: [usize; 3], tile: usize) -> Result<SparseLatent> {
    let dims = GridDims::new(tile, tile, tile, world.dims().c)?;
    let mut pos = Vec::new();
    let mut feats = Vec::new();
    for i in 0..world.len() {
        let p = world.position(i);
        if (0..3).all(|a| p[a] >= origin[a] && p[a] < origin[a] + tile) {
            pos.push([p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]]);
            feats.extend_from_slice(world.feature(i));
        }
    }
    SparseLatent::new(dims, &pos, &feats)
}

/// Applies the enhancer `levels` times. Each pass tiles the world into
/// `tile`-sized cubes, visited in lexicographic order of their origin;
/// octants on a tile's lower faces see the matching octants of the tiles
/// already done.
pub fn enhance_world(
    model: &EnhancerModel,
    world: &SparseLatent,
    levels: usize,
    label: &ConditionEmbedding,
    cfg: &EnhanceConfig,
) -> Result<SparseLatent> {
    cfg.validate()?;
    if levels == 0 {
        return Err(Error::InvalidArgument("levels must be >= 1".into()));
    }
    let mut cur = world.clone();
    for level in 0..levels {
        let dims = cur.dims();
        let ext = dims.spatial();
        for axis in Axis::ALL {
            let e = ext[axis.index()];
            if !e.is_multiple_of(cfg.tile) {
                return Err(Error::NotTileable {
                    axis,
                    extent: e,
                    tile: cfg.tile,
                    padding: cfg.tile - e % cfg.tile,
                });
            }
        }
        let counts = [ext[0] / cfg.tile, ext[1] / cfg.tile, ext[2] / cfg.tile];
        let mut results: BTreeMap<[usize; 3], [SparseLatent; 8]> = BTreeMap::new();
        let mut positions = Vec::new();
        let mut feats = Vec::new();
        let mut linear = 0;
        for tz in 0..counts[0] {
            for ty in 0..counts[1] {
                for tx in 0..counts[2] {
                    let idx = [tz, ty, tx];
                    let origin = [tz * cfg.tile, ty * cfg.tile, tx * cfg.tile];
                    let parent = crop(&cur, origin, cfg.tile)?;
                    let outside = |j: OctantIndex, axis: Axis| -> Option<SparseLatent> {
                        let a = axis.index();
                        if j.bit(axis) == 1 || idx[a] == 0 {
                            return None;
                        }
                        let mut prev = idx;
                        prev[a] -= 1;
                        results
                            .get(&prev)
                            .map(|parts| parts[j.flip(axis).get() as usize].clone())
                    };
                    let parts = sample_cube(
                        model,
                        &parent,
                        label,
                        cfg.steps,
                        cube_seed(cfg.seed, level, linear),
                        &outside,
                    )?;
                    let merged = merge_octants(&parts)?;
                    for i in 0..merged.len() {
                        let p = merged.position(i);
                        positions.push([
                            p[0] + 2 * origin[0],
                            p[1] + 2 * origin[1],
                            p[2] + 2 * origin[2],
                        ]);
                        feats.extend_from_slice(merged.feature(i));
                    }
                    results.insert(idx, parts);
                    linear += 1;
                }
            }
        }
        let out_dims = GridDims::new(2 * ext[0], 2 * ext[1], 2 * ext[2], dims.c)?;
        cur = SparseLatent::new(out_dims, &positions, &feats)?;
        log::info!(
            "enhancement level {} done: {:?} -> {:?}",
            level + 1,
            ext,
            out_dims.spatial()
        );
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowmodel::{ModelConfig, ToyFlowModel};
    use crate::lattice::split_octants;
    use rand::Rng as _;

    fn model() -> EnhancerModel {
        let cfg = ModelConfig {
            channels: 2,
            hidden: 5,
            patch_radius: 1,
            embed_dim: 2,
            num_labels: 1,
            time_floor: 0.1,
        };
        EnhancerModel::new(ToyFlowModel::random(cfg, &mut rng::seeded(3)).unwrap()).unwrap()
    }

    fn world(n: [usize; 3], seed: u64) -> SparseLatent {
        let dims = GridDims::new(n[0], n[1], n[2], 2).unwrap();
        let mut r = rng::seeded(seed);
        let mut pos = Vec::new();
        let mut feats = Vec::new();
        for i in 0..dims.voxels() {
            if r.random::<f64>() < 0.4 {
                pos.push(dims.position(i));
                feats.extend(rng::normal_vec(&mut r, 2));
            }
        }
        SparseLatent::new(dims, &pos, &feats).unwrap()
    }

    fn cfg(tile: usize) -> EnhanceConfig {
        EnhanceConfig {
            steps: 4,
            seed: 11,
            tile,
        }
    }

    #[test]
    fn output_structure_is_upsampled_parent() {
        let m = model();
        let w = world([4, 4, 4], 1);
        let label = m.base().condition(0).unwrap();
        let out = sample_octants(&m, &w, &label, &cfg(4)).unwrap();
        assert_eq!(out.dims().spatial(), [8, 8, 8]);
        assert_eq!(out.len(), 8 * w.len());
        for i in 0..out.len() {
            let p = out.position(i);
            assert!(w.get([p[0] / 2, p[1] / 2, p[2] / 2]).is_some());
        }
        assert_eq!(out, sample_octants(&m, &w, &label, &cfg(4)).unwrap());
    }

    #[test]
    fn octants_are_disjoint_and_merge_back() {
        let m = model();
        let w = world([4, 4, 4], 2);
        let out = sample_octants(&m, &w, &m.base().condition(0).unwrap(), &cfg(4)).unwrap();
        let parts = split_octants(&out).unwrap();
        assert_eq!(parts.iter().map(|p| p.len()).sum::<usize>(), out.len());
        assert_eq!(merge_octants(&parts).unwrap(), out);
    }

    #[test]
    fn octant_zero_ignores_later_octants() {
        let m = model();
        let label = m.base().condition(0).unwrap();
        let a = world([4, 4, 4], 3);
        // same octant-0 content, different elsewhere
        let mut parts = split_octants(&a).unwrap();
        parts[7] = split_octants(&world([4, 4, 4], 4)).unwrap()[7].clone();
        parts[3] = SparseLatent::empty(parts[3].dims());
        let b = merge_octants(&parts).unwrap();
        let oa = split_octants(&sample_octants(&m, &a, &label, &cfg(4)).unwrap()).unwrap();
        let ob = split_octants(&sample_octants(&m, &b, &label, &cfg(4)).unwrap()).unwrap();
        assert_eq!(oa[0], ob[0]);
    }

    #[test]
    fn single_tile_level_one_equals_sample_octants() {
        let m = model();
        let label = m.base().condition(0).unwrap();
        let w = world([4, 4, 4], 5);
        assert_eq!(
            enhance_world(&m, &w, 1, &label, &cfg(4)).unwrap(),
            sample_octants(&m, &w, &label, &cfg(4)).unwrap()
        );
    }

    #[test]
    fn two_levels_quadruple_the_extent() {
        let m = model();
        let label = m.base().condition(0).unwrap();
        let w = world([4, 8, 4], 6);
        let out = enhance_world(&m, &w, 2, &label, &cfg(4)).unwrap();
        assert_eq!(out.dims().spatial(), [16, 32, 16]);
        assert_eq!(out.len(), 64 * w.len());
    }

    #[test]
    fn untileable_world_names_padding() {
        let m = model();
        let w = world([6, 4, 4], 7);
        let err = enhance_world(&m, &w, 1, &m.base().condition(0).unwrap(), &cfg(4)).unwrap_err();
        assert!(matches!(
            err,
            Error::NotTileable {
                axis: Axis::Z,
                extent: 6,
                tile: 4,
                padding: 2
            }
        ));
    }

    #[test]
    fn empty_world_stays_empty() {
        let m = model();
        let w = SparseLatent::empty(GridDims::cube(4, 2).unwrap());
        let out = sample_octants(&m, &w, &m.base().condition(0).unwrap(), &cfg(4)).unwrap();
        assert!(out.is_empty());
        assert_eq!(out.dims().spatial(), [8, 8, 8]);
    }
}
