//! Coarse/fine training pairs cut from voxel scenes.
//!
//! A crop of `s` scene voxels is encoded once as a whole (the parent) and
//! once per octant (the children). All nine latents share the lattice
//! extent `n`, so a child holds twice the parent's linear detail.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::flowmodel::encode_crop;
use crate::lattice::{OctantIndex, SparseLatent};
use crate::rng::{self, stream};
use crate::scenes::VoxelScene;

#[derive(Debug, Clone, PartialEq)]
pub struct EnhancerPair {
    pub parent: SparseLatent,
    /// Indexed by octant.
    pub children: [SparseLatent; 8],
    /// Crop corner in scene voxels.
    pub origin: [usize; 3],
    /// Crop edge in scene voxels.
    pub crop_size: usize,
    pub scene: usize,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairConfig {
    /// Lattice extent of every encoded cube; must be even.
    pub lattice: usize,
    /// Candidate crop edges; each must be a multiple of `2 * lattice`.
    pub crop_sizes: Vec<usize>,
    pub per_scene: usize,
    /// Fewest active positions allowed in any of the nine cubes.
    pub min_content: usize,
    pub max_retries: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            lattice: 8,
            crop_sizes: vec![16, 32, 48, 64],
            per_scene: 4,
            min_content: 8,
            max_retries: 32,
        }
    }
}

impl PairConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lattice == 0 || !self.lattice.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "lattice extent {} must be even and >= 2",
                self.lattice
            )));
        }
        if self.crop_sizes.is_empty() {
            return Err(Error::InvalidArgument("no crop sizes".into()));
        }
        if let Some(s) = self
            .crop_sizes
            .iter()
            .find(|&&s| s == 0 || s % (2 * self.lattice) != 0)
        {
            return Err(Error::InvalidArgument(format!(
                "crop size {s} is not a multiple of {}",
                2 * self.lattice
            )));
        }
        Ok(())
    }
}

/// Pairs plus the number of requested crops that never met `min_content`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<EnhancerPair>,
    pub skipped: usize,
}

fn encode_pair(
    scene: &VoxelScene,
    index: usize,
    origin: [usize; 3],
    size: usize,
    n: usize,
) -> Result<EnhancerPair> {
    let parent = encode_crop(scene, origin, [size; 3], size / n)?.appearance;
    let half = size / 2;
    let mut children: [SparseLatent; 8] =
        std::array::from_fn(|_| SparseLatent::empty(parent.dims()));
    for j in OctantIndex::all() {
        let o = j.origin([size; 3]);
        let corner = [origin[0] + o[0], origin[1] + o[1], origin[2] + o[2]];
        children[j.get() as usize] = encode_crop(scene, corner, [half; 3], half / n)?.appearance;
    }
    Ok(EnhancerPair {
        parent,
        children,
        origin,
        crop_size: size,
        scene: index,
        label: scene.family.label(),
    })
}

/// Random crops of each scene, resampled until all nine cubes hold at least
/// `min_content` active positions.
pub fn build_pairs(scenes: &[VoxelScene], cfg: &PairConfig, seed: u64) -> Result<PairSet> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut r = rng::stream_rng(seed, stream::PAIRS);
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for (index, scene) in scenes.iter().enumerate() {
        let sd = scene.dims().spatial();
        let sizes: Vec<usize> = cfg
            .crop_sizes
            .iter()
            .copied()
            .filter(|&s| sd.iter().all(|&e| s <= e))
            .collect();
        if sizes.is_empty() {
            log::warn!("scene {index} is smaller than every crop size");
            skipped += cfg.per_scene;
            continue;
        }
        for _ in 0..cfg.per_scene {
            let mut found = None;
            for _ in 0..=cfg.max_retries {
                let size = sizes[r.random_range(0..sizes.len())];
                let origin: [usize; 3] = std::array::from_fn(|a| r.random_range(0..=sd[a] - size));
                let pair = encode_pair(scene, index, origin, size, cfg.lattice)?;
                let ok = pair.parent.len() >= cfg.min_content
                    && pair.children.iter().all(|c| c.len() >= cfg.min_content);
                if ok {
                    found = Some(pair);
                    break;
                }
            }
            match found {
                Some(p) => pairs.push(p),
                None => skipped += 1,
            }
        }
    }
    if skipped > 0 {
        log::warn!(
            "{skipped} crops skipped after {} retries each",
            cfg.max_retries
        );
    }
    Ok(PairSet { pairs, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{DenseLatentGrid, GridDims};
    use crate::scenes::{generate_scene, Family};

    fn solid(n: usize) -> VoxelScene {
        let dims = GridDims::cube(n, 4).unwrap();
        let grid = DenseLatentGrid::from_fn(dims, |_, ch| if ch == 0 { 1.0 } else { 0.5 });
        VoxelScene {
            family: Family::Plains,
            grid,
        }
    }

    #[test]
    fn solid_scene_children_match_parent() {
        let cfg = PairConfig {
            lattice: 4,
            crop_sizes: vec![8, 16],
            per_scene: 3,
            ..PairConfig::default()
        };
        let set = build_pairs(&[solid(16)], &cfg, 1).unwrap();
        assert_eq!(set.pairs.len(), 3);
        for p in &set.pairs {
            assert_eq!(p.parent.len(), 64);
            for c in &p.children {
                assert_eq!(c, &p.parent);
            }
        }
    }

    #[test]
    fn pairs_are_deterministic_and_meet_min_content() {
        let scenes: Vec<_> = Family::ALL
            .iter()
            .map(|&f| generate_scene(f, [32, 32, 32], 3).unwrap())
            .collect();
        let cfg = PairConfig {
            lattice: 4,
            crop_sizes: vec![8, 16, 32],
            per_scene: 4,
            min_content: 6,
            max_retries: 16,
        };
        let a = build_pairs(&scenes, &cfg, 5).unwrap();
        assert_eq!(a, build_pairs(&scenes, &cfg, 5).unwrap());
        assert!(!a.pairs.is_empty());
        for p in &a.pairs {
            assert!(p.parent.len() >= 6);
            assert!(p
                .children
                .iter()
                .all(|c| c.len() >= 6 && c.dims() == p.parent.dims()));
        }
        assert_eq!(a.pairs.len() + a.skipped, 12);
    }

    #[test]
    fn impossible_content_is_skipped() {
        let cfg = PairConfig {
            lattice: 4,
            crop_sizes: vec![8],
            per_scene: 2,
            min_content: 1000,
            max_retries: 2,
        };
        let set = build_pairs(&[solid(8)], &cfg, 1).unwrap();
        assert!(set.pairs.is_empty());
        assert_eq!(set.skipped, 2);
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = PairConfig {
            lattice: 4,
            crop_sizes: vec![12],
            ..PairConfig::default()
        };
        assert!(build_pairs(&[solid(16)], &cfg, 1).is_err());
        assert!(matches!(
            build_pairs(&[], &PairConfig::default(), 1),
            Err(Error::EmptyDataset)
        ));
    }
}
