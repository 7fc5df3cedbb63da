//! Procedural voxel scenes used as training data for the toy models.
//!
//! A scene stores four channels per voxel: density in {0, 1} and RGB in
//! [0, 1]. Each family has a distinct height profile so that a label's
//! generated terrain can be told apart by simple statistics.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::lattice::{DenseLatentGrid, GridDims};
use crate::rng::{self, Rng};

pub const SCENE_CHANNELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    Hills,
    Towers,
    Plains,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Hills, Family::Towers, Family::Plains];

    pub fn label(self) -> usize {
        match self {
            Family::Hills => 0,
            Family::Towers => 1,
            Family::Plains => 2,
        }
    }

    pub fn from_label(label: usize) -> Result<Family> {
        Family::ALL
            .get(label)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no scene family for label {label}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Hills => "hills",
            Family::Towers => "towers",
            Family::Plains => "plains",
        }
    }

    /// Keyword match on free prompt text.
    pub fn from_prompt(text: &str) -> Option<Family> {
        let t = text.to_ascii_lowercase();
        let any = |words: &[&str]| words.iter().any(|w| t.contains(w));
        if any(&["hill", "mountain", "forest", "slope"]) {
            Some(Family::Hills)
        } else if any(&["tower", "city", "building", "castle", "urban"]) {
            Some(Family::Towers)
        } else if any(&["plain", "field", "meadow", "flat", "desert", "beach"]) {
            Some(Family::Plains)
        } else {
            None
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelScene {
    pub family: Family,
    pub grid: DenseLatentGrid,
}

impl VoxelScene {
    pub fn dims(&self) -> GridDims {
        self.grid.dims()
    }

    /// Occupied fraction of each column, averaged over columns and divided
    /// by the grid depth.
    pub fn mean_height_fraction(&self) -> f64 {
        let dims = self.dims();
        let filled = self
            .grid
            .data()
            .chunks(SCENE_CHANNELS)
            .filter(|v| v[0] > 0.5)
            .count();
        filled as f64 / dims.voxels() as f64
    }
}

struct Bump {
    y: f64,
    x: f64,
    radius: f64,
    amp: f64,
}

fn height_map(family: Family, h: usize, w: usize, d: usize, r: &mut Rng) -> (Vec<f64>, Vec<bool>) {
    let df = d as f64;
    let mut heights = vec![0.0; h * w];
    let mut built = vec![false; h * w];
    match family {
        Family::Hills => {
            let n = 3 + (h * w / 256).min(12);
            let bumps: Vec<Bump> = (0..n)
                .map(|_| Bump {
                    y: r.random::<f64>() * h as f64,
                    x: r.random::<f64>() * w as f64,
                    radius: (0.15 + 0.2 * r.random::<f64>()) * h.max(w) as f64,
                    amp: (0.1 + 0.15 * r.random::<f64>()) * df,
                })
                .collect();
            let phase: f64 = r.random::<f64>() * std::f64::consts::TAU;
            for y in 0..h {
                for x in 0..w {
                    let mut z = 0.28 * df
                        + 0.04
                            * df
                            * ((y as f64 * 0.35 + phase).sin() + (x as f64 * 0.29 - phase).cos());
                    for b in &bumps {
                        let dd = ((y as f64 - b.y).powi(2) + (x as f64 - b.x).powi(2))
                            / (b.radius * b.radius);
                        z += b.amp * (-dd).exp();
                    }
                    heights[y * w + x] = z.min(0.8 * df);
                }
            }
        }
        Family::Towers => {
            for v in heights.iter_mut() {
                *v = 0.12 * df;
            }
            let n = 2 + (h * w / 96).min(24);
            for _ in 0..n {
                let sy = 2 + r.random_range(0..(h / 4).max(1));
                let sx = 2 + r.random_range(0..(w / 4).max(1));
                let y0 = r.random_range(0..h);
                let x0 = r.random_range(0..w);
                let top = (0.55 + 0.35 * r.random::<f64>()) * df;
                for y in y0..(y0 + sy).min(h) {
                    for x in x0..(x0 + sx).min(w) {
                        heights[y * w + x] = heights[y * w + x].max(top);
                        built[y * w + x] = true;
                    }
                }
            }
        }
        Family::Plains => {
            let phase: f64 = r.random::<f64>() * std::f64::consts::TAU;
            for y in 0..h {
                for x in 0..w {
                    heights[y * w + x] =
                        0.16 * df + 0.02 * df * ((y as f64 + x as f64) * 0.2 + phase).sin();
                }
            }
        }
    }
    (heights, built)
}

fn color(family: Family, z: usize, top: f64, built: bool) -> [f64; 3] {
    let depth = top - z as f64;
    match family {
        Family::Hills if depth < 1.5 => [0.25, 0.62, 0.22],
        Family::Hills => [0.45, 0.32, 0.2],
        Family::Towers if built => [0.62, 0.62, 0.66],
        Family::Towers => [0.32, 0.3, 0.3],
        Family::Plains if depth < 1.5 => [0.86, 0.78, 0.5],
        Family::Plains => [0.7, 0.6, 0.38],
    }
}

/// A scene of `[d, h, w]` voxels with `z` (axis 0) pointing up.
pub fn generate_scene(family: Family, size: [usize; 3], seed: u64) -> Result<VoxelScene> {
    let dims = GridDims::new(size[0], size[1], size[2], SCENE_CHANNELS)?;
    let mut r = rng::stream_rng(seed ^ ((family.label() as u64) << 48), rng::stream::SCENES);
    let (heights, built) = height_map(family, size[1], size[2], size[0], &mut r);
    let grid = DenseLatentGrid::from_fn(dims, |p, ch| {
        let col = p[1] * size[2] + p[2];
        let top = heights[col];
        if (p[0] as f64) + 0.5 > top {
            return 0.0;
        }
        if ch == 0 {
            1.0
        } else {
            color(family, p[0], top, built[col])[ch - 1]
        }
    });
    Ok(VoxelScene { family, grid })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_have_distinct_heights() {
        let size = [32, 48, 48];
        let mean = |f: Family| {
            (0..4)
                .map(|s| generate_scene(f, size, s).unwrap().mean_height_fraction())
                .sum::<f64>()
                / 4.0
        };
        let (hills, towers, plains) = (
            mean(Family::Hills),
            mean(Family::Towers),
            mean(Family::Plains),
        );
        assert!(hills > plains + 0.1, "hills {hills} plains {plains}");
        assert!(towers > plains + 0.02, "towers {towers} plains {plains}");
    }

    #[test]
    fn scenes_are_deterministic_and_valid() {
        let a = generate_scene(Family::Towers, [16, 20, 24], 3).unwrap();
        let b = generate_scene(Family::Towers, [16, 20, 24], 3).unwrap();
        assert_eq!(a, b);
        for v in a.grid.data().chunks(4) {
            assert!(v[0] == 0.0 || v[0] == 1.0);
            assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn prompt_keywords() {
        assert_eq!(
            Family::from_prompt("Rolling green HILLS"),
            Some(Family::Hills)
        );
        assert_eq!(Family::from_prompt("a dense city"), Some(Family::Towers));
        assert_eq!(Family::from_prompt("open meadow"), Some(Family::Plains));
        assert_eq!(Family::from_prompt("???"), None);
    }
}
