//! Latent encoder and decoders for the toy pipeline.
//!
//! The encoder block-averages a scene: a block of `f^3` voxels becomes one
//! lattice cell whose structure value is `2 * occupancy - 1` and whose
//! appearance latent is `2 * [occupancy, r, g, b] - 1`. The structure decoder
//! is affine and thresholded at zero; the appearance decoder is affine then
//! clamped to [0, 1].

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::lattice::{DenseLatentGrid, GridDims, OccupancyField, SparseLatent};
use crate::rng::Rng;
use crate::scenes::{VoxelScene, SCENE_CHANNELS};

pub const STRUCTURE_CHANNELS: usize = 1;
pub const APPEARANCE_CHANNELS: usize = 4;
const OUT: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDecoders {
    pub occ_weight: Vec<f64>,
    pub occ_bias: f64,
    /// Row-major `4 x APPEARANCE_CHANNELS`.
    pub app_weight: Vec<f64>,
    pub app_bias: [f64; 4],
}

impl Default for ToyDecoders {
    /// Exact inverse of the encoder on the structure path; a deliberately
    /// uncalibrated appearance path that fine-tuning corrects.
    fn default() -> Self {
        let mut app_weight = vec![0.0; OUT * APPEARANCE_CHANNELS];
        for k in 0..OUT {
            app_weight[k * APPEARANCE_CHANNELS + k] = 0.35;
        }
        Self {
            occ_weight: vec![1.0],
            occ_bias: 0.0,
            app_weight,
            app_bias: [0.5; 4],
        }
    }
}

impl ToyDecoders {
    /// Always-active structure decoder, useful for running stage L densely.
    pub fn all_active() -> Self {
        Self {
            occ_weight: vec![0.0],
            occ_bias: 1.0,
            ..Self::default()
        }
    }

    pub fn occupancy_value(&self, z: &[f64]) -> f64 {
        self.occ_bias
            + self
                .occ_weight
                .iter()
                .zip(z)
                .map(|(w, v)| w * v)
                .sum::<f64>()
    }

    /// Density and RGB for one appearance latent.
    pub fn decode_appearance(&self, z: &[f64]) -> [f64; 4] {
        let mut out = [0.0; 4];
        for k in 0..OUT {
            let row = &self.app_weight[k * APPEARANCE_CHANNELS..(k + 1) * APPEARANCE_CHANNELS];
            let v = self.app_bias[k] + row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>();
            out[k] = if v.is_finite() {
                v.clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.app_weight.len() + OUT
    }
}

/// Thresholds the structure decoder output at zero.
pub fn decode_occupancy(dec: &ToyDecoders, dense: &DenseLatentGrid) -> Result<OccupancyField> {
    let dims = dense.dims();
    if dims.c != dec.occ_weight.len() {
        return Err(Error::ShapeMismatch(format!(
            "structure decoder expects {} channels, latent has {}",
            dec.occ_weight.len(),
            dims.c
        )));
    }
    let values = dense
        .data()
        .chunks(dims.c)
        .map(|z| dec.occupancy_value(z))
        .collect();
    OccupancyField::new(dims.with_channels(1)?, values, 0.0)
}

/// One encoded scene crop.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCrop {
    pub structure: DenseLatentGrid,
    pub appearance: SparseLatent,
    /// Ground-truth density and RGB per appearance position.
    pub targets: Vec<f64>,
}

/// A latent crop paired with ground-truth voxel attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderCrop {
    pub latent: SparseLatent,
    pub targets: Vec<f64>,
}

impl From<&EncodedCrop> for DecoderCrop {
    fn from(e: &EncodedCrop) -> Self {
        DecoderCrop {
            latent: e.appearance.clone(),
            targets: e.targets.clone(),
        }
    }
}

/// Encodes the box `[origin, origin + size)` of `scene` with `factor^3`
/// voxels per lattice cell.
pub fn encode_crop(
    scene: &VoxelScene,
    origin: [usize; 3],
    size: [usize; 3],
    factor: usize,
) -> Result<EncodedCrop> {
    let sd = scene.dims().spatial();
    if factor == 0 {
        return Err(Error::InvalidArgument("encoder factor must be >= 1".into()));
    }
    for a in 0..3 {
        if size[a] == 0 || !size[a].is_multiple_of(factor) {
            return Err(Error::InvalidArgument(format!(
                "crop extent {} is not a positive multiple of {factor}",
                size[a]
            )));
        }
        if origin[a] + size[a] > sd[a] {
            return Err(Error::InvalidArgument(
                "crop exceeds the scene bounds".into(),
            ));
        }
    }
    let n = [size[0] / factor, size[1] / factor, size[2] / factor];
    let sdims = GridDims::new(n[0], n[1], n[2], STRUCTURE_CHANNELS)?;
    let mut structure = DenseLatentGrid::zeros(sdims);
    let mut positions = Vec::new();
    let mut feats = Vec::new();
    let mut targets = Vec::new();
    let per_block = (factor * factor * factor) as f64;
    for i in 0..sdims.voxels() {
        let cell = sdims.position(i);
        let mut occ = 0.0;
        let mut rgb = [0.0; 3];
        for dz in 0..factor {
            for dy in 0..factor {
                for dx in 0..factor {
                    let p = [
                        origin[0] + cell[0] * factor + dz,
                        origin[1] + cell[1] * factor + dy,
                        origin[2] + cell[2] * factor + dx,
                    ];
                    let v = scene.grid.at(p);
                    occ += v[0];
                    for k in 0..3 {
                        rgb[k] += v[0] * v[k + 1];
                    }
                }
            }
        }
        let frac = occ / per_block;
        structure.data_mut()[i] = 2.0 * frac - 1.0;
        if frac > 0.5 {
            let attrs = [frac, rgb[0] / occ, rgb[1] / occ, rgb[2] / occ];
            positions.push(cell);
            feats.extend(attrs.iter().map(|a| 2.0 * a - 1.0));
            targets.extend_from_slice(&attrs);
        }
    }
    debug_assert_eq!(SCENE_CHANNELS, OUT);
    let appearance = SparseLatent::new(
        sdims.with_channels(APPEARANCE_CHANNELS)?,
        &positions,
        &feats,
    )?;
    Ok(EncodedCrop {
        structure,
        appearance,
        targets,
    })
}

/// Mean squared density and color error over every position of every crop.
pub fn reconstruction_loss(dec: &ToyDecoders, crops: &[DecoderCrop]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for crop in crops {
        check_crop(crop)?;
        for i in 0..crop.latent.len() {
            let out = dec.decode_appearance(crop.latent.feature(i));
            for k in 0..OUT {
                let e = out[k] - crop.targets[i * OUT + k];
                total += e * e;
            }
            count += OUT;
        }
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(total / count as f64)
}

fn check_crop(crop: &DecoderCrop) -> Result<()> {
    if crop.latent.dims().c != APPEARANCE_CHANNELS || crop.targets.len() != crop.latent.len() * OUT
    {
        return Err(Error::ShapeMismatch(
            "decoder crop latent/target sizes disagree".into(),
        ));
    }
    Ok(())
}

/// Full-batch gradient on one crop; clamped outputs pass no gradient.
fn crop_gradient(dec: &ToyDecoders, crop: &DecoderCrop, grad: &mut [f64]) -> f64 {
    let n = crop.latent.len();
    if n == 0 {
        return 0.0;
    }
    let norm = 1.0 / (n * OUT) as f64;
    let nw = dec.app_weight.len();
    let mut loss = 0.0;
    for i in 0..n {
        let z = crop.latent.feature(i);
        for k in 0..OUT {
            let row = &dec.app_weight[k * APPEARANCE_CHANNELS..(k + 1) * APPEARANCE_CHANNELS];
            let raw = dec.app_bias[k] + row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>();
            let out = raw.clamp(0.0, 1.0);
            let e = out - crop.targets[i * OUT + k];
            loss += e * e * norm;
            if raw > 0.0 && raw < 1.0 {
                let g = 2.0 * e * norm;
                for (j, x) in z.iter().enumerate() {
                    grad[k * APPEARANCE_CHANNELS + j] += g * x;
                }
                grad[nw + k] += g;
            }
        }
    }
    loss
}

/// SGD on the appearance decoder; one randomly chosen crop per step.
pub fn finetune_decoder(
    dec: &ToyDecoders,
    crops: &[DecoderCrop],
    steps: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<(ToyDecoders, Vec<f64>)> {
    if crops.iter().all(|c| c.latent.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    for c in crops {
        check_crop(c)?;
    }
    let mut dec = dec.clone();
    let nw = dec.app_weight.len();
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let crop = &crops[rng.random_range(0..crops.len())];
        let mut grad = vec![0.0; dec.param_count()];
        losses.push(crop_gradient(&dec, crop, &mut grad));
        if lr > 0.0 {
            for (w, g) in dec.app_weight.iter_mut().zip(&grad[..nw]) {
                *w -= lr * g;
            }
            for (b, g) in dec.app_bias.iter_mut().zip(&grad[nw..]) {
                *b -= lr * g;
            }
        }
    }
    Ok((dec, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::scenes::{generate_scene, Family};

    #[test]
    fn occupancy_sign_oracle() {
        let dims = GridDims::cube(5, 1).unwrap();
        let g =
            DenseLatentGrid::from_vec(dims, rng::normal_vec(&mut rng::seeded(1), dims.voxels()))
                .unwrap();
        let occ = decode_occupancy(&ToyDecoders::default(), &g).unwrap();
        let expected = g.data().iter().filter(|&&v| v > 0.0).count();
        assert_eq!(occ.active_count(), expected);
        let all = decode_occupancy(&ToyDecoders::all_active(), &g).unwrap();
        assert_eq!(all.active_count(), dims.voxels());
        let none = DenseLatentGrid::filled(dims, -1.0);
        assert_eq!(
            decode_occupancy(&ToyDecoders::default(), &none)
                .unwrap()
                .active_count(),
            0
        );
    }

    #[test]
    fn encoder_structure_matches_appearance_support() {
        let scene = generate_scene(Family::Hills, [16, 16, 16], 2).unwrap();
        let enc = encode_crop(&scene, [0, 0, 0], [16, 16, 16], 2).unwrap();
        let occ = decode_occupancy(&ToyDecoders::default(), &enc.structure).unwrap();
        assert_eq!(occ.active_positions(), enc.appearance.positions());
        assert!(!enc.appearance.is_empty());
    }

    fn crops() -> Vec<DecoderCrop> {
        (0..4)
            .map(|s| {
                let f = Family::ALL[s as usize % 3];
                let scene = generate_scene(f, [16, 16, 16], s).unwrap();
                DecoderCrop::from(&encode_crop(&scene, [0, 0, 0], [16, 16, 16], 2).unwrap())
            })
            .collect()
    }

    #[test]
    fn zero_lr_is_identity() {
        let d = ToyDecoders::default();
        let (out, _) = finetune_decoder(&d, &crops(), 10, 0.0, &mut rng::seeded(0)).unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn finetuning_cuts_loss_by_a_third() {
        let train = crops();
        let held: Vec<DecoderCrop> = (10..12)
            .map(|s| {
                let scene = generate_scene(Family::Towers, [16, 16, 16], s).unwrap();
                DecoderCrop::from(&encode_crop(&scene, [0, 0, 0], [16, 16, 16], 2).unwrap())
            })
            .collect();
        let d = ToyDecoders::default();
        let before = reconstruction_loss(&d, &held).unwrap();
        let (tuned, _) = finetune_decoder(&d, &train, 400, 0.5, &mut rng::seeded(3)).unwrap();
        let after = reconstruction_loss(&tuned, &held).unwrap();
        assert!(after <= 0.7 * before, "before {before} after {after}");
    }

    #[test]
    fn decoded_colors_are_clamped() {
        let d = ToyDecoders::default();
        for z in [[50.0; 4], [-50.0; 4], [f64::NAN; 4]] {
            assert!(d
                .decode_appearance(&z)
                .iter()
                .all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(
            finetune_decoder(&ToyDecoders::default(), &[], 1, 0.1, &mut rng::seeded(0)).is_err()
        );
    }
}
