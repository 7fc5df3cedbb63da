//! Per-region statistics of a generated world against isolated-label runs.

use std::fmt;

use crate::error::{Error, Result};
use crate::lattice::{MaskVolume, OccupancyField, SparseLatent};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionStatistic {
    /// Occupied fraction of the region's voxels, i.e. the mean column
    /// height over the grid depth.
    MeanHeight,
    /// Mean L2 norm of the appearance features at active voxels.
    MeanFeatureNorm,
}

impl RegionStatistic {
    pub fn name(self) -> &'static str {
        match self {
            RegionStatistic::MeanHeight => "mean_height",
            RegionStatistic::MeanFeatureNorm => "mean_feature_norm",
        }
    }
}

impl std::str::FromStr for RegionStatistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_height" => Ok(RegionStatistic::MeanHeight),
            "mean_feature_norm" => Ok(RegionStatistic::MeanFeatureNorm),
            other => Err(Error::InvalidArgument(format!(
                "unknown region statistic {other:?}"
            ))),
        }
    }
}

/// Distribution of a statistic over isolated-label runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionReference {
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
    pub runs: usize,
}

impl RegionReference {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite reference value".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            mean,
            std,
            runs: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionStat {
    /// `None` when the region holds nothing to measure.
    pub value: Option<f64>,
    pub reference: RegionReference,
    pub deviation: Option<f64>,
    /// `|deviation|` in reference standard deviations.
    pub deviation_sigmas: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionStatReport {
    pub statistic: RegionStatistic,
    /// One entry per mask, in mask order.
    pub regions: Vec<RegionStat>,
}

impl RegionStatReport {
    pub const CSV_HEADER: &'static str =
        "region,statistic,value,reference_mean,reference_std,deviation,deviation_sigmas";

    /// Regions whose statistic is undefined.
    pub fn flagged(&self) -> Vec<usize> {
        self.regions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.value.is_none())
            .map(|(k, _)| k)
            .collect()
    }

    pub fn csv_rows(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| x.to_string());
        self.regions
            .iter()
            .enumerate()
            .map(|(k, r)| {
                format!(
                    "{k},{},{},{},{},{},{}",
                    self.statistic.name(),
                    opt(r.value),
                    r.reference.mean,
                    r.reference.std,
                    opt(r.deviation),
                    opt(r.deviation_sigmas)
                )
            })
            .collect()
    }
}

impl fmt::Display for RegionStatReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, row) in self.csv_rows().iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{row}")?;
        }
        Ok(())
    }
}

/// Value of `stat` over the voxels where `mask` is at least one half.
pub fn region_statistic(
    occupancy: &OccupancyField,
    latent: &SparseLatent,
    mask: &MaskVolume,
    stat: RegionStatistic,
) -> Result<Option<f64>> {
    let dims = occupancy.dims();
    if !mask.dims().same_spatial(&dims) || !latent.dims().same_spatial(&dims) {
        return Err(Error::ShapeMismatch(format!(
            "world {:?}, latent {:?} and mask {:?} differ",
            dims.spatial(),
            latent.dims().spatial(),
            mask.dims().spatial()
        )));
    }
    let inside = |p: [usize; 3]| mask.at(p) >= 0.5;
    match stat {
        RegionStatistic::MeanHeight => {
            let (mut region, mut active) = (0usize, 0usize);
            for i in 0..dims.voxels() {
                if mask.weights()[i] >= 0.5 {
                    region += 1;
                    active += occupancy.is_active_index(i) as usize;
                }
            }
            Ok((region > 0).then(|| active as f64 / region as f64))
        }
        RegionStatistic::MeanFeatureNorm => {
            let (mut n, mut sum) = (0usize, 0.0);
            for i in 0..latent.len() {
                let p = latent.position(i);
                if inside(p) && occupancy.is_active(p) {
                    n += 1;
                    sum += latent.feature(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                }
            }
            Ok((n > 0).then(|| sum / n as f64))
        }
    }
}

/// Compares each masked region of a world with the isolated-label
/// reference for the same mask index. Masks must be binary and cover every
/// voxel exactly once.
pub fn region_fidelity(
    occupancy: &OccupancyField,
    latent: &SparseLatent,
    masks: &[MaskVolume],
    references: &[RegionReference],
    stat: RegionStatistic,
) -> Result<RegionStatReport> {
    if masks.is_empty() || masks.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} masks but {} references",
            masks.len(),
            references.len()
        )));
    }
    let dims = occupancy.dims();
    for m in masks {
        if !m.dims().same_spatial(&dims) || !m.is_binary() {
            return Err(Error::InvalidArgument(
                "masks must be binary and match the world".into(),
            ));
        }
    }
    for i in 0..dims.voxels() {
        let cover: f64 = masks.iter().map(|m| m.weights()[i]).sum();
        if cover != 1.0 {
            return Err(Error::InvalidArgument(format!(
                "masks do not partition the grid at {:?}",
                dims.position(i)
            )));
        }
    }
    let mut regions = Vec::with_capacity(masks.len());
    for (mask, reference) in masks.iter().zip(references) {
        let value = region_statistic(occupancy, latent, mask, stat)?;
        let deviation = value.map(|v| v - reference.mean);
        let deviation_sigmas = deviation.and_then(|d| {
            if reference.std > 0.0 {
                Some(d.abs() / reference.std)
            } else if d == 0.0 {
                Some(0.0)
            } else {
                None
            }
        });
        if value.is_none() {
            log::warn!("region statistic undefined for an empty region");
        }
        regions.push(RegionStat {
            value,
            reference: *reference,
            deviation,
            deviation_sigmas,
        });
    }
    Ok(RegionStatReport {
        statistic: stat,
        regions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::GridDims;

    /// Column heights 2 on the left half (x < 2), 3 on the right, depth 4.
    fn world() -> (OccupancyField, SparseLatent) {
        let dims = GridDims::new(4, 2, 4, 1).unwrap();
        let occ =
            OccupancyField::from_active(dims, |p| p[0] < if p[2] < 2 { 2 } else { 3 }).unwrap();
        let pos = occ.active_positions();
        let feats: Vec<f64> = pos
            .iter()
            .map(|p| if p[2] < 2 { 1.0 } else { -2.0 })
            .collect();
        let latent = SparseLatent::new(dims, &pos, &feats).unwrap();
        (occ, latent)
    }

    fn halves() -> Vec<MaskVolume> {
        let dims = GridDims::new(4, 2, 4, 1).unwrap();
        vec![
            MaskVolume::from_fn(dims, |p| (p[2] < 2) as u8 as f64).unwrap(),
            MaskVolume::from_fn(dims, |p| (p[2] >= 2) as u8 as f64).unwrap(),
        ]
    }

    fn reference(mean: f64) -> RegionReference {
        RegionReference {
            mean,
            std: 0.1,
            runs: 5,
        }
    }

    #[test]
    fn statistics_match_hand_counts() {
        let (occ, lat) = world();
        let m = halves();
        let h = |k| {
            region_statistic(&occ, &lat, &m[k], RegionStatistic::MeanHeight)
                .unwrap()
                .unwrap()
        };
        assert!((h(0) - 0.5).abs() < 1e-12);
        assert!((h(1) - 0.75).abs() < 1e-12);
        let n = |k| {
            region_statistic(&occ, &lat, &m[k], RegionStatistic::MeanFeatureNorm)
                .unwrap()
                .unwrap()
        };
        assert!((n(0) - 1.0).abs() < 1e-12);
        assert!((n(1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn self_reference_has_zero_deviation() {
        let (occ, lat) = world();
        let dims = occ.dims();
        let whole = vec![MaskVolume::ones(dims)];
        let v = region_statistic(&occ, &lat, &whole[0], RegionStatistic::MeanHeight)
            .unwrap()
            .unwrap();
        let r = region_fidelity(
            &occ,
            &lat,
            &whole,
            &[RegionReference::from_values(&[v]).unwrap()],
            RegionStatistic::MeanHeight,
        )
        .unwrap();
        assert_eq!(r.regions[0].deviation, Some(0.0));
        assert_eq!(r.regions[0].deviation_sigmas, Some(0.0));
    }

    #[test]
    fn swapping_labels_swaps_deviations() {
        let (occ, lat) = world();
        let m = halves();
        let refs = [reference(0.4), reference(0.9)];
        let a = region_fidelity(&occ, &lat, &m, &refs, RegionStatistic::MeanHeight).unwrap();
        let m2 = vec![m[1].clone(), m[0].clone()];
        let b = region_fidelity(
            &occ,
            &lat,
            &m2,
            &[refs[1], refs[0]],
            RegionStatistic::MeanHeight,
        )
        .unwrap();
        assert_eq!(a.regions[0], b.regions[1]);
        assert_eq!(a.regions[1], b.regions[0]);
        assert!((a.regions[0].deviation.unwrap() - 0.1).abs() < 1e-12);
        assert!((a.regions[1].deviation_sigmas.unwrap() - 1.5).abs() < 1e-9);
    }

    #[test]
    fn empty_region_is_flagged() {
        let (occ, lat) = world();
        let dims = occ.dims();
        let masks = vec![
            MaskVolume::ones(dims),
            MaskVolume::from_fn(dims, |_| 0.0).unwrap(),
        ];
        let r = region_fidelity(
            &occ,
            &lat,
            &masks,
            &[reference(0.5), reference(0.5)],
            RegionStatistic::MeanHeight,
        )
        .unwrap();
        assert_eq!(r.flagged(), vec![1]);
        assert!(r.csv_rows()[1].contains("nan"));
    }

    #[test]
    fn overlapping_masks_rejected() {
        let (occ, lat) = world();
        let dims = occ.dims();
        let masks = vec![MaskVolume::ones(dims), MaskVolume::ones(dims)];
        assert!(region_fidelity(
            &occ,
            &lat,
            &masks,
            &[reference(0.5), reference(0.5)],
            RegionStatistic::MeanHeight
        )
        .is_err());
    }

    #[test]
    fn reference_std_is_sample_std() {
        let r = RegionReference::from_values(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.mean, 2.0);
        assert!((r.std - 1.0).abs() < 1e-12);
    }
}
