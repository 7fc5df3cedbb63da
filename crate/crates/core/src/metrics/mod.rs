//! Seam, region-fidelity and normalization checks on generated latents.

mod region;
mod seam;

pub use region::{
    region_fidelity, region_statistic, RegionReference, RegionStat, RegionStatReport,
    RegionStatistic,
};
pub use seam::{seam_discontinuity, seam_discontinuity_at, SeamField, SeamReport};

use crate::error::Result;
use crate::fusion::{segment_normalization_deviation, window_normalization_deviation};
use crate::lattice::{MaskVolume, WindowPlan};

/// Largest `|out - 1|` when all-ones velocities go through window blending
/// with `plan` and, if `masks` is non-empty, through label mixing.
pub fn normalization_probe(
    plan: &WindowPlan,
    kernel_sigma: f64,
    masks: &[MaskVolume],
) -> Result<f64> {
    let mut dev = window_normalization_deviation(plan, kernel_sigma)?;
    if !masks.is_empty() {
        dev = dev.max(segment_normalization_deviation(masks)?);
    }
    Ok(dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::SigmaSchedule;
    use crate::lattice::{
        build_window_plan, extrude_segment_map, smooth_mask, GridDims, SegmentMap,
    };
    use std::collections::BTreeMap;

    #[test]
    fn single_window_is_exact() {
        let dims = GridDims::cube(8, 1).unwrap();
        let plan = build_window_plan(dims, 8, 4).unwrap();
        assert_eq!(normalization_probe(&plan, 2.0, &[]).unwrap(), 0.0);
        assert_eq!(
            normalization_probe(&plan, 2.0, &[MaskVolume::ones(dims)]).unwrap(),
            0.0
        );
    }

    #[test]
    fn many_windows_and_blurred_labels() {
        let dims = GridDims::cube(16, 1).unwrap();
        let plan = build_window_plan(dims, 8, 4).unwrap();
        assert_eq!(plan.windows.len(), 27);
        let raster: Vec<u32> = (0..16 * 16).map(|i| ((i % 16) / 6) as u32).collect();
        let prompts: BTreeMap<u32, String> = (0..3).map(|k| (k, format!("label {k}"))).collect();
        let map = SegmentMap::new(16, 16, raster, prompts).unwrap();
        let sigma = SigmaSchedule::default().sigma(0.6);
        let masks: Vec<MaskVolume> = extrude_segment_map(&map, dims)
            .unwrap()
            .iter()
            .map(|m| smooth_mask(m, sigma).unwrap())
            .collect();
        assert!(normalization_probe(&plan, 2.0, &masks).unwrap() <= 1e-6);
    }
}
