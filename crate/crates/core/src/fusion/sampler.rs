//! Euler samplers over dense and sparse supports.
//!
//! Every sampler starts from one global noise field drawn from the seed, and
//! at each step evaluates the model per window, blends the windows, mixes the
//! labels, and takes an Euler step on the whole latent.

use crate::error::{Error, Result};
use crate::flowmodel::{
    decode_occupancy, euler_values, ConditionEmbedding, LatentField, ToyDecoders, ToyFlowModel,
};
use crate::fusion::segment::{mix_labels, ColumnMasks, SigmaSchedule};
use crate::fusion::window::WindowAssignment;
use crate::lattice::{
    build_window_plan, DenseLatentGrid, GridDims, OccupancyField, SegmentMap, SparseLatent,
    WindowPlan,
};
use crate::rng::{self, stream};
use crate::scenes::Family;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub window_size: usize,
    pub stride: usize,
    /// Width of the window blending kernel; `None` uses a quarter window.
    pub kernel_sigma: Option<f64>,
    pub seed: u64,
    pub sigma_schedule: SigmaSchedule,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 25,
            window_size: 64,
            stride: 32,
            kernel_sigma: None,
            seed: 0,
            sigma_schedule: SigmaSchedule::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if let Some(s) = self.kernel_sigma {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "kernel sigma must be > 0, got {s}"
                )));
            }
        }
        self.sigma_schedule.validate()
    }

    pub fn kernel_sigma(&self) -> f64 {
        self.kernel_sigma.unwrap_or(self.window_size as f64 / 4.0)
    }

    pub fn plan(&self, dims: GridDims) -> Result<WindowPlan> {
        build_window_plan(dims, self.window_size, self.stride)
    }

    /// Flow time at the start of step `k`.
    pub(crate) fn time(&self, k: usize) -> f64 {
        1.0 - k as f64 / self.steps as f64
    }

    pub(crate) fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }
}

/// The two stage models of the world generator.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldModels {
    pub structure: ToyFlowModel,
    pub appearance: ToyFlowModel,
}

/// Maps every label of `map` (ascending) to a model condition. A prompt is
/// either a label number or text naming a scene family.
pub fn resolve_conditions(
    map: &SegmentMap,
    model: &ToyFlowModel,
) -> Result<Vec<ConditionEmbedding>> {
    map.labels()
        .into_iter()
        .map(|l| {
            let text = &map.prompts()[&l];
            let id = match text.trim().parse::<usize>() {
                Ok(id) => id,
                Err(_) => Family::from_prompt(text)
                    .map(Family::label)
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "prompt {text:?} for label {l} names no known condition"
                        ))
                    })?,
            };
            model.condition(id)
        })
        .collect()
}

struct Engine<'a> {
    model: &'a ToyFlowModel,
    cfg: &'a SamplerConfig,
    assign: WindowAssignment,
    conds: Vec<ConditionEmbedding>,
    masks: Option<(ColumnMasks, Vec<[usize; 3]>)>,
}

impl Engine<'_> {
    fn run<L: LatentField>(&self, init: L) -> Result<L> {
        let c = init.channels();
        let dt = self.cfg.dt();
        let mut cur = init;
        for k in 0..self.cfg.steps {
            let t = self.cfg.time(k);
            let vels = self
                .conds
                .iter()
                .map(|cond| self.assign.velocity(self.model, &cur, t, cond))
                .collect::<Result<Vec<_>>>()?;
            let v = match &self.masks {
                Some((masks, points)) if self.conds.len() > 1 => {
                    // the blur of the time being stepped to, so the last step
                    // mixes with hard masks
                    let sigma = self.cfg.sigma_schedule.sigma(t - dt);
                    let weights = masks.weights_at(sigma, points)?;
                    mix_labels(&weights, &vels, c).map_err(|e| match e {
                        Error::ZeroMaskSum([i, _, _]) => Error::ZeroMaskSum(points[i]),
                        other => other,
                    })?
                }
                _ => vels.into_iter().next().expect("at least one condition"),
            };
            let mut values = cur.values().to_vec();
            euler_values(&mut values, &v, dt);
            if values.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!("non-finite latent at step {k}")));
            }
            cur = cur.with_values(values);
        }
        Ok(cur)
    }
}

fn dense_noise(dims: GridDims, seed: u64) -> DenseLatentGrid {
    let mut r = rng::stream_rng(seed, stream::DENSE_NOISE);
    DenseLatentGrid::from_vec(dims, rng::normal_vec(&mut r, dims.voxels() * dims.c))
        .expect("finite noise")
}

fn sparse_noise(support: &SparseLatent, seed: u64) -> SparseLatent {
    let mut r = rng::stream_rng(seed, stream::SPARSE_NOISE);
    let n = support.len() * support.dims().c;
    support
        .with_features(rng::normal_vec(&mut r, n))
        .expect("finite noise")
}

fn model_dims(model: &ToyFlowModel, dims: GridDims) -> Result<GridDims> {
    dims.with_channels(model.config().channels)
}

/// Reference sampler: the model sees the whole grid as one frame.
pub fn sample_plain(
    model: &ToyFlowModel,
    cond: &ConditionEmbedding,
    dims: GridDims,
    steps: usize,
    seed: u64,
) -> Result<DenseLatentGrid> {
    let dims = model_dims(model, dims)?;
    denoise(model, cond, dense_noise(dims, seed), steps)
}

/// Euler integration from `t = 1` to `t = 0` starting at `init`, with the
/// whole grid as one frame.
pub fn denoise(
    model: &ToyFlowModel,
    cond: &ConditionEmbedding,
    init: DenseLatentGrid,
    steps: usize,
) -> Result<DenseLatentGrid> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    let mut s = init;
    let dt = 1.0 / steps as f64;
    for k in 0..steps {
        let t = 1.0 - k as f64 / steps as f64;
        let v = model.velocity(&s, t, cond)?;
        euler_values(s.data_mut(), v.data(), dt);
    }
    if !s.is_finite() {
        return Err(Error::Numerical("non-finite latent".into()));
    }
    Ok(s)
}

pub fn sample_latent_fusion(
    model: &ToyFlowModel,
    cond: &ConditionEmbedding,
    dims: GridDims,
    cfg: &SamplerConfig,
) -> Result<DenseLatentGrid> {
    cfg.validate()?;
    let dims = model_dims(model, dims)?;
    let plan = cfg.plan(dims)?;
    let engine = Engine {
        model,
        cfg,
        assign: WindowAssignment::dense(&plan, cfg.kernel_sigma())?,
        conds: vec![cond.clone()],
        masks: None,
    };
    engine.run(dense_noise(dims, cfg.seed))
}

/// Multi-window, multi-label dense sampling guided by a segment map.
pub fn sample_segment_guided(
    model: &ToyFlowModel,
    map: &SegmentMap,
    dims: GridDims,
    cfg: &SamplerConfig,
) -> Result<DenseLatentGrid> {
    cfg.validate()?;
    let dims = model_dims(model, dims)?;
    let plan = cfg.plan(dims)?;
    let conds = resolve_conditions(map, model)?;
    let points: Vec<[usize; 3]> = (0..dims.voxels()).map(|i| dims.position(i)).collect();
    let engine = Engine {
        model,
        cfg,
        assign: WindowAssignment::dense(&plan, cfg.kernel_sigma())?,
        conds,
        masks: Some((ColumnMasks::new(map, dims)?, points)),
    };
    engine.run(dense_noise(dims, cfg.seed))
}

/// Segment-guided sampling restricted to the positions of `support`.
pub fn sample_sparse_segment_guided(
    model: &ToyFlowModel,
    map: &SegmentMap,
    support: &SparseLatent,
    cfg: &SamplerConfig,
) -> Result<SparseLatent> {
    cfg.validate()?;
    let dims = model_dims(model, support.dims())?;
    let template = SparseLatent::new(
        dims,
        &support.positions(),
        &vec![0.0; support.len() * dims.c],
    )?;
    let plan = cfg.plan(dims)?;
    let conds = resolve_conditions(map, model)?;
    let engine = Engine {
        model,
        cfg,
        assign: WindowAssignment::sparse(&plan, &template, cfg.kernel_sigma())?,
        conds,
        masks: Some((ColumnMasks::new(map, dims)?, template.positions())),
    };
    engine.run(sparse_noise(&template, cfg.seed))
}

/// Two-stage generation: dense structure, decoded to active voxels, then
/// sparse appearance features on those voxels.
pub fn sample_world(
    models: &WorldModels,
    decoders: &ToyDecoders,
    map: &SegmentMap,
    dims: GridDims,
    cfg: &SamplerConfig,
) -> Result<(OccupancyField, SparseLatent)> {
    let structure = sample_segment_guided(&models.structure, map, dims, cfg)?;
    let occupancy = decode_occupancy(decoders, &structure)?;
    let active = occupancy.active_positions();
    if active.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    let c = models.appearance.config().channels;
    let support = SparseLatent::new(
        dims.with_channels(c)?,
        &active,
        &vec![0.0; active.len() * c],
    )?;
    let features = sample_sparse_segment_guided(&models.appearance, map, &support, cfg)?;
    Ok((occupancy, features))
}

/// Two-stage reference without fusion: a single-label map, and both stages
/// see the whole grid as one frame.
pub fn sample_world_plain(
    models: &WorldModels,
    decoders: &ToyDecoders,
    map: &SegmentMap,
    dims: GridDims,
    steps: usize,
    seed: u64,
) -> Result<(OccupancyField, SparseLatent)> {
    if map.num_labels() != 1 {
        return Err(Error::InvalidArgument(format!(
            "plain sampling needs one label, map has {}",
            map.num_labels()
        )));
    }
    let structure = sample_plain(
        &models.structure,
        &resolve_conditions(map, &models.structure)?[0],
        dims,
        steps,
        seed,
    )?;
    let occupancy = decode_occupancy(decoders, &structure)?;
    let active = occupancy.active_positions();
    if active.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    let cond = &resolve_conditions(map, &models.appearance)?[0];
    let c = models.appearance.config().channels;
    let support = SparseLatent::new(
        dims.with_channels(c)?,
        &active,
        &vec![0.0; active.len() * c],
    )?;
    let mut s = sparse_noise(&support, seed);
    let dt = 1.0 / steps as f64;
    for k in 0..steps {
        let t = 1.0 - k as f64 / steps as f64;
        let v = models.appearance.velocity(&s, t, cond)?;
        euler_values(s.features_mut(), v.features(), dt);
    }
    if s.features().iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite latent".into()));
    }
    Ok((occupancy, s))
}

/// Baseline without fusion: every window is sampled on its own with its own
/// noise and pasted into the grid in plan order, later windows overwriting
/// earlier ones. Also returns the planes where pasted windows meet.
pub fn sample_independent_windows(
    model: &ToyFlowModel,
    cond: &ConditionEmbedding,
    dims: GridDims,
    cfg: &SamplerConfig,
) -> Result<(DenseLatentGrid, [Vec<usize>; 3])> {
    cfg.validate()?;
    let dims = model_dims(model, dims)?;
    let plan = cfg.plan(dims)?;
    let ws = plan.window_size;
    let wdims = GridDims::cube(ws, dims.c)?;
    let mut out = DenseLatentGrid::zeros(dims);
    let mut owner = vec![0usize; dims.voxels()];
    for (j, w) in plan.windows.iter().enumerate() {
        let seed = cfg
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(j as u64 + 1);
        let block = sample_plain(model, cond, wdims, cfg.steps, seed)?;
        for z in 0..ws {
            for y in 0..ws {
                for x in 0..ws {
                    let p = [w.origin[0] + z, w.origin[1] + y, w.origin[2] + x];
                    out.at_mut(p).copy_from_slice(block.at([z, y, x]));
                    owner[dims.voxel_index(p)] = j;
                }
            }
        }
    }
    let mut seams: [Vec<usize>; 3] = Default::default();
    let ext = dims.spatial();
    let strides = [dims.h * dims.w, dims.w, 1];
    for (a, planes) in seams.iter_mut().enumerate() {
        for plane in 1..ext[a] {
            let crosses = (0..dims.voxels()).any(|i| {
                let p = dims.position(i);
                p[a] == plane && owner[i] != owner[i - strides[a]]
            });
            if crosses {
                planes.push(plane);
            }
        }
    }
    Ok((out, seams))
}
