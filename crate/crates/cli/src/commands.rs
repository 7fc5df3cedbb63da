//! Subcommand implementations.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use latticeworld_core::enhancer::{
    build_pairs, enhance_world, enhancer_validation_loss, finetune_enhancer, EnhanceConfig,
    EnhancerModel, EnhancerTrainConfig, PairConfig,
};
use latticeworld_core::flowmodel::{
    encode_crop, finetune_decoder, train_flow_matching, validation_loss, DecoderCrop, ModelConfig,
    ToyDecoders, ToyFlowModel, TrainConfig, TrainLatent, TrainSample, APPEARANCE_CHANNELS,
    STRUCTURE_CHANNELS,
};
use latticeworld_core::fusion::{
    sample_world, sample_world_plain, SamplerConfig, SigmaSchedule, WorldModels,
};
use latticeworld_core::initopt::{
    optimize_initial_latent, OptConfig, OptStatus, Optimizer, Parameterization, TargetConstraint,
    VoxelBox,
};
use latticeworld_core::io::{
    csv_string, pair_manifest, read_segment_map, render_height_map, render_label_map,
    render_side_view, render_top_view, Checkpoint, VoxelArchive,
};
use latticeworld_core::lattice::{
    build_window_plan, extrude_segment_map, smooth_mask, DenseLatentGrid, GridDims, MaskVolume,
    SegmentMap,
};
use latticeworld_core::metrics::{
    normalization_probe, region_fidelity, region_statistic, seam_discontinuity, RegionReference,
    RegionStatReport, RegionStatistic, SeamReport,
};
use latticeworld_core::rng::{self, stream};
use latticeworld_core::scenes::{generate_scene, Family, VoxelScene};
use latticeworld_core::Error;

use crate::config::RunConfig;

/// Failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub const USAGE: u8 = 2;
    pub const DATA: u8 = 3;
    pub const NUMERICAL: u8 = 4;

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: Self::USAGE,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: Self::NUMERICAL,
            message: message.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.code {
            Self::USAGE => "usage",
            Self::NUMERICAL => "numerical",
            _ => "data",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Numerical(_) => Self::NUMERICAL,
            _ => Self::DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: Self::DATA,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn read_err(path: &Path, e: Error) -> CliError {
    CliError {
        code: CliError::DATA,
        message: format!("{}: {e}", path.display()),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError {
        code: CliError::DATA,
        message: format!("{}: {e}", path.display()),
    })?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn save_archive(path: &Path, a: &VoxelArchive) -> CliResult<()> {
    write_file(path, a.to_bytes()?)
}

fn load_archive(path: &Path) -> CliResult<VoxelArchive> {
    VoxelArchive::load(path).map_err(|e| read_err(path, e))
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path).map_err(|e| read_err(path, e))
}

fn load_flow(path: &Path) -> CliResult<ToyFlowModel> {
    load_checkpoint(path)?
        .into_flow()
        .map_err(|e| read_err(path, e))
}

fn load_decoders(cfg: &RunConfig) -> CliResult<ToyDecoders> {
    if cfg.decoders.is_empty() {
        return Ok(ToyDecoders::default());
    }
    let path = PathBuf::from(&cfg.decoders);
    load_checkpoint(&path)?
        .into_decoders()
        .map_err(|e| read_err(&path, e))
}

fn check_finite(name: &str, values: &[f64]) -> CliResult<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(CliError::numerical(format!(
            "{name} is not finite at step {i}"
        ))),
        None => Ok(()),
    }
}

fn curve_csv(losses: &[f64]) -> String {
    let rows: Vec<String> = losses
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{i},{l}"))
        .collect();
    csv_string("step,loss", &rows)
}

fn parse_families(cfg: &RunConfig) -> CliResult<Vec<Family>> {
    cfg.families
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            Family::ALL
                .into_iter()
                .find(|f| f.name() == s)
                .ok_or_else(|| {
                    CliError::usage(format!(
                        "unknown family {s:?} (known: hills, towers, plains)"
                    ))
                })
        })
        .collect()
}

const MANIFEST_HEADER: &str = "index,family,label,seed,file,mean_height";

pub fn gen_data(cfg: &RunConfig) -> CliResult<()> {
    let families = parse_families(cfg)?;
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(dir.join("scenes"))?;
    let n = cfg.scene_size;
    let mut rows = Vec::new();
    let mut index = 0u64;
    for family in &families {
        for _ in 0..cfg.scenes_per_family {
            let seed = rng::derive_seed(cfg.seed, index);
            let scene = generate_scene(*family, [n, n, n], seed)?;
            let file = format!("scenes/scene_{index:04}.lwvx");
            save_archive(&dir.join(&file), &VoxelArchive::Dense(scene.grid.clone()))?;
            rows.push(format!(
                "{index},{},{},{seed},{file},{}",
                family.name(),
                family.label(),
                scene.mean_height_fraction()
            ));
            index += 1;
        }
    }
    write_file(
        &dir.join("manifest.csv"),
        csv_string(MANIFEST_HEADER, &rows),
    )?;
    log::info!("generated {index} scenes");
    Ok(())
}

fn load_scenes(dir: &Path) -> CliResult<Vec<VoxelScene>> {
    let path = dir.join("manifest.csv");
    let text = fs::read_to_string(&path).map_err(|e| CliError {
        code: CliError::DATA,
        message: format!("{}: {e}", path.display()),
    })?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(CliError {
            code: CliError::DATA,
            message: format!("{}: unexpected header", path.display()),
        });
    }
    let mut scenes = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || CliError {
            code: CliError::DATA,
            message: format!("{}: bad row {line:?}", path.display()),
        };
        if f.len() != 6 {
            return Err(bad());
        }
        let family = Family::from_label(f[2].parse().map_err(|_| bad())?)?;
        let grid = load_archive(&dir.join(f[4]))?.into_dense()?;
        scenes.push(VoxelScene { family, grid });
    }
    if scenes.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    Ok(scenes)
}

fn model_config(cfg: &RunConfig, channels: usize) -> ModelConfig {
    ModelConfig {
        channels,
        hidden: cfg.hidden,
        patch_radius: cfg.patch_radius,
        embed_dim: cfg.embed_dim,
        num_labels: Family::ALL.len(),
        time_floor: cfg.time_floor,
    }
}

fn whole(scene: &VoxelScene) -> [usize; 3] {
    scene.dims().spatial()
}

pub fn train(cfg: &RunConfig) -> CliResult<()> {
    let appearance = match cfg.stage.as_str() {
        "structure" => false,
        "appearance" => true,
        other => {
            return Err(CliError::usage(format!(
                "stage must be structure or appearance, got {other:?}"
            )))
        }
    };
    let scenes = load_scenes(&cfg.data_dir)?;
    let mut data = Vec::with_capacity(scenes.len());
    for scene in &scenes {
        let enc = encode_crop(scene, [0, 0, 0], whole(scene), cfg.encode_factor)?;
        let latent = if appearance {
            TrainLatent::Sparse(enc.appearance)
        } else {
            TrainLatent::Dense(enc.structure)
        };
        data.push(TrainSample {
            latent,
            label: scene.family.label(),
        });
    }
    let channels = if appearance {
        APPEARANCE_CHANNELS
    } else {
        STRUCTURE_CHANNELS
    };
    let init = if cfg.init_model.is_empty() {
        let mut r = rng::stream_rng(rng::derive_seed(cfg.seed, 1), stream::TRAINING);
        ToyFlowModel::random(model_config(cfg, channels), &mut r)?
    } else {
        let m = load_flow(Path::new(&cfg.init_model))?;
        if m.config().channels != channels {
            return Err(CliError::usage(format!(
                "init_model has {} channels, stage needs {channels}",
                m.config().channels
            )));
        }
        m
    };
    let tc = TrainConfig {
        steps: cfg.train_steps,
        lr: cfg.train_lr,
        batch: cfg.train_batch,
        draws: cfg.train_draws,
    };
    let val_seed = rng::derive_seed(cfg.seed, 2);
    let v0 = validation_loss(&init, &data, cfg.val_draws, val_seed)?;
    let (model, losses) = train_flow_matching(
        &init,
        &data,
        &tc,
        &mut rng::stream_rng(cfg.seed, stream::TRAINING),
    )?;
    check_finite("training loss", &losses)?;
    let v1 = validation_loss(&model, &data, cfg.val_draws, val_seed)?;
    log::info!("validation loss {v0} -> {v1}");
    fs::create_dir_all(&cfg.out_dir)?;
    let ck = Checkpoint::Flow(model);
    write_file(&cfg.out(&format!("{}.lwck", cfg.stage)), ck.to_bytes())?;
    write_file(
        &cfg.out(&format!("{}_curve.csv", cfg.stage)),
        curve_csv(&losses),
    )?;
    let val = csv_string(
        "step,val_loss",
        &[format!("0,{v0}"), format!("{},{v1}", cfg.train_steps)],
    );
    write_file(&cfg.out(&format!("{}_validation.csv", cfg.stage)), val)?;
    log::info!("checkpoint sha256 {}", ck.sha256_hex());
    Ok(())
}

fn pair_config(cfg: &RunConfig) -> PairConfig {
    PairConfig {
        lattice: cfg.pair_lattice,
        crop_sizes: cfg.crop_sizes.clone(),
        per_scene: cfg.pairs_per_scene,
        min_content: cfg.min_content,
        max_retries: cfg.max_retries,
    }
}

pub fn finetune_enhancer_cmd(cfg: &RunConfig) -> CliResult<()> {
    let base_bytes = fs::read(&cfg.appearance_model).map_err(|e| CliError {
        code: CliError::DATA,
        message: format!("{}: {e}", cfg.appearance_model.display()),
    })?;
    let base_hash = latticeworld_core::io::sha256_hex(&base_bytes);
    let base = Checkpoint::from_bytes(&base_bytes)
        .and_then(Checkpoint::into_flow)
        .map_err(|e| read_err(&cfg.appearance_model, e))?;
    let scenes = load_scenes(&cfg.data_dir)?;
    let set = build_pairs(&scenes, &pair_config(cfg), cfg.seed)?;
    if set.pairs.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    log::info!("{} pairs, {} crops skipped", set.pairs.len(), set.skipped);
    let tc = EnhancerTrainConfig {
        steps: cfg.enhancer_steps,
        lr: cfg.enhancer_lr,
        batch: cfg.enhancer_batch,
    };
    let start = EnhancerModel::new(base)?;
    let (model, losses) = finetune_enhancer(
        &start,
        &set.pairs,
        &tc,
        &mut rng::stream_rng(cfg.seed, stream::TRAINING),
    )?;
    check_finite("enhancer loss", &losses)?;
    let val_seed = rng::derive_seed(cfg.seed, 2);
    let full = enhancer_validation_loss(&model, &set.pairs, 2, val_seed)?;
    let zeroed = enhancer_validation_loss(&model.without_condition(), &set.pairs, 2, val_seed)?;
    log::info!("masked loss with condition {full}, condition zeroed {zeroed}");
    let after = Checkpoint::Flow(model.base().clone()).sha256_hex();
    if after != base_hash {
        return Err(CliError::numerical(format!(
            "base model changed during fine-tuning ({base_hash} -> {after})"
        )));
    }
    log::info!("base checkpoint sha256 {base_hash} unchanged");
    fs::create_dir_all(&cfg.out_dir)?;
    write_file(
        &cfg.out("enhancer.lwck"),
        Checkpoint::enhancer(&model).to_bytes(),
    )?;
    write_file(&cfg.out("enhancer_curve.csv"), curve_csv(&losses))?;
    write_file(&cfg.out("pairs.csv"), pair_manifest(&set.pairs))?;
    Ok(())
}

pub fn finetune_decoder_cmd(cfg: &RunConfig) -> CliResult<()> {
    let start = load_decoders(cfg)?;
    let scenes = load_scenes(&cfg.data_dir)?;
    let crops: Vec<DecoderCrop> = scenes
        .iter()
        .map(|s| {
            encode_crop(s, [0, 0, 0], whole(s), cfg.encode_factor).map(|e| DecoderCrop::from(&e))
        })
        .collect::<Result<_, _>>()?;
    let (dec, losses) = finetune_decoder(
        &start,
        &crops,
        cfg.decoder_steps,
        cfg.decoder_lr,
        &mut rng::stream_rng(cfg.seed, stream::TRAINING),
    )?;
    check_finite("decoder loss", &losses)?;
    fs::create_dir_all(&cfg.out_dir)?;
    write_file(
        &cfg.out("decoders.lwck"),
        Checkpoint::Decoders(dec).to_bytes(),
    )?;
    write_file(&cfg.out("decoder_curve.csv"), curve_csv(&losses))?;
    Ok(())
}

fn parse_schedule(s: &str) -> CliResult<SigmaSchedule> {
    let bad = || {
        CliError::usage(format!(
            "sigma_schedule must be linear:<max> or constant:<sigma>, got {s:?}"
        ))
    };
    let (kind, v) = s.split_once(':').ok_or_else(bad)?;
    let v: f64 = v.trim().parse().map_err(|_| bad())?;
    match kind.trim() {
        "linear" => Ok(SigmaSchedule::Linear { sigma_max: v }),
        "constant" => Ok(SigmaSchedule::Constant(v)),
        _ => Err(bad()),
    }
}

fn sampler_config(cfg: &RunConfig) -> CliResult<SamplerConfig> {
    let sc = SamplerConfig {
        steps: cfg.steps,
        window_size: cfg.window_size,
        stride: cfg.stride,
        kernel_sigma: (cfg.kernel_sigma > 0.0).then_some(cfg.kernel_sigma),
        seed: cfg.seed,
        sigma_schedule: parse_schedule(&cfg.sigma_schedule)?,
    };
    sc.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(sc)
}

fn world_dims(cfg: &RunConfig, map: Option<&SegmentMap>) -> CliResult<GridDims> {
    if cfg.dims.trim().is_empty() {
        let map = map.ok_or_else(|| CliError::usage("dims must be given as DxHxW"))?;
        return Ok(GridDims::new(
            cfg.window_size,
            map.height(),
            map.width(),
            1,
        )?);
    }
    let parts: Vec<usize> = cfg
        .dims
        .split('x')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| {
            CliError::usage(format!("dims must look like 32x64x64, got {:?}", cfg.dims))
        })?;
    match parts[..] {
        [d, h, w] => GridDims::new(d, h, w, 1).map_err(|e| CliError::usage(e.to_string())),
        _ => Err(CliError::usage(format!(
            "dims must have three extents, got {:?}",
            cfg.dims
        ))),
    }
}

fn read_map(cfg: &RunConfig) -> CliResult<SegmentMap> {
    read_segment_map(&cfg.map, &cfg.prompts).map_err(|e| read_err(&cfg.map, e))
}

fn world_models(cfg: &RunConfig) -> CliResult<WorldModels> {
    Ok(WorldModels {
        structure: load_flow(&cfg.structure_model)?,
        appearance: load_flow(&cfg.appearance_model)?,
    })
}

pub fn sample(cfg: &RunConfig) -> CliResult<()> {
    let map = read_map(cfg)?;
    let dims = world_dims(cfg, Some(&map))?;
    let sc = sampler_config(cfg)?;
    let models = world_models(cfg)?;
    let dec = load_decoders(cfg)?;
    let (occ, feats) = match cfg.sampler.as_str() {
        "fused" => sample_world(&models, &dec, &map, dims, &sc)?,
        "plain" => sample_world_plain(&models, &dec, &map, dims, sc.steps, sc.seed)?,
        other => {
            return Err(CliError::usage(format!(
                "sampler must be fused or plain, got {other:?}"
            )))
        }
    };
    log::info!(
        "world {:?}: {} active voxels",
        dims.spatial(),
        occ.active_count()
    );
    fs::create_dir_all(&cfg.out_dir)?;
    save_archive(
        &cfg.out("world_occupancy.lwvx"),
        &VoxelArchive::Occupancy(occ.clone()),
    )?;
    save_archive(
        &cfg.out("world_features.lwvx"),
        &VoxelArchive::Sparse(feats.clone()),
    )?;
    write_file(
        &cfg.out("top.ppm"),
        render_top_view(&occ, Some(&feats), &dec).to_ppm(),
    )?;
    write_file(
        &cfg.out("side.ppm"),
        render_side_view(&occ, Some(&feats), &dec).to_ppm(),
    )?;
    write_file(&cfg.out("labels.ppm"), render_label_map(&map).to_ppm())?;
    Ok(())
}

fn parse_band(s: &str) -> CliResult<(f64, f64)> {
    let bad = || CliError::usage(format!("exclude_band must be lo,hi fractions, got {s:?}"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    let (a, b): (f64, f64) = (
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    );
    if !(0.0..=1.0).contains(&a) || !(a..=1.0).contains(&b) {
        return Err(bad());
    }
    Ok((a, b))
}

pub fn optimize_init(cfg: &RunConfig) -> CliResult<()> {
    let model = load_flow(&cfg.structure_model)?;
    let dec = load_decoders(cfg)?;
    let n = cfg.grid_size;
    let dims = GridDims::cube(n, model.config().channels)?;
    let (lo, hi) = parse_band(&cfg.exclude_band)?;
    let cells = |f: f64| (f * n as f64).round() as usize;
    let band = VoxelBox {
        lo: [cells(lo), 0, 0],
        hi: [cells(hi), n, n],
    };
    let constraint = TargetConstraint::ground_and_exclusions(
        dims,
        cells(cfg.ground_height),
        &[band],
        cfg.ground_value,
        cfg.excluded_value,
    )?;
    let parameterization = match cfg.parameterization.as_str() {
        "spectral" => Parameterization::Spectral,
        "direct" => Parameterization::Direct,
        other => {
            return Err(CliError::usage(format!(
                "parameterization must be spectral or direct, got {other:?}"
            )))
        }
    };
    let optimizer = match cfg.optimizer.as_str() {
        "adam" => Optimizer::Adam,
        "gd" => Optimizer::GradientDescent,
        other => {
            return Err(CliError::usage(format!(
                "optimizer must be adam or gd, got {other:?}"
            )))
        }
    };
    let oc = OptConfig {
        lr: cfg.opt_lr,
        max_steps: cfg.opt_max_steps,
        parameterization,
        optimizer,
        dice_threshold: cfg.dice_threshold,
        sampler_steps: cfg.opt_sampler_steps,
    };
    oc.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let mut r = rng::stream_rng(cfg.seed, stream::INIT);
    let s0 = DenseLatentGrid::from_vec(dims, rng::normal_vec(&mut r, dims.voxels() * dims.c))?;
    let cond = model.condition(cfg.label)?;
    let out = optimize_initial_latent(&model, &cond, &dec, &s0, &constraint, &oc)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let rows: Vec<String> = out
        .trace
        .iter()
        .map(|t| format!("{},{},{},{}", t.step, t.loss, t.iou, t.dice))
        .collect();
    write_file(
        &cfg.out("trace.csv"),
        csv_string("step,loss,iou,dice", &rows),
    )?;
    save_archive(
        &cfg.out("init_latent.lwvx"),
        &VoxelArchive::Dense(out.latent.clone()),
    )?;
    log::info!("init optimization finished: {:?}", out.status);
    if let OptStatus::Diverged(step) = out.status {
        return Err(CliError::numerical(format!(
            "init optimization diverged at step {step}"
        )));
    }
    let spikes = out.spikes(10.0);
    if let Some(&step) = spikes.first() {
        return Err(CliError::numerical(format!(
            "loss spiked more than 10x at step {step} ({} spikes); see trace.csv",
            spikes.len()
        )));
    }
    Ok(())
}

pub fn enhance(cfg: &RunConfig) -> CliResult<()> {
    let base = load_flow(&cfg.appearance_model)?;
    let model = load_checkpoint(&cfg.enhancer)?
        .into_enhancer(&base)
        .map_err(|e| read_err(&cfg.enhancer, e))?;
    let world = load_archive(&cfg.input)?
        .into_sparse()
        .map_err(|e| read_err(&cfg.input, e))?;
    let ec = EnhanceConfig {
        steps: cfg.enhance_steps,
        seed: cfg.seed,
        tile: cfg.tile,
    };
    ec.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let cond = base.condition(cfg.label)?;
    let out = enhance_world(&model, &world, cfg.levels, &cond, &ec)?;
    log::info!(
        "enhanced {:?} -> {:?}, {} -> {} voxels",
        world.dims().spatial(),
        out.dims().spatial(),
        world.len(),
        out.len()
    );
    fs::create_dir_all(&cfg.out_dir)?;
    save_archive(&cfg.out("enhanced.lwvx"), &VoxelArchive::Sparse(out))
}

/// Masks used by the normalization probe: the map's label masks at the
/// blur of the first, middle and last sampling step.
fn probe_masks(
    map: &SegmentMap,
    dims: GridDims,
    schedule: SigmaSchedule,
) -> CliResult<Vec<Vec<MaskVolume>>> {
    let base = extrude_segment_map(map, dims)?;
    [1.0, 0.5, 0.0]
        .iter()
        .map(|&t| {
            base.iter()
                .map(|m| smooth_mask(m, schedule.sigma(t)))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::from)
}

fn region_report(
    cfg: &RunConfig,
    map: &SegmentMap,
    sc: &SamplerConfig,
) -> CliResult<RegionStatReport> {
    let stat: RegionStatistic = cfg
        .region_statistic
        .parse()
        .map_err(|e: Error| CliError::usage(e.to_string()))?;
    let occ = load_archive(&cfg.occupancy)?
        .into_occupancy()
        .map_err(|e| read_err(&cfg.occupancy, e))?;
    let feats = load_archive(&cfg.input)?
        .into_sparse()
        .map_err(|e| read_err(&cfg.input, e))?;
    let dims = occ.dims();
    let masks = extrude_segment_map(map, dims)?;
    let models = world_models(cfg)?;
    let dec = load_decoders(cfg)?;
    let mut references = Vec::new();
    for (k, label) in map.labels().iter().enumerate() {
        let single = SegmentMap::uniform(map.height(), map.width(), *label, &map.prompts()[label]);
        let mut values = Vec::new();
        let mut same_seed = None;
        for run in 0..cfg.reference_runs as u64 {
            let rc = SamplerConfig {
                seed: sc.seed + run,
                ..*sc
            };
            let (o, f) = sample_world(&models, &dec, &single, dims, &rc)?;
            let v = region_statistic(&o, &f, &masks[k], stat)?;
            let v = v.ok_or_else(|| {
                CliError::numerical(format!(
                    "isolated run for label {label} is empty in its region"
                ))
            })?;
            if run == 0 {
                same_seed = Some(v);
            }
            values.push(v);
        }
        let spread = RegionReference::from_values(&values)?;
        references.push(RegionReference {
            mean: same_seed.expect("at least one run"),
            ..spread
        });
    }
    Ok(region_fidelity(&occ, &feats, &masks, &references, stat)?)
}

pub fn eval(cfg: &RunConfig) -> CliResult<()> {
    let seam: SeamReport = match load_archive(&cfg.input)? {
        VoxelArchive::Dense(g) => seam_discontinuity(
            &g,
            &build_window_plan(g.dims(), cfg.window_size, cfg.stride)?,
            cfg.seed,
        )?,
        VoxelArchive::Sparse(s) => seam_discontinuity(
            &s,
            &build_window_plan(s.dims(), cfg.window_size, cfg.stride)?,
            cfg.seed,
        )?,
        VoxelArchive::Occupancy(_) => {
            return Err(CliError::usage("eval input must be a latent archive"))
        }
    };
    let dims = load_archive(&cfg.input)?.dims();
    let plan = build_window_plan(dims, cfg.window_size, cfg.stride)?;
    let sc = sampler_config(cfg)?;
    let map = if cfg.map.exists() {
        Some(read_map(cfg)?)
    } else {
        None
    };
    let mut probe = normalization_probe(&plan, sc.kernel_sigma(), &[])?;
    if let Some(map) = &map {
        for masks in probe_masks(map, dims, sc.sigma_schedule)? {
            probe = probe.max(normalization_probe(&plan, sc.kernel_sigma(), &masks)?);
        }
    }
    fs::create_dir_all(&cfg.out_dir)?;
    write_file(
        &cfg.out("seam.csv"),
        csv_string(SeamReport::CSV_HEADER, &[seam.csv_row()]),
    )?;
    write_file(
        &cfg.out("probe.txt"),
        format!("normalization_deviation = {probe}\n"),
    )?;
    log::info!("seam ratio {}, normalization deviation {probe}", seam.ratio);
    if cfg.reference_runs > 0 {
        let map = map.ok_or_else(|| CliError::usage("the region check needs a segment map"))?;
        let report = region_report(cfg, &map, &sc)?;
        write_file(
            &cfg.out("region.csv"),
            csv_string(RegionStatReport::CSV_HEADER, &report.csv_rows()),
        )?;
        for k in report.flagged() {
            log::warn!("region {k} is empty; its statistic is undefined");
        }
    }
    Ok(())
}

pub fn render(cfg: &RunConfig) -> CliResult<()> {
    let occ = load_archive(&cfg.occupancy)?
        .into_occupancy()
        .map_err(|e| read_err(&cfg.occupancy, e))?;
    let feats = if cfg.input.exists() {
        Some(
            load_archive(&cfg.input)?
                .into_sparse()
                .map_err(|e| read_err(&cfg.input, e))?,
        )
    } else {
        None
    };
    let dec = load_decoders(cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    write_file(
        &cfg.out("top.ppm"),
        render_top_view(&occ, feats.as_ref(), &dec).to_ppm(),
    )?;
    write_file(
        &cfg.out("side.ppm"),
        render_side_view(&occ, feats.as_ref(), &dec).to_ppm(),
    )?;
    write_file(&cfg.out("height.pgm"), render_height_map(&occ).to_pgm())?;
    if cfg.map.exists() {
        write_file(
            &cfg.out("labels.ppm"),
            render_label_map(&read_map(cfg)?).to_ppm(),
        )?;
    }
    Ok(())
}
