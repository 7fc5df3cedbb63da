//! `latticeworld`: generate data, train, sample, enhance and evaluate voxel
//! worlds from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CliError, CliResult};
use config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "latticeworld",
    version,
    about = "Large voxel worlds from a cube-sized flow model"
)]
struct Cli {
    /// `key = value` config file applied over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Override any config key, e.g. `--set steps=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write procedural scenes and a manifest.
    GenData(GenDataArgs),
    /// Train a velocity model with flow matching.
    Train(TrainArgs),
    /// Fine-tune the octant detail enhancer on top of the appearance model.
    FinetuneEnhancer(FinetuneArgs),
    /// Fit the appearance decoder to scene colors.
    FinetuneDecoder(FinetuneArgs),
    /// Sample a world from a segment map.
    Sample(SampleArgs),
    /// Optimize an initial latent toward a ground/exclusion constraint.
    OptimizeInit(OptimizeArgs),
    /// Add detail to a sampled world.
    Enhance(EnhanceArgs),
    /// Seam, region and normalization metrics for a world.
    Eval(EvalArgs),
    /// Top, side, height and label renders of a world.
    Render(RenderArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    families: Option<String>,
    #[arg(long)]
    scenes_per_family: Option<usize>,
    #[arg(long)]
    scene_size: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// `structure` or `appearance`.
    #[arg(long)]
    stage: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    init_model: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// World size as `DxHxW`.
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    /// `fused` or `plain`.
    #[arg(long)]
    sampler: Option<String>,
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    /// `spectral` or `direct`.
    #[arg(long)]
    parameterization: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Args, Debug)]
struct EnhanceArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    levels: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long)]
    reference_runs: Option<usize>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    occupancy: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
}

/// Collects `(key, value)` pairs for the flags that were given.
struct Overrides(Vec<(&'static str, String)>);

impl Overrides {
    fn add<T: ToString>(&mut self, key: &'static str, v: &Option<T>) -> &mut Self {
        if let Some(v) = v {
            self.0.push((key, v.to_string()));
        }
        self
    }

    fn path(&mut self, key: &'static str, v: &Option<PathBuf>) -> &mut Self {
        self.add(key, &v.as_ref().map(|p| p.display().to_string()))
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::FinetuneEnhancer(_) => "finetune-enhancer",
            Command::FinetuneDecoder(_) => "finetune-decoder",
            Command::Sample(_) => "sample",
            Command::OptimizeInit(_) => "optimize-init",
            Command::Enhance(_) => "enhance",
            Command::Eval(_) => "eval",
            Command::Render(_) => "render",
        }
    }

    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut o = Overrides(Vec::new());
        match self {
            Command::GenData(a) => {
                o.add("families", &a.families)
                    .add("scenes_per_family", &a.scenes_per_family)
                    .add("scene_size", &a.scene_size);
            }
            Command::Train(a) => {
                o.add("stage", &a.stage)
                    .path("data_dir", &a.data_dir)
                    .add("init_model", &a.init_model)
                    .add("train_steps", &a.steps)
                    .add("train_lr", &a.lr);
            }
            Command::FinetuneEnhancer(a) => {
                o.path("data_dir", &a.data_dir)
                    .add("enhancer_steps", &a.steps)
                    .add("enhancer_lr", &a.lr);
            }
            Command::FinetuneDecoder(a) => {
                o.path("data_dir", &a.data_dir)
                    .add("decoder_steps", &a.steps)
                    .add("decoder_lr", &a.lr);
            }
            Command::Sample(a) => {
                o.path("map", &a.map)
                    .path("prompts", &a.prompts)
                    .add("dims", &a.dims)
                    .add("steps", &a.steps)
                    .add("sampler", &a.sampler);
            }
            Command::OptimizeInit(a) => {
                o.add("parameterization", &a.parameterization)
                    .add("opt_lr", &a.lr)
                    .add("opt_max_steps", &a.max_steps);
            }
            Command::Enhance(a) => {
                o.path("input", &a.input).add("levels", &a.levels);
            }
            Command::Eval(a) => {
                o.path("input", &a.input)
                    .path("map", &a.map)
                    .add("reference_runs", &a.reference_runs);
            }
            Command::Render(a) => {
                o.path("occupancy", &a.occupancy).path("input", &a.input);
            }
        }
        o.0
    }
}

/// Defaults, then the config file, then `--set`, then dedicated flags.
fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    let usage = |e: latticeworld_core::Error| CliError::usage(e.to_string());
    if let Some(path) = &cli.config {
        cfg.apply_file(path).map_err(usage)?;
    }
    for s in &cli.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(usage)?;
    }
    let mut flags = Overrides(Vec::new());
    flags
        .add("seed", &cli.seed)
        .add("threads", &cli.threads)
        .path("out_dir", &cli.out_dir);
    for (k, v) in flags.0.into_iter().chain(cli.command.overrides()) {
        cfg.set(k, &v).map_err(usage)?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = resolve(cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| CliError::usage(format!("cannot start {} threads: {e}", cfg.threads)))?;
    log::info!(
        "{} with resolved config:\n{}",
        cli.command.name(),
        cfg.to_text().trim_end()
    );
    match &cli.command {
        Command::GenData(_) => commands::gen_data(&cfg),
        Command::Train(_) => commands::train(&cfg),
        Command::FinetuneEnhancer(_) => commands::finetune_enhancer_cmd(&cfg),
        Command::FinetuneDecoder(_) => commands::finetune_decoder_cmd(&cfg),
        Command::Sample(_) => commands::sample(&cfg),
        Command::OptimizeInit(_) => commands::optimize_init(&cfg),
        Command::Enhance(_) => commands::enhance(&cfg),
        Command::Eval(_) => commands::eval(&cfg),
        Command::Render(_) => commands::render(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LATTICEWORLD_LOG", "info"))
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { CliError::USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.message.replace('\n', " ");
            eprintln!(
                "error: kind={} code={} command={} message={msg}",
                e.kind(),
                e.code,
                cli.command.name()
            );
            ExitCode::from(e.code)
        }
    }
}
