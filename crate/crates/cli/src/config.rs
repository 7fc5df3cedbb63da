//! Run configuration: a flat `key = value` file plus command-line overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use latticeworld_core::Error;

/// Values parsed from config text.
trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn show(&self) -> String;
}

macro_rules! via_fromstr {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                <$t>::from_str(s).map_err(|e| e.to_string())
            }
            fn show(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

via_fromstr!(u64, usize, f64, String);

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn show(&self) -> String {
        self.display().to_string()
    }
}

impl ConfigValue for Vec<usize> {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse().map_err(|e| format!("{e}")))
            .collect()
    }
    fn show(&self) -> String {
        self.iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

macro_rules! run_config {
    ($( $(#[doc = $doc:literal])* $name:ident : $t:ty = $default:expr ),* $(,)?) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $( $(#[doc = $doc])* pub $name: $t, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $( $name: <$t as ConfigValue>::parse_value($default).expect("valid default"), )* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($name)),*];

            /// Sets one key from its text form; unknown keys are rejected.
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
                match key {
                    $( stringify!($name) => {
                        self.$name = <$t as ConfigValue>::parse_value(value)
                            .map_err(|e| Error::InvalidArgument(format!("config key {key}: {e}")))?;
                    } )*
                    _ => return Err(Error::InvalidArgument(format!(
                        "unknown config key {key:?}; known keys: {}",
                        Self::KEYS.join(", ")
                    ))),
                }
                Ok(())
            }

            /// Every key with its resolved value, in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( (stringify!($name), ConfigValue::show(&self.$name)) ),*]
            }
        }
    };
}

run_config! {
    seed: u64 = "0",
    /// Worker threads; 0 uses every core.
    threads: usize = "0",
    out_dir: PathBuf = ".",

    families: String = "hills,towers,plains",
    scenes_per_family: usize = "12",
    scene_size: usize = "32",
    /// Directory written by `gen-data`.
    data_dir: PathBuf = "data",

    /// `structure` (dense, one channel) or `appearance` (sparse, four).
    stage: String = "structure",
    hidden: usize = "16",
    patch_radius: usize = "1",
    embed_dim: usize = "4",
    time_floor: f64 = "0.1",
    /// Scene voxels per lattice cell when encoding training latents.
    encode_factor: usize = "1",
    /// Checkpoint to continue training from; empty starts from a random
    /// initialization.
    init_model: String = "",
    train_steps: usize = "2000",
    train_lr: f64 = "0.01",
    train_batch: usize = "256",
    train_draws: usize = "4",
    val_draws: usize = "12",

    structure_model: PathBuf = "structure.lwck",
    appearance_model: PathBuf = "appearance.lwck",
    /// Decoder checkpoint; empty means the default decoders.
    decoders: String = "",
    enhancer: PathBuf = "enhancer.lwck",

    decoder_steps: usize = "2000",
    decoder_lr: f64 = "0.05",

    pair_lattice: usize = "8",
    crop_sizes: Vec<usize> = "16,32,48,64",
    pairs_per_scene: usize = "4",
    min_content: usize = "8",
    max_retries: usize = "32",
    enhancer_steps: usize = "5000",
    enhancer_lr: f64 = "0.005",
    enhancer_batch: usize = "256",

    map: PathBuf = "map.txt",
    prompts: PathBuf = "prompts.txt",
    /// World size as `DxHxW`; empty uses the window size for the depth and
    /// the map raster for the rest.
    dims: String = "",
    steps: usize = "25",
    window_size: usize = "32",
    stride: usize = "16",
    /// Window blending width; 0 uses a quarter window.
    kernel_sigma: f64 = "0",
    /// `linear:<sigma_max>` or `constant:<sigma>`.
    sigma_schedule: String = "linear:8",
    /// `fused` or `plain` (single label, whole grid as one frame).
    sampler: String = "fused",

    label: usize = "1",
    grid_size: usize = "16",
    /// Ground slab height as a fraction of the depth.
    ground_height: f64 = "0.15",
    /// Excluded height band `lo,hi` as fractions of the depth.
    exclude_band: String = "0.3,0.7",
    ground_value: f64 = "1",
    excluded_value: f64 = "1",
    opt_lr: f64 = "9",
    opt_max_steps: usize = "11",
    /// `spectral` or `direct`.
    parameterization: String = "spectral",
    /// `adam` or `gd`.
    optimizer: String = "adam",
    dice_threshold: f64 = "0.9",
    opt_sampler_steps: usize = "25",

    /// Input archive for `enhance`, `eval` and `render`.
    input: PathBuf = "world_features.lwvx",
    /// Occupancy archive for `eval` and `render`.
    occupancy: PathBuf = "world_occupancy.lwvx",
    levels: usize = "1",
    tile: usize = "8",
    enhance_steps: usize = "25",

    /// `mean_height` or `mean_feature_norm`.
    region_statistic: String = "mean_height",
    /// Isolated-label runs for the spread of the region reference; 0 skips
    /// the region check.
    reference_runs: usize = "0",
}

impl RunConfig {
    /// Applies a `key = value` text. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), Error> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("config line {}: expected `key = value`", n + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), Error> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidArgument(format!("cannot read config {}: {e}", path.display()))
        })?;
        self.apply_text(&text)
    }

    /// Resolved configuration in the same `key = value` form it is read in.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}
