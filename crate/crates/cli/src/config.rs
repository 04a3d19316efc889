//! Run settings resolved from flags, an optional key-value file and defaults.
//!
//! Precedence is flag, then config file, then built-in default. Config keys
//! are the long flag names without the leading dashes (`k-init = 15`);
//! underscores and inner dashes are interchangeable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use scenechange::{DetectionMode, EmConfig, FilterParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Appear,
    Disappear,
}

impl From<ModeArg> for DetectionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Appear => DetectionMode::Appear,
            ModeArg::Disappear => DetectionMode::Disappear,
        }
    }
}

/// Flags shared by every command that fits or compares mixtures.
#[derive(Debug, Clone, Default, Args)]
pub struct TuningArgs {
    /// Initial number of mixture components [default: 25]
    #[arg(long)]
    pub k_init: Option<usize>,
    /// Smallest number of components considered [default: 1]
    #[arg(long)]
    pub k_min: Option<usize>,
    /// Convergence tolerance on the log-likelihood change [default: 1e-5]
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap per EM run [default: 100]
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Seed for component initialization [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Which scan the changed components are searched in
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Project both clouds to their two leading principal axes before EM
    #[arg(long)]
    pub pca: bool,
    /// Voxel edge length in meters [default: 0.05]
    #[arg(long)]
    pub voxel_size: Option<f64>,
    /// Neighbour count for statistical outlier removal [default: 50]
    #[arg(long)]
    pub sor_neighbors: Option<usize>,
    /// Standard-deviation multiplier for outlier removal [default: 1.0]
    #[arg(long)]
    pub sor_stddev: Option<f64>,
    /// Keep only points inside a box, given as `xmin,ymin,zmin,xmax,ymax,zmax`
    #[arg(long, allow_hyphen_values = true)]
    pub crop: Option<String>,
    /// Flat `key = value` file supplying defaults for these flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for output files [default: .]
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub em: EmConfig,
    pub filters: FilterParams,
    pub mode: Option<DetectionMode>,
    pub pca: bool,
    pub crop: Option<Crop>,
    pub output_dir: PathBuf,
}

impl Settings {
    pub fn require_mode(&self) -> Result<DetectionMode> {
        self.mode
            .ok_or_else(|| anyhow!("--mode appear|disappear is required (or `mode` in the config file)"))
    }
}

const KEYS: &[&str] = &[
    "k-init",
    "k-min",
    "tol",
    "max-iters",
    "seed",
    "mode",
    "pca",
    "voxel-size",
    "sor-neighbors",
    "sor-stddev",
    "crop",
    "output-dir",
];

fn canonical_key(raw: &str) -> String {
    raw.trim()
        .trim_start_matches('-')
        .replace('_', "-")
        .to_ascii_lowercase()
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut entries = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected `key = value`", n + 1))?;
        let key = canonical_key(key);
        if !KEYS.contains(&key.as_str()) {
            bail!("config line {}: unknown key `{key}`", n + 1);
        }
        entries.insert(key, value.trim().to_string());
    }
    Ok(entries)
}

fn load_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in config {}", path.display()))
}

fn parse_value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| anyhow!("config key `{key}`: cannot parse `{raw}`: {e}"))
}

fn parse_mode(raw: &str) -> Result<DetectionMode> {
    ModeArg::from_str(raw, true)
        .map(Into::into)
        .map_err(|_| anyhow!("mode must be `appear` or `disappear`, got `{raw}`"))
}

pub fn parse_crop(raw: &str) -> Result<Crop> {
    let values = raw
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| anyhow!("--crop: {e}"))?;
    if values.len() != 4 && values.len() != 6 {
        bail!(
            "--crop expects 4 or 6 comma-separated numbers, got {}",
            values.len()
        );
    }
    let half = values.len() / 2;
    let crop = Crop {
        min: values[..half].to_vec(),
        max: values[half..].to_vec(),
    };
    if crop.min.iter().zip(&crop.max).any(|(a, b)| !(a <= b)) {
        bail!("--crop minimum must not exceed the maximum");
    }
    Ok(crop)
}

impl TuningArgs {
    pub fn resolve(&self) -> Result<Settings> {
        let file = match &self.config {
            Some(path) => load_config(path)?,
            None => BTreeMap::new(),
        };
        let get = |key: &str| file.get(key).map(String::as_str);

        fn pick<T: std::str::FromStr>(flag: Option<T>, file: Option<&str>, key: &str, default: T) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            match (flag, file) {
                (Some(v), _) => Ok(v),
                (None, Some(raw)) => parse_value(key, raw),
                (None, None) => Ok(default),
            }
        }

        let em_default = EmConfig::default();
        let em = EmConfig {
            k_init: pick(self.k_init, get("k-init"), "k-init", em_default.k_init)?,
            k_min: pick(self.k_min, get("k-min"), "k-min", em_default.k_min)?,
            tol: pick(self.tol, get("tol"), "tol", em_default.tol)?,
            max_iters: pick(
                self.max_iters,
                get("max-iters"),
                "max-iters",
                em_default.max_iters,
            )?,
            seed: pick(self.seed, get("seed"), "seed", em_default.seed)?,
            ..em_default
        };
        em.validate()?;

        let filter_default = FilterParams::default();
        let filters = FilterParams {
            voxel_size: pick(
                self.voxel_size,
                get("voxel-size"),
                "voxel-size",
                filter_default.voxel_size,
            )?,
            sor_neighbors: pick(
                self.sor_neighbors,
                get("sor-neighbors"),
                "sor-neighbors",
                filter_default.sor_neighbors,
            )?,
            sor_stddev_mult: pick(
                self.sor_stddev,
                get("sor-stddev"),
                "sor-stddev",
                filter_default.sor_stddev_mult,
            )?,
        };
        filters.validate()?;

        let mode = match (self.mode, get("mode")) {
            (Some(m), _) => Some(m.into()),
            (None, Some(raw)) => Some(parse_mode(raw)?),
            (None, None) => None,
        };
        let pca = self.pca
            || get("pca")
                .map(|raw| parse_value::<bool>("pca", raw))
                .transpose()?
                .unwrap_or(false);
        let crop = match (&self.crop, get("crop")) {
            (Some(raw), _) => Some(parse_crop(raw)?),
            (None, Some(raw)) => Some(parse_crop(raw)?),
            (None, None) => None,
        };
        let output_dir = match (&self.output_dir, get("output-dir")) {
            (Some(p), _) => p.clone(),
            (None, Some(raw)) => PathBuf::from(raw),
            (None, None) => PathBuf::from("."),
        };
        Ok(Settings {
            em,
            filters,
            mode,
            pca,
            crop,
            output_dir,
        })
    }
}
