//! Resolution of engine settings.
//!
//! Built-in defaults are overridden by command-line flags, which are in turn
//! overridden by values from the `--config` file.

use std::path::{Path, PathBuf};

use clap::Args;
use mfbm3d::engine::{BasicPartition, EngineConfig};
use mfbm3d::prefilter::FilterShape;
use mfbm3d::transforms::Basis;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Engine knobs that can be set by flag or by the `[engine]` config table.
#[derive(Args, Deserialize, Debug, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct EngineLayer {
    /// Hard threshold multiplier.
    #[arg(long)]
    pub lambda3d: Option<f64>,
    /// Kaiser window shape for aggregation; 0 disables it.
    #[arg(long)]
    pub kaiser_beta: Option<f64>,
    /// Half-width of the search window.
    #[arg(long)]
    pub search_radius: Option<usize>,
    /// Reference grid spacing.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Maximum group size in the hard-thresholding step.
    #[arg(long)]
    pub max_group_hard: Option<usize>,
    /// Maximum group size in the Wiener step.
    #[arg(long)]
    pub max_group_wiener: Option<usize>,
    /// 2D transform of the hard-thresholding step (bior15 or dct).
    #[arg(long)]
    pub hard_basis: Option<Basis>,
    /// 2D transform of the Wiener step (bior15 or dct).
    #[arg(long)]
    pub wiener_basis: Option<Basis>,
    /// Exempt the group DC coefficient from hard thresholding and Wiener shrinkage.
    #[arg(long)]
    pub keep_dc: Option<bool>,
    /// Per-frame basic estimates collect patches by their own frame
    /// (origin) or by the frame of their group's reference (reference).
    #[arg(long)]
    pub basic_partition: Option<BasicPartition>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// TOML config file; its values override flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Low-pass shape for bm3d4_sigma (radial or componentwise).
    #[arg(long, value_parser = parse_shape)]
    pub filter_shape: Option<FilterShape>,
    #[command(flatten)]
    pub engine: EngineLayer,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct PrefilterLayer {
    #[serde(default)]
    shape: Option<FilterShape>,
    #[serde(default)]
    sigma_lp: Option<f64>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    jobs: Option<usize>,
    #[serde(default)]
    engine: EngineLayer,
    #[serde(default)]
    prefilter: PrefilterLayer,
}

pub fn parse_shape(s: &str) -> Result<FilterShape, String> {
    match s.to_ascii_lowercase().as_str() {
        "radial" => Ok(FilterShape::Radial),
        "componentwise" => Ok(FilterShape::Componentwise),
        _ => Err(format!("unknown filter shape '{s}' (expected radial or componentwise)")),
    }
}

/// Fully resolved settings, printed at the start of every run.
#[derive(Serialize, Debug, Clone)]
pub struct EngineSettings {
    pub lambda3d: f64,
    pub kaiser_beta: f64,
    pub search_radius: usize,
    pub stride: usize,
    pub max_group_hard: usize,
    pub max_group_wiener: usize,
    pub hard_basis: Basis,
    pub wiener_basis: Basis,
    pub keep_dc: bool,
    pub basic_partition: BasicPartition,
}

impl EngineSettings {
    fn defaults() -> Self {
        let d = EngineConfig::default();
        Self {
            lambda3d: d.lambda3d,
            kaiser_beta: d.kaiser_beta,
            search_radius: d.step1.search_radius,
            stride: d.step1.stride,
            max_group_hard: d.step1.max_group,
            max_group_wiener: d.step2.max_group,
            hard_basis: d.hard_basis,
            wiener_basis: d.wiener_basis,
            keep_dc: d.keep_dc,
            basic_partition: d.basic_partition,
        }
    }

    fn apply(&mut self, l: &EngineLayer) {
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = l.$f { self.$f = v; })* };
        }
        take!(lambda3d, kaiser_beta, search_radius, stride, max_group_hard, max_group_wiener, hard_basis, wiener_basis, keep_dc, basic_partition);
    }

    pub fn to_config(&self) -> EngineConfig {
        let mut cfg = EngineConfig {
            lambda3d: self.lambda3d,
            kaiser_beta: self.kaiser_beta,
            hard_basis: self.hard_basis,
            wiener_basis: self.wiener_basis,
            keep_dc: self.keep_dc,
            basic_partition: self.basic_partition,
            ..EngineConfig::default()
        };
        for (step, group) in [(&mut cfg.step1, self.max_group_hard), (&mut cfg.step2, self.max_group_wiener)] {
            step.search_radius = self.search_radius;
            step.stride = self.stride;
            step.max_group = group;
        }
        cfg
    }
}

#[derive(Serialize, Debug, Clone)]
pub struct Resolved {
    pub jobs: usize,
    pub filter_shape: FilterShape,
    /// `sigma_lp` from the config file, if any; overrides `--sigma-lp`.
    #[serde(skip)]
    pub file_sigma_lp: Option<f64>,
    pub engine: EngineSettings,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn read_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
}

pub fn resolve(args: &CommonArgs) -> Result<Resolved, CliError> {
    let file = match &args.config {
        Some(p) => read_config(p)?,
        None => FileConfig::default(),
    };
    let mut engine = EngineSettings::defaults();
    engine.apply(&args.engine);
    engine.apply(&file.engine);
    let jobs = file.jobs.or(args.jobs).unwrap_or_else(default_jobs);
    if jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    let resolved = Resolved {
        jobs,
        filter_shape: file.prefilter.shape.or(args.filter_shape).unwrap_or_default(),
        file_sigma_lp: file.prefilter.sigma_lp,
        engine,
    };
    resolved.engine.to_config().validate()?;
    Ok(resolved)
}

/// Prints the effective configuration to stderr as TOML.
pub fn print_effective<T: Serialize>(value: &T) {
    match toml::to_string(value) {
        Ok(text) => eprintln!("# effective configuration\n{text}"),
        Err(e) => eprintln!("# effective configuration unavailable: {e}"),
    }
}
