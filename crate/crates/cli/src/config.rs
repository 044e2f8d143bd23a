//! `key = value` run configuration. Blank lines and `#` comments are
//! ignored; unknown keys are errors. [`RunConfig::to_text`] writes every key
//! in a fixed order and reparses to an equal config.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pscan_core::train::TrainConfig;
use pscan_core::{Error, Result};

pub const DEFAULT_SIDE: usize = 64;
pub const DEFAULT_COVERAGES: [f64; 4] = [0.1, 0.05, 0.025, 0.01];
/// Train/validation/test proportions of the source micrograph collection.
pub const DEFAULT_SPLIT: [f64; 3] = [0.75, 0.10, 0.15];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Dataset root holding `train/`, `validation/` and `test/`.
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    /// Coverages for evaluation sweeps.
    pub coverages: Vec<f64>,
    pub split_ratios: [f64; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut train = TrainConfig::desk(DEFAULT_SIDE);
        train.checkpoint_every = 1000;
        Self { train, data: None, out: PathBuf::from("run"), coverages: DEFAULT_COVERAGES.to_vec(), split_ratios: DEFAULT_SPLIT }
    }
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "seed",
    "data",
    "out",
    "side",
    "base_channels",
    "residual_blocks",
    "inner_kernel",
    "outer_kernel",
    "symmetric_residuals",
    "path_channel",
    "infill",
    "critic_channels",
    "critic_leaky_slope",
    "iterations",
    "phase2",
    "path_kind",
    "coverage",
    "grid_segment",
    "grid_jitter",
    "blurred_mask",
    "noise",
    "augment",
    "alrc",
    "replay",
    "optimizer",
    "validate_every",
    "validation_samples",
    "checkpoint_every",
    "data_init",
    "coverages",
    "split_ratios",
];

fn bad(key: &str, value: &str, what: impl Display) -> Error {
    Error::Config(format!("`{key} = {value}`: {what}"))
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse::<T>().map_err(|e| bad(key, value, e))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value, "expected true/false or on/off")),
    }
}

pub fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    let items: Vec<f64> = value.split(',').map(|s| num::<f64>(key, s.trim())).collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(bad(key, value, "empty list"));
    }
    Ok(items)
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Applies `key=value`, as written on the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair.split_once('=').ok_or_else(|| Error::Config(format!("override `{pair}` is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let g = &mut t.generator;
        match key {
            "seed" => t.seed = num(key, value)?,
            "data" => self.data = if value.is_empty() { None } else { Some(PathBuf::from(value)) },
            "out" => self.out = PathBuf::from(value),
            "side" => g.side = num(key, value)?,
            "base_channels" => g.base_channels = num(key, value)?,
            "residual_blocks" => g.residual_blocks = num(key, value)?,
            "inner_kernel" => g.inner_kernel = num(key, value)?,
            "outer_kernel" => g.outer_kernel = num(key, value)?,
            "symmetric_residuals" => g.symmetric_residuals = parse_bool(key, value)?,
            "path_channel" => g.path_channel = parse_bool(key, value)?,
            "infill" => g.infill = parse_bool(key, value)?,
            "critic_channels" => t.critic.base_channels = num(key, value)?,
            "critic_leaky_slope" => t.critic.leaky_slope = num(key, value)?,
            "iterations" => t.iterations = num(key, value)?,
            "phase2" => t.phase2 = parse_bool(key, value)?,
            "path_kind" => t.path_kind = value.parse()?,
            "coverage" => t.coverage = num(key, value)?,
            "grid_segment" => t.grid.segment_len = num(key, value)?,
            "grid_jitter" => t.grid.jitter = num(key, value)?,
            "blurred_mask" => t.blurred_mask = parse_bool(key, value)?,
            "noise" => t.noise = parse_bool(key, value)?,
            "augment" => t.augment = parse_bool(key, value)?,
            "alrc" => t.alrc = parse_bool(key, value)?,
            "replay" => t.replay = parse_bool(key, value)?,
            "optimizer" => t.optimizer = value.parse()?,
            "validate_every" => t.validate_every = num(key, value)?,
            "validation_samples" => t.validation_samples = num(key, value)?,
            "checkpoint_every" => t.checkpoint_every = num(key, value)?,
            "data_init" => t.data_init = parse_bool(key, value)?,
            "coverages" => self.coverages = parse_list(key, value)?,
            "split_ratios" => {
                let v = parse_list(key, value)?;
                self.split_ratios = v.try_into().map_err(|_| bad(key, value, "expected three ratios"))?;
            }
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.generator.validate()?;
        let t = &self.train;
        if t.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if t.validate_every == 0 {
            return Err(Error::Config("validate_every must be positive".into()));
        }
        if !(t.coverage > 0.0 && t.coverage <= 1.0) {
            return Err(Error::Config(format!("coverage {} outside (0, 1]", t.coverage)));
        }
        if let Some(c) = self.coverages.iter().find(|c| !(**c > 0.0 && **c <= 1.0)) {
            return Err(Error::Config(format!("sweep coverage {c} outside (0, 1]")));
        }
        if self.split_ratios.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) || self.split_ratios.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("split ratios must be non-negative with a positive sum".into()));
        }
        Ok(())
    }

    /// Canonical text of every key.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let g = &t.generator;
        let value = |key: &str| -> String {
            match key {
                "seed" => t.seed.to_string(),
                "data" => self.data.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                "out" => self.out.display().to_string(),
                "side" => g.side.to_string(),
                "base_channels" => g.base_channels.to_string(),
                "residual_blocks" => g.residual_blocks.to_string(),
                "inner_kernel" => g.inner_kernel.to_string(),
                "outer_kernel" => g.outer_kernel.to_string(),
                "symmetric_residuals" => g.symmetric_residuals.to_string(),
                "path_channel" => g.path_channel.to_string(),
                "infill" => g.infill.to_string(),
                "critic_channels" => t.critic.base_channels.to_string(),
                "critic_leaky_slope" => t.critic.leaky_slope.to_string(),
                "iterations" => t.iterations.to_string(),
                "phase2" => t.phase2.to_string(),
                "path_kind" => t.path_kind.to_string(),
                "coverage" => t.coverage.to_string(),
                "grid_segment" => t.grid.segment_len.to_string(),
                "grid_jitter" => t.grid.jitter.to_string(),
                "blurred_mask" => t.blurred_mask.to_string(),
                "noise" => t.noise.to_string(),
                "augment" => t.augment.to_string(),
                "alrc" => t.alrc.to_string(),
                "replay" => t.replay.to_string(),
                "optimizer" => t.optimizer.to_string(),
                "validate_every" => t.validate_every.to_string(),
                "validation_samples" => t.validation_samples.to_string(),
                "checkpoint_every" => t.checkpoint_every.to_string(),
                "data_init" => t.data_init.to_string(),
                "coverages" => join(&self.coverages),
                "split_ratios" => join(&self.split_ratios),
                other => unreachable!("key `{other}` missing from to_text"),
            }
        };
        KEYS.iter().map(|k| format!("{k} = {}\n", value(k))).collect()
    }
}
