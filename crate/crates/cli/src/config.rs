//! Run configuration files.
//!
//! UTF-8 `key = value` lines; `#` starts a comment; blank lines are ignored.
//! Every key maps onto one [`TrainConfig`] field and may appear once.
//!
//! | key | value |
//! |-----|-------|
//! | `objective` | `vanilla`, `least-squares` or `wasserstein` |
//! | `architecture` | `full`, `compact:<width>` or `tiny:<width>` |
//! | `batch_size`, `d_steps_per_g`, `epochs` | integer |
//! | `learning_rate`, `adam_beta1`, `adam_beta2`, `adam_eps`, `l2_lambda` | number |
//! | `clip_c` | number or `off` |
//! | `legan_ema` | decay in `[0, 1)` or `off` |
//! | `seed` | integer |
//! | `noise_prior` | `normal` or `uniform` |
//! | `dataset` | `synthetic` or `cifar10` |
//! | `synthetic_count`, `synthetic_seed` | integers (synthetic data) |
//! | `cifar_files` | comma-separated paths, relative to the config file |
//! | `hist_every`, `hist_bins`, `ckpt_every` | integer |
//! | `out_dir` | path, relative to the config file |

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use legan::trainer::{DatasetSpec, TrainConfig};

pub const KEYS: [&str; 22] = [
    "objective",
    "architecture",
    "batch_size",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "clip_c",
    "l2_lambda",
    "d_steps_per_g",
    "epochs",
    "seed",
    "legan_ema",
    "noise_prior",
    "dataset",
    "synthetic_count",
    "synthetic_seed",
    "cifar_files",
    "hist_every",
    "hist_bins",
    "ckpt_every",
    "out_dir",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line, or `None` for whole-file problems.
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        if let Some(k) = &self.key {
            write!(f, "key `{k}`: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(line: Option<usize>, key: Option<&str>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        key: key.map(str::to_string),
        message: message.into(),
    }
}

fn parse_value<V: FromStr>(line: usize, key: &str, value: &str) -> Result<V, ConfigError>
where
    V::Err: fmt::Display,
{
    value.parse().map_err(|e| {
        err(
            Some(line),
            Some(key),
            format!("cannot parse {value:?}: {e}"),
        )
    })
}

fn optional_number(line: usize, key: &str, value: &str) -> Result<Option<f64>, ConfigError> {
    if value == "off" {
        Ok(None)
    } else {
        parse_value(line, key, value).map(Some)
    }
}

/// Parses a configuration file body. Relative paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<TrainConfig, ConfigError> {
    let mut cfg = TrainConfig {
        out_dir: base.join("run"),
        ..TrainConfig::default()
    };
    let mut seen = HashSet::new();
    let mut dataset_kind = "synthetic".to_string();
    let (mut synth_count, mut synth_seed) = (2000usize, 0u64);
    let mut cifar_files: Option<Vec<PathBuf>> = None;
    let mut synth_keys = false;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(Some(n), None, format!("expected key = value, got {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(err(Some(n), Some(key), "unknown key"));
        }
        if !seen.insert(key.to_string()) {
            return Err(err(Some(n), Some(key), "duplicate key"));
        }
        match key {
            "objective" => cfg.objective = parse_value(n, key, value)?,
            "architecture" => cfg.architecture = parse_value(n, key, value)?,
            "batch_size" => cfg.batch_size = parse_value(n, key, value)?,
            "learning_rate" => cfg.learning_rate = parse_value(n, key, value)?,
            "adam_beta1" => cfg.adam_beta1 = parse_value(n, key, value)?,
            "adam_beta2" => cfg.adam_beta2 = parse_value(n, key, value)?,
            "adam_eps" => cfg.adam_eps = parse_value(n, key, value)?,
            "clip_c" => cfg.clip_c = optional_number(n, key, value)?,
            "l2_lambda" => cfg.l2_lambda = parse_value(n, key, value)?,
            "d_steps_per_g" => cfg.d_steps_per_g = parse_value(n, key, value)?,
            "epochs" => cfg.epochs = parse_value(n, key, value)?,
            "seed" => cfg.seed = parse_value(n, key, value)?,
            "legan_ema" => cfg.legan_ema = optional_number(n, key, value)?,
            "noise_prior" => cfg.noise_prior = parse_value(n, key, value)?,
            "dataset" => {
                if value != "synthetic" && value != "cifar10" {
                    return Err(err(
                        Some(n),
                        Some(key),
                        format!("{value:?} is not synthetic or cifar10"),
                    ));
                }
                dataset_kind = value.to_string();
            }
            "synthetic_count" => {
                synth_count = parse_value(n, key, value)?;
                synth_keys = true;
            }
            "synthetic_seed" => {
                synth_seed = parse_value(n, key, value)?;
                synth_keys = true;
            }
            "cifar_files" => {
                let files: Vec<PathBuf> = value
                    .split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(|p| base.join(p))
                    .collect();
                if files.is_empty() {
                    return Err(err(Some(n), Some(key), "no files listed"));
                }
                cifar_files = Some(files);
            }
            "hist_every" => cfg.hist_every = parse_value(n, key, value)?,
            "hist_bins" => cfg.hist_bins = parse_value(n, key, value)?,
            "ckpt_every" => cfg.ckpt_every = parse_value(n, key, value)?,
            "out_dir" => cfg.out_dir = base.join(value),
            _ => unreachable!("key list checked above"),
        }
    }
    cfg.dataset = match (dataset_kind.as_str(), cifar_files) {
        ("cifar10", Some(paths)) => {
            if synth_keys {
                return Err(err(
                    None,
                    Some("synthetic_count"),
                    "only valid with dataset = synthetic",
                ));
            }
            DatasetSpec::Cifar10 { paths }
        }
        ("cifar10", None) => {
            return Err(err(
                None,
                Some("cifar_files"),
                "required with dataset = cifar10",
            ));
        }
        (_, Some(_)) => {
            return Err(err(
                None,
                Some("cifar_files"),
                "only valid with dataset = cifar10",
            ));
        }
        _ => DatasetSpec::Synthetic {
            count: synth_count,
            seed: synth_seed,
        },
    };
    if cfg.epochs == 0 {
        return Err(err(None, Some("epochs"), "must be at least 1"));
    }
    cfg.validate().map_err(|e| err(None, None, e.to_string()))?;
    Ok(cfg)
}

/// Reads and parses a configuration file.
pub fn load_config(path: &Path) -> Result<TrainConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| err(None, None, format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base)
}
