use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::Deserialize;

use crate::cli::{BaselineKind, InterpMode, MockChoice, OrderMode, Preset};

/// Bad or missing parameters. Reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub histogram: HistogramSection,
    #[serde(default, rename = "logit-effect")]
    pub logit_effect: LogitEffectSection,
    #[serde(default)]
    pub interp: InterpSection,
    #[serde(default)]
    pub patch: PatchSection,
    #[serde(default)]
    pub tree: TreeSection,
    /// Directory relative paths in the file resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub out: Option<PathBuf>,
    pub n_gt: Option<usize>,
    pub d: Option<usize>,
    pub n_samples: Option<usize>,
    pub avg_active: Option<f64>,
    pub coeff_scale: Option<f64>,
    pub noise_sigma: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub preset: Option<Preset>,
    pub ratio: Option<f64>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<u32>,
    pub batch_size: Option<usize>,
    pub tied: Option<bool>,
    pub dead_reinit: Option<bool>,
    pub dead_threshold: Option<u64>,
    pub truth: Option<PathBuf>,
    pub holdout: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub dict: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub linear: Option<bool>,
    pub topk: Option<usize>,
    pub dead_threshold: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    pub kind: Option<BaselineKind>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub k: Option<usize>,
    pub topk: Option<usize>,
    pub ica_subsample: Option<usize>,
    pub ica_max_iter: Option<usize>,
    pub dead_threshold: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSection {
    pub dict: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub tokens: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub feature: Option<usize>,
    pub bins: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogitEffectSection {
    pub dict: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub unembed: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub feature: Option<usize>,
    pub top_n: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpSection {
    pub dict: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub tokens: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub features: Option<Vec<usize>>,
    pub mode: Option<InterpMode>,
    pub mock: Option<MockChoice>,
    pub prompts: Option<PathBuf>,
    pub max_lines: Option<usize>,
    pub parallelism: Option<usize>,
    pub max_retries: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSection {
    pub dict: Option<PathBuf>,
    pub cases: Option<PathBuf>,
    pub unembed: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub candidates: Option<Vec<usize>>,
    pub mode: Option<OrderMode>,
    pub budget: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSection {
    pub dicts: Option<Vec<PathBuf>>,
    pub data: Option<Vec<PathBuf>>,
    pub transitions: Option<Vec<PathBuf>>,
    pub out: Option<PathBuf>,
    pub layer: Option<usize>,
    pub feature: Option<usize>,
    pub depth: Option<usize>,
    pub fanout: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }
}

/// Merges one subcommand's flags with its config section. A flag typed on
/// the command line wins; otherwise the config value, otherwise the flag's
/// default.
pub struct Resolver<'a> {
    matches: &'a ArgMatches,
    base_dir: &'a Path,
    section: &'static str,
}

impl<'a> Resolver<'a> {
    pub fn new(matches: &'a ArgMatches, base_dir: &'a Path, section: &'static str) -> Self {
        Resolver {
            matches,
            base_dir,
            section,
        }
    }

    pub fn on_command_line(&self, id: &str) -> bool {
        self.matches.value_source(id) == Some(ValueSource::CommandLine)
    }

    pub fn value<T>(&self, id: &str, flag: T, config: Option<T>) -> T {
        match config {
            Some(c) if !self.on_command_line(id) => c,
            _ => flag,
        }
    }

    pub fn optional<T>(&self, flag: Option<T>, config: Option<T>) -> Option<T> {
        flag.or(config)
    }

    pub fn list<T>(&self, flag: Vec<T>, config: Option<Vec<T>>) -> Vec<T> {
        if flag.is_empty() {
            config.unwrap_or_default()
        } else {
            flag
        }
    }

    pub fn path(&self, flag: Option<PathBuf>, config: Option<PathBuf>) -> Option<PathBuf> {
        flag.or_else(|| config.map(|p| self.base_dir.join(p)))
    }

    pub fn paths(&self, flag: Vec<PathBuf>, config: Option<Vec<PathBuf>>) -> Vec<PathBuf> {
        if flag.is_empty() {
            config
                .unwrap_or_default()
                .into_iter()
                .map(|p| self.base_dir.join(p))
                .collect()
        } else {
            flag
        }
    }

    pub fn required<T>(&self, value: Option<T>, flag: &str) -> Result<T> {
        value.ok_or_else(|| self.missing(flag))
    }

    pub fn missing(&self, flag: &str) -> anyhow::Error {
        let key = flag.replace('-', "_");
        UsageError(format!(
            "missing --{flag} (or `{key}` in the [{}] section of --config)",
            self.section
        ))
        .into()
    }
}
