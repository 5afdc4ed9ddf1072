//! Run configuration: command-line flags override config-file values, which
//! override built-in defaults. The resolved values are echoed into every
//! report.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stratlift::inference::SamplerConfig;
use stratlift::models::ModelKind;
use stratlift::presets::Preset;
use stratlift::Error;

/// Values accepted from a JSON config file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub panel: Option<PathBuf>,
    pub model: Option<ModelKind>,
    pub covariates: Option<Vec<String>>,
    pub chains: Option<usize>,
    pub warmup: Option<usize>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub target_accept: Option<f64>,
    pub baseline: Option<bool>,
    pub preset: Option<Preset>,
    pub truth: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub clip_negative: Option<bool>,
    pub recency_threshold: Option<usize>,
    pub n: Option<usize>,
    pub treat_frac: Option<f64>,
    pub reps: Option<usize>,
    pub n_grid: Option<Vec<usize>>,
    pub frac_grid: Option<Vec<f64>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("config file {}: {e}", path.display())))
    }
}

/// Sampler settings after merging.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedSampler {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub seed: u64,
    pub target_accept: f64,
}

impl ResolvedSampler {
    pub fn resolve(
        file: &FileConfig,
        chains: Option<usize>,
        warmup: Option<usize>,
        samples: Option<usize>,
        seed: Option<u64>,
        target_accept: Option<f64>,
    ) -> Self {
        let d = SamplerConfig::default();
        Self {
            chains: chains.or(file.chains).unwrap_or(d.chains),
            warmup: warmup.or(file.warmup).unwrap_or(d.warmup_iters),
            samples: samples.or(file.samples).unwrap_or(d.sampling_iters),
            seed: seed.or(file.seed).unwrap_or(d.seed),
            target_accept: target_accept.or(file.target_accept).unwrap_or(d.target_accept),
        }
    }

    pub fn to_config(&self) -> Result<SamplerConfig, Error> {
        let c = SamplerConfig {
            chains: self.chains,
            warmup_iters: self.warmup,
            sampling_iters: self.samples,
            seed: self.seed,
            target_accept: self.target_accept,
            ..SamplerConfig::default()
        };
        c.validate()?;
        Ok(c)
    }
}

/// Returns the first present value or a validation error naming `what`.
pub fn required<T>(flag: Option<T>, file: Option<T>, what: &str) -> Result<T, Error> {
    flag.or(file).ok_or_else(|| Error::Validation(format!("missing required option --{what}")))
}
