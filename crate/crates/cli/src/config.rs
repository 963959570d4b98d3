//! Declarative TOML configuration. Every value is optional; command-line
//! flags take precedence, then the file, then built-in defaults.
//!
//! ```toml
//! seed = 7
//!
//! [acoustic]
//! k = 8
//! covariance = "diagonal"
//!
//! [affective]
//! mode = "uniform"
//! max_iters = 9
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub features: FeaturesSection,
    #[serde(default)]
    pub acoustic: AcousticSection,
    #[serde(default)]
    pub affective: AffectiveSection,
    #[serde(default)]
    pub adapt: AdaptSection,
    #[serde(default)]
    pub retrieve: RetrieveSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub serve: ServeSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesSection {
    pub window: Option<usize>,
    pub hop: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcousticSection {
    pub k: Option<usize>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub covariance: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffectiveSection {
    pub mode: Option<String>,
    pub max_iters: Option<usize>,
    pub min_rel_gain: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptSection {
    pub beta_mean: Option<f64>,
    pub beta_cov: Option<f64>,
    pub adapt_cov: Option<bool>,
    pub schedule: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieveSection {
    pub method: Option<String>,
    pub topk: Option<usize>,
    pub mode: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub folds: Option<usize>,
    pub queries: Option<usize>,
    pub batch_size: Option<usize>,
    pub batches: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub k: Option<usize>,
    pub clips: Option<usize>,
    pub subjects_min: Option<usize>,
    pub subjects_max: Option<usize>,
    pub alpha: Option<f64>,
    pub radius: Option<f64>,
    pub sigma: Option<f64>,
    pub feature_dim: Option<usize>,
    pub frames: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeSection {
    pub port: Option<u16>,
    pub host: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// First of flag, file value, default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
