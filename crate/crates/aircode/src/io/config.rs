//! Run configuration: one TOML file with full defaulting covering model
//! dimensions, synthetic data, training, and evaluation.

use crate::error::{Error, Result};
use crate::model::ModelDims;
use crate::synth::{AugmentationParams, SequenceConfig, SynthConfig};
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Evaluation parameters shared by the report commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Frame gaps evaluated in match mode.
    pub gaps: Vec<usize>,
    /// Decision threshold for matching and relocalization scores.
    pub sim_threshold: f64,
    /// Mutual-nearest filter for reported matches (the evaluation protocol
    /// itself always uses plain thresholding).
    pub mutual_nearest: bool,
    /// Recall@N is reported for every N from 1 to this bound.
    pub recall_top_n: usize,
    /// Sample sizes for the location-usage table.
    pub usage_counts: Vec<usize>,
    /// Key-point counts benchmarked per object.
    pub bench_sizes: Vec<usize>,
    pub bench_repeats: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            gaps: vec![1, 3, 5, 10],
            sim_threshold: 0.8,
            mutual_nearest: false,
            recall_top_n: 20,
            usage_counts: vec![1, 10, 100],
            bench_sizes: vec![5, 10, 20, 40],
            bench_repeats: 5,
        }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> Result<()> {
        if self.gaps.is_empty() || self.gaps.contains(&0) {
            return Err(Error::contract("eval gaps must be non-empty and positive"));
        }
        if !self.sim_threshold.is_finite() || !(-1.0..=1.0).contains(&self.sim_threshold) {
            return Err(Error::contract("sim_threshold must lie in [-1, 1]"));
        }
        if self.recall_top_n == 0 {
            return Err(Error::contract("recall_top_n must be at least 1"));
        }
        if self.usage_counts.is_empty() || self.usage_counts.contains(&0) {
            return Err(Error::contract("usage_counts must be non-empty and positive"));
        }
        if self.bench_sizes.is_empty() || self.bench_sizes.contains(&0) {
            return Err(Error::contract("bench_sizes must be non-empty and positive"));
        }
        if self.bench_repeats == 0 {
            return Err(Error::contract("bench_repeats must be at least 1"));
        }
        Ok(())
    }
}

/// Everything a pipeline run needs. Unknown keys anywhere are rejected;
/// every field defaults, so an empty file is a valid configuration.
///
/// The root RNG seed lives at `train.seed`; every command derives its own
/// stream from it, so one file pins the whole pipeline.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dims: ModelDims,
    pub synth: SynthConfig,
    pub augment: AugmentationParams,
    pub sequence: SequenceConfig,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

impl RunConfig {
    /// The single seed all pipeline randomness flows from.
    pub fn root_seed(&self) -> u64 {
        self.train.seed
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.synth.validate()?;
        self.augment.validate()?;
        self.sequence.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.synth.descriptor_width != self.dims.n_p {
            return Err(Error::contract(format!(
                "synth.descriptor_width {} does not match dims.n_p {}",
                self.synth.descriptor_width, self.dims.n_p
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::parse(format!("bad config: {e}")))?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }
}
