//! Effective run configuration: defaults, then an optional JSON file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pedp_core::baselines::{BaselineKind, SeqDecode};
use pedp_core::optim::OptimizerSettings;
use pedp_core::sampling::GumbelConfig;
use pedp_core::training::LossWeights;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub hidden: usize,
    pub paths: usize,
    /// `None` derives the horizon from the corpus.
    pub max_plan_len: Option<usize>,
    pub action_embedding: usize,
    pub decoder_hidden: usize,
    pub gumbel: GumbelConfig,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            hidden: 64,
            paths: 3,
            max_plan_len: None,
            action_embedding: 32,
            decoder_hidden: 32,
            gumbel: GumbelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Prediction-time path count; training also uses it for `K`.
    pub k_paths: Option<usize>,
    pub no_planning: bool,
    pub no_ensemble: bool,
    pub no_sample: bool,
    pub paper_literal_gumbel_sigmoid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: ModelSettings,
    pub loss_weights: LossWeights,
    pub optimizer: OptimizerSettings,
    pub epochs: usize,
    pub val_fraction: f64,
    pub seeds: Vec<u64>,
    pub ablation: Ablation,
    pub baseline: Option<BaselineKind>,
    pub seq_decode: SeqDecode,
    pub dialogs: usize,
    pub single_action: bool,
    pub episodes: usize,
    pub max_turns: usize,
    pub goals: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema: None,
            corpus: None,
            checkpoints: Vec::new(),
            out: None,
            model: ModelSettings::default(),
            loss_weights: LossWeights::default(),
            optimizer: OptimizerSettings::default(),
            epochs: 40,
            val_fraction: 0.1,
            seeds: Vec::new(),
            ablation: Ablation::default(),
            baseline: None,
            seq_decode: SeqDecode::Greedy,
            dialogs: 500,
            single_action: false,
            episodes: 500,
            max_turns: pedp_core::user_sim::DEFAULT_MAX_TURNS,
            goals: 100,
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with the JSON file at `path`, if any.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        if !path.is_file() {
            return Err(UsageError(format!("config file {} does not exist", path.display())).into());
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Fills `seeds` from `PEDP_SEED` when empty, then `[0]`.
    pub fn resolve_seeds(&mut self) -> Result<()> {
        if !self.seeds.is_empty() {
            return Ok(());
        }
        match std::env::var("PEDP_SEED") {
            Ok(v) => {
                let seeds = v
                    .split(',')
                    .map(|s| s.trim().parse::<u64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| UsageError(format!("PEDP_SEED={v:?} is not a list of integers")))?;
                self.seeds = seeds;
            }
            Err(_) => self.seeds = vec![0],
        }
        if self.seeds.is_empty() {
            return Err(UsageError("no seeds given".into()).into());
        }
        Ok(())
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| UsageError("--out is required".into()).into())
    }

    /// Writes the effective config next to the outputs.
    pub fn write_effective(&self, dir: &Path) -> Result<()> {
        let path = dir.join("run_config.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// Input files must exist before any work starts.
pub fn require_file(path: Option<&Path>, flag: &str) -> Result<PathBuf> {
    let path = path.ok_or_else(|| UsageError(format!("{flag} is required")))?;
    if !path.is_file() {
        return Err(UsageError(format!("{flag} {} does not exist", path.display())).into());
    }
    Ok(path.to_path_buf())
}
