//! Experiment configuration.
//!
//! A config is one JSON object. Only `master_seed` is always required; the
//! other sections are required by the subcommands that use them and default
//! otherwise. Unknown fields are rejected so typos fail loudly.

use std::path::{Path, PathBuf};

use privaudit_core::data::SourceParams;
use privaudit_core::mia::AttackModelConfig;
use privaudit_core::nn::{Activation, ModelSpec};
use privaudit_core::trainer::{PenaltyTarget, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Data,
    Train,
    Attack,
    Sensitivity,
    Gpm,
    Account,
    SweepDpsgd,
    SweepGpm,
    SweepL2,
    Memorization,
    Scatter,
    Compare,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Data => "data",
            ExperimentKind::Train => "train",
            ExperimentKind::Attack => "attack",
            ExperimentKind::Sensitivity => "sensitivity",
            ExperimentKind::Gpm => "gpm",
            ExperimentKind::Account => "account",
            ExperimentKind::SweepDpsgd => "sweep-dpsgd",
            ExperimentKind::SweepGpm => "sweep-gpm",
            ExperimentKind::SweepL2 => "sweep-l2",
            ExperimentKind::Memorization => "memorization",
            ExperimentKind::Scatter => "scatter",
            ExperimentKind::Compare => "compare",
        }
    }
}

fn default_victim() -> usize {
    100
}
fn default_validation() -> usize {
    500
}
fn default_pool() -> usize {
    1000
}
fn default_fresh() -> usize {
    500
}

/// Sizes of the disjoint record ranges drawn for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_victim")]
    pub victim: usize,
    #[serde(default = "default_validation")]
    pub validation: usize,
    #[serde(default = "default_pool")]
    pub pool: usize,
    #[serde(default = "default_fresh")]
    pub fresh: usize,
    /// Members (and as many non-members) in the attack evaluation; defaults
    /// to the smaller of `victim` and `fresh`.
    #[serde(default)]
    pub eval: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            victim: default_victim(),
            validation: default_validation(),
            pool: default_pool(),
            fresh: default_fresh(),
            eval: None,
        }
    }
}

impl SplitConfig {
    pub fn eval_size(&self) -> usize {
        self.eval.unwrap_or(self.victim.min(self.fresh))
    }
}

fn default_shadows() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default = "default_shadows")]
    pub shadows: usize,
    /// Records per shadow in-set; defaults to the victim training size.
    #[serde(default)]
    pub shadow_size: Option<usize>,
    #[serde(default)]
    pub model: AttackModelConfig,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            shadows: default_shadows(),
            shadow_size: None,
            model: AttackModelConfig::default(),
        }
    }
}

fn default_clip() -> f64 {
    1.0
}
fn default_repeats() -> usize {
    1
}
fn default_delta() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// DP-SGD noise multipliers. A zero anchor is added when absent.
    #[serde(default)]
    pub dp_sigmas: Vec<f64>,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    /// Parameter-noise standard deviations for output perturbation.
    #[serde(default)]
    pub gpm_sigmas: Vec<f64>,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub l2_target: PenaltyTarget,
    /// Independent repetitions per grid point; rows report medians.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Sensitivity used for output-perturbation certificates. When absent,
    /// the sampler runs with the `sensitivity` section.
    #[serde(default)]
    pub s_bar: Option<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            dp_sigmas: Vec::new(),
            clip_norm: default_clip(),
            gpm_sigmas: Vec::new(),
            lambdas: Vec::new(),
            l2_target: PenaltyTarget::Weights,
            repeats: default_repeats(),
            delta: default_delta(),
            s_bar: None,
        }
    }
}

fn default_samples() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityConfig {
    #[serde(default = "default_samples")]
    pub n: usize,
    /// Training-set size; defaults to `split.victim`.
    #[serde(default, rename = "N")]
    pub big_n: Option<usize>,
    /// Recipe to audit; defaults to the top-level `train` section.
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            n: default_samples(),
            big_n: None,
            train: None,
        }
    }
}

fn default_gpm_sigma() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpmConfig {
    #[serde(default = "default_gpm_sigma")]
    pub sigma: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Known sampled sensitivity and its sample count; when absent the
    /// sampler runs.
    #[serde(default)]
    pub s_bar: Option<f64>,
    #[serde(default)]
    pub n: Option<usize>,
    /// Parameter snapshot to release; trains the victim when absent.
    #[serde(default)]
    pub snapshot: Option<PathBuf>,
    /// Dataset CSV of queries; the validation range when absent.
    #[serde(default)]
    pub queries: Option<PathBuf>,
}

impl Default for GpmConfig {
    fn default() -> Self {
        GpmConfig {
            sigma: default_gpm_sigma(),
            delta: default_delta(),
            s_bar: None,
            n: None,
            snapshot: None,
            queries: None,
        }
    }
}

fn default_confidence_samples() -> Vec<usize> {
    vec![50, 100, 500, 1000]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountConfig {
    #[serde(default)]
    pub noise_multipliers: Vec<f64>,
    /// Releases to compose; defaults to `train.iterations`.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_confidence_samples")]
    pub confidence_samples: Vec<usize>,
}

impl Default for AccountConfig {
    fn default() -> Self {
        AccountConfig {
            noise_multipliers: Vec::new(),
            steps: None,
            delta: default_delta(),
            confidence_samples: default_confidence_samples(),
        }
    }
}

fn default_batches() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorizationConfig {
    #[serde(default = "default_batches")]
    pub batches: usize,
}

impl Default for MemorizationConfig {
    fn default() -> Self {
        MemorizationConfig {
            batches: default_batches(),
        }
    }
}

fn default_recurrent_hidden() -> usize {
    16
}
fn default_parity_tolerance() -> f64 {
    0.02
}

/// Feed-forward against recurrent victims at matched validation accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default)]
    pub feedforward_hidden: Vec<usize>,
    #[serde(default = "default_recurrent_hidden")]
    pub recurrent_hidden: usize,
    /// Candidate iteration counts for the recurrent victim.
    #[serde(default)]
    pub parity_grid: Vec<usize>,
    #[serde(default = "default_parity_tolerance")]
    pub tolerance: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            feedforward_hidden: vec![64],
            recurrent_hidden: default_recurrent_hidden(),
            parity_grid: Vec::new(),
            tolerance: default_parity_tolerance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    pub master_seed: u64,
    #[serde(default)]
    pub data: Option<SourceParams>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub sensitivity: SensitivityConfig,
    #[serde(default)]
    pub gpm: GpmConfig,
    #[serde(default)]
    pub account: AccountConfig,
    #[serde(default)]
    pub memorization: MemorizationConfig,
    #[serde(default)]
    pub compare: CompareConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::schema(path, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn data(&self) -> Result<&SourceParams> {
        self.data
            .as_ref()
            .ok_or_else(|| CliError::schema("data", "missing field `data` required by this experiment"))
    }

    pub fn train(&self) -> Result<&TrainConfig> {
        self.train
            .as_ref()
            .ok_or_else(|| CliError::schema("train", "missing field `train` required by this experiment"))
    }

    /// The configured model, or a default sized to the data: one hidden
    /// layer of 64 tanh units for vector data, a 16-unit recurrent cell for
    /// sequences.
    pub fn model(&self) -> Result<ModelSpec> {
        if let Some(spec) = &self.model {
            return Ok(spec.clone());
        }
        let data = self.data()?;
        Ok(default_model(data))
    }

    /// Canonical JSON of everything that affects outputs.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        serde_json::to_string(&c).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        privaudit_core::fingerprint(self.canonical_json().as_bytes())
    }
}

pub fn default_model(data: &SourceParams) -> ModelSpec {
    match data {
        SourceParams::GaussianBlobs { classes, dims, .. } => {
            ModelSpec::feedforward(vec![*dims, 64, *classes], Activation::Tanh)
        }
        SourceParams::SyntheticSequences { vocab, classes, .. } => {
            ModelSpec::recurrent(*vocab, 16, *classes)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_seed_names_field() {
        let err = ExperimentConfig::from_json(r#"{"train": null}"#).unwrap_err();
        assert!(err.to_string().contains("master_seed"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn nested_errors_carry_paths() {
        let err = ExperimentConfig::from_json(r#"{"master_seed": 1, "split": {"victim": "x"}}"#).unwrap_err();
        match err {
            CliError::Schema { path, .. } => assert_eq!(path, "split.victim"),
            other => panic!("{other}"),
        }
        let err = ExperimentConfig::from_json(r#"{"master_seed": 1, "bogus": 3}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn minimal_config_and_hash() {
        let a = ExperimentConfig::from_json(r#"{"master_seed": 7}"#).unwrap();
        assert_eq!(a.split.victim, 100);
        assert!(a.train().is_err());
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.master_seed = 8;
        assert_ne!(a.hash(), b.hash());
    }
}
