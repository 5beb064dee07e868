//! Run configuration: one TOML file, every field defaulted.

use std::path::{Path, PathBuf};

use cptag_core::aggregate::AggregatorConfig;
use cptag_core::baselines::LogisticConfig;
use cptag_core::corpus::{DEFAULT_NEAR_DUPLICATE_THRESHOLD, DEFAULT_SOLUTION_CAP};
use cptag_core::ggnn::GgnnConfig;
use cptag_core::synth::SynthConfig;
use cptag_core::textmodel::TextModelConfig;
use cptag_core::training::TrainHyper;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus_root: PathBuf,
    pub work_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus_root: PathBuf::from("corpus"),
            work_dir: PathBuf::from("work"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSettings {
    /// Train, validation and test shares of the problems.
    pub split_fractions: [f64; 3],
    pub dedup_threshold: f64,
    pub solution_cap: usize,
    pub tag_min_frequency: usize,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        Self {
            split_fractions: [0.7, 0.15, 0.15],
            dedup_threshold: DEFAULT_NEAR_DUPLICATE_THRESHOLD,
            solution_cap: DEFAULT_SOLUTION_CAP,
            tag_min_frequency: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl TrainSettings {
    pub fn hyper(&self, seed: u64) -> TrainHyper {
        TrainHyper {
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
        }
    }

    fn validate(&self, section: &str) -> Result<(), CliError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(CliError::Config(format!(
                "[{section}] needs lr > 0, batch_size > 0 and max_epochs > 0"
            )));
        }
        Ok(())
    }
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 8,
            max_epochs: 30,
            patience: 5,
        }
    }
}

/// A train section as written; absent fields come from the section's own
/// defaults rather than `TrainSettings::default()`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialTrainSettings {
    lr: Option<f64>,
    batch_size: Option<usize>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
}

impl PartialTrainSettings {
    fn over(self, base: TrainSettings) -> TrainSettings {
        TrainSettings {
            lr: self.lr.unwrap_or(base.lr),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            max_epochs: self.max_epochs.unwrap_or(base.max_epochs),
            patience: self.patience.unwrap_or(base.patience),
        }
    }
}

fn text_train_section<'de, D: serde::Deserializer<'de>>(d: D) -> Result<TrainSettings, D::Error> {
    PartialTrainSettings::deserialize(d).map(|p| p.over(text_train_default()))
}

fn aggregator_train_section<'de, D: serde::Deserializer<'de>>(d: D) -> Result<TrainSettings, D::Error> {
    PartialTrainSettings::deserialize(d).map(|p| p.over(aggregator_train_default()))
}

fn text_train_default() -> TrainSettings {
    TrainSettings {
        lr: 1e-4,
        batch_size: 16,
        max_epochs: 40,
        patience: 5,
    }
}

fn aggregator_train_default() -> TrainSettings {
    TrainSettings {
        max_epochs: 100,
        ..TrainSettings::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSettings {
    pub tfidf_vocabulary_cap: usize,
    pub logistic: LogisticConfig,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            tfidf_vocabulary_cap: 5000,
            logistic: LogisticConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuggestSettings {
    pub confidence: f64,
}

impl Default for SuggestSettings {
    fn default() -> Self {
        Self { confidence: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub corpus: CorpusSettings,
    pub ggnn: GgnnConfig,
    pub ggnn_train: TrainSettings,
    pub aggregator: AggregatorConfig,
    #[serde(default = "aggregator_train_default", deserialize_with = "aggregator_train_section")]
    pub aggregator_train: TrainSettings,
    pub text: TextModelConfig,
    #[serde(default = "text_train_default", deserialize_with = "text_train_section")]
    pub text_train: TrainSettings,
    pub baseline: BaselineSettings,
    pub suggest: SuggestSettings,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            paths: Paths::default(),
            corpus: CorpusSettings::default(),
            ggnn: GgnnConfig::default(),
            ggnn_train: TrainSettings::default(),
            aggregator: AggregatorConfig::default(),
            aggregator_train: aggregator_train_default(),
            text: TextModelConfig::default(),
            text_train: text_train_default(),
            baseline: BaselineSettings::default(),
            suggest: SuggestSettings::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let c = &self.corpus;
        let sum: f64 = c.split_fractions.iter().sum();
        if c.split_fractions.iter().any(|&f| f <= 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(CliError::Config(format!(
                "[corpus] split_fractions must be positive and sum to 1, got {:?}",
                c.split_fractions
            )));
        }
        if !(0.0..=1.0).contains(&c.dedup_threshold) {
            return Err(CliError::Config("[corpus] dedup_threshold must lie in [0, 1]".into()));
        }
        if c.solution_cap == 0 {
            return Err(CliError::Config("[corpus] solution_cap must be at least 1".into()));
        }
        let model_err = |section: &str, e: cptag_core::Error| CliError::Config(format!("[{section}] {e}"));
        self.ggnn.validate().map_err(|e| model_err("ggnn", e))?;
        self.text.validate().map_err(|e| model_err("text", e))?;
        if self.aggregator.hidden_dim != self.ggnn.hidden_dim {
            return Err(CliError::Config(format!(
                "[aggregator] hidden_dim {} must equal [ggnn] hidden_dim {}",
                self.aggregator.hidden_dim, self.ggnn.hidden_dim
            )));
        }
        if self.aggregator.sample_cap == 0 || !(0.0..1.0).contains(&self.aggregator.dropout) {
            return Err(CliError::Config("[aggregator] needs sample_cap > 0 and dropout in [0, 1)".into()));
        }
        self.ggnn_train.validate("ggnn_train")?;
        self.aggregator_train.validate("aggregator_train")?;
        self.text_train.validate("text_train")?;
        let l = &self.baseline.logistic;
        if l.l2 < 0.0 || l.lr <= 0.0 || self.baseline.tfidf_vocabulary_cap == 0 {
            return Err(CliError::Config("[baseline] needs l2 >= 0, lr > 0 and tfidf_vocabulary_cap > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.suggest.confidence) {
            return Err(CliError::Config("[suggest] confidence must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
