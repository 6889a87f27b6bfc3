//! Declarative experiment description.
//!
//! A config is a JSON document. Optional fields left out are filled by
//! [`ExperimentConfig::resolve`], and the resolved form is what a run echoes
//! next to its outputs, so rerunning from the echo repeats the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::models::{match_parameters, ModelKind, ModelSpec};
use crate::train::{OptimizerConfig, OptimizerKind, RankingConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// Binary labels on single times (the day-of-week task).
    Synthetic,
    /// One class label per sequence.
    EventClassify,
    /// Predict the next item id of a sequence.
    NextEvent,
}

fn default_alpha() -> f64 {
    1.0
}

fn default_threshold() -> f64 {
    0.9
}

fn default_max_len() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataConfig {
    /// Generated in memory from the experiment seed.
    Synthetic {
        #[serde(default)]
        noise_rate: f64,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    /// IDX image/label pairs converted on load; the limits keep the first
    /// N converted samples.
    EventMnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default = "default_threshold")]
        threshold: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
    /// Event JSONL files. For next-event runs every sequence is expanded
    /// into prefix/target pairs truncated to `max_len`.
    Jsonl {
        train: PathBuf,
        test: PathBuf,
        #[serde(default = "default_max_len")]
        max_len: usize,
    },
}

impl DataConfig {
    /// Paths relative to `base` are made absolute against it.
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DataConfig::Synthetic { .. } => {}
            DataConfig::EventMnist {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    fix(p);
                }
            }
            DataConfig::Jsonl { train, test, .. } => {
                fix(train);
                fix(test);
            }
        }
    }
}

/// Small batches give the many updates the day-of-week probe needs to pin
/// its frequency down; full-batch runs rarely extrapolate to the test days.
const SYNTHETIC_BATCH: usize = 8;

fn default_epochs() -> usize {
    200
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub model: ModelSpec,
    /// Defaults to Adagrad (lr 0.01) for time-gated next-event models and
    /// Adam (lr 0.001) otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Defaults to 8 for the synthetic task, 128 for JSONL logs and 512
    /// otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub eval: RankingConfig,
    /// Fixes the gradient shard size so results do not depend on the
    /// number of worker threads.
    #[serde(default = "default_true")]
    pub deterministic: bool,
    /// When set, `model.hidden` is lowered to the largest size whose
    /// parameter count does not exceed this model's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parity_reference: Option<ModelSpec>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    /// Reads a config file; relative data paths are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsio::read(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Config("config is not UTF-8".into()))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            cfg.data.rebase(dir);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Fills defaults, applies parameter parity and checks consistency.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = self.clone();
        let recurrent = cfg.model.kind != ModelKind::T2vDense;
        if recurrent && cfg.model.hidden == 0 {
            cfg.model.hidden = match cfg.data {
                DataConfig::EventMnist { .. } => 128,
                _ => 64,
            };
        }
        if cfg.optimizer.is_none() {
            cfg.optimizer = Some(if cfg.task == TaskKind::NextEvent && cfg.model.kind.is_time_gated() {
                OptimizerConfig {
                    kind: OptimizerKind::Adagrad,
                    lr: 0.01,
                }
            } else {
                OptimizerConfig::default()
            });
        }
        if cfg.batch_size.is_none() {
            cfg.batch_size = Some(match (cfg.task, &cfg.data) {
                (TaskKind::Synthetic, _) => SYNTHETIC_BATCH,
                (_, DataConfig::Jsonl { .. }) => 128,
                _ => 512,
            });
        }
        if let Some(reference) = &cfg.parity_reference {
            let mut reference = reference.clone();
            if reference.hidden == 0 {
                reference.hidden = cfg.model.hidden;
            }
            cfg.model = match_parameters(&reference, &cfg.model)?;
            cfg.parity_reference = Some(reference);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let kind = self.model.kind;
        match self.task {
            TaskKind::Synthetic if kind != ModelKind::T2vDense => {
                return Err(Error::Config(format!("the synthetic task needs t2v-dense, not {kind}")))
            }
            TaskKind::EventClassify if self.model.classes.is_none() => {
                return Err(Error::Config("event-classify needs `model.classes`".into()))
            }
            TaskKind::NextEvent if self.model.event_vocab.is_none() => {
                return Err(Error::Config("next-event needs `model.event_vocab`".into()))
            }
            _ => {}
        }
        match (&self.task, &self.data) {
            (TaskKind::Synthetic, DataConfig::EventMnist { .. })
            | (TaskKind::NextEvent, DataConfig::EventMnist { .. })
            | (TaskKind::EventClassify | TaskKind::NextEvent, DataConfig::Synthetic { .. }) => {
                return Err(Error::Config(format!(
                    "{:?} data does not fit the {:?} task",
                    self.data, self.task
                )))
            }
            _ => {}
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let DataConfig::Jsonl { max_len: 0, .. } = self.data {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if self.eval.q == 0 || self.eval.sample_times == 0 || self.eval.list_size == 0 {
            return Err(Error::Config(
                "eval.q, eval.list_size and eval.sample_times must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Resolved optimizer (after [`ExperimentConfig::resolve`]).
    pub fn optimizer(&self) -> OptimizerConfig {
        self.optimizer.unwrap_or_default()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(512)
    }
}
