//! Run configuration: one JSON document, every key optional.
//!
//! Precedence, lowest to highest: built-in defaults, the `--config` file,
//! the `TART_OUT` environment variable (output directory only), command-line
//! flags. The global `seed` replaces the per-section seeds.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tart_core::evalkit::{DEFAULT_ALPHAS, DEFAULT_PROJECTIONS};
use tart_core::numerics::AdamConfig;
use tart_core::oracle::LogisticOptions;
use tart_core::reasoner::ReasonerConfig;
use tart_core::taskgen::TaskGenConfig;
use tart_core::trainer::{CurriculumSchedule, TrainConfig};

use crate::CliError;

pub const OUT_ENV: &str = "TART_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub batch_size: usize,
    pub lr: f64,
    pub steps: u64,
    pub checkpoint_every: u64,
    pub keep_last: usize,
    pub curriculum: bool,
    pub schedule: CurriculumSchedule,
    pub grad_clip: Option<f64>,
    pub adam: AdamConfig,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            lr: t.lr,
            steps: t.steps,
            checkpoint_every: t.checkpoint_every,
            keep_last: t.keep_last,
            curriculum: t.curriculum,
            schedule: t.schedule,
            grad_clip: t.grad_clip,
            adam: t.adam,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Problems per synthetic evaluation set.
    pub problems: usize,
    /// Largest scored prefix; defaults to one less than the trained `k`.
    pub max_prefix: Option<usize>,
    pub alphas: Vec<f64>,
    pub problems_per_alpha: usize,
    pub logistic: LogisticOptions,
    pub projections: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            problems: 64,
            max_prefix: None,
            alphas: DEFAULT_ALPHAS.to_vec(),
            problems_per_alpha: 256,
            logistic: LogisticOptions::default(),
            projections: DEFAULT_PROJECTIONS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComposeSection {
    /// Requested PCA components; capped by the data and the reasoner width.
    pub components: usize,
    /// In-context sizes for the accuracy-vs-k curve.
    pub ks: Vec<usize>,
}

impl Default for ComposeSection {
    fn default() -> Self {
        Self {
            components: tart_core::compose::DEFAULT_COMPONENTS,
            ks: vec![4, 8, 16, 24, 32],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub taskgen: TaskGenConfig,
    pub reasoner: ReasonerConfig,
    pub trainer: TrainerSection,
    pub eval: EvalSection,
    pub compose: ComposeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("tart-out"),
            taskgen: TaskGenConfig::default(),
            reasoner: ReasonerConfig::default(),
            trainer: TrainerSection::default(),
            eval: EvalSection::default(),
            compose: ComposeSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("invalid config {}: {e}", path.display())))
    }

    /// Applies the environment and the global seed.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if let Ok(dir) = std::env::var(OUT_ENV) {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
        if let Some(dir) = out {
            self.output_dir = dir;
        }
        if let Some(s) = seed {
            self.seed = s;
        }
        self.taskgen.seed = self.seed;
        self
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.trainer;
        TrainConfig {
            reasoner: self.reasoner.clone(),
            taskgen: self.taskgen.clone(),
            batch_size: t.batch_size,
            lr: t.lr,
            steps: t.steps,
            seed: self.seed,
            checkpoint_every: t.checkpoint_every,
            keep_last: t.keep_last,
            curriculum: t.curriculum,
            schedule: t.schedule.clone(),
            grad_clip: t.grad_clip,
            adam: t.adam,
        }
    }
}
