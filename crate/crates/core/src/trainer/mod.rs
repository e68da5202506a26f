//! Curriculum training on freshly sampled synthetic batches.
//!
//! Each optimizer step draws a new batch of tasks from a stream keyed by
//! `(seed, "train-batch", step)`, so no batch is ever reused and any step
//! can be replayed from a checkpoint.

pub mod checkpoint;
pub mod curriculum;

use std::collections::VecDeque;
use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use curriculum::CurriculumSchedule;

use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, RngStream, RNG_ALGORITHM};
use crate::reasoner::{Reasoner, ReasonerConfig};
use crate::taskgen::{encode_sequence, sample_tasks, TaskGenConfig};

/// Losses kept in checkpoint metadata.
pub const LOSS_TAIL: usize = 100;
pub const METRICS_HEADER: &str = "step,loss,d_cur,k_cur";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub reasoner: ReasonerConfig,
    /// Caps (`d`, `k`) and the noise level of the training tasks.
    pub taskgen: TaskGenConfig,
    pub batch_size: usize,
    pub lr: f64,
    pub steps: u64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub keep_last: usize,
    pub curriculum: bool,
    pub schedule: CurriculumSchedule,
    /// Global gradient-norm clip; `None` disables it.
    pub grad_clip: Option<f64>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    /// Desk scale: d = 8, k = 32, batch 32, lr 1e-3, 4000 steps, α = 10.
    fn default() -> Self {
        Self {
            reasoner: ReasonerConfig::default(),
            taskgen: TaskGenConfig::default(),
            batch_size: 32,
            lr: 1e-3,
            steps: 4000,
            seed: 0,
            checkpoint_every: 500,
            keep_last: 3,
            curriculum: true,
            schedule: CurriculumSchedule::desk(),
            grad_clip: Some(1.0),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// d = 16, k = 256, batch 64, lr 1e-4, 24000 steps.
    pub fn full_scale() -> Self {
        Self {
            reasoner: ReasonerConfig::full_scale(),
            taskgen: TaskGenConfig {
                d: 16,
                k: 256,
                alpha: 10.0,
                seed: 0,
            },
            batch_size: 64,
            lr: 1e-4,
            steps: 24_000,
            schedule: CurriculumSchedule::full_scale(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.reasoner.validate()?;
        self.taskgen.validate()?;
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::contract("lr must be positive"));
        }
        if self.taskgen.d != self.reasoner.d_in {
            return Err(Error::contract(format!(
                "taskgen d {} differs from reasoner d_in {}",
                self.taskgen.d, self.reasoner.d_in
            )));
        }
        if 2 * self.taskgen.k > self.reasoner.max_positions {
            return Err(Error::contract(format!(
                "k = {} needs {} positions, model has {}",
                self.taskgen.k,
                2 * self.taskgen.k,
                self.reasoner.max_positions
            )));
        }
        if self.curriculum {
            self.schedule.validate()?;
            if self.schedule.d_cap > self.taskgen.d || self.schedule.k_cap > self.taskgen.k {
                return Err(Error::contract("curriculum caps exceed taskgen d/k"));
            }
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::contract("grad_clip must be positive"));
        }
        Ok(())
    }

    /// `(d_cur, k_cur)` used for the batch at `step`.
    pub fn stage(&self, step: u64) -> (usize, usize) {
        if self.curriculum {
            self.schedule.at(step)
        } else {
            (self.taskgen.d, self.taskgen.k)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    /// Completed optimizer steps, starting at 1.
    pub step: u64,
    pub loss: f64,
    pub d_cur: usize,
    pub k_cur: usize,
}

pub struct Trainer {
    config: TrainConfig,
    model: Reasoner,
    adam: AdamState,
    step: u64,
    loss_tail: VecDeque<f64>,
    best_loss: Option<f64>,
}

impl Trainer {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Reasoner::init(&config.reasoner, &mut RngStream::for_purpose(config.seed, "init", 0))?;
        let adam = AdamState::new(model.params(), config.adam);
        Ok(Self {
            config: config.clone(),
            model,
            adam,
            step: 0,
            loss_tail: VecDeque::new(),
            best_loss: None,
        })
    }

    /// Continues from a checkpoint that carries optimizer state.
    pub fn resume(ckpt: Checkpoint) -> Result<Self> {
        ckpt.meta.config.validate()?;
        if ckpt.meta.rng_algorithm != RNG_ALGORITHM {
            return Err(Error::contract(format!(
                "checkpoint uses rng `{}`, this build uses `{RNG_ALGORITHM}`",
                ckpt.meta.rng_algorithm
            )));
        }
        let adam = ckpt
            .adam
            .ok_or_else(|| Error::contract("checkpoint has no optimizer state to resume from"))?;
        Ok(Self {
            config: ckpt.meta.config,
            model: ckpt.model,
            adam,
            step: ckpt.meta.step,
            loss_tail: ckpt.meta.loss_tail.into(),
            best_loss: ckpt.meta.best_loss,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Reasoner {
        &self.model
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// One optimizer step on a fresh batch.
    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let cfg = &self.config;
        let (d_cur, k_cur) = cfg.stage(self.step);
        let mut rng = RngStream::for_purpose(cfg.seed, "train-batch", self.step);
        let tcfg = TaskGenConfig {
            k: k_cur,
            ..cfg.taskgen.clone()
        };
        let tasks = sample_tasks(&tcfg, d_cur, cfg.batch_size, &mut rng)?;
        let batch = encode_sequence(&tasks, false)?;
        let at_step = |e: Error| match e {
            Error::NonFinite { stage } => Error::non_finite(format!("training step {}: {stage}", self.step + 1)),
            other => other,
        };
        let loss = self.model.loss_and_grad(&batch).map_err(at_step)?;
        if !loss.is_finite() {
            return Err(Error::non_finite(format!("training step {}: loss", self.step + 1)));
        }
        if let Some(clip) = cfg.grad_clip {
            let norm = self.model.params().grad_norm();
            if norm > clip {
                let s = (clip / norm) as f32;
                for (_, t) in self.model.params_mut().iter_mut() {
                    let g: Vec<f32> = t.grad().expect("grads were just written").iter().map(|v| v * s).collect();
                    t.set_grad(g)?;
                }
            }
        }
        self.adam.step(self.model.params_mut(), cfg.lr)?;
        self.step += 1;
        self.loss_tail.push_back(loss);
        while self.loss_tail.len() > LOSS_TAIL {
            self.loss_tail.pop_front();
        }
        Ok(StepMetrics {
            step: self.step,
            loss,
            d_cur,
            k_cur,
        })
    }

    fn tail_mean(&self) -> Option<f64> {
        (!self.loss_tail.is_empty()).then(|| self.loss_tail.iter().sum::<f64>() / self.loss_tail.len() as f64)
    }

    /// Snapshot of the current state; gradient buffers are not carried over.
    pub fn checkpoint(&self) -> Checkpoint {
        let (d_cur, k_cur) = self.config.stage(self.step.saturating_sub(1));
        let mut model = self.model.clone();
        model.params_mut().clear_grads();
        Checkpoint {
            meta: CheckpointMeta {
                config: self.config.clone(),
                rng_algorithm: RNG_ALGORITHM.to_string(),
                step: self.step,
                d_cur,
                k_cur,
                loss_tail: self.loss_tail.iter().copied().collect(),
                best_loss: self.best_loss,
                adam_step: self.adam.step_count(),
            },
            model,
            adam: Some(self.adam.clone()),
        }
    }

    /// Trains until `until` steps have completed. With an output directory,
    /// appends to `metrics.csv`, writes rotating `ckpt-<step>.tart` files every
    /// `checkpoint_every` steps (keeping the newest `keep_last`), `best.tart`
    /// and `final.tart`. On a non-finite loss the error is returned and
    /// checkpoints already on disk are left untouched.
    pub fn run(
        &mut self,
        until: u64,
        out_dir: Option<&Path>,
        mut on_step: impl FnMut(&StepMetrics),
    ) -> Result<Vec<StepMetrics>> {
        let mut csv = match out_dir {
            Some(dir) => Some(open_metrics(dir)?),
            None => None,
        };
        let mut history = Vec::new();
        while self.step < until {
            let m = self.train_step()?;
            if let Some(w) = csv.as_mut() {
                writeln!(w, "{},{},{},{}", m.step, m.loss, m.d_cur, m.k_cur)?;
            }
            on_step(&m);
            history.push(m);
            if let Some(dir) = out_dir {
                if self.config.checkpoint_every > 0 && self.step % self.config.checkpoint_every == 0 {
                    if let Some(w) = csv.as_mut() {
                        w.flush()?;
                    }
                    self.write_periodic(dir)?;
                }
            }
        }
        if let Some(dir) = out_dir {
            if let Some(mut w) = csv {
                w.flush()?;
            }
            save_checkpoint(&self.checkpoint(), &dir.join("final.tart"))?;
        }
        Ok(history)
    }

    fn write_periodic(&mut self, dir: &Path) -> Result<()> {
        let tail = self.tail_mean();
        if let Some(t) = tail {
            if self.best_loss.is_none_or(|b| t < b) {
                self.best_loss = Some(t);
                save_checkpoint(&self.checkpoint(), &dir.join("best.tart"))?;
            }
        }
        save_checkpoint(&self.checkpoint(), &dir.join(format!("ckpt-{:08}.tart", self.step)))?;
        let mut existing = periodic_checkpoints(dir)?;
        existing.sort();
        let excess = existing.len().saturating_sub(self.config.keep_last.max(1));
        for old in &existing[..excess] {
            fs::remove_file(old)?;
        }
        Ok(())
    }
}

fn periodic_checkpoints(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("ckpt-") && name.ends_with(".tart") {
            out.push(path);
        }
    }
    Ok(out)
}

fn open_metrics(dir: &Path) -> Result<BufWriter<fs::File>> {
    fs::create_dir_all(dir)?;
    let path = dir.join("metrics.csv");
    let fresh = !path.exists();
    let file = OpenOptions::new().create(true).append(true).open(&path)?;
    let mut w = BufWriter::new(file);
    if fresh {
        writeln!(w, "{METRICS_HEADER}")?;
    }
    Ok(w)
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<StepMetrics>,
}

/// Trains from scratch for `cfg.steps` steps.
pub fn train(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg)?;
    let metrics = trainer.run(cfg.steps, out_dir, |_| {})?;
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        metrics,
    })
}
