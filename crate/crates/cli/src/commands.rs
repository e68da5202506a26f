use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tart_core::compose::{fit_pca, probe_predict, read_emb, tart_predict, EmbeddingSet};
use tart_core::evalkit::{self, accuracy_vs_k, k_curve_csv, noise_sweep, sliced_w1, EvalSet};
use tart_core::numerics::RngStream;
use tart_core::oracle::{prefix_curve_lr, prefix_curve_reasoner};
use tart_core::reasoner::Reasoner;
use tart_core::taskgen::{sample_tasks, TaskGenConfig, TaskInstance};
use tart_core::trainer::{load_checkpoint, Checkpoint, Trainer};

use crate::config::RunConfig;
use crate::CliError;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

pub struct Context {
    cfg: RunConfig,
    threads: usize,
}

impl Context {
    pub fn new(cfg: RunConfig, threads: usize) -> Result<Self, CliError> {
        fs::create_dir_all(&cfg.output_dir)
            .map_err(|e| CliError::input(format!("cannot create {}: {e}", cfg.output_dir.display())))?;
        Ok(Self { cfg, threads })
    }

    /// `<stem>-s<seed>-<version>.<ext>` inside the output directory.
    fn stamped(&self, stem: &str, ext: &str) -> PathBuf {
        self.cfg
            .output_dir
            .join(format!("{stem}-s{}-{VERSION}.{ext}", self.cfg.seed))
    }

    fn write(&self, path: &Path, contents: &str) -> Result<(), CliError> {
        fs::write(path, contents).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
    }

    /// Writes the resolved config echo and the command's JSON report.
    fn finish(&self, command: &str, result: Value) -> Result<PathBuf, CliError> {
        let echo = serde_json::to_string_pretty(&self.cfg).expect("config serializes");
        self.write(&self.stamped("resolved-config", "json"), &echo)?;
        let report = json!({
            "command": command,
            "version": VERSION,
            "threads": self.threads,
            "config": self.cfg,
            "result": result,
        });
        let path = self.stamped(&format!("{command}-report"), "json");
        self.write(&path, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
        Ok(path)
    }
}

fn load_model(path: &Path) -> Result<Checkpoint, CliError> {
    load_checkpoint(path).map_err(|e| {
        let wrapped = CliError::from(e);
        CliError {
            message: format!("{}: {}", path.display(), wrapped.message),
            ..wrapped
        }
    })
}

fn load_emb(path: &Path) -> Result<EmbeddingSet, CliError> {
    read_emb(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Largest prefix the checkpoint was trained to score.
fn default_prefix(ckpt: &Checkpoint) -> usize {
    let trained = ckpt.meta.config.taskgen.k.saturating_sub(1).max(1);
    trained.min(ckpt.model.k_max())
}

#[derive(Serialize, Deserialize)]
struct GenProblem {
    w: Vec<f32>,
    xs: Vec<Vec<f32>>,
    ys: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct GenFile {
    d: usize,
    k: usize,
    alpha: f64,
    seed: u64,
    problems: Vec<GenProblem>,
}

impl GenFile {
    fn into_tasks(self) -> Result<Vec<TaskInstance>, CliError> {
        let (d, alpha) = (self.d, self.alpha);
        self.problems
            .into_iter()
            .map(|p| {
                let t = TaskInstance {
                    w: p.w,
                    alpha,
                    xs: p.xs,
                    ys: p.ys,
                    active_dims: d,
                };
                t.validate()?;
                Ok(t)
            })
            .collect()
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Number of problems (default: eval.problems).
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
}

pub fn gen(mut ctx: Context, a: GenArgs) -> Result<(), CliError> {
    let t = &mut ctx.cfg.taskgen;
    t.d = a.d.unwrap_or(t.d);
    t.k = a.k.unwrap_or(t.k);
    t.alpha = a.alpha.unwrap_or(t.alpha);
    let tcfg = t.clone();
    tcfg.validate()?;
    let count = a.count.unwrap_or(ctx.cfg.eval.problems);
    let mut rng = RngStream::for_purpose(ctx.cfg.seed, "gen", 0);
    let tasks = sample_tasks(&tcfg, tcfg.d, count, &mut rng)?;
    let file = GenFile {
        d: tcfg.d,
        k: tcfg.k,
        alpha: tcfg.alpha,
        seed: tcfg.seed,
        problems: tasks
            .into_iter()
            .map(|t| GenProblem {
                w: t.w,
                xs: t.xs,
                ys: t.ys,
            })
            .collect(),
    };
    let path = ctx.stamped("problems", "json");
    ctx.write(&path, &serde_json::to_string(&file).expect("problems serialize"))?;
    println!("wrote {count} problems (d={}, k={}, alpha={}) to {}", tcfg.d, tcfg.k, tcfg.alpha, path.display());
    ctx.finish("gen", json!({ "problems_file": path, "count": count }))?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Total optimizer steps (default: trainer.steps).
    #[arg(long)]
    steps: Option<u64>,
    /// Continue from a checkpoint with optimizer state; its stored config is used.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print a progress line every N steps (0 disables).
    #[arg(long, default_value_t = 100)]
    log_every: u64,
}

pub fn train(mut ctx: Context, a: TrainArgs) -> Result<(), CliError> {
    if let Some(s) = a.steps {
        ctx.cfg.trainer.steps = s;
    }
    let mut trainer = match &a.resume {
        Some(path) => {
            let ckpt = load_model(path)?;
            let stored = &ckpt.meta.config;
            ctx.cfg.seed = stored.seed;
            ctx.cfg.reasoner = stored.reasoner.clone();
            ctx.cfg.taskgen = stored.taskgen.clone();
            let steps = ctx.cfg.trainer.steps;
            ctx.cfg.trainer = crate::config::TrainerSection {
                steps,
                batch_size: stored.batch_size,
                lr: stored.lr,
                checkpoint_every: stored.checkpoint_every,
                keep_last: stored.keep_last,
                curriculum: stored.curriculum,
                schedule: stored.schedule.clone(),
                grad_clip: stored.grad_clip,
                adam: stored.adam,
            };
            Trainer::resume(ckpt)?
        }
        None => Trainer::new(&ctx.cfg.train_config())?,
    };
    let until = ctx.cfg.trainer.steps;
    let start = trainer.step();
    let mut window = (0.0, 0u64);
    let history = trainer.run(until, Some(&ctx.cfg.output_dir), |m| {
        window.0 += m.loss;
        window.1 += 1;
        if a.log_every > 0 && m.step % a.log_every == 0 {
            println!(
                "step {:>6}  loss {:.4}  d_cur {}  k_cur {}",
                m.step,
                window.0 / window.1 as f64,
                m.d_cur,
                m.k_cur
            );
            window = (0.0, 0);
        }
    })?;
    let tail: Vec<f64> = history.iter().rev().take(100).map(|m| m.loss).collect();
    let tail_mean = (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64);
    let final_ckpt = ctx.cfg.output_dir.join("final.tart");
    println!(
        "trained steps {}..{}; final checkpoint {}",
        start,
        trainer.step(),
        final_ckpt.display()
    );
    ctx.finish(
        "train",
        json!({
            "start_step": start,
            "end_step": trainer.step(),
            "tail_mean_loss": tail_mean,
            "checkpoint": final_ckpt,
            "metrics": ctx.cfg.output_dir.join("metrics.csv"),
        }),
    )?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalSynArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Problems written by `tart gen`; fresh problems are sampled otherwise.
    #[arg(long)]
    problems: Option<PathBuf>,
    #[arg(long)]
    max_prefix: Option<usize>,
}

pub fn eval_syn(mut ctx: Context, a: EvalSynArgs) -> Result<(), CliError> {
    let ckpt = load_model(&a.checkpoint)?;
    let model = &ckpt.model;
    let tasks = match &a.problems {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
            let file: GenFile =
                serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            file.into_tasks()?
        }
        None => Vec::new(),
    };
    let mut max_prefix = a
        .max_prefix
        .or(ctx.cfg.eval.max_prefix)
        .unwrap_or_else(|| default_prefix(&ckpt));
    if let Some(k) = tasks.iter().map(TaskInstance::k).min() {
        if a.max_prefix.is_none() && ctx.cfg.eval.max_prefix.is_none() {
            max_prefix = max_prefix.min(k.saturating_sub(1));
        }
    }
    ctx.cfg.eval.max_prefix = Some(max_prefix);
    let tasks = if a.problems.is_some() {
        tasks
    } else {
        let tcfg = TaskGenConfig {
            d: model.config().d_in,
            k: max_prefix + 1,
            alpha: ctx.cfg.taskgen.alpha,
            seed: ctx.cfg.seed,
        };
        let mut rng = RngStream::for_purpose(ctx.cfg.seed, "eval-syn", 0);
        sample_tasks(&tcfg, tcfg.d, ctx.cfg.eval.problems, &mut rng)?
    };
    if tasks.is_empty() {
        return Err(CliError::input("no evaluation problems"));
    }
    let tart = prefix_curve_reasoner(model, &tasks, max_prefix)?;
    let lr = prefix_curve_lr(&tasks, max_prefix, &ctx.cfg.eval.logistic)?;
    let tart_path = ctx.stamped("prefix-curve-reasoner", "csv");
    let lr_path = ctx.stamped("prefix-curve-lr", "csv");
    ctx.write(&tart_path, &tart.to_csv())?;
    ctx.write(&lr_path, &lr.to_csv())?;
    let last = (tart.at(max_prefix).expect("curve covers max_prefix"), lr.at(max_prefix).expect("curve covers max_prefix"));
    println!(
        "prefix {max_prefix}: reasoner deviation {:.4} accuracy {:.4} | logistic regression deviation {:.4} accuracy {:.4}",
        last.0.deviation, last.0.accuracy, last.1.deviation, last.1.accuracy
    );
    ctx.finish(
        "eval-syn",
        json!({ "reasoner": tart, "logistic_regression": lr, "csv": [tart_path, lr_path] }),
    )?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct SweepNoiseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    #[arg(long)]
    problems_per_alpha: Option<usize>,
    #[arg(long)]
    prefix: Option<usize>,
}

pub fn sweep_noise(mut ctx: Context, a: SweepNoiseArgs) -> Result<(), CliError> {
    let ckpt = load_model(&a.checkpoint)?;
    if let Some(al) = a.alphas {
        ctx.cfg.eval.alphas = al;
    }
    if let Some(n) = a.problems_per_alpha {
        ctx.cfg.eval.problems_per_alpha = n;
    }
    let prefix = a.prefix.or(ctx.cfg.eval.max_prefix).unwrap_or_else(|| default_prefix(&ckpt));
    ctx.cfg.eval.max_prefix = Some(prefix);
    let e = &ctx.cfg.eval;
    let result = noise_sweep(&ckpt.model, &e.alphas, e.problems_per_alpha, prefix, ctx.cfg.seed)?;
    let path = ctx.stamped("noise-sweep", "csv");
    ctx.write(&path, &result.to_csv())?;
    for p in &result.points {
        println!("alpha {:>6}: deviation {:.4} accuracy {:.4}", p.alpha, p.deviation, p.accuracy);
    }
    ctx.finish("sweep-noise", json!({ "sweep": result, "csv": path }))?;
    Ok(())
}

/// Components usable for `n` rows of width `dim`, also capped by `cap`.
fn components_for(requested: usize, n: usize, dim: usize, cap: usize) -> Result<usize, CliError> {
    let r = requested.min(n.saturating_sub(1)).min(dim).min(cap);
    if r == 0 {
        return Err(CliError::input(format!("cannot fit PCA to {n} rows of width {dim}")));
    }
    Ok(r)
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[arg(long)]
    train: PathBuf,
    /// Held-out embeddings; training accuracy is reported without it.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    components: Option<usize>,
}

pub fn probe(mut ctx: Context, a: ProbeArgs) -> Result<(), CliError> {
    let train = load_emb(&a.train)?;
    let test = match &a.test {
        Some(p) => load_emb(p)?,
        None => train.clone(),
    };
    if let Some(c) = a.components {
        ctx.cfg.compose.components = c;
    }
    let labels = test.require_labels("probe evaluation")?.to_vec();
    let r = components_for(ctx.cfg.compose.components, train.len(), train.dim(), usize::MAX)?;
    let pca = fit_pca(&train, r)?;
    let probs = probe_predict(&pca, &train, &test, &ctx.cfg.eval.logistic)?;
    let acc = tart_core::compose::accuracy(&probs, &labels)?;
    let split = if a.test.is_some() { "test" } else { "train" };
    println!("probe {split} accuracy {acc:.4} (r = {r}, n_train = {})", train.len());
    ctx.finish("probe", json!({ "accuracy": acc, "split": split, "components": r, "n_train": train.len() }))?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct ComposeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Comma-separated in-context sizes.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long)]
    components: Option<usize>,
}

pub fn compose(mut ctx: Context, a: ComposeArgs) -> Result<(), CliError> {
    let ckpt = load_model(&a.checkpoint)?;
    let model: &Reasoner = &ckpt.model;
    let train = load_emb(&a.train)?;
    let test = load_emb(&a.test)?;
    if train.dim() != test.dim() {
        return Err(CliError::input(format!(
            "train dimension {} differs from test dimension {}",
            train.dim(),
            test.dim()
        )));
    }
    if let Some(ks) = a.ks {
        ctx.cfg.compose.ks = ks;
    }
    if let Some(c) = a.components {
        ctx.cfg.compose.components = c;
    }
    // Larger requests are served by a seeded uniform subsample of size k_max.
    let cap = train.len().min(model.k_max());
    let mut ks: Vec<usize> = ctx.cfg.compose.ks.iter().map(|&k| k.min(cap)).filter(|&k| k >= 2).collect();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(CliError::input("no usable in-context size (need at least 2 train examples)"));
    }
    let set = EvalSet {
        train_x: train.vectors().to_vec(),
        train_y: train.require_labels("compose")?.to_vec(),
        test_x: test.vectors().to_vec(),
        test_y: test.require_labels("compose")?.to_vec(),
    };
    let (requested, d_in, dim) = (ctx.cfg.compose.components, model.config().d_in, train.dim());
    let logistic = ctx.cfg.eval.logistic;
    let fit = |xs: &[Vec<f32>], ys: &[u8], qs: &[Vec<f32>], width_cap: usize| {
        let tr = EmbeddingSet::new(dim, xs.to_vec(), Some(ys.to_vec()), "")?;
        let te = EmbeddingSet::new(dim, qs.to_vec(), None, "")?;
        let r = requested.min(xs.len() - 1).min(dim).min(width_cap);
        Ok::<_, tart_core::Error>((fit_pca(&tr, r)?, tr, te))
    };
    let tart_curve = accuracy_vs_k(
        |xs, ys, qs| {
            let (pca, tr, te) = fit(xs, ys, qs, d_in)?;
            tart_predict(model, &pca, &tr, &te)
        },
        std::slice::from_ref(&set),
        &ks,
        ctx.cfg.seed,
    )?;
    let probe_curve = accuracy_vs_k(
        |xs, ys, qs| {
            let (pca, tr, te) = fit(xs, ys, qs, usize::MAX)?;
            probe_predict(&pca, &tr, &te, &logistic)
        },
        std::slice::from_ref(&set),
        &ks,
        ctx.cfg.seed,
    )?;
    let tart_path = ctx.stamped("compose-reasoner", "csv");
    let probe_path = ctx.stamped("compose-probe", "csv");
    ctx.write(&tart_path, &k_curve_csv(&tart_curve))?;
    ctx.write(&probe_path, &k_curve_csv(&probe_curve))?;
    for (t, p) in tart_curve.iter().zip(&probe_curve) {
        println!("k {:>4}: reasoner accuracy {:.4} | probe accuracy {:.4}", t.k, t.accuracy, p.accuracy);
    }
    ctx.finish(
        "compose",
        json!({ "reasoner": tart_curve, "probe": probe_curve, "csv": [tart_path, probe_path] }),
    )?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    #[arg(long)]
    acc_ft: Option<f64>,
    #[arg(long)]
    acc_lr: Option<f64>,
    #[arg(long)]
    acc_icl: Option<f64>,
    /// JSON file with `acc_ft`, `acc_lr` and `acc_icl`; flags override it.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct Accuracies {
    acc_ft: Option<f64>,
    acc_lr: Option<f64>,
    acc_icl: Option<f64>,
}

pub fn decompose(ctx: Context, a: DecomposeArgs) -> Result<(), CliError> {
    let file = match &a.input {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
        }
        None => Accuracies::default(),
    };
    let pick = |flag: Option<f64>, stored: Option<f64>, name: &str| {
        flag.or(stored)
            .ok_or_else(|| CliError::usage(format!("missing --{name} (or `{}` in --input)", name.replace('-', "_"))))
    };
    let r = evalkit::decompose(
        pick(a.acc_ft, file.acc_ft, "acc-ft")?,
        pick(a.acc_lr, file.acc_lr, "acc-lr")?,
        pick(a.acc_icl, file.acc_icl, "acc-icl")?,
    )?;
    println!("gap_rep {:.4}", r.gap_rep);
    println!("gap_reas {:.4}", r.gap_reas);
    println!("gap_perf {:.4}", r.gap_perf);
    if let Some(s) = r.reas_share {
        println!("reasoning share {:.4}", s);
    }
    ctx.finish("decompose", serde_json::to_value(&r).expect("report serializes"))?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct W1Args {
    #[arg(long)]
    emb: PathBuf,
    /// PCA components (default: reasoner.d_in).
    #[arg(long)]
    components: Option<usize>,
    /// Reference Gaussian sample size (default: rows in the file).
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    projections: Option<usize>,
}

pub fn w1(mut ctx: Context, a: W1Args) -> Result<(), CliError> {
    let set = load_emb(&a.emb)?;
    if let Some(p) = a.projections {
        ctx.cfg.eval.projections = p;
    }
    let requested = a.components.unwrap_or(ctx.cfg.reasoner.d_in);
    let r = components_for(requested, set.len(), set.dim(), usize::MAX)?;
    let pca = fit_pca(&set, r)?;
    let white = pca.transform_padded(&set, r)?;
    let n = a.samples.unwrap_or(set.len());
    if n == 0 {
        return Err(CliError::usage("--samples must be positive"));
    }
    let mut rng = RngStream::for_purpose(ctx.cfg.seed, "w1-reference", 0);
    let reference: Vec<Vec<f32>> = (0..n).map(|_| (0..r).map(|_| rng.normal() as f32).collect()).collect();
    let value = sliced_w1(&white, &reference, ctx.cfg.eval.projections, ctx.cfg.seed)?;
    println!("sliced W1 {value:.6} (r = {r}, n = {}, reference n = {n})", set.len());
    ctx.finish(
        "w1",
        json!({ "sliced_w1": value, "components": r, "rows": set.len(), "reference_rows": n }),
    )?;
    Ok(())
}

