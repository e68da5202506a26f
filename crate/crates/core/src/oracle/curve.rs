//! Probability-deviation curves against the Bayes predictor.
//!
//! For prefix length `i`, a predictor sees examples `1..=i` of a problem and
//! is scored at the next covariate `x_{i+1}`: deviation `|p̂ − σ(α⟨x,w⟩)|`
//! and correctness of the thresholded prediction against `y_{i+1}`. Both
//! predictors below use identical `(problem, i, query)` cells, so their
//! curves are paired.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::logistic::{fit_logistic, LogisticOptions};
use crate::reasoner::{decide, Reasoner};
use crate::taskgen::{encode_rows, sigmoid, TaskInstance};

/// One scored `(problem, prefix)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefixCell {
    pub problem: usize,
    pub prefix: usize,
    /// Index of the query example within the problem (`= prefix`).
    pub query: usize,
    /// `None` when the predictor failed for this cell.
    pub p_hat: Option<f64>,
    pub p_true: f64,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixPoint {
    pub prefix: usize,
    pub deviation: f64,
    pub accuracy: f64,
    /// Problems that contributed (skipped cells excluded).
    pub n_problems: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixCurve {
    pub points: Vec<PrefixPoint>,
    pub problem_count: usize,
}

pub const PREFIX_CURVE_HEADER: &str = "prefix,deviation,accuracy,n_problems";

impl PrefixCurve {
    /// Averages cells per prefix, in prefix order `1..=max_prefix`.
    pub fn from_cells(cells: &[PrefixCell], max_prefix: usize, problem_count: usize) -> Self {
        let points = (1..=max_prefix)
            .map(|i| {
                let (mut dev, mut acc, mut n) = (0.0, 0.0, 0usize);
                for c in cells.iter().filter(|c| c.prefix == i) {
                    if let Some(p) = c.p_hat {
                        dev += (p - c.p_true).abs();
                        acc += f64::from(u8::from(decide(p) == c.label));
                        n += 1;
                    }
                }
                let denom = n.max(1) as f64;
                PrefixPoint {
                    prefix: i,
                    deviation: dev / denom,
                    accuracy: acc / denom,
                    n_problems: n,
                }
            })
            .collect();
        Self { points, problem_count }
    }

    pub fn at(&self, prefix: usize) -> Option<&PrefixPoint> {
        self.points.iter().find(|p| p.prefix == prefix)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{PREFIX_CURVE_HEADER}\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{},{}", p.prefix, p.deviation, p.accuracy, p.n_problems);
        }
        s
    }
}

fn check_problems(problems: &[TaskInstance], max_prefix: usize) -> Result<()> {
    if max_prefix == 0 {
        return Err(Error::contract("max_prefix must be >= 1"));
    }
    if let Some((i, _)) = problems.iter().enumerate().find(|(_, t)| t.k() < max_prefix + 1) {
        return Err(Error::contract(format!(
            "problem {i} has fewer than max_prefix + 1 = {} examples",
            max_prefix + 1
        )));
    }
    Ok(())
}

/// Ridge logistic regression refit on each prefix.
pub fn prefix_cells_lr(problems: &[TaskInstance], max_prefix: usize, opts: &LogisticOptions) -> Result<Vec<PrefixCell>> {
    check_problems(problems, max_prefix)?;
    let mut cells = Vec::with_capacity(problems.len() * max_prefix);
    for (pi, task) in problems.iter().enumerate() {
        for i in 1..=max_prefix {
            let q = &task.xs[i];
            let p_hat = fit_logistic(&task.xs[..i], &task.ys[..i], opts)
                .and_then(|fit| fit.predict_prob(q))
                .ok()
                .filter(|p| p.is_finite());
            cells.push(PrefixCell {
                problem: pi,
                prefix: i,
                query: i,
                p_hat,
                p_true: task.bayes_prob(q),
                label: task.ys[i],
            });
        }
    }
    Ok(cells)
}

/// Reasoner predictions for every prefix.
///
/// One causal forward pass over `[x₁, y₁, …, x_m, y_m, x_{m+1}]` yields the
/// logit at position `2i` conditioned on exactly the first `i` pairs and the
/// query `x_{i+1}`, i.e. the same quantity as
/// [`Reasoner::predict_prefix`] for every `i ≤ m` at once.
pub fn prefix_cells_reasoner(model: &Reasoner, problems: &[TaskInstance], max_prefix: usize) -> Result<Vec<PrefixCell>> {
    check_problems(problems, max_prefix)?;
    if max_prefix > model.k_max() {
        return Err(Error::contract(format!(
            "prefix {max_prefix} exceeds the model capacity of {} pairs",
            model.k_max()
        )));
    }
    let mut cells = Vec::with_capacity(problems.len() * max_prefix);
    // Bounded batches keep peak memory flat for large problem sets.
    for (chunk_idx, chunk) in problems.chunks(64).enumerate() {
        let rows: Vec<_> = chunk
            .iter()
            .map(|t| (&t.xs[..max_prefix], &t.ys[..max_prefix], Some(t.xs[max_prefix].as_slice())))
            .collect();
        let batch = encode_rows(&rows, model.config().d_in)?;
        let seq = batch.seq_len();
        let logits = model.logits(&batch)?;
        for (bi, task) in chunk.iter().enumerate() {
            for i in 1..=max_prefix {
                let q = &task.xs[i];
                cells.push(PrefixCell {
                    problem: chunk_idx * 64 + bi,
                    prefix: i,
                    query: i,
                    p_hat: Some(sigmoid(f64::from(logits[bi * seq + 2 * i]))),
                    p_true: task.bayes_prob(q),
                    label: task.ys[i],
                });
            }
        }
    }
    Ok(cells)
}

pub fn prefix_curve_lr(problems: &[TaskInstance], max_prefix: usize, opts: &LogisticOptions) -> Result<PrefixCurve> {
    let cells = prefix_cells_lr(problems, max_prefix, opts)?;
    Ok(PrefixCurve::from_cells(&cells, max_prefix, problems.len()))
}

pub fn prefix_curve_reasoner(model: &Reasoner, problems: &[TaskInstance], max_prefix: usize) -> Result<PrefixCurve> {
    let cells = prefix_cells_reasoner(model, problems, max_prefix)?;
    Ok(PrefixCurve::from_cells(&cells, max_prefix, problems.len()))
}
