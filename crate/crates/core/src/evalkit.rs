//! Reports: the performance-gap decomposition, the noise sweep, accuracy
//! against context size and a sliced Wasserstein-1 shift diagnostic.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::oracle::prefix_cells_reasoner;
use crate::reasoner::{decide, Reasoner};
use crate::taskgen::{sample_tasks, TaskGenConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub acc_ft: f64,
    pub acc_lr: f64,
    pub acc_icl: f64,
    /// `acc_ft − acc_lr`.
    pub gap_rep: f64,
    /// `acc_lr − acc_icl`.
    pub gap_reas: f64,
    /// `acc_ft − acc_icl`.
    pub gap_perf: f64,
    /// `gap_reas / gap_perf`, when `gap_perf > 0`.
    pub reas_share: Option<f64>,
}

/// Splits `acc_ft − acc_icl` into a representation and a reasoning part.
pub fn decompose(acc_ft: f64, acc_lr: f64, acc_icl: f64) -> Result<DecompositionReport> {
    for (name, v) in [("acc_ft", acc_ft), ("acc_lr", acc_lr), ("acc_icl", acc_icl)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::contract(format!("{name} = {v} is outside [0, 1]")));
        }
    }
    let gap_rep = acc_ft - acc_lr;
    let gap_reas = acc_lr - acc_icl;
    // Summing the parts keeps the identity exact in floating point.
    let gap_perf = gap_rep + gap_reas;
    Ok(DecompositionReport {
        acc_ft,
        acc_lr,
        acc_icl,
        gap_rep,
        gap_reas,
        gap_perf,
        reas_share: (gap_perf > 0.0).then(|| gap_reas / gap_perf),
    })
}

pub const DEFAULT_ALPHAS: [f64; 4] = [0.5, 1.0, 10.0, 20.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub alpha: f64,
    pub deviation: f64,
    pub accuracy: f64,
    pub n_problems: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweepResult {
    pub prefix: usize,
    pub points: Vec<NoisePoint>,
}

impl NoiseSweepResult {
    pub fn at(&self, alpha: f64) -> Option<&NoisePoint> {
        self.points.iter().find(|p| p.alpha == alpha)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,prefix,deviation,accuracy,n_problems\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{},{},{}", p.alpha, self.prefix, p.deviation, p.accuracy, p.n_problems);
        }
        s
    }
}

/// Deviation from the Bayes probability and accuracy at prefix length
/// `prefix`, on fresh problems per noise level.
pub fn noise_sweep(
    model: &Reasoner,
    alphas: &[f64],
    problems_per_alpha: usize,
    prefix: usize,
    seed: u64,
) -> Result<NoiseSweepResult> {
    if problems_per_alpha == 0 {
        return Err(Error::contract("noise sweep needs at least one problem per alpha"));
    }
    let d = model.config().d_in;
    let points = alphas
        .iter()
        .enumerate()
        .map(|(i, &alpha)| {
            let cfg = TaskGenConfig {
                d,
                k: prefix + 1,
                alpha,
                seed,
            };
            cfg.validate()?;
            let mut rng = RngStream::for_purpose(seed, "noise-sweep", i as u64);
            let problems = sample_tasks(&cfg, d, problems_per_alpha, &mut rng)?;
            let cells = prefix_cells_reasoner(model, &problems, prefix)?;
            let last: Vec<_> = cells.iter().filter(|c| c.prefix == prefix).collect();
            let n = last.len() as f64;
            let mut deviation = 0.0;
            let mut hits = 0usize;
            for c in &last {
                let p = c.p_hat.expect("reasoner cells are always scored");
                deviation += (p - c.p_true).abs();
                hits += usize::from(decide(p) == c.label);
            }
            Ok(NoisePoint {
                alpha,
                deviation: deviation / n,
                accuracy: hits as f64 / n,
                n_problems: last.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NoiseSweepResult { prefix, points })
}

/// One labeled pool to draw context examples from, with its own test points.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    pub train_x: Vec<Vec<f32>>,
    pub train_y: Vec<u8>,
    pub test_x: Vec<Vec<f32>>,
    pub test_y: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KPoint {
    pub k: usize,
    pub accuracy: f64,
    pub n_sets: usize,
}

pub fn k_curve_csv(points: &[KPoint]) -> String {
    let mut s = String::from("k,accuracy,n_sets\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.k, p.accuracy, p.n_sets);
    }
    s
}

/// Mean test accuracy per context size. For each `(set, k)` a uniform
/// subsample of `k` train examples (kept in pool order) is passed to
/// `predict(train_x, train_y, test_x)`, which returns `P(y = 1)` per test
/// point.
pub fn accuracy_vs_k<F>(mut predict: F, sets: &[EvalSet], ks: &[usize], seed: u64) -> Result<Vec<KPoint>>
where
    F: FnMut(&[Vec<f32>], &[u8], &[Vec<f32>]) -> Result<Vec<f64>>,
{
    if sets.is_empty() {
        return Err(Error::contract("accuracy_vs_k needs at least one eval set"));
    }
    ks.iter()
        .map(|&k| {
            let mut total = 0.0;
            for (si, set) in sets.iter().enumerate() {
                if k > set.train_x.len() {
                    return Err(Error::contract(format!(
                        "k = {k} exceeds the {} train examples of set {si}",
                        set.train_x.len()
                    )));
                }
                let mut rng = RngStream::for_purpose(seed, "accuracy-vs-k", ((si as u64) << 32) | k as u64);
                let mut idx = rng.sample_indices(set.train_x.len(), k);
                idx.sort_unstable();
                let xs: Vec<Vec<f32>> = idx.iter().map(|&i| set.train_x[i].clone()).collect();
                let ys: Vec<u8> = idx.iter().map(|&i| set.train_y[i]).collect();
                let probs = predict(&xs, &ys, &set.test_x)?;
                if probs.len() != set.test_y.len() || probs.is_empty() {
                    return Err(Error::contract(format!(
                        "predictor returned {} probabilities for {} test points",
                        probs.len(),
                        set.test_y.len()
                    )));
                }
                let hits = probs.iter().zip(&set.test_y).filter(|(&p, &y)| decide(p) == y).count();
                total += hits as f64 / probs.len() as f64;
            }
            Ok(KPoint {
                k,
                accuracy: total / sets.len() as f64,
                n_sets: sets.len(),
            })
        })
        .collect()
}

pub const DEFAULT_PROJECTIONS: usize = 128;
const QUANTILE_GRID: usize = 1024;

/// 1-D Wasserstein-1 distance between two sorted samples.
fn w1_sorted(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == b.len() {
        return a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    }
    let quantile = |s: &[f64], t: f64| {
        let pos = t * (s.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(s.len() - 1);
        s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
    };
    (0..QUANTILE_GRID)
        .map(|j| {
            let t = (j as f64 + 0.5) / QUANTILE_GRID as f64;
            (quantile(a, t) - quantile(b, t)).abs()
        })
        .sum::<f64>()
        / QUANTILE_GRID as f64
}

/// Mean 1-D W1 between projections of `a` and `b` onto `n_projections`
/// random unit directions.
pub fn sliced_w1(a: &[Vec<f32>], b: &[Vec<f32>], n_projections: usize, seed: u64) -> Result<f64> {
    let (Some(fa), Some(_)) = (a.first(), b.first()) else {
        return Err(Error::contract("sliced_w1 needs two nonempty sample sets"));
    };
    let dim = fa.len();
    if dim == 0 {
        return Err(Error::contract("sliced_w1 needs samples of positive dimension"));
    }
    if a.iter().chain(b).any(|x| x.len() != dim) {
        return Err(Error::contract("sliced_w1 samples differ in dimension"));
    }
    if n_projections == 0 {
        return Err(Error::contract("sliced_w1 needs at least one projection"));
    }
    let mut rng = RngStream::for_purpose(seed, "sliced-w1", 0);
    let project = |set: &[Vec<f32>], u: &[f64]| {
        let mut p: Vec<f64> = set
            .iter()
            .map(|x| x.iter().zip(u).map(|(&xi, ui)| f64::from(xi) * ui).sum())
            .collect();
        p.sort_by(f64::total_cmp);
        p
    };
    let mut total = 0.0;
    for _ in 0..n_projections {
        let u = loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect::<Vec<_>>();
            }
        };
        total += w1_sorted(&project(a, &u), &project(b, &u));
    }
    Ok(total / n_projections as f64)
}
