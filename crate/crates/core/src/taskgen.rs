//! Gaussian logistic-regression task sampler and sequence encoder.
//!
//! A task draws `w ~ N(0, I)` and `x_i ~ N(0, I)` on the first `active_dims`
//! coordinates (the rest stay exactly zero) and labels
//! `y_i ~ Bernoulli(σ(α·⟨x_i, w⟩))`.
//!
//! Sequences interleave covariate and label tokens, two positions per
//! example: `[x₁, y₁, x₂, y₂, …]`, optionally followed by an unlabeled query
//! `x_test`. A label token is a `d`-vector whose first two coordinates hold
//! the one-hot class (`[1, 0, 0…]` for 0, `[0, 1, 0…]` for 1). Only the
//! covariate positions carry a loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskGenConfig {
    /// Token (input) dimension.
    pub d: usize,
    /// Examples per sequence.
    pub k: usize,
    /// Noise multiplier; larger means cleaner labels.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for TaskGenConfig {
    fn default() -> Self {
        Self {
            d: 8,
            k: 32,
            alpha: 10.0,
            seed: 0,
        }
    }
}

impl TaskGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            // Label tokens need two coordinates for the one-hot class.
            return Err(Error::contract(format!("taskgen d must be >= 2, got {}", self.d)));
        }
        if self.k == 0 {
            return Err(Error::contract("taskgen k must be >= 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::contract(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// One sampled logistic-regression problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub w: Vec<f32>,
    pub alpha: f64,
    /// Row-major `k × d` covariates.
    pub xs: Vec<Vec<f32>>,
    pub ys: Vec<u8>,
    pub active_dims: usize,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

impl TaskInstance {
    pub fn d(&self) -> usize {
        self.w.len()
    }

    pub fn k(&self) -> usize {
        self.xs.len()
    }

    /// Ground-truth `σ(α·⟨x, w⟩)`.
    pub fn bayes_prob(&self, x: &[f32]) -> f64 {
        sigmoid(self.alpha * dot(x, &self.w))
    }

    /// Checks the structural invariants (label domain, zero padding).
    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        if self.xs.len() != self.ys.len() {
            return Err(Error::contract("task xs and ys lengths differ"));
        }
        if self.active_dims == 0 || self.active_dims > d {
            return Err(Error::contract(format!("active_dims {} outside 1..={d}", self.active_dims)));
        }
        if self.xs.iter().any(|x| x.len() != d) {
            return Err(Error::contract("task covariate width differs from w"));
        }
        if self.ys.iter().any(|&y| y > 1) {
            return Err(Error::contract("labels must be 0 or 1"));
        }
        let padded_zero = |v: &[f32]| v[self.active_dims..].iter().all(|&c| c == 0.0);
        if !padded_zero(&self.w) || !self.xs.iter().all(|x| padded_zero(x)) {
            return Err(Error::contract("coordinates beyond active_dims must be zero"));
        }
        Ok(())
    }
}

/// Draws `y ~ Bernoulli(σ(α·⟨x, w⟩))`.
pub fn sample_label(alpha: f64, x: &[f32], w: &[f32], rng: &mut RngStream) -> u8 {
    u8::from(rng.bernoulli(sigmoid(alpha * dot(x, w))))
}

/// Samples one task with `cfg.k` examples, live on the first `active_dims`
/// coordinates.
pub fn sample_task(cfg: &TaskGenConfig, active_dims: usize, rng: &mut RngStream) -> Result<TaskInstance> {
    if active_dims == 0 || active_dims > cfg.d {
        return Err(Error::contract(format!("active_dims {active_dims} outside 1..={}", cfg.d)));
    }
    let draw = |rng: &mut RngStream| {
        let mut v = vec![0.0f32; cfg.d];
        for c in v.iter_mut().take(active_dims) {
            *c = rng.normal() as f32;
        }
        v
    };
    let w = draw(rng);
    let mut xs = Vec::with_capacity(cfg.k);
    let mut ys = Vec::with_capacity(cfg.k);
    for _ in 0..cfg.k {
        let x = draw(rng);
        ys.push(sample_label(cfg.alpha, &x, &w, rng));
        xs.push(x);
    }
    Ok(TaskInstance {
        w,
        alpha: cfg.alpha,
        xs,
        ys,
        active_dims,
    })
}

/// Samples `count` tasks from one stream.
pub fn sample_tasks(cfg: &TaskGenConfig, active_dims: usize, count: usize, rng: &mut RngStream) -> Result<Vec<TaskInstance>> {
    (0..count).map(|_| sample_task(cfg, active_dims, rng)).collect()
}

/// Interleaved token sequences for a batch of tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    /// `[batch, seq_len, d]`.
    pub tokens: Tensor,
    /// Length `seq_len`; true at scored covariate positions.
    pub loss_mask: Vec<bool>,
    /// `[batch][k]` targets for the scored positions, in order.
    pub labels: Vec<Vec<u8>>,
}

impl SequenceBatch {
    pub fn batch(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn seq_len(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn d(&self) -> usize {
        self.tokens.shape()[2]
    }

    /// Number of labeled examples per sequence.
    pub fn pairs(&self) -> usize {
        self.labels.first().map_or(0, Vec::len)
    }
}

/// Writes the label token for class `y` into `out` (zeroed beforehand).
pub fn label_token(y: u8, out: &mut [f32]) {
    out[usize::from(y.min(1))] = 1.0;
}

/// Builds a batch from `(pairs, optional query)` rows that share `d` and
/// the number of pairs.
pub fn encode_rows(rows: &[(&[Vec<f32>], &[u8], Option<&[f32]>)], d: usize) -> Result<SequenceBatch> {
    let Some(first) = rows.first() else {
        return Err(Error::contract("cannot encode an empty batch"));
    };
    if d < 2 {
        return Err(Error::contract("token dimension must be >= 2"));
    }
    let k = first.0.len();
    let with_query = first.2.is_some();
    let seq = 2 * k + usize::from(with_query);
    if seq == 0 {
        return Err(Error::contract("sequence would be empty"));
    }
    let mut data = vec![0.0f32; rows.len() * seq * d];
    let mut labels = Vec::with_capacity(rows.len());
    for (b, (xs, ys, query)) in rows.iter().enumerate() {
        if xs.len() != k || ys.len() != k || query.is_some() != with_query {
            return Err(Error::contract("all sequences in a batch need the same number of examples"));
        }
        let seq_data = &mut data[b * seq * d..(b + 1) * seq * d];
        for (i, (x, &y)) in xs.iter().zip(ys.iter()).enumerate() {
            if x.len() != d {
                return Err(Error::Shape {
                    op: "encode",
                    lhs: vec![d],
                    rhs: vec![x.len()],
                });
            }
            seq_data[2 * i * d..(2 * i + 1) * d].copy_from_slice(x);
            label_token(y, &mut seq_data[(2 * i + 1) * d..(2 * i + 2) * d]);
        }
        if let Some(q) = query {
            if q.len() != d {
                return Err(Error::Shape {
                    op: "encode",
                    lhs: vec![d],
                    rhs: vec![q.len()],
                });
            }
            seq_data[2 * k * d..].copy_from_slice(q);
        }
        labels.push(ys.to_vec());
    }
    let loss_mask = (0..seq).map(|p| p % 2 == 0 && p < 2 * k).collect();
    Ok(SequenceBatch {
        tokens: Tensor::new(&[rows.len(), seq, d], data)?,
        loss_mask,
        labels,
    })
}

/// Encodes tasks as interleaved sequences. With `include_test_x`, each
/// task's last example becomes an unlabeled trailing query and the preceding
/// ones form the labeled prefix.
pub fn encode_sequence(tasks: &[TaskInstance], include_test_x: bool) -> Result<SequenceBatch> {
    let Some(first) = tasks.first() else {
        return Err(Error::contract("cannot encode an empty batch"));
    };
    let (d, k) = (first.d(), first.k());
    if tasks.iter().any(|t| t.d() != d || t.k() != k) {
        return Err(Error::contract("all tasks in a batch must share d and k"));
    }
    if include_test_x && k == 0 {
        return Err(Error::contract("a query needs at least one example"));
    }
    let rows: Vec<_> = tasks
        .iter()
        .map(|t| {
            if include_test_x {
                (&t.xs[..k - 1], &t.ys[..k - 1], Some(t.xs[k - 1].as_slice()))
            } else {
                (&t.xs[..], &t.ys[..], None)
            }
        })
        .collect();
    encode_rows(&rows, d)
}

/// Recovers `(xs, ys)` per sequence from the labeled part of a batch.
pub fn decode_sequence(batch: &SequenceBatch) -> Result<Vec<(Vec<Vec<f32>>, Vec<u8>)>> {
    let (seq, d) = (batch.seq_len(), batch.d());
    let k = batch.pairs();
    let data = batch.tokens.data();
    let mut out = Vec::with_capacity(batch.batch());
    for b in 0..batch.batch() {
        let s = &data[b * seq * d..(b + 1) * seq * d];
        let mut xs = Vec::with_capacity(k);
        let mut ys = Vec::with_capacity(k);
        for i in 0..k {
            xs.push(s[2 * i * d..(2 * i + 1) * d].to_vec());
            let yt = &s[(2 * i + 1) * d..(2 * i + 2) * d];
            ys.push(match (yt[0], yt[1]) {
                (1.0, 0.0) => 0,
                (0.0, 1.0) => 1,
                _ => return Err(Error::contract(format!("position {} is not a label token", 2 * i + 1))),
            });
        }
        out.push((xs, ys));
    }
    Ok(out)
}
