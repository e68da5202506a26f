//! Decoder-only transformer over interleaved `(x, y)` token sequences.
//!
//! GPT-2 style pre-norm blocks: a linear token projection, learned absolute
//! positions, `layers` × {LN → causal MHSA → residual, LN → 4× GELU MLP →
//! residual}, a final LN and a linear read-out to one logit per position.
//! No dropout and no weight tying.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParameterStore, RngStream, Scalar, Tensor, Var};
use crate::taskgen::{encode_rows, sigmoid, SequenceBatch};

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReasonerConfig {
    pub d_in: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    /// Learned positions; `2·k_max + 1` leaves room for a query token.
    pub max_positions: usize,
}

impl Default for ReasonerConfig {
    /// Desk-scale model: trains on one CPU core in minutes.
    fn default() -> Self {
        Self {
            d_in: 8,
            hidden: 64,
            layers: 4,
            heads: 4,
            max_positions: 2 * 32 + 1,
        }
    }
}

impl ReasonerConfig {
    /// The 256-wide, 12-layer, 8-head configuration with `d_in = 16` and room
    /// for 256 examples.
    pub fn full_scale() -> Self {
        Self {
            d_in: 16,
            hidden: 256,
            layers: 12,
            heads: 8,
            max_positions: 2 * 256 + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in < 2 || self.hidden == 0 || self.layers == 0 || self.heads == 0 {
            return Err(Error::contract(format!("invalid reasoner config {self:?}")));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::contract(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.max_positions < 2 {
            return Err(Error::contract("max_positions must be >= 2"));
        }
        Ok(())
    }

    /// Largest number of labeled pairs that still leaves room for a query.
    pub fn k_max(&self) -> usize {
        (self.max_positions - 1) / 2
    }

    /// Parameter shapes in the order they are created.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (c, f) = (self.hidden, 4 * self.hidden);
        let mut v = vec![
            ("wte.weight".to_string(), vec![self.d_in, c]),
            ("wte.bias".to_string(), vec![c]),
            ("wpe".to_string(), vec![self.max_positions, c]),
        ];
        for l in 0..self.layers {
            let p = layer_prefix(l);
            v.extend([
                (format!("{p}ln_1.gain"), vec![c]),
                (format!("{p}ln_1.bias"), vec![c]),
                (format!("{p}attn.qkv.weight"), vec![c, 3 * c]),
                (format!("{p}attn.qkv.bias"), vec![3 * c]),
                (format!("{p}attn.proj.weight"), vec![c, c]),
                (format!("{p}attn.proj.bias"), vec![c]),
                (format!("{p}ln_2.gain"), vec![c]),
                (format!("{p}ln_2.bias"), vec![c]),
                (format!("{p}mlp.fc.weight"), vec![c, f]),
                (format!("{p}mlp.fc.bias"), vec![f]),
                (format!("{p}mlp.proj.weight"), vec![f, c]),
                (format!("{p}mlp.proj.bias"), vec![c]),
            ]);
        }
        v.extend([
            ("ln_f.gain".to_string(), vec![c]),
            ("ln_f.bias".to_string(), vec![c]),
            ("head.weight".to_string(), vec![c, 1]),
            ("head.bias".to_string(), vec![1]),
        ]);
        v
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

fn layer_prefix(l: usize) -> String {
    format!("h.{l:02}.")
}

/// Class decision; ties go to class 1.
pub fn decide(p: f64) -> u8 {
    u8::from(p >= 0.5)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reasoner {
    config: ReasonerConfig,
    params: ParameterStore,
}

impl Reasoner {
    /// Weights `N(0, 0.02²)`, biases zero, layer-norm gains one.
    pub fn init(config: &ReasonerConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterStore::new();
        for (name, shape) in config.param_shapes() {
            let t = if name.ends_with(".gain") {
                Tensor::full(&shape, 1.0)?
            } else if name.ends_with(".bias") {
                Tensor::zeros(&shape)?
            } else {
                Tensor::gaussian_scaled(rng, &shape, INIT_STD)?
            };
            params.insert(name, t)?;
        }
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    /// Wraps existing parameters after checking every expected shape.
    pub fn from_params(config: &ReasonerConfig, params: ParameterStore) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if params.len() != shapes.len() {
            return Err(Error::contract(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                params.len()
            )));
        }
        for (name, shape) in &shapes {
            let t = params.get(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: "reasoner parameter",
                    lhs: shape.clone(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    pub fn config(&self) -> &ReasonerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParameterStore {
        self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    pub fn k_max(&self) -> usize {
        self.config.k_max()
    }

    fn check_batch(&self, batch: &SequenceBatch) -> Result<()> {
        if batch.d() != self.config.d_in {
            return Err(Error::Shape {
                op: "reasoner input",
                lhs: vec![self.config.d_in],
                rhs: vec![batch.d()],
            });
        }
        if batch.seq_len() > self.config.max_positions {
            return Err(Error::contract(format!(
                "sequence length {} exceeds max_positions {}",
                batch.seq_len(),
                self.config.max_positions
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `g`; returns logits of shape
    /// `[batch*seq, 1]`.
    pub fn forward_graph<T: Scalar>(&self, g: &mut Graph<T>, batch: &SequenceBatch) -> Result<Var> {
        self.check_batch(batch)?;
        let (b, t, d) = (batch.batch(), batch.seq_len(), batch.d());
        let cfg = &self.config;
        let p = &self.params;
        let tokens = batch.tokens.data().iter().map(|&v| T::from_f32(v)).collect();
        let x = g.input(&[b * t, d], tokens)?;

        let w = g.param_from(p, "wte.weight")?;
        let bias = g.param_from(p, "wte.bias")?;
        let h = g.matmul(x, w)?;
        let h = g.add_bias(h, bias)?;
        let wpe = g.param_from(p, "wpe")?;
        let mut h = g.add_positions(h, wpe, t)?;

        for l in 0..cfg.layers {
            let pre = layer_prefix(l);
            let name = |s: &str| format!("{pre}{s}");
            let a = layer_norm(g, p, h, &name("ln_1"))?;
            let qkv = linear(g, p, a, &name("attn.qkv"))?;
            let att = g.causal_attention(qkv, b, t, cfg.heads)?;
            let proj = linear(g, p, att, &name("attn.proj"))?;
            h = g.add(h, proj)?;

            let m = layer_norm(g, p, h, &name("ln_2"))?;
            let f = linear(g, p, m, &name("mlp.fc"))?;
            let f = g.gelu(f);
            let o = linear(g, p, f, &name("mlp.proj"))?;
            h = g.add(h, o)?;
        }
        let h = layer_norm(g, p, h, "ln_f")?;
        linear(g, p, h, "head")
    }

    /// Records forward pass plus the mean masked cross-entropy.
    pub fn loss_graph<T: Scalar>(&self, g: &mut Graph<T>, batch: &SequenceBatch) -> Result<Var> {
        let (b, t) = (batch.batch(), batch.seq_len());
        let scored: Vec<usize> = (0..t).filter(|&p| batch.loss_mask[p]).collect();
        if scored.is_empty() {
            return Err(Error::contract("loss mask selects no positions"));
        }
        if batch.labels.len() != b || batch.labels.iter().any(|l| l.len() != scored.len()) {
            return Err(Error::contract("labels do not match the loss mask"));
        }
        let logits = self.forward_graph(g, batch)?;
        let w = T::from_f64(1.0 / (b * scored.len()) as f64);
        let mut targets = vec![T::zero(); b * t];
        let mut weights = vec![T::zero(); b * t];
        for (row, labels) in batch.labels.iter().enumerate() {
            for (&pos, &y) in scored.iter().zip(labels) {
                targets[row * t + pos] = T::from_f64(f64::from(y));
                weights[row * t + pos] = w;
            }
        }
        g.masked_bce(logits, targets, weights)
    }

    /// Per-position logits, row-major `[batch, seq]`.
    pub fn logits(&self, batch: &SequenceBatch) -> Result<Vec<f32>> {
        let mut g = Graph::<f32>::new();
        let out = self.forward_graph(&mut g, batch)?;
        let v = g.value(out).to_vec();
        if v.iter().any(|z| !z.is_finite()) {
            return Err(Error::non_finite("reasoner forward"));
        }
        Ok(v)
    }

    pub fn loss(&self, batch: &SequenceBatch) -> Result<f64> {
        let mut g = Graph::<f32>::new();
        let loss = self.loss_graph(&mut g, batch)?;
        Ok(f64::from(g.value(loss)[0]))
    }

    /// Loss value; gradients are written into the parameter grad buffers.
    pub fn loss_and_grad(&mut self, batch: &SequenceBatch) -> Result<f64> {
        let mut g = Graph::<f32>::new();
        let loss = self.loss_graph(&mut g, batch)?;
        let value = f64::from(g.value(loss)[0]);
        g.backward_into(loss, &mut self.params)?;
        Ok(value)
    }

    /// `P(y = 1)` for `x_test` after the labeled prefix `train_pairs`.
    pub fn predict_prefix(&self, train_pairs: &[(Vec<f32>, u8)], x_test: &[f32]) -> Result<f64> {
        let xs: Vec<Vec<f32>> = train_pairs.iter().map(|(x, _)| x.clone()).collect();
        let ys: Vec<u8> = train_pairs.iter().map(|&(_, y)| y).collect();
        Ok(self.predict_queries(&xs, &ys, std::slice::from_ref(&x_test.to_vec()))?[0])
    }

    /// Predicts each query independently against the same labeled prefix,
    /// evaluated as one batch.
    pub fn predict_queries(&self, xs: &[Vec<f32>], ys: &[u8], queries: &[Vec<f32>]) -> Result<Vec<f64>> {
        if xs.len() != ys.len() {
            return Err(Error::contract("prefix xs and ys lengths differ"));
        }
        if xs.len() > self.k_max() {
            return Err(Error::contract(format!(
                "{} in-context pairs exceed the model capacity of {}",
                xs.len(),
                self.k_max()
            )));
        }
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let rows: Vec<_> = queries.iter().map(|q| (xs, ys, Some(q.as_slice()))).collect();
        let batch = encode_rows(&rows, self.config.d_in)?;
        let t = batch.seq_len();
        let logits = self.logits(&batch)?;
        Ok((0..queries.len()).map(|b| sigmoid(f64::from(logits[b * t + t - 1]))).collect())
    }
}

fn linear<T: Scalar>(g: &mut Graph<T>, p: &ParameterStore, x: Var, name: &str) -> Result<Var> {
    let w = g.param_from(p, &format!("{name}.weight"))?;
    let b = g.param_from(p, &format!("{name}.bias"))?;
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

fn layer_norm<T: Scalar>(g: &mut Graph<T>, p: &ParameterStore, x: Var, name: &str) -> Result<Var> {
    let gain = g.param_from(p, &format!("{name}.gain"))?;
    let bias = g.param_from(p, &format!("{name}.bias"))?;
    g.layer_norm(x, gain, bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::{encode_sequence, sample_tasks, TaskGenConfig};

    fn tiny() -> ReasonerConfig {
        ReasonerConfig {
            d_in: 4,
            hidden: 16,
            layers: 2,
            heads: 2,
            max_positions: 9,
        }
    }

    fn tiny_batch(rows: usize, k: usize, seed: u64) -> SequenceBatch {
        let cfg = TaskGenConfig { d: 4, k, alpha: 10.0, seed };
        let tasks = sample_tasks(&cfg, 4, rows, &mut RngStream::new(seed, 99)).unwrap();
        encode_sequence(&tasks, false).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = Reasoner::init(&tiny(), &mut RngStream::new(3, 0)).unwrap();
        let b = Reasoner::init(&tiny(), &mut RngStream::new(3, 0)).unwrap();
        assert!(a.params().bitwise_eq(b.params()));
    }

    #[test]
    fn init_statistics() {
        let m = Reasoner::init(&ReasonerConfig::default(), &mut RngStream::new(0, 0)).unwrap();
        let mut vals = Vec::new();
        for (name, t) in m.params().iter() {
            if name.ends_with(".weight") || name == "wpe" {
                vals.extend(t.data().iter().map(|&v| f64::from(v)));
            } else if name.ends_with(".gain") {
                assert!(t.data().iter().all(|&v| v == 1.0));
            } else {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        assert!((var / (INIT_STD * INIT_STD) - 1.0).abs() < 0.2, "var = {var}");
    }

    #[test]
    fn invalid_configs() {
        let mut c = tiny();
        c.heads = 3;
        assert!(c.validate().is_err());
        c = tiny();
        c.max_positions = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn overlong_sequence_rejected() {
        let m = Reasoner::init(&tiny(), &mut RngStream::new(0, 0)).unwrap();
        let batch = tiny_batch(1, 5, 0);
        assert!(matches!(m.logits(&batch), Err(Error::Contract(_))));
        let pairs = vec![(vec![0.0f32; 4], 1u8); 5];
        assert!(m.predict_prefix(&pairs, &[0.0; 4]).is_err());
    }

    #[test]
    fn zero_logits_give_ln2() {
        let mut m = Reasoner::init(&tiny(), &mut RngStream::new(0, 0)).unwrap();
        for v in m.params_mut().get_mut("head.weight").unwrap().data_mut() {
            *v = 0.0;
        }
        let loss = m.loss(&tiny_batch(3, 4, 1)).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn identical_rows_identical_logits() {
        let m = Reasoner::init(&tiny(), &mut RngStream::new(0, 0)).unwrap();
        let one = tiny_batch(1, 4, 5);
        let mut data = one.tokens.data().to_vec();
        data.extend_from_slice(one.tokens.data());
        let two = SequenceBatch {
            tokens: Tensor::new(&[2, 8, 4], data).unwrap(),
            loss_mask: one.loss_mask.clone(),
            labels: vec![one.labels[0].clone(); 2],
        };
        let z = m.logits(&two).unwrap();
        assert_eq!(z[..8], z[8..]);
    }

    #[test]
    fn empty_prefix_near_half() {
        let m = Reasoner::init(&ReasonerConfig::default(), &mut RngStream::new(0, 0)).unwrap();
        let p = m.predict_prefix(&[], &[1.0, -1.0, 0.5, 0.0, 2.0, 0.0, 0.0, 0.3]).unwrap();
        assert!((p - 0.5).abs() < 0.1, "p = {p}");
    }

    #[test]
    fn decision_tie_goes_to_one() {
        assert_eq!(decide(0.5), 1);
        assert_eq!(decide(0.499_999), 0);
    }
}
