//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation eagerly: values are computed when the
//! op is added, and [`Graph::backward`] walks the tape in reverse. All
//! matrices are 2-D row-major; sequences are flattened to `[batch*seq, width]`.
//!
//! The graph is generic over [`Scalar`] so that the exact same forward and
//! backward code can be evaluated in `f64` when checking gradients.

use crate::error::{Error, Result};
use crate::numerics::params::ParameterStore;
use crate::numerics::scalar::{gemm, Scalar};
use crate::numerics::tensor::{matmul_dims, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    AddPositions {
        x: Var,
        table: Var,
        seq: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu {
        x: Var,
        tanh: Vec<T>,
    },
    Softmax(Var),
    CausalAttention {
        qkv: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<T>,
    },
    Sum(Var),
    MaskedBce {
        logits: Var,
        targets: Vec<T>,
        weights: Vec<T>,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
    name: Option<String>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().expect("shapes are non-empty")
}

const GELU_A: f64 = 0.044_715;

fn gelu_inner<T: Scalar>(x: T) -> T {
    T::from_f64((2.0 / std::f64::consts::PI).sqrt()) * (x + T::from_f64(GELU_A) * x * x * x)
}

/// `tanh` through one `exp`; saturates correctly at both ends.
fn tanh_via_exp<T: Scalar>(u: T) -> T {
    let two = T::from_f64(2.0);
    T::one() - two / ((two * u).exp() + T::one())
}

/// GELU (GPT-2 tanh form) given `t = tanh(inner(x))`: value and derivative.
fn gelu_from_tanh<T: Scalar>(x: T, t: T) -> (T, T) {
    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let one = T::one();
    let y = half * x * (one + t);
    let dy = half * (one + t) + half * x * (one - t * t) * c * (one + T::from_f64(3.0) * a * x * x);
    (y, dy)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    fn leaf(&mut self, shape: &[usize], data: Vec<T>, requires_grad: bool) -> Result<Var> {
        if shape.is_empty() || shape.contains(&0) || shape.iter().product::<usize>() != data.len() {
            return Err(shape_err("leaf", shape, &[data.len()]));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, requires_grad))
    }

    /// Constant input; no gradient is computed for it.
    pub fn input(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        self.leaf(shape, data, false)
    }

    /// Anonymous differentiable leaf.
    pub fn variable(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        self.leaf(shape, data, true)
    }

    /// Differentiable leaf bound to a named parameter.
    pub fn param(&mut self, name: &str, tensor: &Tensor) -> Var {
        let data = tensor.data().iter().map(|&v| T::from_f32(v)).collect();
        let v = self.push(tensor.shape().to_vec(), data, Op::Leaf, true);
        self.nodes[v.0].name = Some(name.to_string());
        v
    }

    /// Looks up `name` in `store` and binds it as a parameter.
    pub fn param_from(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        Ok(self.param(name, store.get(name)?))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = matmul_dims(self.shape(a), self.shape(b))?;
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a),
            k as isize,
            1,
            self.value(b),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), rg))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let out = self.value(x).iter().map(|&v| v * c).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, c), rg)
    }

    /// Adds a bias vector along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = last_dim(self.shape(x));
        if self.shape(b) != [n] {
            return Err(shape_err("add_bias", self.shape(x), self.shape(b)));
        }
        let bias = self.value(b);
        let out = self
            .value(x)
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(bias).map(|(&v, &c)| v + c))
            .collect();
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddBias(x, b), rg))
    }

    /// `x[b*seq + t, :] + table[t, :]` for `x` of shape `[batch*seq, width]`.
    pub fn add_positions(&mut self, x: Var, table: Var, seq: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ts = self.shape(table).to_vec();
        if xs.len() != 2 || ts.len() != 2 || xs[1] != ts[1] || seq == 0 || xs[0] % seq != 0 {
            return Err(shape_err("add_positions", &xs, &ts));
        }
        if seq > ts[0] {
            return Err(Error::contract(format!(
                "sequence length {seq} exceeds the {} learned positions",
                ts[0]
            )));
        }
        let w = xs[1];
        let tab = self.value(table);
        let mut out = self.value(x).to_vec();
        for (r, row) in out.chunks_exact_mut(w).enumerate() {
            let t = r % seq;
            for (o, &p) in row.iter_mut().zip(&tab[t * w..(t + 1) * w]) {
                *o = *o + p;
            }
        }
        let rg = self.rg(x) || self.rg(table);
        Ok(self.push(xs, out, Op::AddPositions { x, table, seq }, rg))
    }

    /// Layer normalisation over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let n = last_dim(self.shape(x));
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gain)));
        }
        let eps = T::from_f64(LAYER_NORM_EPS);
        let inv_n = T::from_f64(1.0 / n as f64);
        let rows = self.value(x).len() / n;
        let mut xhat = vec![T::zero(); rows * n];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * n];
        let (g, b) = (self.value(gain), self.value(bias));
        for (r, row) in self.value(x).chunks_exact(n).enumerate() {
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) * inv_n;
            let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) * inv_n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let tanh: Vec<T> = self.value(x).iter().map(|&v| tanh_via_exp(gelu_inner(v))).collect();
        let out = self.value(x).iter().zip(&tanh).map(|(&v, &t)| gelu_from_tanh(v, t).0).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, Op::Gelu { x, tanh }, rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let n = last_dim(self.shape(x));
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, Op::Softmax(x), rg)
    }

    /// Causal multi-head self-attention core.
    ///
    /// `qkv` has shape `[batch*seq, 3*width]` holding the query, key and value
    /// projections side by side; head `h` owns columns `h*dh..(h+1)*dh` of
    /// each. Position `i` attends to positions `j <= i` only. Returns the
    /// concatenated head outputs, shape `[batch*seq, width]`.
    pub fn causal_attention(&mut self, qkv: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let s = self.shape(qkv).to_vec();
        if s.len() != 2 || s[0] != batch * seq || s[1] % 3 != 0 || heads == 0 || (s[1] / 3) % heads != 0 {
            return Err(shape_err("causal_attention", &s, &[batch, seq, heads]));
        }
        let width = s[1] / 3;
        let dh = width / heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let src = self.value(qkv);
        let mut probs = vec![T::zero(); batch * heads * seq * seq];
        let mut out = vec![T::zero(); batch * seq * width];
        let rs_in = (3 * width) as isize;
        for b in 0..batch {
            let base = b * seq * 3 * width;
            for h in 0..heads {
                let q = &src[base + h * dh..];
                let k = &src[base + width + h * dh..];
                let v = &src[base + 2 * width + h * dh..];
                let p = &mut probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                // scores = scale * Q K^T
                gemm(seq, dh, seq, scale, q, rs_in, 1, k, 1, rs_in, T::zero(), p, seq as isize, 1);
                for i in 0..seq {
                    let row = &mut p[i * seq..(i + 1) * seq];
                    softmax_in_place(&mut row[..=i]);
                    row[i + 1..].iter_mut().for_each(|x| *x = T::zero());
                }
                let o = &mut out[b * seq * width + h * dh..];
                gemm(seq, seq, dh, T::one(), p, seq as isize, 1, v, rs_in, 1, T::zero(), o, width as isize, 1);
            }
        }
        let rg = self.rg(qkv);
        Ok(self.push(
            vec![batch * seq, width],
            out,
            Op::CausalAttention {
                qkv,
                batch,
                seq,
                heads,
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().fold(T::zero(), |s, &v| s + v);
        let rg = self.rg(x);
        self.push(vec![1], vec![total], Op::Sum(x), rg)
    }

    /// Weighted binary cross-entropy with logits.
    ///
    /// `loss = Σ weights[i] · bce(logits[i], targets[i])`, evaluated in the
    /// stable form `max(z,0) − z·y + ln(1 + e^{−|z|})` and summed in `f64`.
    /// Positions with zero weight contribute nothing, to the value or the
    /// gradient.
    pub fn masked_bce(&mut self, logits: Var, targets: Vec<T>, weights: Vec<T>) -> Result<Var> {
        let n = self.value(logits).len();
        if targets.len() != n || weights.len() != n {
            return Err(shape_err("masked_bce", self.shape(logits), &[targets.len(), weights.len()]));
        }
        let mut total = 0.0f64;
        for ((&z, &y), &w) in self.value(logits).iter().zip(&targets).zip(&weights) {
            if w == T::zero() {
                continue;
            }
            let (z, y) = (z.as_f64(), y.as_f64());
            let l = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            total += w.as_f64() * l;
        }
        if !total.is_finite() {
            return Err(Error::non_finite("loss"));
        }
        let rg = self.rg(logits);
        Ok(self.push(
            vec![1],
            vec![T::from_f64(total)],
            Op::MaskedBce {
                logits,
                targets,
                weights,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.node(loss).value.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let out = Gradients { grads };
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(name), Some(g)) = (&node.name, &out.grads[i]) {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::non_finite(format!("gradient of `{name}`")));
                }
            }
        }
        Ok(out)
    }

    /// Gradients of every named parameter bound on this graph, by name.
    /// Parameters the loss does not reach map to zeros.
    pub fn param_grads(&self, loss: Var) -> Result<std::collections::BTreeMap<String, Vec<T>>> {
        let grads = self.backward(loss)?;
        Ok(self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, node)| {
                node.name.as_ref().map(|name| {
                    let g = grads.grads[i].clone().unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                    (name.clone(), g)
                })
            })
            .collect())
    }

    /// Runs [`Graph::backward`] and overwrites the grad buffer of every
    /// parameter bound via [`Graph::param`]. Parameters the loss does not
    /// reach receive zeros.
    pub fn backward_into(&self, loss: Var, store: &mut ParameterStore) -> Result<()> {
        let grads = self.backward(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.name {
                let g = match &grads.grads[i] {
                    Some(g) => g.iter().map(|v| v.as_f32()).collect(),
                    None => vec![0.0; node.value.len()],
                };
                store.get_mut(name)?.set_grad(g)?;
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.rg(*a) {
                    // dA += G · B^T
                    let da = self.acc(grads, *a);
                    gemm(m, n, k, T::one(), g, n as isize, 1, self.value(*b), 1, n as isize, T::one(), da, k as isize, 1);
                }
                if self.rg(*b) {
                    // dB += A^T · G
                    let db = self.acc(grads, *b);
                    gemm(k, m, n, T::one(), self.value(*a), 1, k as isize, g, n as isize, 1, T::one(), db, n as isize, 1);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        add_into(self.acc(grads, v), g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let other = self.value(*b);
                    let da = self.acc(grads, *a);
                    for ((d, &gi), &o) in da.iter_mut().zip(g).zip(other) {
                        *d = *d + gi * o;
                    }
                }
                if self.rg(*b) {
                    let other = self.value(*a);
                    let db = self.acc(grads, *b);
                    for ((d, &gi), &o) in db.iter_mut().zip(g).zip(other) {
                        *d = *d + gi * o;
                    }
                }
            }
            Op::Scale(x, c) => {
                if self.rg(*x) {
                    for (d, &gi) in self.acc(grads, *x).iter_mut().zip(g) {
                        *d = *d + gi * *c;
                    }
                }
            }
            Op::AddBias(x, b) => {
                if self.rg(*x) {
                    add_into(self.acc(grads, *x), g);
                }
                if self.rg(*b) {
                    let n = self.value(*b).len();
                    let db = self.acc(grads, *b);
                    for row in g.chunks_exact(n) {
                        add_into(db, row);
                    }
                }
            }
            Op::AddPositions { x, table, seq } => {
                if self.rg(*x) {
                    add_into(self.acc(grads, *x), g);
                }
                if self.rg(*table) {
                    let w = self.shape(*table)[1];
                    let dt = self.acc(grads, *table);
                    for (r, row) in g.chunks_exact(w).enumerate() {
                        let t = r % seq;
                        add_into(&mut dt[t * w..(t + 1) * w], row);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = self.value(*gain).len();
                if self.rg(*gain) {
                    let dg = self.acc(grads, *gain);
                    for (grow, hrow) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                        for j in 0..n {
                            dg[j] = dg[j] + grow[j] * hrow[j];
                        }
                    }
                }
                if self.rg(*bias) {
                    let db = self.acc(grads, *bias);
                    for row in g.chunks_exact(n) {
                        add_into(db, row);
                    }
                }
                if self.rg(*x) {
                    let gv = self.value(*gain);
                    let inv_n = T::from_f64(1.0 / n as f64);
                    let dx = self.acc(grads, *x);
                    let mut dh = vec![T::zero(); n];
                    for (r, (grow, hrow)) in g.chunks_exact(n).zip(xhat.chunks_exact(n)).enumerate() {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..n {
                            dh[j] = grow[j] * gv[j];
                            mean_dh = mean_dh + dh[j];
                            mean_dh_h = mean_dh_h + dh[j] * hrow[j];
                        }
                        mean_dh = mean_dh * inv_n;
                        mean_dh_h = mean_dh_h * inv_n;
                        let drow = &mut dx[r * n..(r + 1) * n];
                        for j in 0..n {
                            drow[j] = drow[j] + rstd[r] * (dh[j] - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Gelu { x, tanh } => {
                if self.rg(*x) {
                    let xv = self.value(*x);
                    let dx = self.acc(grads, *x);
                    for (((d, &gi), &v), &t) in dx.iter_mut().zip(g).zip(xv).zip(tanh) {
                        *d = *d + gi * gelu_from_tanh(v, t).1;
                    }
                }
            }
            Op::Softmax(x) => {
                if self.rg(*x) {
                    let n = last_dim(&node.shape);
                    let y = &node.value;
                    let dx = self.acc(grads, *x);
                    for ((drow, grow), yrow) in dx.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(y.chunks_exact(n)) {
                        let dot = grow.iter().zip(yrow).fold(T::zero(), |s, (&a, &b)| s + a * b);
                        for j in 0..n {
                            drow[j] = drow[j] + yrow[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            Op::CausalAttention {
                qkv,
                batch,
                seq,
                heads,
                probs,
            } => {
                if self.rg(*qkv) {
                    self.attention_backward(*qkv, *batch, *seq, *heads, probs, g, grads);
                }
            }
            Op::Sum(x) => {
                if self.rg(*x) {
                    let g0 = g[0];
                    for d in self.acc(grads, *x).iter_mut() {
                        *d = *d + g0;
                    }
                }
            }
            Op::MaskedBce {
                logits,
                targets,
                weights,
            } => {
                if self.rg(*logits) {
                    let g0 = g[0];
                    let z = self.value(*logits);
                    let dz = self.acc(grads, *logits);
                    for i in 0..z.len() {
                        if weights[i] != T::zero() {
                            let p = T::one() / (T::one() + (-z[i]).exp());
                            dz[i] = dz[i] + g0 * weights[i] * (p - targets[i]);
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        qkv: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: &[T],
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let width = self.shape(qkv)[1] / 3;
        let dh = width / heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let src = self.value(qkv);
        let rs_in = (3 * width) as isize;
        let dsrc = self.acc(grads, qkv);
        let mut dp = vec![T::zero(); seq * seq];
        for b in 0..batch {
            let base = b * seq * 3 * width;
            for h in 0..heads {
                let q_off = base + h * dh;
                let k_off = base + width + h * dh;
                let v_off = base + 2 * width + h * dh;
                let p = &probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                let go = &g[b * seq * width + h * dh..];
                // dP = dO · V^T
                gemm(seq, dh, seq, T::one(), go, width as isize, 1, &src[v_off..], 1, rs_in, T::zero(), &mut dp, seq as isize, 1);
                // dV += P^T · dO
                gemm(seq, seq, dh, T::one(), p, 1, seq as isize, go, width as isize, 1, T::one(), &mut dsrc[v_off..], rs_in, 1);
                // dS = P ⊙ (dP − rowsum(dP ⊙ P)), pre-scaled
                for i in 0..seq {
                    let prow = &p[i * seq..(i + 1) * seq];
                    let drow = &mut dp[i * seq..(i + 1) * seq];
                    let dot = (0..=i).fold(T::zero(), |s, j| s + drow[j] * prow[j]);
                    for j in 0..=i {
                        drow[j] = prow[j] * (drow[j] - dot) * scale;
                    }
                    drow[i + 1..].iter_mut().for_each(|x| *x = T::zero());
                }
                // dQ += dS · K ; dK += dS^T · Q
                gemm(seq, seq, dh, T::one(), &dp, seq as isize, 1, &src[k_off..], rs_in, 1, T::one(), &mut dsrc[q_off..], rs_in, 1);
                gemm(seq, seq, dh, T::one(), &dp, 1, seq as isize, &src[q_off..], rs_in, 1, T::one(), &mut dsrc[k_off..], rs_in, 1);
            }
        }
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> &'g mut Vec<T> {
        let n = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`, or `None` when `v` does not influence
    /// the loss.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}
