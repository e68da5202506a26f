//! Ridge-regularised logistic regression by damped Newton (IRLS).
//!
//! Maximises `Σ [yᵢ zᵢ − ln(1 + e^{zᵢ})] − (λ/2)‖w‖²`, `zᵢ = ⟨w, xᵢ⟩ + b`.
//! The intercept `b` is optional and never penalised. Each Newton step is
//! halved until the penalised log-likelihood does not decrease.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taskgen::sigmoid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogisticOptions {
    pub lambda: f64,
    /// Convergence threshold on the gradient ∞-norm. The Newton step must
    /// also be negligible relative to the weights.
    pub tol: f64,
    pub max_iter: usize,
    pub intercept: bool,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            tol: 1e-8,
            max_iter: 100,
            intercept: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
    /// All training labels were identical.
    pub single_class: bool,
    /// Penalised log-likelihood after each accepted iteration, starting with
    /// the initial point.
    pub objective_trace: Vec<f64>,
}

const MAX_HALVINGS: usize = 50;
const STEP_TOL: f64 = 1e-6;

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Problem<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    lambda: f64,
    /// Index of the unpenalised intercept column, if any.
    intercept_col: Option<usize>,
}

impl Problem<'_> {
    fn penalty(&self, beta: &DVector<f64>) -> f64 {
        let sq: f64 = beta
            .iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != self.intercept_col)
            .map(|(_, v)| v * v)
            .sum();
        0.5 * self.lambda * sq
    }

    fn objective(&self, beta: &DVector<f64>) -> f64 {
        let z = self.x * beta;
        let ll: f64 = z.iter().zip(self.y).map(|(&z, &y)| y * z - softplus(z)).sum();
        ll - self.penalty(beta)
    }
}

/// Fits `P(y=1|x) = σ(⟨w, x⟩ + b)`; rows of `xs` are examples.
pub fn fit_logistic(xs: &[Vec<f32>], ys: &[u8], opts: &LogisticOptions) -> Result<LogisticFit> {
    let n = xs.len();
    if n == 0 {
        return Err(Error::contract("fit_logistic needs at least one example"));
    }
    if ys.len() != n {
        return Err(Error::contract("xs and ys lengths differ"));
    }
    if !(opts.lambda >= 0.0) {
        return Err(Error::contract("lambda must be >= 0"));
    }
    let d = xs[0].len();
    if xs.iter().any(|x| x.len() != d) {
        return Err(Error::contract("ragged design matrix"));
    }
    if xs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::contract("design matrix contains non-finite values"));
    }
    let p = d + usize::from(opts.intercept);
    let x = DMatrix::from_fn(n, p, |i, j| if j < d { f64::from(xs[i][j]) } else { 1.0 });
    let y: Vec<f64> = ys.iter().map(|&v| f64::from(v.min(1))).collect();
    let single_class = ys.iter().all(|&v| v == ys[0]);
    let prob = Problem {
        x: &x,
        y: &y,
        lambda: opts.lambda,
        intercept_col: opts.intercept.then_some(d),
    };

    let mut beta = DVector::<f64>::zeros(p);
    let mut obj = prob.objective(&beta);
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    let ridge = DVector::from_fn(p, |j, _| if Some(j) == prob.intercept_col { 0.0 } else { opts.lambda });

    while iterations < opts.max_iter {
        let z = &x * &beta;
        let mu: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let resid = DVector::from_fn(n, |i, _| y[i] - mu[i]);
        let grad = x.transpose() * resid - ridge.component_mul(&beta);
        // H = Xᵀ W X + diag(ridge)
        let wx = DMatrix::from_fn(n, p, |i, j| x[(i, j)] * mu[i] * (1.0 - mu[i]));
        let mut h = x.transpose() * wx;
        for j in 0..p {
            h[(j, j)] += ridge[j];
        }
        let Some(chol) = h.cholesky() else {
            break;
        };
        let step = chol.solve(&grad);
        // On separable data without a ridge the gradient vanishes while the
        // weights still run off to infinity, so the step must be small too.
        if grad.amax() < opts.tol && step.amax() <= STEP_TOL * (1.0 + beta.amax()) {
            converged = true;
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand = &beta + &step * t;
            let cand_obj = prob.objective(&cand);
            if cand_obj.is_finite() && cand_obj >= obj {
                beta = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
        trace.push(obj);
    }
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("logistic regression weights"));
    }
    let intercept = if opts.intercept { beta[d] } else { 0.0 };
    Ok(LogisticFit {
        weights: beta.iter().take(d).copied().collect(),
        intercept,
        lambda: opts.lambda,
        converged,
        iterations,
        single_class,
        objective_trace: trace,
    })
}

impl LogisticFit {
    pub fn margin(&self, x: &[f32]) -> f64 {
        self.weights.iter().zip(x).map(|(&w, &v)| w * f64::from(v)).sum::<f64>() + self.intercept
    }

    pub fn predict_prob(&self, x: &[f32]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::Shape {
                op: "predict_prob",
                lhs: vec![self.weights.len()],
                rhs: vec![x.len()],
            });
        }
        Ok(sigmoid(self.margin(x)))
    }
}
