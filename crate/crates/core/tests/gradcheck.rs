//! Autodiff vs central finite differences, evaluated in f64.

mod common;

use common::{rel_err, EPS, REL_TOL};
use tart_core::numerics::{Graph, RngStream, Var};

fn randn(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

/// Checks d(loss)/d(input) for every input of `build`, where the scalar loss
/// is `Σ R ⊙ build(inputs)` for a fixed random `R`.
fn check_op<F>(shapes: &[Vec<usize>], seed: u64, build: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut rng = RngStream::new(seed, 0);
    let inputs: Vec<Vec<f64>> = shapes.iter().map(|s| randn(&mut rng, s.iter().product())).collect();
    let eval = |inputs: &[Vec<f64>], want_grad: bool| -> (f64, Vec<Vec<f64>>) {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = shapes
            .iter()
            .zip(inputs)
            .map(|(s, d)| g.variable(s, d.clone()).unwrap())
            .collect();
        let out = build(&mut g, &vars);
        let n = g.value(out).len();
        let mut r = RngStream::new(seed, 1);
        let weights = g.input(g.shape(out).to_vec().as_slice(), randn(&mut r, n)).unwrap();
        let prod = g.mul(out, weights).unwrap();
        let loss = g.sum(prod);
        let value = g.value(loss)[0];
        let grads = if want_grad {
            let gr = g.backward(loss).unwrap();
            vars.iter()
                .zip(inputs)
                .map(|(&v, d)| gr.get(v).map_or(vec![0.0; d.len()], <[f64]>::to_vec))
                .collect()
        } else {
            Vec::new()
        };
        (value, grads)
    };
    let (_, analytic) = eval(&inputs, true);
    for (which, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let mut plus = inputs.clone();
            plus[which][i] += EPS;
            let mut minus = inputs.clone();
            minus[which][i] -= EPS;
            let numeric = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * EPS);
            let a = analytic[which][i];
            assert!(
                rel_err(a, numeric) < REL_TOL,
                "input {which}[{i}]: autodiff {a} vs numeric {numeric}"
            );
        }
    }
}

#[test]
fn matmul_gradient() {
    check_op(&[vec![3, 4], vec![4, 2]], 1, |g, v| g.matmul(v[0], v[1]).unwrap());
}

#[test]
fn add_and_bias_gradient() {
    check_op(&[vec![3, 4], vec![3, 4], vec![4]], 2, |g, v| {
        let s = g.add(v[0], v[1]).unwrap();
        g.add_bias(s, v[2]).unwrap()
    });
}

#[test]
fn positions_gradient() {
    check_op(&[vec![6, 3], vec![4, 3]], 3, |g, v| g.add_positions(v[0], v[1], 3).unwrap());
}

#[test]
fn layer_norm_gradient() {
    check_op(&[vec![3, 5], vec![5], vec![5]], 4, |g, v| g.layer_norm(v[0], v[1], v[2]).unwrap());
}

#[test]
fn gelu_gradient() {
    check_op(&[vec![4, 3]], 5, |g, v| g.gelu(v[0]));
}

#[test]
fn softmax_gradient() {
    check_op(&[vec![3, 5]], 6, |g, v| g.softmax(v[0]));
}

#[test]
fn attention_gradient() {
    // batch 2, seq 4, 2 heads of width 3
    check_op(&[vec![8, 18]], 7, |g, v| g.causal_attention(v[0], 2, 4, 2).unwrap());
}

#[test]
fn scale_and_mul_gradient() {
    check_op(&[vec![5], vec![5]], 8, |g, v| {
        let m = g.mul(v[0], v[1]).unwrap();
        g.scale(m, -1.7)
    });
}

#[test]
fn masked_bce_gradient() {
    check_op(&[vec![6]], 9, |g, v| {
        let targets = vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let weights = vec![0.25, 0.0, 0.25, 0.0, 0.25, 0.25];
        g.masked_bce(v[0], targets, weights).unwrap()
    });
}

#[test]
fn reasoner_loss_gradient() {
    let report = common::reasoner_gradcheck(11);
    assert!(
        report.passing as f64 >= 0.99 * report.total as f64,
        "{} of {} coordinates within tolerance; worst {:?}",
        report.passing,
        report.total,
        report.worst
    );
}
