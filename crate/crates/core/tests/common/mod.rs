//! Shared oracles for integration tests.
#![allow(dead_code)]

use tart_core::numerics::{Graph, RngStream};
use tart_core::reasoner::{Reasoner, ReasonerConfig};
use tart_core::taskgen::{encode_sequence, sample_tasks, SequenceBatch, TaskGenConfig};

pub const EPS: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor so coordinates whose true gradient is zero (e.g. key
/// biases, which shift every score of a query equally) compare on an
/// absolute scale.
pub const DENOM_FLOOR: f64 = 1e-8;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(DENOM_FLOOR)
}

pub struct GradcheckReport {
    pub total: usize,
    pub passing: usize,
    /// (parameter, index, autodiff, numeric) of the largest relative error.
    pub worst: Option<(String, usize, f64, f64)>,
}

fn loss64(model: &Reasoner, batch: &SequenceBatch) -> f64 {
    let mut g = Graph::<f64>::new();
    let l = model.loss_graph(&mut g, batch).unwrap();
    g.value(l)[0]
}

/// Full reasoner loss (d_in=4, hidden=16, layers=2, heads=2, k=4) vs central
/// differences on every parameter coordinate, everything evaluated in f64.
pub fn reasoner_gradcheck(seed: u64) -> GradcheckReport {
    let cfg = ReasonerConfig {
        d_in: 4,
        hidden: 16,
        layers: 2,
        heads: 2,
        max_positions: 9,
    };
    let mut model = Reasoner::init(&cfg, &mut RngStream::new(seed, 0)).unwrap();
    // Move away from the near-zero init so every block contributes visibly.
    let mut r = RngStream::new(seed, 1);
    for (_, t) in model.params_mut().iter_mut() {
        for v in t.data_mut() {
            *v += (0.2 * r.normal()) as f32;
        }
    }
    let tcfg = TaskGenConfig { d: 4, k: 4, alpha: 10.0, seed };
    let tasks = sample_tasks(&tcfg, 4, 2, &mut RngStream::new(seed, 7)).unwrap();
    let batch = encode_sequence(&tasks, false).unwrap();

    let analytic = {
        let mut g = Graph::<f64>::new();
        let l = model.loss_graph(&mut g, &batch).unwrap();
        g.param_grads(l).unwrap()
    };

    let mut report = GradcheckReport { total: 0, passing: 0, worst: None };
    let mut worst_err = -1.0;
    let names: Vec<String> = model.params().names().map(str::to_string).collect();
    for name in &names {
        let n = model.params().get(name).unwrap().len();
        for i in 0..n {
            let orig = model.params().get(name).unwrap().data()[i];
            let up = (f64::from(orig) + EPS) as f32;
            let down = (f64::from(orig) - EPS) as f32;
            model.params_mut().get_mut(name).unwrap().data_mut()[i] = up;
            let lp = loss64(&model, &batch);
            model.params_mut().get_mut(name).unwrap().data_mut()[i] = down;
            let lm = loss64(&model, &batch);
            model.params_mut().get_mut(name).unwrap().data_mut()[i] = orig;
            // Parameters live in f32, so divide by the step actually taken.
            let numeric = (lp - lm) / (f64::from(up) - f64::from(down));
            let a = analytic[name][i];
            let e = rel_err(a, numeric);
            report.total += 1;
            if e < REL_TOL {
                report.passing += 1;
            }
            if e > worst_err {
                worst_err = e;
                report.worst = Some((name.clone(), i, a, numeric));
            }
        }
    }
    report
}

/// `n` rows of independent standard normals.
pub fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = RngStream::new(seed, 7);
    (0..n).map(|_| (0..d).map(|_| rng.normal() as f32).collect()).collect()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in decreasing order and the matching unit eigenvectors.
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let vals = order.iter().map(|&i| a[i][i]).collect();
    let vecs = order.iter().map(|&i| v.iter().map(|row| row[i]).collect()).collect();
    (vals, vecs)
}
