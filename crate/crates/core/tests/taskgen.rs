use proptest::prelude::*;
use tart_core::numerics::RngStream;
use tart_core::taskgen::{
    decode_sequence, encode_sequence, sample_label, sample_task, sample_tasks, sigmoid, TaskGenConfig,
};

const DRAWS: usize = 100_000;

#[test]
fn conditional_label_frequency_matches_sigmoid() {
    let mut x = vec![0.0f32; 8];
    let mut w = vec![0.0f32; 8];
    x[0] = 0.6;
    w[0] = 0.5;
    let p = sigmoid(10.0 * 0.3);
    assert!((p - 0.95257).abs() < 1e-5);
    let mut rng = RngStream::for_purpose(1, "label-law", 0);
    let ones: usize = (0..DRAWS).map(|_| usize::from(sample_label(10.0, &x, &w, &mut rng))).sum();
    let freq = ones as f64 / DRAWS as f64;
    let tol = 3.0 * (p * (1.0 - p) / DRAWS as f64).sqrt();
    assert!((freq - p).abs() < tol, "{freq} vs {p} (tol {tol})");
}

#[test]
fn zero_margin_is_a_fair_coin() {
    let x = vec![1.0f32, 0.0];
    let w = vec![0.0f32, 1.0];
    let mut rng = RngStream::new(2, 0);
    let ones: usize = (0..DRAWS).map(|_| usize::from(sample_label(20.0, &x, &w, &mut rng))).sum();
    let freq = ones as f64 / DRAWS as f64;
    assert!((freq - 0.5).abs() < 3.0 * (0.25 / DRAWS as f64).sqrt());
}

#[test]
fn label_marginal_is_balanced() {
    let cfg = TaskGenConfig { d: 8, k: 8, alpha: 10.0, seed: 0 };
    let tasks = sample_tasks(&cfg, 8, 10_000, &mut RngStream::new(3, 0)).unwrap();
    let (ones, total) = tasks
        .iter()
        .flat_map(|t| &t.ys)
        .fold((0usize, 0usize), |(o, n), &y| (o + usize::from(y), n + 1));
    let freq = ones as f64 / total as f64;
    assert!((freq - 0.5).abs() < 0.01, "{freq}");
}

#[test]
fn covariates_are_standard_normal() {
    let cfg = TaskGenConfig { d: 4, k: 50, alpha: 1.0, seed: 0 };
    let tasks = sample_tasks(&cfg, 4, 500, &mut RngStream::new(4, 0)).unwrap();
    let vals: Vec<f64> = tasks.iter().flat_map(|t| t.xs.iter().flatten()).map(|&v| f64::from(v)).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let kurt = vals.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n / (var * var);
    // Standard errors: 1/√n for the mean, √(2/n) for the variance.
    assert!(mean.abs() < 5.0 / n.sqrt(), "mean {mean}");
    assert!((var - 1.0).abs() < 5.0 * (2.0 / n).sqrt(), "var {var}");
    assert!((kurt - 3.0).abs() < 0.1, "kurtosis {kurt}");
}

#[test]
fn labels_follow_margin_sign_at_high_alpha() {
    let cfg = TaskGenConfig { d: 8, k: 64, alpha: 1000.0, seed: 0 };
    let task = sample_task(&cfg, 8, &mut RngStream::new(5, 0)).unwrap();
    let agree = task
        .xs
        .iter()
        .zip(&task.ys)
        .filter(|(x, &y)| (task.bayes_prob(x) > 0.5) == (y == 1))
        .count();
    assert!(agree >= 63, "{agree}");
}

proptest! {
    #[test]
    fn encode_decode_round_trip(d in 2usize..7, k in 1usize..9, n in 1usize..4, active in 1usize..7, seed in any::<u64>()) {
        let active = active.min(d);
        let cfg = TaskGenConfig { d, k, alpha: 5.0, seed };
        let tasks = sample_tasks(&cfg, active, n, &mut RngStream::new(seed, 0)).unwrap();
        for t in &tasks {
            t.validate().unwrap();
        }
        let batch = encode_sequence(&tasks, false).unwrap();
        let back = decode_sequence(&batch).unwrap();
        prop_assert_eq!(back.len(), n);
        for (t, (xs, ys)) in tasks.iter().zip(&back) {
            prop_assert_eq!(&t.xs, xs);
            prop_assert_eq!(&t.ys, ys);
        }
    }

    #[test]
    fn padding_preserves_margins(d in 2usize..9, active in 1usize..9, seed in any::<u64>()) {
        let active = active.min(d);
        let cfg = TaskGenConfig { d, k: 4, alpha: 10.0, seed };
        let t = sample_task(&cfg, active, &mut RngStream::new(seed, 1)).unwrap();
        for x in &t.xs {
            let live: f64 = (0..active).map(|j| f64::from(x[j]) * f64::from(t.w[j])).sum();
            prop_assert_eq!(tart_core::taskgen::dot(x, &t.w), live);
        }
    }
}
