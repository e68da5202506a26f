use tart_core::evalkit::{accuracy_vs_k, decompose, k_curve_csv, noise_sweep, sliced_w1, EvalSet, DEFAULT_ALPHAS};
use tart_core::numerics::{ParameterStore, RngStream, Tensor};
use tart_core::reasoner::{Reasoner, ReasonerConfig};
use tart_core::taskgen::{sample_tasks, TaskGenConfig};

#[test]
fn decomposition_identity_on_random_triples() {
    let mut rng = RngStream::new(8, 0);
    for _ in 0..1000 {
        let (a, b, c) = (rng.uniform(), rng.uniform(), rng.uniform());
        let r = decompose(a, b, c).unwrap();
        assert!((r.gap_rep + r.gap_reas - r.gap_perf).abs() < 1e-12);
        assert!((r.gap_perf - (a - c)).abs() < 1e-12);
        assert_eq!(r.gap_rep, a - b);
        assert_eq!(r.gap_reas, b - c);
    }
}

#[test]
fn decomposition_worked_example() {
    let r = decompose(0.9, 0.8, 0.6).unwrap();
    // 0.9 - 0.8 is not 0.1 in binary floating point; the residue is ~3e-17.
    assert!((r.gap_rep - 0.1).abs() < 1e-15);
    assert!((r.gap_reas - 0.2).abs() < 1e-15);
    assert!((r.gap_perf - 0.3).abs() < 1e-15);
    assert_eq!(r.gap_rep + r.gap_reas, r.gap_perf);
    assert!((r.reas_share.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(decompose(0.5, 0.5, 0.5).unwrap().reas_share, None);
}

fn cloud(n: usize, d: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut r = RngStream::new(seed, 0);
    (0..n).map(|_| (0..d).map(|_| r.normal() as f32).collect()).collect()
}

#[test]
fn sliced_w1_of_identical_sets_is_zero() {
    let a = cloud(300, 5, 1);
    assert_eq!(sliced_w1(&a, &a, 64, 0).unwrap(), 0.0);
}

#[test]
fn sliced_w1_unit_shift_in_one_dimension() {
    let a = vec![vec![0.0f32], vec![1.0]];
    let b = vec![vec![1.0f32], vec![2.0]];
    assert_eq!(sliced_w1(&a, &b, 16, 3).unwrap(), 1.0);
}

#[test]
fn sliced_w1_matched_gaussians_is_small() {
    let a = cloud(10_000, 8, 2);
    let b = cloud(10_000, 8, 3);
    let w = sliced_w1(&a, &b, 128, 0).unwrap();
    assert!(w < 0.05, "{w}");
}

/// `E|u₁|` for `u` uniform on the unit sphere in `R^d`:
/// `Γ(d/2) / (√π Γ((d+1)/2))`.
fn mean_abs_coordinate(d: usize) -> f64 {
    fn ln_gamma_half(n2: usize) -> f64 {
        // ln Γ(n2 / 2) by recurrence from Γ(1) = 1 and Γ(1/2) = √π.
        let (mut x, mut acc) = if n2 % 2 == 0 { (2usize, 0.0) } else { (1usize, 0.5 * std::f64::consts::PI.ln()) };
        while x < n2 {
            acc += (x as f64 / 2.0).ln();
            x += 2;
        }
        acc
    }
    (ln_gamma_half(d) - ln_gamma_half(d + 1)).exp() / std::f64::consts::PI.sqrt()
}

#[test]
fn sliced_w1_of_translation_matches_sphere_average() {
    assert!((mean_abs_coordinate(8) - 6.0 / (std::f64::consts::PI.sqrt() * 11.631_728_396_567_45)).abs() < 1e-12);
    let a = cloud(200, 8, 4);
    let b: Vec<Vec<f32>> = a
        .iter()
        .map(|x| {
            let mut y = x.clone();
            y[3] += 2.0;
            y
        })
        .collect();
    let expected = 2.0 * mean_abs_coordinate(8);
    // Per-projection values have standard deviation below 0.4, so 4000
    // projections put the estimate within 0.03 with a wide margin.
    let w = sliced_w1(&a, &b, 4000, 9).unwrap();
    assert!((w - expected).abs() < 0.03, "{w} vs {expected}");
}

fn constant_model(d: usize) -> Reasoner {
    let cfg = ReasonerConfig { d_in: d, hidden: 8, layers: 1, heads: 2, max_positions: 33 };
    let mut params = ParameterStore::new();
    for (name, shape) in cfg.param_shapes() {
        let fill = if name.ends_with(".gain") { 1.0 } else { 0.0 };
        params.insert(name, Tensor::full(&shape, fill).unwrap()).unwrap();
    }
    Reasoner::from_params(&cfg, params).unwrap()
}

#[test]
fn noise_sweep_of_constant_predictor() {
    let model = constant_model(4);
    let result = noise_sweep(&model, &DEFAULT_ALPHAS, 50, 7, 13).unwrap();
    assert_eq!(result.prefix, 7);
    for (i, p) in result.points.iter().enumerate() {
        let cfg = TaskGenConfig { d: 4, k: 8, alpha: p.alpha, seed: 13 };
        let tasks = sample_tasks(&cfg, 4, 50, &mut RngStream::for_purpose(13, "noise-sweep", i as u64)).unwrap();
        let dev = tasks.iter().map(|t| (0.5 - t.bayes_prob(&t.xs[7])).abs()).sum::<f64>() / 50.0;
        let acc = tasks.iter().filter(|t| t.ys[7] == 1).count() as f64 / 50.0;
        assert!((p.deviation - dev).abs() < 1e-12, "alpha {}", p.alpha);
        assert_eq!(p.accuracy, acc);
        assert_eq!(p.n_problems, 50);
    }
    // Cleaner labels sit further from 1/2.
    let devs: Vec<f64> = result.points.iter().map(|p| p.deviation).collect();
    assert!(devs.windows(2).all(|w| w[0] < w[1]), "{devs:?}");
    let csv = result.to_csv();
    assert_eq!(csv.lines().next(), Some("alpha,prefix,deviation,accuracy,n_problems"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn noise_sweep_rejects_prefix_beyond_capacity() {
    assert!(noise_sweep(&constant_model(4), &[1.0], 4, 17, 0).is_err());
    assert!(noise_sweep(&constant_model(4), &[1.0], 0, 3, 0).is_err());
}

fn pool(seed: u64) -> EvalSet {
    let xs = cloud(40, 2, seed);
    let ys: Vec<u8> = xs.iter().map(|x| u8::from(x[0] > 0.0)).collect();
    EvalSet { train_x: xs[..30].to_vec(), train_y: ys[..30].to_vec(), test_x: xs[30..].to_vec(), test_y: ys[30..].to_vec() }
}

#[test]
fn accuracy_vs_k_with_oracle_and_constant_predictors() {
    let sets = vec![pool(1), pool(2), pool(3)];
    let perfect = accuracy_vs_k(
        |_, _, test| Ok(test.iter().map(|x| if x[0] > 0.0 { 0.9 } else { 0.1 }).collect()),
        &sets,
        &[1, 5, 30],
        0,
    )
    .unwrap();
    assert!(perfect.iter().all(|p| p.accuracy == 1.0 && p.n_sets == 3));

    let ones = accuracy_vs_k(|_, _, test| Ok(vec![1.0; test.len()]), &sets, &[4], 0).unwrap();
    let share = sets.iter().map(|s| s.test_y.iter().filter(|&&y| y == 1).count() as f64 / 10.0).sum::<f64>() / 3.0;
    assert!((ones[0].accuracy - share).abs() < 1e-12);
    assert_eq!(k_curve_csv(&ones), format!("k,accuracy,n_sets\n4,{},3\n", ones[0].accuracy));
}

#[test]
fn accuracy_vs_k_passes_ordered_subsamples() {
    let sets = vec![pool(5)];
    let mut seen = Vec::new();
    accuracy_vs_k(
        |xs, ys, test| {
            seen.push((xs.to_vec(), ys.to_vec()));
            Ok(vec![0.5; test.len()])
        },
        &sets,
        &[3, 12],
        7,
    )
    .unwrap();
    assert_eq!(seen[0].0.len(), 3);
    assert_eq!(seen[1].0.len(), 12);
    for (xs, ys) in &seen {
        let positions: Vec<usize> = xs.iter().map(|x| sets[0].train_x.iter().position(|t| t == x).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        for (&p, &y) in positions.iter().zip(ys) {
            assert_eq!(sets[0].train_y[p], y);
        }
    }
    assert!(accuracy_vs_k(|_, _, t| Ok(vec![0.5; t.len()]), &sets, &[31], 0).is_err());
    assert!(accuracy_vs_k(|_, _, _| Ok(vec![]), &sets, &[2], 0).is_err());
}
