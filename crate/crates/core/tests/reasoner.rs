mod common;

use tart_core::numerics::{Graph, RngStream};
use tart_core::reasoner::{Reasoner, ReasonerConfig};
use tart_core::taskgen::{encode_sequence, sample_tasks, SequenceBatch, TaskGenConfig};

fn small() -> ReasonerConfig {
    ReasonerConfig {
        d_in: 4,
        hidden: 16,
        layers: 2,
        heads: 2,
        max_positions: 17,
    }
}

fn perturbed_model(cfg: &ReasonerConfig, seed: u64) -> Reasoner {
    let mut model = Reasoner::init(cfg, &mut RngStream::new(seed, 0)).unwrap();
    let mut r = RngStream::new(seed, 1);
    for (_, t) in model.params_mut().iter_mut() {
        for v in t.data_mut() {
            *v += (0.3 * r.normal()) as f32;
        }
    }
    model
}

fn batch(d: usize, k: usize, n: usize, seed: u64, query: bool) -> SequenceBatch {
    let cfg = TaskGenConfig { d, k, alpha: 10.0, seed };
    let tasks = sample_tasks(&cfg, d, n, &mut RngStream::new(seed, 3)).unwrap();
    encode_sequence(&tasks, query).unwrap()
}

#[test]
fn suffix_perturbation_leaves_prefix_logits_bitwise() {
    let model = perturbed_model(&small(), 11);
    let base = batch(4, 8, 2, 5, true);
    let t = base.seq_len();
    let d = base.d();
    let before = model.logits(&base).unwrap();
    let mut r = RngStream::new(99, 0);
    for cut in 0..t {
        let mut pert = base.clone();
        for row in 0..pert.batch() {
            for p in cut..t {
                for j in 0..d {
                    pert.tokens.data_mut()[(row * t + p) * d + j] += r.normal() as f32;
                }
            }
        }
        let after = model.logits(&pert).unwrap();
        for row in 0..base.batch() {
            for p in 0..cut {
                let i = row * t + p;
                assert_eq!(before[i].to_bits(), after[i].to_bits(), "row {row} position {p} cut {cut}");
            }
            // Sanity: the perturbed position itself does move.
            assert_ne!(before[row * t + cut], after[row * t + cut]);
        }
    }
}

fn sigmoid_bce(z: f64, y: f64) -> f64 {
    // log(1 + e^z) - y z, evaluated stably.
    z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
}

#[test]
fn loss_matches_direct_evaluation_from_logits() {
    let model = perturbed_model(&small(), 4);
    let b = batch(4, 8, 3, 8, false);
    let t = b.seq_len();
    let mut g = Graph::<f64>::new();
    let logits_var = model.forward_graph(&mut g, &b).unwrap();
    let logits = g.value(logits_var).to_vec();
    let mut total = 0.0;
    let mut count = 0usize;
    for (row, labels) in b.labels.iter().enumerate() {
        let scored = (0..t).filter(|&p| b.loss_mask[p]);
        for (p, &y) in scored.zip(labels) {
            total += sigmoid_bce(logits[row * t + p], f64::from(y));
            count += 1;
        }
    }
    let oracle = total / count as f64;
    let mut g = Graph::<f64>::new();
    let loss = model.loss_graph(&mut g, &b).unwrap();
    assert!((g.value(loss)[0] - oracle).abs() < 1e-6, "{} vs {oracle}", g.value(loss)[0]);
    // The f32 path agrees to single precision.
    assert!((model.loss(&b).unwrap() - oracle).abs() < 1e-5);
}

#[test]
fn loss_ignores_unscored_positions() {
    let model = perturbed_model(&small(), 6);
    let b = batch(4, 8, 2, 1, false);
    let t = b.seq_len();
    let logits = model.logits(&b).unwrap();
    let scored: Vec<usize> = (0..t).filter(|&p| b.loss_mask[p]).collect();
    assert_eq!(scored, (0..8).map(|i| 2 * i).collect::<Vec<_>>());
    // Flipping every label flips exactly the scored terms: the two losses sum
    // to the mean of softplus(z) + softplus(-z) over scored positions only.
    let mut flipped = b.clone();
    for l in &mut flipped.labels {
        for y in l {
            *y = 1 - *y;
        }
    }
    let expected: f64 = (0..b.batch())
        .flat_map(|row| scored.iter().map(move |&p| row * t + p))
        .map(|i| {
            let z = f64::from(logits[i]);
            sigmoid_bce(z, 0.0) + sigmoid_bce(z, 1.0)
        })
        .sum::<f64>()
        / (b.batch() * scored.len()) as f64;
    let got = model.loss(&b).unwrap() + model.loss(&flipped).unwrap();
    assert!((got - expected).abs() < 1e-5, "{got} vs {expected}");
}

#[test]
fn full_scale_parameter_count() {
    // Counting GPT-2's 50257-row token table, which this model
    // replaces with a d_in-row linear read-in.
    let n = ReasonerConfig::full_scale().param_count() + 50257 * 256;
    let rel = (n as f64 - 22e6).abs() / 22e6;
    assert!(rel < 0.15, "{n} parameters");
}

#[test]
fn desk_parameter_count_by_hand() {
    let (c, l, d, p) = (64usize, 4usize, 8usize, 65usize);
    let block = 2 * c + (c * 3 * c + 3 * c) + (c * c + c) + 2 * c + (c * 4 * c + 4 * c) + (4 * c * c + c);
    let expected = d * c + c + p * c + l * block + 2 * c + c + 1;
    assert_eq!(ReasonerConfig::default().param_count(), expected);
}

#[test]
fn batch_rows_are_independent() {
    let model = perturbed_model(&small(), 2);
    let both = batch(4, 8, 2, 3, true);
    let t = both.seq_len();
    let all = model.logits(&both).unwrap();
    let cfg = TaskGenConfig { d: 4, k: 8, alpha: 10.0, seed: 3 };
    let tasks = sample_tasks(&cfg, 4, 2, &mut RngStream::new(3, 3)).unwrap();
    let second = encode_sequence(&tasks[1..], true).unwrap();
    let alone = model.logits(&second).unwrap();
    for p in 0..t {
        assert!((all[t + p] - alone[p]).abs() < 1e-6);
    }
}
