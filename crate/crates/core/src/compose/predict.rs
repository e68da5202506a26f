//! End-to-end prediction from embeddings, the linear-probe comparator and a
//! separable toy benchmark.

use serde::{Deserialize, Serialize};

use crate::compose::emb::EmbeddingSet;
use crate::compose::pca::PcaModel;
use crate::compose::protocol::{embed_set, embed_test_set, BagOfTokensEmbedder, Protocol};
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::oracle::{fit_logistic, LogisticOptions};
use crate::reasoner::{decide, Reasoner};

const QUERY_CHUNK: usize = 256;

/// `P(y = 1)` for each test vector, each predicted independently after the
/// full labeled train sequence. `pca` must have been fit on `train`.
pub fn tart_predict(model: &Reasoner, pca: &PcaModel, train: &EmbeddingSet, test: &EmbeddingSet) -> Result<Vec<f64>> {
    let labels = train.require_labels("tart_predict")?;
    if train.is_empty() {
        return Err(Error::contract("tart_predict needs at least one train example"));
    }
    if train.len() > model.k_max() {
        return Err(Error::contract(format!(
            "{} train examples exceed the reasoner's capacity of {}; subsample the train set",
            train.len(),
            model.k_max()
        )));
    }
    let width = model.config().d_in;
    let xs = pca.transform_padded(train, width)?;
    let queries = pca.transform_padded(test, width)?;
    let mut out = Vec::with_capacity(queries.len());
    for chunk in queries.chunks(QUERY_CHUNK) {
        out.extend(model.predict_queries(&xs, labels, chunk)?);
    }
    Ok(out)
}

/// Ridge logistic regression on the whitened train projections, evaluated on
/// the test projections.
pub fn probe_predict(pca: &PcaModel, train: &EmbeddingSet, test: &EmbeddingSet, opts: &LogisticOptions) -> Result<Vec<f64>> {
    let labels = train.require_labels("linear probe")?;
    let width = pca.output_dim();
    let fit = fit_logistic(&pca.transform_padded(train, width)?, labels, opts)?;
    pca.transform_padded(test, width)?
        .iter()
        .map(|x| fit.predict_prob(x))
        .collect()
}

/// Fraction of thresholded probabilities that match `labels`.
pub fn accuracy(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::contract(format!(
            "accuracy over {} predictions and {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let hits = probs.iter().zip(labels).filter(|(&p, &y)| decide(p) == y).count();
    Ok(hits as f64 / probs.len() as f64)
}

/// Uniform subsample of `k` rows (all rows when `k ≥ n`), sorted to keep the
/// original order.
pub fn subsample(set: &EmbeddingSet, k: usize, rng: &mut RngStream) -> Result<EmbeddingSet> {
    let mut idx = rng.sample_indices(set.len(), k);
    idx.sort_unstable();
    set.select(&idx)
}

/// Two-class token data: each example mixes class-specific tokens with
/// tokens drawn from a shared pool. The defaults give bag-of-tokens
/// embeddings whose leading principal component separates the classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyBenchmark {
    pub class_vocab: u32,
    pub shared_vocab: u32,
    pub class_tokens: usize,
    pub shared_tokens: usize,
    pub dim: usize,
}

impl Default for ToyBenchmark {
    fn default() -> Self {
        Self {
            class_vocab: 8,
            shared_vocab: 200,
            class_tokens: 12,
            shared_tokens: 4,
            dim: 64,
        }
    }
}

impl ToyBenchmark {
    /// Balanced labels in random order with matching token sequences.
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> (Vec<Vec<u32>>, Vec<u8>) {
        let mut labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        rng.shuffle(&mut labels);
        let examples = labels
            .iter()
            .map(|&y| {
                let base = u32::from(y) * self.class_vocab;
                let mut toks: Vec<u32> = (0..self.class_tokens)
                    .map(|_| base + rng.below(self.class_vocab as usize) as u32)
                    .collect();
                let shared = 2 * self.class_vocab;
                toks.extend((0..self.shared_tokens).map(|_| shared + rng.below(self.shared_vocab as usize) as u32));
                toks
            })
            .collect();
        (examples, labels)
    }

    /// Train and test embedding sets from the bag-of-tokens embedder.
    pub fn embeddings(&self, n_train: usize, n_test: usize, protocol: Protocol, seed: u64) -> Result<(EmbeddingSet, EmbeddingSet)> {
        let embedder = BagOfTokensEmbedder { dim: self.dim, seed };
        let mut rng = RngStream::for_purpose(seed, "toy-benchmark", 0);
        let (train_x, train_y) = self.sample(n_train, &mut rng);
        let (test_x, test_y) = self.sample(n_test, &mut rng);
        let train = embed_set(&embedder, &train_x, Some(train_y), protocol)?;
        let test = embed_test_set(&embedder, &train_x, &test_x, Some(test_y), protocol)?;
        Ok((train, test))
    }
}
