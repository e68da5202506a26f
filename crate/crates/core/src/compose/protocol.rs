//! Prompt construction for the three embedding protocols and a pluggable
//! embedder interface.

use serde::{Deserialize, Serialize};

use crate::compose::emb::EmbeddingSet;
use crate::error::{Error, Result};
use crate::numerics::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// All train examples in one prompt; a test example is appended.
    Vanilla,
    /// Every other train example first, the target last.
    #[serde(rename = "loo")]
    LeaveOneOut,
    /// The target alone.
    Streaming,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Vanilla, Protocol::LeaveOneOut, Protocol::Streaming];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Vanilla => "vanilla",
            Protocol::LeaveOneOut => "loo",
            Protocol::Streaming => "streaming",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown protocol `{s}` (vanilla | loo | streaming)")))
    }
}

/// Where a prompt entry comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Train(usize),
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prompt {
    pub slots: Vec<Slot>,
    /// Index into `slots` of the example being embedded.
    pub target: usize,
}

/// Orders a prompt over `n_train` train examples (plus the test example when
/// `target` is [`Slot::Test`]).
pub fn build_prompt(protocol: Protocol, n_train: usize, target: Slot) -> Result<Prompt> {
    if let Slot::Train(i) = target {
        if i >= n_train {
            return Err(Error::contract(format!("target {i} out of range for {n_train} examples")));
        }
    } else if n_train == 0 && protocol != Protocol::Streaming {
        return Err(Error::contract("prompt needs at least one train example"));
    }
    let all = || (0..n_train).map(Slot::Train);
    let slots: Vec<Slot> = match (protocol, target) {
        (Protocol::Streaming, t) => vec![t],
        (Protocol::Vanilla, Slot::Train(_)) => all().collect(),
        (Protocol::LeaveOneOut, Slot::Train(i)) => all()
            .filter(|&s| s != Slot::Train(i))
            .chain(std::iter::once(Slot::Train(i)))
            .collect(),
        (_, Slot::Test) => all().chain(std::iter::once(Slot::Test)).collect(),
    };
    let target = slots.iter().position(|&s| s == target).expect("target is always placed");
    Ok(Prompt { slots, target })
}

/// Maps a prompt of token sequences to one vector for the target example.
pub trait Embedder {
    fn dim(&self) -> usize;

    /// Mean of the target example's token embeddings in the context of
    /// `prompt`.
    fn embed(&self, prompt: &[&[u32]], target: usize) -> Result<Vec<f32>>;
}

fn token_vector(seed: u64, dim: usize, token: u32) -> Vec<f64> {
    let mut rng = RngStream::for_purpose(seed, "token-embedding", u64::from(token));
    (0..dim).map(|_| rng.normal()).collect()
}

fn check_target(prompt: &[&[u32]], target: usize) -> Result<()> {
    match prompt.get(target) {
        None => Err(Error::contract(format!("target {target} outside a prompt of {}", prompt.len()))),
        Some(t) if t.is_empty() => Err(Error::contract("target example has no tokens")),
        Some(_) => Ok(()),
    }
}

/// Context-free mean of fixed random token vectors.
#[derive(Clone, Debug)]
pub struct BagOfTokensEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Embedder for BagOfTokensEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, prompt: &[&[u32]], target: usize) -> Result<Vec<f32>> {
        check_target(prompt, target)?;
        let toks = prompt[target];
        let mut acc = vec![0.0f64; self.dim];
        for &t in toks {
            for (a, v) in acc.iter_mut().zip(token_vector(self.seed, self.dim, t)) {
                *a += v;
            }
        }
        Ok(acc.iter().map(|a| (a / toks.len() as f64) as f32).collect())
    }
}

/// Each token's state is its own vector plus `mix` times the running mean of
/// every earlier token in the prompt, so embeddings depend on what precedes
/// the target.
#[derive(Clone, Debug)]
pub struct CausalEmbedder {
    pub dim: usize,
    pub seed: u64,
    pub mix: f64,
}

impl Embedder for CausalEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, prompt: &[&[u32]], target: usize) -> Result<Vec<f32>> {
        check_target(prompt, target)?;
        let mut prefix_sum = vec![0.0f64; self.dim];
        let mut seen = 0usize;
        let mut acc = vec![0.0f64; self.dim];
        for (ex, toks) in prompt.iter().enumerate().take(target + 1) {
            for &t in toks.iter() {
                let v = token_vector(self.seed, self.dim, t);
                if ex == target {
                    for ((a, vi), p) in acc.iter_mut().zip(&v).zip(&prefix_sum) {
                        let ctx = if seen == 0 { 0.0 } else { p / seen as f64 };
                        *a += vi + self.mix * ctx;
                    }
                }
                for (p, vi) in prefix_sum.iter_mut().zip(&v) {
                    *p += vi;
                }
                seen += 1;
            }
        }
        let len = prompt[target].len() as f64;
        Ok(acc.iter().map(|a| (a / len) as f32).collect())
    }
}

fn embed_prompt(embedder: &dyn Embedder, prompt: &Prompt, train: &[Vec<u32>], test: Option<&[u32]>) -> Result<Vec<f32>> {
    let seqs: Vec<&[u32]> = prompt
        .slots
        .iter()
        .map(|s| match s {
            Slot::Train(i) => train[*i].as_slice(),
            Slot::Test => test.expect("test slot only built for test targets"),
        })
        .collect();
    let v = embedder.embed(&seqs, prompt.target)?;
    if v.len() != embedder.dim() {
        return Err(Error::contract(format!(
            "embedder returned {} values, declared dimension {}",
            v.len(),
            embedder.dim()
        )));
    }
    Ok(v)
}

fn at_example(i: usize) -> impl Fn(Error) -> Error {
    move |e| Error::contract(format!("embedding example {i}: {e}"))
}

/// Embeds each train example under `protocol`.
pub fn embed_set(
    embedder: &dyn Embedder,
    examples: &[Vec<u32>],
    labels: Option<Vec<u8>>,
    protocol: Protocol,
) -> Result<EmbeddingSet> {
    if examples.is_empty() {
        return Err(Error::contract("no examples to embed"));
    }
    let vectors = (0..examples.len())
        .map(|i| {
            let prompt = build_prompt(protocol, examples.len(), Slot::Train(i))?;
            embed_prompt(embedder, &prompt, examples, None).map_err(at_example(i))
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSet::new(embedder.dim(), vectors, labels, format!("protocol={}", protocol.name()))
}

/// Embeds each test example after the train examples under `protocol`.
pub fn embed_test_set(
    embedder: &dyn Embedder,
    train: &[Vec<u32>],
    tests: &[Vec<u32>],
    labels: Option<Vec<u8>>,
    protocol: Protocol,
) -> Result<EmbeddingSet> {
    let vectors = tests
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let prompt = build_prompt(protocol, train.len(), Slot::Test)?;
            embed_prompt(embedder, &prompt, train, Some(t)).map_err(at_example(i))
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSet::new(embedder.dim(), vectors, labels, format!("protocol={}", protocol.name()))
}
