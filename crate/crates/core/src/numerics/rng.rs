//! Seeded random streams.
//!
//! Every consumer of randomness owns an [`RngStream`] derived from a global
//! seed and a purpose tag, so that independent parts of a run never share
//! state and any single stream can be replayed in isolation.
//!
//! The generator is PCG64 (LCG-128 with XSL-RR output). Gaussian draws use
//! the Box–Muller transform evaluated with `libm`, which keeps normal
//! variates bit-identical across platforms.

use rand_core::Rng;
use rand_pcg::Pcg64;

/// Identifies the generator and transforms; stored in checkpoints.
pub const RNG_ALGORITHM: &str = "pcg64-xsl-rr/splitmix64-streams/box-muller-libm";

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable stream id for a purpose tag plus an index (e.g. a training step).
pub fn stream_id(tag: &str, index: u64) -> u64 {
    let mut h = splitmix64(tag.len() as u64);
    for &b in tag.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ splitmix64(index))
}

#[derive(Clone, Debug)]
pub struct RngStream {
    inner: Pcg64,
    seed: u64,
    stream: u64,
    spare: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let hi = splitmix64(seed);
        let lo = splitmix64(hi ^ stream);
        let state = (u128::from(hi) << 64) | u128::from(lo);
        let inc = (u128::from(splitmix64(stream)) << 64) | u128::from(stream);
        Self {
            inner: Pcg64::new(state, inc),
            seed,
            stream,
            spare: None,
        }
    }

    /// Stream for `(seed, tag, index)`.
    pub fn for_purpose(seed: u64, tag: &str, index: u64) -> Self {
        Self::new(seed, stream_id(tag, index))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // Lemire's multiply-shift with rejection.
        let n64 = n as u64;
        let threshold = n64.wrapping_neg() % n64;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(n64);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    /// Standard normal variate (Box–Muller, second value cached).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in sampled order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        let k = k.min(n);
        for i in 0..k {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}
