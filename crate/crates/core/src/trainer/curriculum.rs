use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step-wise growth of the live input dimension and the number of examples
/// per training sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumSchedule {
    pub d_start: usize,
    pub d_step: usize,
    pub k_start: usize,
    pub k_step: usize,
    /// Steps between increments.
    pub period: u64,
    pub d_cap: usize,
    pub k_cap: usize,
}

impl CurriculumSchedule {
    /// d: 4 → 16 by 4, k: 18 → 256 by 30, every 1000 steps.
    pub fn full_scale() -> Self {
        Self {
            d_start: 4,
            d_step: 4,
            k_start: 18,
            k_step: 30,
            period: 1000,
            d_cap: 16,
            k_cap: 256,
        }
    }

    /// Desk schedule for `d = 8`, `k = 32`, 4000 steps: one live input
    /// dimension at first, one more every 400 steps (all eight by step 2800),
    /// with full-length prompts throughout.
    pub fn desk() -> Self {
        Self {
            d_start: 1,
            d_step: 1,
            k_start: 32,
            k_step: 1,
            period: 400,
            d_cap: 8,
            k_cap: 32,
        }
    }

    /// No curriculum: always at the caps.
    pub fn flat(d: usize, k: usize) -> Self {
        Self {
            d_start: d,
            d_step: 1,
            k_start: k,
            k_step: 1,
            period: 1,
            d_cap: d,
            k_cap: k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.d_start, self.d_step, self.k_start, self.k_step, self.d_cap, self.k_cap]
            .iter()
            .all(|&v| v > 0)
            && self.period > 0;
        if !positive || self.d_cap < self.d_start || self.k_cap < self.k_start {
            return Err(Error::contract(format!("invalid curriculum {self:?}")));
        }
        Ok(())
    }

    /// `(d_cur, k_cur)` in effect at `step`.
    pub fn at(&self, step: u64) -> (usize, usize) {
        let n = usize::try_from(step / self.period).unwrap_or(usize::MAX);
        let grow = |start: usize, inc: usize, cap: usize| start.saturating_add(inc.saturating_mul(n)).min(cap);
        (
            grow(self.d_start, self.d_step, self.d_cap),
            grow(self.k_start, self.k_step, self.k_cap),
        )
    }
}
