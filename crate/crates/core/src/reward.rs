//! Edit-distance rewards for sampled transcriptions.
//!
//! Step `u` earns the decrease in distance-to-reference caused by appending
//! its token; the first step is measured against the empty prefix, whose
//! distance is `|S|`. Returns accumulate the immediate rewards from `u` to
//! the end of the episode.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{is_character, EOS};

/// How the discount exponent is indexed when accumulating returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscountMode {
    /// `R_u = sum_{i=u..U} gamma^(U-i) r_i`.
    #[default]
    FromEnd,
    /// `R_u = sum_{i=u..U} gamma^(i-u) r_i`.
    Conventional,
}

pub const DEFAULT_GAMMA: f64 = 0.99;

/// Rewards for one sampled episode.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTrace {
    pub immediate: Vec<f64>,
    pub returns: Vec<f64>,
    pub total: f64,
    pub gamma: f64,
}

impl RewardTrace {
    pub fn compute(
        prediction: &[u32],
        reference: &[u32],
        gamma: f64,
        mode: DiscountMode,
    ) -> Result<Self> {
        let immediate = immediate_rewards(prediction, reference)?;
        let returns = discounted_returns(&immediate, gamma, mode)?;
        let total = total_reward(&returns);
        Ok(Self {
            immediate,
            returns,
            total,
            gamma,
        })
    }

    pub fn len(&self) -> usize {
        self.immediate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.immediate.is_empty()
    }
}

/// Incremental Levenshtein rows of a growing prediction against a fixed
/// reference. `distance()` is the distance of the current prefix.
#[derive(Debug, Clone)]
pub struct PrefixDistance<'a> {
    reference: &'a [u32],
    row: Vec<usize>,
    next: Vec<usize>,
    len: usize,
}

impl<'a> PrefixDistance<'a> {
    pub fn new(reference: &'a [u32]) -> Self {
        Self {
            reference,
            row: (0..=reference.len()).collect(),
            next: vec![0; reference.len() + 1],
            len: 0,
        }
    }

    pub fn distance(&self) -> usize {
        self.row[self.reference.len()]
    }

    /// Number of characters appended so far.
    pub fn prefix_len(&self) -> usize {
        self.len
    }

    pub fn push(&mut self, token: u32) {
        self.len += 1;
        self.next[0] = self.len;
        for (j, &s) in self.reference.iter().enumerate() {
            let sub = self.row[j] + usize::from(s != token);
            self.next[j + 1] = sub.min(self.row[j + 1] + 1).min(self.next[j] + 1);
        }
        std::mem::swap(&mut self.row, &mut self.next);
    }
}

/// Integer immediate rewards. The prediction is cut at its first `EOS`;
/// the `EOS` step itself and any non-character tokens leave the prefix
/// unchanged and earn 0.
pub fn immediate_rewards_exact(prediction: &[u32], reference: &[u32]) -> Result<Vec<i64>> {
    if prediction.is_empty() {
        return Err(Error::invalid("immediate_rewards: empty prediction"));
    }
    if reference.is_empty() {
        return Err(Error::invalid("immediate_rewards: empty reference"));
    }
    let mut dp = PrefixDistance::new(reference);
    let mut prev = reference.len() as i64;
    let mut out = Vec::with_capacity(prediction.len());
    for &tok in prediction {
        if is_character(tok) {
            dp.push(tok);
        }
        let cur = dp.distance() as i64;
        out.push(prev - cur);
        prev = cur;
        if tok == EOS {
            break;
        }
    }
    Ok(out)
}

pub fn immediate_rewards(prediction: &[u32], reference: &[u32]) -> Result<Vec<f64>> {
    Ok(immediate_rewards_exact(prediction, reference)?
        .into_iter()
        .map(|r| r as f64)
        .collect())
}

pub fn discounted_returns(immediate: &[f64], gamma: f64, mode: DiscountMode) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma {gamma} outside [0, 1]")));
    }
    let n = immediate.len();
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    match mode {
        DiscountMode::FromEnd => {
            // gamma^(U-i) does not depend on u, so R_u is a plain suffix sum
            for i in (0..n).rev() {
                acc += gamma.powi((n - 1 - i) as i32) * immediate[i];
                out[i] = acc;
            }
        }
        DiscountMode::Conventional => {
            for i in (0..n).rev() {
                acc = immediate[i] + gamma * acc;
                out[i] = acc;
            }
        }
    }
    Ok(out)
}

pub fn total_reward(returns: &[f64]) -> f64 {
    returns.iter().sum()
}

/// Subtracts a constant baseline from every return.
pub fn apply_baseline(returns: &mut [f64], baseline: f64) {
    for r in returns {
        *r -= baseline;
    }
}
