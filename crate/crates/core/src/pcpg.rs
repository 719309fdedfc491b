//! Pseudo-convolution over per-step policy-gradient losses.
//!
//! Per-step losses `L_u = -R_u * log P(y_u)` are mapped through a sliding
//! window of `k` shared weights moved with stride `s`, and the window outputs
//! are summed into a single loss. With `k = 1, s = 1, w = [1]` this is the
//! plain REINFORCE loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How window taps that fall outside `[0, U)` are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// Out-of-range taps read a zero loss.
    #[default]
    Zero,
    /// Out-of-range taps are dropped and the remaining weights renormalized.
    Truncate,
}

/// Window size, stride and the shared weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PcpgKernel {
    size: usize,
    stride: usize,
    weights: Vec<f64>,
}

impl PcpgKernel {
    /// Builds a kernel, rescaling `weights` to sum to one.
    ///
    /// The last weight is set to `1 - (w_1 + ... + w_{k-1})` so the
    /// left-to-right floating point sum is exactly `1.0`.
    pub fn new(size: usize, stride: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || stride == 0 {
            return Err(Error::invalid(format!(
                "kernel size and stride must be positive (k={size}, s={stride})"
            )));
        }
        if weights.len() != size {
            return Err(Error::invalid(format!(
                "kernel of size {size} given {} weights",
                weights.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        if !total.is_finite() || total.abs() < 1e-12 || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid(format!(
                "kernel weights {weights:?} cannot be normalized"
            )));
        }
        let mut weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let head: f64 = weights[..size - 1].iter().sum();
        weights[size - 1] = 1.0 - head;
        Ok(Self {
            size,
            stride,
            weights,
        })
    }

    pub fn uniform(size: usize, stride: usize) -> Result<Self> {
        Self::new(size, stride, vec![1.0; size])
    }

    /// `k = 1, s = 1, w = [1]`.
    pub fn identity() -> Self {
        Self {
            size: 1,
            stride: 1,
            weights: vec![1.0],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of windows emitted over a sequence of length `len`.
    pub fn num_windows(&self, len: usize) -> usize {
        if len == 0 {
            0
        } else {
            (len - 1) / self.stride + 1
        }
    }

    fn half(&self) -> usize {
        self.size / 2
    }
}

impl Default for PcpgKernel {
    /// `k = 5, s = 1`, uniform weights.
    fn default() -> Self {
        Self::uniform(5, 1).expect("valid default kernel")
    }
}

/// `L_u = -R_u * log_probs[u]`.
pub fn per_step_losses(returns: &[f64], log_probs: &[f64]) -> Result<Vec<f64>> {
    if returns.len() != log_probs.len() {
        return Err(Error::invalid(format!(
            "per_step_losses: {} returns vs {} log-probabilities",
            returns.len(),
            log_probs.len()
        )));
    }
    Ok(returns
        .iter()
        .zip(log_probs)
        .map(|(r, lp)| -r * lp)
        .collect())
}

/// Windowed losses at centers `0, s, 2s, ... < U` (0-based).
pub fn window_map(losses: &[f64], kernel: &PcpgKernel, padding: Padding) -> Vec<f64> {
    let n = losses.len() as isize;
    let half = kernel.half() as isize;
    (0..losses.len())
        .step_by(kernel.stride)
        .map(|center| {
            let start = center as isize - half;
            let mut acc = 0.0;
            let mut mass = 0.0;
            for (j, &w) in kernel.weights.iter().enumerate() {
                let idx = start + j as isize;
                if (0..n).contains(&idx) {
                    acc += w * losses[idx as usize];
                    mass += w;
                }
            }
            match padding {
                Padding::Zero => acc,
                Padding::Truncate => acc / mass,
            }
        })
        .collect()
}

/// Sum of window outputs.
pub fn aggregate(mapped: &[f64]) -> f64 {
    mapped.iter().sum()
}

/// Per-position weight with which each `L_i` enters the aggregate.
///
/// Accumulated position by position, independently of [`window_map`], so
/// that `aggregate(window_map(L)) == dot(coefficient_map(U), L)` is a real
/// cross-check.
pub fn coefficient_map(kernel: &PcpgKernel, len: usize, padding: Padding) -> Vec<f64> {
    let half = kernel.half();
    let k = kernel.size;
    let s = kernel.stride;
    // in-range weight mass of the window centred at c
    let mass = |c: usize| -> f64 {
        (0..k)
            .filter(|&j| c + j >= half && c + j - half < len)
            .map(|j| kernel.weights[j])
            .sum()
    };
    (0..len)
        .map(|i| {
            let mut c_i = 0.0;
            for j in 0..k {
                // tap j of the window centred at c lands on i when c = i + half - j
                let Some(center) = (i + half).checked_sub(j) else {
                    continue;
                };
                if center < len && center % s == 0 {
                    c_i += match padding {
                        Padding::Zero => kernel.weights[j],
                        Padding::Truncate => kernel.weights[j] / mass(center),
                    };
                }
            }
            c_i
        })
        .collect()
}

/// Dense `(windows x U)` matrix of the window map, one row per emitted window.
pub fn window_matrix(kernel: &PcpgKernel, len: usize, padding: Padding) -> Vec<Vec<f64>> {
    let rows = kernel.num_windows(len);
    let mut m = vec![vec![0.0; len]; rows];
    let mut basis = vec![0.0; len];
    for col in 0..len {
        basis[col] = 1.0;
        for (row, v) in window_map(&basis, kernel, padding).into_iter().enumerate() {
            m[row][col] = v;
        }
        basis[col] = 0.0;
    }
    m
}

/// `aggregate(window_map(per_step_losses(returns, log_probs)))`.
pub fn pcpg_loss(
    returns: &[f64],
    log_probs: &[f64],
    kernel: &PcpgKernel,
    padding: Padding,
) -> Result<f64> {
    let losses = per_step_losses(returns, log_probs)?;
    Ok(aggregate(&window_map(&losses, kernel, padding)))
}

/// `(1 - lambda) * ce + lambda * pcpg`.
pub fn combine(ce: f64, pcpg: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok((1.0 - lambda) * ce + lambda * pcpg)
}
