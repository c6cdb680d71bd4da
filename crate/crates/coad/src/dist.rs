//! Token distributions, logit vectors, and conversions between them.
//!
//! All model outputs in the testbed are [`TokenDist`] values over a shared
//! vocabulary; fusion in logit space goes through [`LogitVec`].

use crate::error::{CoadError, Result};
use serde::{Deserialize, Serialize};

/// Tolerance on the probability sum of a valid [`TokenDist`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Floor applied when taking logs of probabilities, keeping logit
/// arithmetic finite without materially perturbing the distribution.
pub const LOG_FLOOR: f64 = 1e-12;

/// A probability vector over the vocabulary: entries >= 0, summing to 1
/// within [`SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDist(Vec<f64>);

impl TokenDist {
    /// Validates and wraps a probability vector.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(CoadError::DegenerateDistribution);
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(CoadError::DegenerateDistribution);
        }
        Ok(TokenDist(p))
    }

    /// Wraps without validation; callers guarantee the invariants hold.
    pub(crate) fn from_normalized(p: Vec<f64>) -> Self {
        debug_assert!(p.iter().all(|&x| x >= 0.0));
        debug_assert!((p.iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE);
        TokenDist(p)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    /// Index of the largest entry, lowest index winning ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Convex combination `w * self + (1 - w) * other`.
    pub fn blend(&self, other: &TokenDist, w: f64) -> Result<TokenDist> {
        if self.len() != other.len() {
            return Err(CoadError::LengthMismatch {
                what: "blend",
                expected: self.len(),
                got: other.len(),
            });
        }
        debug_assert!((0.0..=1.0).contains(&w));
        let p = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| w * a + (1.0 - w) * b)
            .collect();
        Ok(TokenDist::from_normalized(p))
    }

    /// Largest absolute entry-wise difference to another distribution.
    pub fn max_abs_diff(&self, other: &TokenDist) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Total variation distance, `0.5 * sum |p_i - q_i|`.
    pub fn total_variation(&self, other: &TokenDist) -> f64 {
        0.5 * self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Unnormalized real-valued scores over the vocabulary; all entries finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitVec(Vec<f64>);

impl LogitVec {
    /// Validates that all entries are finite.
    pub fn new(s: Vec<f64>) -> Result<Self> {
        for (index, &value) in s.iter().enumerate() {
            if !value.is_finite() {
                return Err(CoadError::NonFiniteLogit { index, value });
            }
        }
        Ok(LogitVec(s))
    }

    pub(crate) fn from_finite(s: Vec<f64>) -> Self {
        debug_assert!(s.iter().all(|x| x.is_finite()));
        LogitVec(s)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Normalizes a nonnegative vector into a probability distribution.
///
/// Errors with [`CoadError::DegenerateDistribution`] when the input sums
/// to zero (or contains negative/non-finite entries).
pub fn normalize(v: &[f64]) -> Result<TokenDist> {
    if v.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(CoadError::DegenerateDistribution);
    }
    let sum: f64 = v.iter().sum();
    if sum <= 0.0 {
        return Err(CoadError::DegenerateDistribution);
    }
    Ok(TokenDist::from_normalized(
        v.iter().map(|&x| x / sum).collect(),
    ))
}

/// Elementwise `ln(max(p_i, floor))`; the floor keeps zeros finite.
pub fn logits_from_probs(p: &TokenDist, floor: f64) -> LogitVec {
    debug_assert!(floor > 0.0);
    LogitVec::from_finite(p.as_slice().iter().map(|&x| x.max(floor).ln()).collect())
}

/// Temperature softmax over logits: `softmax(s / temperature)`.
///
/// Shift-invariant in `s`; requires `temperature > 0` and finite logits.
pub fn probs_from_logits(s: &LogitVec, temperature: f64) -> Result<TokenDist> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(CoadError::Config(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    softmax_scaled(s.as_slice(), temperature)
}

/// Stable softmax of `scores / temperature` with max subtraction.
pub(crate) fn softmax_scaled(scores: &[f64], temperature: f64) -> Result<TokenDist> {
    for (index, &value) in scores.iter().enumerate() {
        if value.is_nan() || value == f64::INFINITY {
            return Err(CoadError::NonFiniteLogit { index, value });
        }
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(CoadError::DegenerateDistribution);
    }
    let mut out: Vec<f64> = scores
        .iter()
        .map(|&x| ((x - max) / temperature).exp())
        .collect();
    let sum: f64 = out.iter().sum();
    for x in &mut out {
        *x /= sum;
    }
    Ok(TokenDist::from_normalized(out))
}
