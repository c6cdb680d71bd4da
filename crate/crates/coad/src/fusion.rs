//! Decoding-time causal fusion: marginalize the object-conditioned model
//! over detector beliefs and contrast with the pretrained model.
//!
//! The fused next-token distribution is
//! `(1 + alpha) * E_z[P_f(y | x, z)] - alpha * P_p(y | x)`, computed in
//! probability or logit space. With a deterministic mixture weight gamma,
//! a noiseless detector, exact marginalization, and
//! `alpha = (1 - gamma) / gamma`, the fusion inverts the mixture and
//! returns the oracle's distribution exactly.

use crate::dist::{
    logits_from_probs, normalize, probs_from_logits, softmax_scaled, LogitVec, TokenDist,
    LOG_FLOOR,
};
use crate::error::{CoadError, Result};
use crate::types::{ObjectBelief, ObjectVector, Scene};
use crate::world::{
    featurize, pretrained_next_with_percept, sample_z, score_vector, CtxFeatures, WorldModelSuite,
};
use crate::Context;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Contrast strength the reference setup uses for free-form generation.
pub const ALPHA_TEXT_GENERATION: f64 = 1.5;
/// Contrast strength the reference setup uses for presence probing.
pub const ALPHA_PROBING: f64 = 0.1;
/// Hard cap on category count for exact 2^C enumeration.
pub const EXACT_ENUMERATION_LIMIT: usize = 16;

/// The contrast strength that exactly inverts a deterministic mixture
/// weight gamma.
pub fn inversion_alpha(gamma: f64) -> f64 {
    (1.0 - gamma) / gamma
}

/// How the expectation over object vectors is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalMode {
    /// Full sum over all 2^C binary vectors weighted by product-Bernoulli
    /// mass; requires C <= 16.
    Exact,
    /// Average over `samples` Bernoulli draws from the belief.
    MonteCarlo { samples: usize },
    /// Feed the belief vector directly into the conditioned model.
    Soft,
}

/// Which space the contrastive combination happens in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionSpace {
    Probability,
    Logit,
}

/// Fusion hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Contrast strength; 0 disables the contrast entirely.
    pub alpha: f64,
    pub marginal_mode: MarginalMode,
    pub space: FusionSpace,
    /// Value assigned to negative entries in probability space before
    /// renormalizing.
    pub clamp_floor: f64,
    /// Seed for the Monte Carlo sampling stream.
    pub rng_seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            alpha: ALPHA_TEXT_GENERATION,
            marginal_mode: MarginalMode::Soft,
            space: FusionSpace::Logit,
            clamp_floor: 0.0,
            rng_seed: 0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self, categories: usize) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(CoadError::Config(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if self.clamp_floor.is_nan() || self.clamp_floor < 0.0 {
            return Err(CoadError::Config("clamp_floor must be >= 0".into()));
        }
        match self.marginal_mode {
            MarginalMode::Exact if categories > EXACT_ENUMERATION_LIMIT => {
                Err(CoadError::EnumerationLimit {
                    max: EXACT_ENUMERATION_LIMIT,
                    got: categories,
                })
            }
            MarginalMode::MonteCarlo { samples: 0 } => {
                Err(CoadError::Config("monte_carlo samples must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

fn checked_features(
    ctx: &Context,
    belief: &ObjectBelief,
    suite: &WorldModelSuite,
) -> Result<CtxFeatures> {
    if ctx.is_empty() {
        return Err(CoadError::EmptyContext);
    }
    if belief.len() != suite.vocab.categories() {
        return Err(CoadError::LengthMismatch {
            what: "object belief",
            expected: suite.vocab.categories(),
            got: belief.len(),
        });
    }
    Ok(featurize(ctx, &suite.vocab, suite.markov_k))
}

/// Exact expectation of the oracle component over the product-Bernoulli
/// belief, as a raw probability vector.
///
/// Categories with belief exactly 0 or 1 carry no enumeration cost.
fn oracle_exact(
    features: &CtxFeatures,
    belief: &ObjectBelief,
    suite: &WorldModelSuite,
) -> Result<Vec<f64>> {
    let c = belief.len();
    if c > EXACT_ENUMERATION_LIMIT {
        return Err(CoadError::EnumerationLimit {
            max: EXACT_ENUMERATION_LIMIT,
            got: c,
        });
    }
    let free: Vec<usize> = (0..c)
        .filter(|&i| belief.z_tilde[i] > 0.0 && belief.z_tilde[i] < 1.0)
        .collect();
    let mut z = ObjectVector::new(belief.z_tilde.iter().map(|&p| p >= 1.0).collect());
    let mut acc = vec![0.0; suite.vocab.len()];
    for bits in 0u64..(1u64 << free.len()) {
        let mut mass = 1.0;
        for (i, &cat) in free.iter().enumerate() {
            let on = (bits >> i) & 1 == 1;
            z.z[cat] = on;
            mass *= if on {
                belief.z_tilde[cat]
            } else {
                1.0 - belief.z_tilde[cat]
            };
        }
        if mass == 0.0 {
            continue;
        }
        let dist = softmax_scaled(&score_vector(features, &z, &suite.oracle, &suite.vocab), 1.0)?;
        for (a, &p) in acc.iter_mut().zip(dist.as_slice()) {
            *a += mass * p;
        }
    }
    Ok(acc)
}

/// Monte Carlo estimate of the oracle expectation; draws are tallied by
/// outcome so each distinct object vector is evaluated once.
fn oracle_mc<R: Rng>(
    features: &CtxFeatures,
    belief: &ObjectBelief,
    suite: &WorldModelSuite,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(CoadError::Config("monte_carlo samples must be >= 1".into()));
    }
    let mut tally: std::collections::HashMap<u64, u64> = std::collections::HashMap::new();
    for _ in 0..samples {
        let draw = sample_z(belief, rng);
        let mut mask = 0u64;
        for (i, &on) in draw.z.iter().enumerate() {
            if on {
                mask |= 1 << i;
            }
        }
        *tally.entry(mask).or_insert(0) += 1;
    }
    let mut acc = vec![0.0; suite.vocab.len()];
    let mut keys: Vec<u64> = tally.keys().copied().collect();
    keys.sort_unstable();
    for mask in keys {
        let weight = tally[&mask] as f64 / samples as f64;
        let z = ObjectVector::new((0..belief.len()).map(|i| (mask >> i) & 1 == 1).collect());
        let dist = softmax_scaled(&score_vector(features, &z, &suite.oracle, &suite.vocab), 1.0)?;
        for (a, &p) in acc.iter_mut().zip(dist.as_slice()) {
            *a += weight * p;
        }
    }
    Ok(acc)
}

fn blend_with_pretrained(
    oracle_part: Vec<f64>,
    p_pre: &TokenDist,
    gamma: f64,
) -> TokenDist {
    let p = oracle_part
        .into_iter()
        .zip(p_pre.as_slice())
        .map(|(o, &q)| gamma * o + (1.0 - gamma) * q)
        .collect();
    TokenDist::from_normalized(p)
}

/// Exact marginal of the constructed finetuned model over the belief:
/// `sum_z prod-Bernoulli(belief)(z) * P_f(y | x, scene, z)`.
pub fn marginal_finetuned_exact(
    ctx: &Context,
    scene: &Scene,
    belief: &ObjectBelief,
    suite: &WorldModelSuite,
) -> Result<TokenDist> {
    let features = checked_features(ctx, belief, suite)?;
    let percept = suite.percept(scene);
    let p_pre = pretrained_next_with_percept(ctx, &percept, suite)?;
    let oracle_part = oracle_exact(&features, belief, suite)?;
    Ok(blend_with_pretrained(oracle_part, &p_pre, suite.gamma))
}

/// Monte Carlo marginal: average of the finetuned model over `samples`
/// Bernoulli draws from the belief. Unbiased for the exact marginal.
pub fn marginal_finetuned_mc<R: Rng>(
    ctx: &Context,
    scene: &Scene,
    belief: &ObjectBelief,
    suite: &WorldModelSuite,
    samples: usize,
    rng: &mut R,
) -> Result<TokenDist> {
    let features = checked_features(ctx, belief, suite)?;
    let percept = suite.percept(scene);
    let p_pre = pretrained_next_with_percept(ctx, &percept, suite)?;
    let oracle_part = oracle_mc(&features, belief, suite, samples, rng)?;
    Ok(blend_with_pretrained(oracle_part, &p_pre, suite.gamma))
}

/// Probability-based approximation: the belief vector is fed directly
/// into the conditioned model. Coincides with the exact marginal on
/// binary beliefs but generally differs elsewhere.
pub fn marginal_finetuned_soft(
    ctx: &Context,
    scene: &Scene,
    belief: &ObjectBelief,
    suite: &WorldModelSuite,
) -> Result<TokenDist> {
    let features = checked_features(ctx, belief, suite)?;
    let percept = suite.percept(scene);
    let p_pre = pretrained_next_with_percept(ctx, &percept, suite)?;
    let oracle_soft =
        softmax_scaled(&score_vector(&features, belief, &suite.oracle, &suite.vocab), 1.0)?;
    Ok(blend_with_pretrained(
        oracle_soft.as_slice().to_vec(),
        &p_pre,
        suite.gamma,
    ))
}

/// Contrastive combination `(1 + alpha) * p_f - alpha * p_p`.
///
/// In probability space negative entries are clamped to the config floor
/// and the result renormalized; in logit space both inputs are converted
/// with the standard log floor, combined linearly, and softmaxed. At
/// `alpha = 0` the marginal is returned unchanged in both spaces.
pub fn contrast(
    p_marginal: &TokenDist,
    p_pretrained: &TokenDist,
    config: &FusionConfig,
) -> Result<TokenDist> {
    if p_marginal.len() != p_pretrained.len() {
        return Err(CoadError::LengthMismatch {
            what: "contrast inputs",
            expected: p_marginal.len(),
            got: p_pretrained.len(),
        });
    }
    let alpha = config.alpha;
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(CoadError::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(p_marginal.clone());
    }
    match config.space {
        FusionSpace::Probability => {
            let raw: Vec<f64> = p_marginal
                .as_slice()
                .iter()
                .zip(p_pretrained.as_slice())
                .map(|(&f, &p)| (1.0 + alpha) * f - alpha * p)
                .map(|r| if r < 0.0 { config.clamp_floor } else { r })
                .collect();
            normalize(&raw).map_err(|_| CoadError::DegenerateFusion { alpha })
        }
        FusionSpace::Logit => {
            let s_f = logits_from_probs(p_marginal, LOG_FLOOR);
            let s_p = logits_from_probs(p_pretrained, LOG_FLOOR);
            contrast_logits(&s_f, &s_p, alpha)
        }
    }
}

/// Logit-space contrast on raw score vectors:
/// `softmax((1 + alpha) * s_f - alpha * s_p)`.
pub fn contrast_logits(s_f: &LogitVec, s_p: &LogitVec, alpha: f64) -> Result<TokenDist> {
    if s_f.len() != s_p.len() {
        return Err(CoadError::LengthMismatch {
            what: "contrast logits",
            expected: s_f.len(),
            got: s_p.len(),
        });
    }
    let fused: Vec<f64> = s_f
        .as_slice()
        .iter()
        .zip(s_p.as_slice())
        .map(|(&f, &p)| (1.0 + alpha) * f - alpha * p)
        .collect();
    probs_from_logits(&LogitVec::new(fused)?, 1.0)
}

/// Full fused next-token distribution for one decoding step, given the
/// scene's cached detector belief.
///
/// The belief is computed once per scene by the caller (detector output
/// does not depend on the context), so repeated calls across a caption
/// never re-invoke detection.
pub fn coad_next_token<R: Rng>(
    ctx: &Context,
    scene: &Scene,
    belief: &ObjectBelief,
    suite: &WorldModelSuite,
    config: &FusionConfig,
    rng: &mut R,
) -> Result<TokenDist> {
    let percept = suite.percept(scene);
    coad_next_token_with_percept(ctx, &percept, belief, suite, config, rng)
}

/// Hot-path variant taking the precomputed per-scene percept; featurizes
/// the context once and evaluates both models on the shared features.
pub fn coad_next_token_with_percept<R: Rng>(
    ctx: &Context,
    percept: &ObjectVector,
    belief: &ObjectBelief,
    suite: &WorldModelSuite,
    config: &FusionConfig,
    rng: &mut R,
) -> Result<TokenDist> {
    let features = checked_features(ctx, belief, suite)?;
    let p_pre = softmax_scaled(
        &score_vector(&features, percept, &suite.pretrained, &suite.vocab),
        1.0,
    )?;
    let oracle_part = match config.marginal_mode {
        MarginalMode::Exact => oracle_exact(&features, belief, suite)?,
        MarginalMode::MonteCarlo { samples } => {
            oracle_mc(&features, belief, suite, samples, rng)?
        }
        MarginalMode::Soft => {
            softmax_scaled(&score_vector(&features, belief, &suite.oracle, &suite.vocab), 1.0)?
                .as_slice()
                .to_vec()
        }
    };
    let marginal = blend_with_pretrained(oracle_part, &p_pre, suite.gamma);
    contrast(&marginal, &p_pre, config)
}

#[cfg(test)]
mod tests;
