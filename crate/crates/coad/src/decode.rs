//! Autoregressive generation and yes/no presence probing on top of any
//! next-token source: the oracle, the base pretrained model, the
//! marginalized finetuned model, or the fused decoders.

use crate::dist::TokenDist;
use crate::error::{CoadError, Result};
use crate::fusion::{
    coad_next_token_with_percept, contrast, marginal_finetuned_exact, marginal_finetuned_mc,
    marginal_finetuned_soft, FusionConfig, MarginalMode,
};
use crate::seed::{derive_seed, stream};
use crate::types::{Context, ObjectBelief, ObjectVector, Scene};
use crate::vocab::{Vocab, BOS, EOS, NO, PROBE, YES};
use crate::world::{
    oracle_next, pretrained_next_with_percept, score_vector, WorldModelSuite,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Token selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// Decoding policy; the default mirrors the reference setup (sampling at
/// temperature 0.2, at most 512 output tokens).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodePolicy {
    pub mode: DecodeMode,
    /// Sampling temperature, applied after fusion to the source's
    /// temperature-1 output.
    pub temperature: f64,
    pub max_tokens: usize,
    pub rng_seed: u64,
}

impl Default for DecodePolicy {
    fn default() -> Self {
        DecodePolicy {
            mode: DecodeMode::Sample,
            temperature: 0.2,
            max_tokens: 512,
            rng_seed: 0,
        }
    }
}

impl DecodePolicy {
    pub fn greedy(max_tokens: usize) -> Self {
        DecodePolicy {
            mode: DecodeMode::Greedy,
            temperature: 1.0,
            max_tokens,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_tokens == 0 {
            return Err(CoadError::Config("max_tokens must be >= 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(CoadError::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Which model family produced a caption or probe answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Oracle,
    Base,
    MfOnly,
    Coad,
    CoadNoZ,
}

impl SourceTag {
    pub const ALL: [SourceTag; 5] = [
        SourceTag::Oracle,
        SourceTag::Base,
        SourceTag::MfOnly,
        SourceTag::Coad,
        SourceTag::CoadNoZ,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SourceTag::Oracle => "oracle",
            SourceTag::Base => "base",
            SourceTag::MfOnly => "mf_only",
            SourceTag::Coad => "coad",
            SourceTag::CoadNoZ => "coad_no_z",
        }
    }
}

impl std::fmt::Display for SourceTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SourceTag {
    type Err = CoadError;

    fn from_str(s: &str) -> Result<Self> {
        SourceTag::ALL
            .iter()
            .find(|t| t.as_str() == s)
            .copied()
            .ok_or_else(|| CoadError::Config(format!("unknown source tag: {s}")))
    }
}

/// A generated response (prompt excluded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub tokens: Vec<usize>,
    /// Seed identity of the scene the caption describes.
    pub scene_ref: u64,
    pub source_tag: SourceTag,
}

impl Caption {
    pub fn ends_with_eos(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }
}

/// A next-token distribution provider bound to one scene.
pub trait NextTokenSource {
    fn next_dist(&mut self, ctx: &Context) -> Result<TokenDist>;
    fn tag(&self) -> SourceTag;
}

/// The oracle conditioned on the scene's ground truth.
pub struct OracleSource<'a> {
    suite: &'a WorldModelSuite,
    truth: ObjectVector,
}

impl<'a> OracleSource<'a> {
    pub fn new(suite: &'a WorldModelSuite, scene: &Scene) -> Self {
        OracleSource {
            suite,
            truth: scene.truth(),
        }
    }
}

impl NextTokenSource for OracleSource<'_> {
    fn next_dist(&mut self, ctx: &Context) -> Result<TokenDist> {
        oracle_next(ctx, &self.truth, self.suite)
    }

    fn tag(&self) -> SourceTag {
        SourceTag::Oracle
    }
}

/// The pretrained model on its frozen percept of the scene.
pub struct BaseSource<'a> {
    suite: &'a WorldModelSuite,
    percept: ObjectVector,
}

impl<'a> BaseSource<'a> {
    pub fn new(suite: &'a WorldModelSuite, scene: &Scene) -> Self {
        BaseSource {
            percept: suite.percept(scene),
            suite,
        }
    }
}

impl NextTokenSource for BaseSource<'_> {
    fn next_dist(&mut self, ctx: &Context) -> Result<TokenDist> {
        pretrained_next_with_percept(ctx, &self.percept, self.suite)
    }

    fn tag(&self) -> SourceTag {
        SourceTag::Base
    }
}

/// The finetuned model marginalized over the scene's detector belief,
/// without any contrast.
pub struct MfOnlySource<'a> {
    suite: &'a WorldModelSuite,
    scene: Scene,
    belief: ObjectBelief,
    mode: MarginalMode,
    rng: ChaCha8Rng,
}

impl<'a> MfOnlySource<'a> {
    /// `belief` is the detector output for this scene, computed once.
    pub fn new(
        suite: &'a WorldModelSuite,
        scene: &Scene,
        belief: ObjectBelief,
        mode: MarginalMode,
        mc_seed: u64,
    ) -> Self {
        MfOnlySource {
            suite,
            scene: scene.clone(),
            belief,
            mode,
            rng: ChaCha8Rng::seed_from_u64(mc_seed),
        }
    }
}

impl NextTokenSource for MfOnlySource<'_> {
    fn next_dist(&mut self, ctx: &Context) -> Result<TokenDist> {
        match self.mode {
            MarginalMode::Exact => {
                marginal_finetuned_exact(ctx, &self.scene, &self.belief, self.suite)
            }
            MarginalMode::MonteCarlo { samples } => marginal_finetuned_mc(
                ctx,
                &self.scene,
                &self.belief,
                self.suite,
                samples,
                &mut self.rng,
            ),
            MarginalMode::Soft => {
                marginal_finetuned_soft(ctx, &self.scene, &self.belief, self.suite)
            }
        }
    }

    fn tag(&self) -> SourceTag {
        SourceTag::MfOnly
    }
}

/// The full fused decoder.
pub struct CoadSource<'a> {
    suite: &'a WorldModelSuite,
    percept: ObjectVector,
    belief: ObjectBelief,
    config: FusionConfig,
    rng: ChaCha8Rng,
}

impl<'a> CoadSource<'a> {
    /// `belief` is the detector output for this scene; detection happens
    /// once per scene, never per token.
    pub fn new(
        suite: &'a WorldModelSuite,
        scene: &Scene,
        belief: ObjectBelief,
        config: FusionConfig,
        mc_seed: u64,
    ) -> Self {
        CoadSource {
            percept: suite.percept(scene),
            suite,
            belief,
            config,
            rng: ChaCha8Rng::seed_from_u64(mc_seed),
        }
    }
}

impl NextTokenSource for CoadSource<'_> {
    fn next_dist(&mut self, ctx: &Context) -> Result<TokenDist> {
        coad_next_token_with_percept(
            ctx,
            &self.percept,
            &self.belief,
            self.suite,
            &self.config,
            &mut self.rng,
        )
    }

    fn tag(&self) -> SourceTag {
        SourceTag::Coad
    }
}

/// Contrastive decoding without any object vector: the finetuned half is
/// replaced by a normally finetuned model whose only grounding is the
/// same corrupted percept the pretrained model uses.
pub struct CoadNoZSource<'a> {
    suite: &'a WorldModelSuite,
    percept: ObjectVector,
    config: FusionConfig,
}

impl<'a> CoadNoZSource<'a> {
    pub fn new(suite: &'a WorldModelSuite, scene: &Scene, config: FusionConfig) -> Self {
        CoadNoZSource {
            percept: suite.percept(scene),
            suite,
            config,
        }
    }
}

impl NextTokenSource for CoadNoZSource<'_> {
    fn next_dist(&mut self, ctx: &Context) -> Result<TokenDist> {
        if ctx.is_empty() {
            return Err(CoadError::EmptyContext);
        }
        let suite = self.suite;
        let features = crate::world::featurize(ctx, &suite.vocab, suite.markov_k);
        let p_pre = crate::dist::softmax_scaled(
            &score_vector(&features, &self.percept, &suite.pretrained, &suite.vocab),
            1.0,
        )?;
        let p_star_at_percept = crate::dist::softmax_scaled(
            &score_vector(&features, &self.percept, &suite.oracle, &suite.vocab),
            1.0,
        )?;
        let mf_no_z = p_star_at_percept.blend(&p_pre, suite.gamma)?;
        contrast(&mf_no_z, &p_pre, &self.config)
    }

    fn tag(&self) -> SourceTag {
        SourceTag::CoadNoZ
    }
}

/// Generates a caption by repeatedly querying the source with the prefix
/// built so far, selecting per policy, and appending, until EOS or
/// `max_tokens`. Deterministic given the policy seed and the scene.
pub fn generate(
    scene: &Scene,
    prompt: &Context,
    source: &mut dyn NextTokenSource,
    policy: &DecodePolicy,
) -> Result<Caption> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        policy.rng_seed,
        &[stream::DECODE, scene.seed],
    ));
    generate_with_rng(scene, prompt, source, policy, &mut rng)
}

/// Generation with an externally owned RNG stream.
pub fn generate_with_rng<R: Rng>(
    scene: &Scene,
    prompt: &Context,
    source: &mut dyn NextTokenSource,
    policy: &DecodePolicy,
    rng: &mut R,
) -> Result<Caption> {
    policy.validate()?;
    if prompt.tokens().first() != Some(&BOS) {
        return Err(CoadError::Config("prompt must start with BOS".into()));
    }
    let mut ctx = prompt.clone();
    let mut tokens = Vec::new();
    for step in 0..policy.max_tokens {
        let dist = source.next_dist(&ctx).map_err(|e| CoadError::GenerationStep {
            step,
            source: Box::new(e),
        })?;
        let tok = select_token(&dist, policy, rng);
        tokens.push(tok);
        ctx.push(tok);
        if tok == EOS {
            break;
        }
    }
    Ok(Caption {
        tokens,
        scene_ref: scene.seed,
        source_tag: source.tag(),
    })
}

/// Greedy argmax (lowest index wins ties) or temperature sampling.
pub(crate) fn select_token<R: Rng>(dist: &TokenDist, policy: &DecodePolicy, rng: &mut R) -> usize {
    match policy.mode {
        DecodeMode::Greedy => dist.argmax(),
        DecodeMode::Sample => {
            // Work on log-probabilities so tiny temperatures stay stable.
            let logs: Vec<f64> = dist.as_slice().iter().map(|&p| p.ln()).collect();
            let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logs
                .iter()
                .map(|&l| ((l - max) / policy.temperature).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            let mut u: f64 = rng.gen::<f64>() * total;
            for (i, &w) in weights.iter().enumerate() {
                u -= w;
                if u < 0.0 {
                    return i;
                }
            }
            weights.len() - 1
        }
    }
}

/// Outcome of a presence probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeAnswer {
    pub yes: bool,
    /// `P(yes) / (P(yes) + P(no))` under the source's distribution.
    pub p_yes: f64,
}

/// Asks the source whether `category` is present, via the fixed probe
/// prompt `[BOS, PROBE, category token]`.
///
/// Answers yes iff the source puts more mass on YES than NO (ties answer
/// no). The answer reads the source's distribution directly, so no
/// decoding policy is involved.
pub fn answer_probe(
    category: usize,
    source: &mut dyn NextTokenSource,
    vocab: &Vocab,
) -> Result<ProbeAnswer> {
    if category >= vocab.categories() {
        return Err(CoadError::LengthMismatch {
            what: "probe category",
            expected: vocab.categories(),
            got: category,
        });
    }
    let ctx = Context::new(vec![BOS, PROBE, vocab.category_token(category)], vocab)?;
    let dist = source.next_dist(&ctx)?;
    let p_yes_raw = dist.get(YES);
    let p_no = dist.get(NO);
    let total = p_yes_raw + p_no;
    if total <= 0.0 {
        return Err(CoadError::DegenerateProbe { category });
    }
    Ok(ProbeAnswer {
        yes: p_yes_raw > p_no,
        p_yes: p_yes_raw / total,
    })
}
