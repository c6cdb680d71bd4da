//! Synthetic multimodal world: scene sampling, the oracle model, the
//! confounded pretrained model, the constructed finetuned mixture, and a
//! simulated object detector.
//!
//! All three models are log-linear over the same context features: the
//! last `markov_k` tokens, the set of object categories already
//! mentioned, and (for object-conditioned models) a per-category
//! conditioning term that is linear in the object vector. Linearity in
//! the object vector is what makes feeding a soft belief directly into a
//! model well-defined.

mod train;

pub use train::{
    sample_mixture_corpus, train_finetuned, trained_next, CaptionRecord, TrainConfig,
};

use crate::dist::{softmax_scaled, TokenDist};
use crate::error::{CoadError, Result};
use crate::seed::{derive_seed, stream};
use crate::types::{Conditioning, Context, ObjectBelief, ObjectVector, Scene};
use crate::vocab::{Vocab, EOS, NO, YES};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Score penalty baked into object-token biases; the category's own
/// conditioning weight cancels it when the object is present, leaving
/// absent-object tokens at near-zero probability.
pub const ABSENCE_PENALTY: f64 = 24.0;

/// Base score lift applied to the YES/NO tokens in probe contexts so the
/// two of them carry essentially all probability mass there.
const PROBE_BASE: f64 = 2.0 * ABSENCE_PENALTY + 8.0;

/// Score swing between YES and NO per unit of probed-category belief.
const PROBE_GAIN: f64 = 8.0;

/// World generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    /// Number of object categories C.
    pub categories: usize,
    /// Number of filler (non-object) tokens.
    pub filler_tokens: usize,
    /// C x C nonnegative language-prior co-occurrence boosts (zero
    /// diagonal) applied only by the pretrained model.
    pub cooccur: Vec<Vec<f64>>,
    /// Marginal presence probability per category.
    pub presence_prior: Vec<f64>,
    /// Per-category rate at which the pretrained model's percept falsely
    /// includes an absent object.
    pub perception_fpr: Vec<f64>,
    /// Per-category rate at which the percept drops a present object.
    pub perception_fnr: Vec<f64>,
    /// Context window length for the tabular scores.
    pub markov_k: usize,
    /// Mixture weight of the constructed finetuned model.
    pub gamma: f64,
    /// World generation seed.
    pub seed: u64,
}

impl WorldConfig {
    /// A config with uniform per-category rates and zero co-occurrence.
    pub fn uniform(
        categories: usize,
        filler_tokens: usize,
        presence: f64,
        fpr: f64,
        fnr: f64,
        gamma: f64,
        seed: u64,
    ) -> Self {
        WorldConfig {
            categories,
            filler_tokens,
            cooccur: vec![vec![0.0; categories]; categories],
            presence_prior: vec![presence; categories],
            perception_fpr: vec![fpr; categories],
            perception_fnr: vec![fnr; categories],
            markov_k: 2,
            gamma,
            seed,
        }
    }

    /// Sets one directed co-occurrence boost.
    pub fn with_cooccur(mut self, from: usize, to: usize, boost: f64) -> Self {
        self.cooccur[from][to] = boost;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.categories;
        if c == 0 {
            return Err(CoadError::Config("categories must be >= 1".into()));
        }
        if c > 64 {
            return Err(CoadError::Config(format!(
                "categories must be <= 64, got {c}"
            )));
        }
        if self.markov_k == 0 {
            return Err(CoadError::Config("markov_k must be >= 1".into()));
        }
        if self.gamma.is_nan() || self.gamma <= 0.0 || self.gamma > 1.0 {
            return Err(CoadError::Config(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        for (name, v) in [
            ("presence_prior", &self.presence_prior),
            ("perception_fpr", &self.perception_fpr),
            ("perception_fnr", &self.perception_fnr),
        ] {
            if v.len() != c {
                return Err(CoadError::Config(format!(
                    "{name} must have length {c}, got {}",
                    v.len()
                )));
            }
            if v.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(CoadError::Config(format!("{name} entries must be in [0, 1]")));
            }
        }
        if self.cooccur.len() != c || self.cooccur.iter().any(|row| row.len() != c) {
            return Err(CoadError::Config(format!("cooccur must be {c}x{c}")));
        }
        for (i, row) in self.cooccur.iter().enumerate() {
            if row[i] != 0.0 {
                return Err(CoadError::Config("cooccur diagonal must be zero".into()));
            }
            if row.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(CoadError::Config("cooccur entries must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Simulated object-detector parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Per-category true-positive detection rate.
    pub tpr: Vec<f64>,
    /// Per-category false-positive detection rate.
    pub fpr: Vec<f64>,
    /// Maps hard detections to soft probabilities; infinity yields
    /// exactly {0, 1} beliefs. JSON stores infinity as null, so null
    /// deserializes back to infinity.
    #[serde(deserialize_with = "sharpness_null_is_infinite")]
    pub confidence_sharpness: f64,
}

fn sharpness_null_is_infinite<'de, D>(deserializer: D) -> std::result::Result<f64, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let value = Option::<f64>::deserialize(deserializer)?;
    Ok(value.unwrap_or(f64::INFINITY))
}

impl DetectorConfig {
    /// A detector that reports the ground truth exactly.
    pub fn noiseless(categories: usize) -> Self {
        DetectorConfig {
            tpr: vec![1.0; categories],
            fpr: vec![0.0; categories],
            confidence_sharpness: f64::INFINITY,
        }
    }

    /// Uniform per-category rates.
    pub fn uniform(categories: usize, tpr: f64, fpr: f64, sharpness: f64) -> Self {
        DetectorConfig {
            tpr: vec![tpr; categories],
            fpr: vec![fpr; categories],
            confidence_sharpness: sharpness,
        }
    }

    pub fn validate(&self, categories: usize) -> Result<()> {
        if self.tpr.len() != categories || self.fpr.len() != categories {
            return Err(CoadError::Config(format!(
                "detector rates must have length {categories}"
            )));
        }
        for v in [&self.tpr, &self.fpr] {
            if v.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(CoadError::Config("detector rates must be in [0, 1]".into()));
            }
        }
        if self.confidence_sharpness.is_nan() || self.confidence_sharpness <= 0.0 {
            return Err(CoadError::Config(
                "confidence_sharpness must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Log-linear score tables of one model.
///
/// `score(x, z, y) = bias[y] + sum_j prev[j][x_(-1-j)][y]
///                 + sum_(c mentioned) mention[c][y]
///                 + sum_c z_c * zweight[c][y]`,
/// plus a probe-response term on YES/NO when the context ends with a
/// presence question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTables {
    pub bias: Vec<f64>,
    /// `prev[j][t][y]`: influence of the context token `t` at offset
    /// `j + 1` from the end on the score of output token `y`.
    pub prev: Vec<Vec<Vec<f64>>>,
    /// `mention[c][y]`: influence of already-mentioned category `c`.
    pub mention: Vec<Vec<f64>>,
    /// `zweight[c][y]`: object-conditioning weights, linear in z.
    pub zweight: Vec<Vec<f64>>,
    /// Score lift for YES/NO in probe contexts.
    pub probe_base: f64,
    /// YES-vs-NO swing per unit of probed-category belief.
    pub probe_gain: f64,
}

impl ScoreTables {
    pub fn zeros(markov_k: usize, vocab_len: usize, categories: usize) -> Self {
        ScoreTables {
            bias: vec![0.0; vocab_len],
            prev: vec![vec![vec![0.0; vocab_len]; vocab_len]; markov_k],
            mention: vec![vec![0.0; vocab_len]; categories],
            zweight: vec![vec![0.0; vocab_len]; categories],
            probe_base: 0.0,
            probe_gain: 0.0,
        }
    }
}

/// Context features consumed by the tabular score function.
#[derive(Debug, Clone, PartialEq)]
pub struct CtxFeatures {
    /// Last `markov_k` tokens, most recent first.
    pub window: Vec<usize>,
    /// Bitmask of categories whose naming token appears in the context.
    pub mentioned: u64,
    /// `Some(c)` when the context ends with `[.., PROBE, token_of(c)]`.
    pub probe: Option<usize>,
}

/// Extracts the score-relevant features of a context.
pub fn featurize(ctx: &Context, vocab: &Vocab, markov_k: usize) -> CtxFeatures {
    let toks = ctx.tokens();
    let window: Vec<usize> = toks.iter().rev().take(markov_k).copied().collect();
    let mut mentioned = 0u64;
    for &t in toks {
        if let Some(c) = vocab.token_category(t) {
            mentioned |= 1 << c;
        }
    }
    let probe = if toks.len() >= 2 && toks[toks.len() - 2] == crate::vocab::PROBE {
        vocab.token_category(toks[toks.len() - 1])
    } else {
        None
    };
    CtxFeatures {
        window,
        mentioned,
        probe,
    }
}

/// Raw score vector of one model given features and an object conditioning.
pub fn score_vector<Z: Conditioning>(
    features: &CtxFeatures,
    z: &Z,
    tables: &ScoreTables,
    vocab: &Vocab,
) -> Vec<f64> {
    let v = vocab.len();
    let mut s = tables.bias.clone();
    for (j, &tok) in features.window.iter().enumerate() {
        let row = &tables.prev[j][tok];
        for y in 0..v {
            s[y] += row[y];
        }
    }
    let mut mask = features.mentioned;
    while mask != 0 {
        let c = mask.trailing_zeros() as usize;
        mask &= mask - 1;
        let row = &tables.mention[c];
        for y in 0..v {
            s[y] += row[y];
        }
    }
    for c in 0..vocab.categories() {
        let w = z.coeff(c);
        if w != 0.0 {
            let row = &tables.zweight[c];
            for y in 0..v {
                s[y] += w * row[y];
            }
        }
    }
    if let Some(cp) = features.probe {
        s[YES] += tables.probe_base + tables.probe_gain * (z.coeff(cp) - 0.5);
        s[NO] += tables.probe_base;
    }
    s
}

/// Softmax next-token distribution of a log-linear model conditioned on
/// an object vector or belief.
pub fn conditional_next<Z: Conditioning>(
    ctx: &Context,
    z: &Z,
    tables: &ScoreTables,
    vocab: &Vocab,
    markov_k: usize,
) -> Result<TokenDist> {
    if ctx.is_empty() {
        return Err(CoadError::EmptyContext);
    }
    if z.dim() != vocab.categories() {
        return Err(CoadError::LengthMismatch {
            what: "object conditioning",
            expected: vocab.categories(),
            got: z.dim(),
        });
    }
    let features = featurize(ctx, vocab, markov_k);
    softmax_scaled(&score_vector(&features, z, tables, vocab), 1.0)
}

/// Parameters of the oracle, the pretrained model, and the finetuned
/// mixture, sharing one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldModelSuite {
    pub vocab: Vocab,
    pub markov_k: usize,
    /// Tables of the oracle; also the z-conditioned half of the
    /// constructed finetuned model.
    pub oracle: ScoreTables,
    /// Oracle tables plus co-occurrence boosts; conditioned on the
    /// frozen per-scene percept rather than a z input.
    pub pretrained: ScoreTables,
    pub perception_fpr: Vec<f64>,
    pub perception_fnr: Vec<f64>,
    /// Seed for deriving per-scene percept corruption.
    pub percept_seed: u64,
    /// Mixture weight of the constructed finetuned model.
    pub gamma: f64,
    /// Optional maximum-likelihood fit of the finetuned model.
    pub trained_f: Option<ScoreTables>,
}

impl WorldModelSuite {
    /// The pretrained model's frozen, possibly corrupted view of a scene.
    ///
    /// Deterministic per scene; independent of the decoding context.
    pub fn percept(&self, scene: &Scene) -> ObjectVector {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.percept_seed,
            &[stream::PERCEPT, scene.seed],
        ));
        let z = scene
            .z_star
            .iter()
            .enumerate()
            .map(|(c, &present)| {
                let flip: f64 = rng.gen();
                if present {
                    flip >= self.perception_fnr[c]
                } else {
                    flip < self.perception_fpr[c]
                }
            })
            .collect();
        ObjectVector::new(z)
    }
}

/// Builds the model suite for a world configuration.
///
/// Deterministic given `config.seed`. Oracle conditioning weights cancel
/// the object-token absence penalty exactly when a category is present,
/// so absent-object tokens stay below 1e-6 probability under the oracle.
pub fn generate_world(config: &WorldConfig) -> Result<WorldModelSuite> {
    config.validate()?;
    let vocab = Vocab::build(config.categories, config.filler_tokens)?;
    let v = vocab.len();
    let c = config.categories;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[stream::WORLD]));

    let mut oracle = ScoreTables::zeros(config.markov_k, v, c);
    oracle.probe_base = PROBE_BASE;
    oracle.probe_gain = PROBE_GAIN;

    for y in 0..v {
        oracle.bias[y] = match vocab.token_category(y) {
            Some(_) => -ABSENCE_PENALTY + rng.gen_range(-0.3..0.3),
            None if y == EOS => -0.5,
            None if vocab.filler_range().contains(&y) => rng.gen_range(-1.0..1.0),
            // BOS, YES, NO, PROBE are never generated in captions.
            None => -2.0 * ABSENCE_PENALTY,
        };
    }

    // Context tokens mildly reshape fillers and object tokens; specials
    // and EOS are left to bias/mention terms so captions stay acyclic.
    for slot in &mut oracle.prev {
        for t in 0..v {
            for y in 0..v {
                slot[t][y] = if vocab.filler_range().contains(&y) {
                    rng.gen_range(-0.5..0.5)
                } else if vocab.token_category(y).is_some() {
                    rng.gen_range(-0.2..0.2)
                } else {
                    0.0
                };
            }
        }
    }
    // Discourage immediate filler self-repeats.
    for t in vocab.filler_range() {
        oracle.prev[0][t][t] -= 1.2;
    }

    for cat in 0..c {
        // Repeat suppression on the category's own token; mentioning
        // anything nudges the caption toward wrapping up.
        oracle.mention[cat][vocab.category_token(cat)] = -3.0;
        oracle.mention[cat][EOS] = 0.7;
    }

    for cat in 0..c {
        for y in 0..v {
            oracle.zweight[cat][y] = match vocab.token_category(y) {
                Some(yc) if yc == cat => ABSENCE_PENALTY + rng.gen_range(1.2..2.2),
                Some(_) => rng.gen_range(-0.08..0.08),
                None if y == EOS => -0.2,
                None if vocab.filler_range().contains(&y) => rng.gen_range(-0.08..0.08),
                None => 0.0,
            };
        }
    }

    // The pretrained model shares every oracle parameter and adds the
    // language-prior co-occurrence boosts on recent context tokens.
    let mut pretrained = oracle.clone();
    for slot in &mut pretrained.prev {
        for t in 0..v {
            if let Some(tc) = vocab.token_category(t) {
                for y in 0..v {
                    if let Some(yc) = vocab.token_category(y) {
                        slot[t][y] += config.cooccur[tc][yc];
                    }
                }
            }
        }
    }

    Ok(WorldModelSuite {
        vocab,
        markov_k: config.markov_k,
        oracle,
        pretrained,
        perception_fpr: config.perception_fpr.clone(),
        perception_fnr: config.perception_fnr.clone(),
        percept_seed: derive_seed(config.seed, &[stream::PERCEPT]),
        gamma: config.gamma,
        trained_f: None,
    })
}

/// Draws a scene: independent Bernoulli presence per category, with a
/// fresh seed recorded as the scene identity.
pub fn sample_scene<R: Rng + RngCore>(config: &WorldConfig, rng: &mut R) -> Scene {
    let seed = rng.next_u64();
    let z_star = config
        .presence_prior
        .iter()
        .map(|&p| rng.gen::<f64>() < p)
        .collect();
    Scene::new(z_star, seed)
}

/// Oracle next-token distribution given a hard or soft object conditioning.
pub fn oracle_next<Z: Conditioning>(
    ctx: &Context,
    z: &Z,
    suite: &WorldModelSuite,
) -> Result<TokenDist> {
    conditional_next(ctx, z, &suite.oracle, &suite.vocab, suite.markov_k)
}

/// Pretrained next-token distribution; reads only the context and the
/// scene (through its frozen percept), never a z input.
pub fn pretrained_next(ctx: &Context, scene: &Scene, suite: &WorldModelSuite) -> Result<TokenDist> {
    let percept = suite.percept(scene);
    pretrained_next_with_percept(ctx, &percept, suite)
}

/// Hot-path variant taking a precomputed percept.
pub fn pretrained_next_with_percept(
    ctx: &Context,
    percept: &ObjectVector,
    suite: &WorldModelSuite,
) -> Result<TokenDist> {
    conditional_next(ctx, percept, &suite.pretrained, &suite.vocab, suite.markov_k)
}

/// Constructed finetuned model: the pointwise convex mixture
/// `gamma * oracle(x, z) + (1 - gamma) * pretrained(x, scene)`.
pub fn finetuned_constructed_next<Z: Conditioning>(
    ctx: &Context,
    scene: &Scene,
    z: &Z,
    suite: &WorldModelSuite,
) -> Result<TokenDist> {
    let p_star = oracle_next(ctx, z, suite)?;
    let p_pre = pretrained_next(ctx, scene, suite)?;
    p_star.blend(&p_pre, suite.gamma)
}

/// Simulated object detection: per-category hard detections drawn from
/// tpr/fpr, mapped to soft presence probabilities.
///
/// The soft value is the Bayesian posterior implied by the detection
/// outcome, pulled toward 0.5 by finite `confidence_sharpness`; an
/// infinite sharpness with a noise-free detector reproduces the ground
/// truth exactly as {0, 1} reals.
pub fn detect<R: Rng>(scene: &Scene, dconfig: &DetectorConfig, rng: &mut R) -> Result<ObjectBelief> {
    dconfig.validate(scene.categories())?;
    let confidence = 1.0 - (-dconfig.confidence_sharpness).exp();
    let z_tilde = scene
        .z_star
        .iter()
        .enumerate()
        .map(|(c, &present)| {
            let rate = if present {
                dconfig.tpr[c]
            } else {
                dconfig.fpr[c]
            };
            let detected = rng.gen::<f64>() < rate;
            let posterior = if detected {
                let denom = dconfig.tpr[c] + dconfig.fpr[c];
                if denom > 0.0 {
                    dconfig.tpr[c] / denom
                } else {
                    0.5
                }
            } else {
                let denom = (1.0 - dconfig.tpr[c]) + (1.0 - dconfig.fpr[c]);
                if denom > 0.0 {
                    (1.0 - dconfig.tpr[c]) / denom
                } else {
                    0.5
                }
            };
            0.5 + (posterior - 0.5) * confidence
        })
        .collect();
    ObjectBelief::new(z_tilde)
}

/// Independent per-category Bernoulli draw from a belief vector.
pub fn sample_z<R: Rng>(belief: &ObjectBelief, rng: &mut R) -> ObjectVector {
    ObjectVector::new(
        belief
            .z_tilde
            .iter()
            .map(|&p| rng.gen::<f64>() < p)
            .collect(),
    )
}
