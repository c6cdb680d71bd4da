//! Maximum-likelihood fit of the object-conditioned model from mixture
//! captions, plus the corpus generator.
//!
//! The fit is a softmax regression over the same feature set the
//! constructed models use, so a corpus drawn purely from one generator is
//! exactly representable. Training is full-batch Adam on sufficient
//! statistics with a fixed step count; everything is deterministic given
//! the config seed.

use super::{featurize, CtxFeatures, ScoreTables, WorldModelSuite};
use crate::dist::{softmax_scaled, TokenDist};
use crate::error::{CoadError, Result};
use crate::types::{Conditioning, Context, ObjectBelief, Scene};
use crate::vocab::EOS;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Gaussian noise scale applied to context-feature values when context
/// perturbation is enabled.
const CONTEXT_NOISE_SIGMA: f64 = 0.005;
/// Probability that a training sample's context features are perturbed.
const CONTEXT_NOISE_PROB: f64 = 0.5;

/// Fixed-step training schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Perturb context-feature values with Gaussian noise during training.
    pub context_noise: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            learning_rate: 0.2,
            context_noise: false,
            seed: 0,
        }
    }
}

/// One finetuning example: a scene, the object belief supplied to the
/// model, and a caption drawn from the mixture process.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionRecord {
    pub scene: Scene,
    pub z: ObjectBelief,
    pub caption: Vec<usize>,
}

/// Samples captions from the mixture process: at every step the token is
/// drawn from the oracle with probability `gamma`, else from the
/// pretrained model, which is exactly temperature-1 sampling from the
/// gamma-blend of the two. `gamma` may be 0 or 1 here even though a
/// suite's own mixture weight cannot.
pub fn sample_mixture_corpus<R: Rng>(
    suite: &WorldModelSuite,
    scenes: &[Scene],
    beliefs: &[ObjectBelief],
    gamma: f64,
    max_tokens: usize,
    rng: &mut R,
) -> Result<Vec<CaptionRecord>> {
    if scenes.len() != beliefs.len() {
        return Err(CoadError::LengthMismatch {
            what: "corpus beliefs",
            expected: scenes.len(),
            got: beliefs.len(),
        });
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(CoadError::Config(format!(
            "corpus gamma must be in [0, 1], got {gamma}"
        )));
    }
    let mut corpus = Vec::with_capacity(scenes.len());
    for (scene, z) in scenes.iter().zip(beliefs) {
        let percept = suite.percept(scene);
        let mut ctx = Context::bos();
        let mut caption = Vec::new();
        for _ in 0..max_tokens {
            let p_star = super::oracle_next(&ctx, z, suite)?;
            let p_pre = super::pretrained_next_with_percept(&ctx, &percept, suite)?;
            let dist = p_star.blend(&p_pre, gamma)?;
            let tok = sample_index(&dist, rng);
            caption.push(tok);
            ctx.push(tok);
            if tok == EOS {
                break;
            }
        }
        corpus.push(CaptionRecord {
            scene: scene.clone(),
            z: z.clone(),
            caption,
        });
    }
    Ok(corpus)
}

fn sample_index<R: Rng>(dist: &TokenDist, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in dist.as_slice().iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.len() - 1
}

/// Grouping key for sufficient statistics: the score function depends on
/// the context only through these features plus the belief.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct FeatKey {
    window: Vec<usize>,
    mentioned: u64,
    z_bits: Vec<u64>,
}

struct Group {
    features: CtxFeatures,
    z: ObjectBelief,
    counts: Vec<f64>,
    total: f64,
}

/// Fits log-linear parameters by maximum likelihood on the caption corpus.
///
/// Returns the fitted tables; the caller may attach them to the suite as
/// `trained_f`. Probe-response parameters are untrainable here (captions
/// contain no probes) and stay zero.
pub fn train_finetuned(
    corpus: &[CaptionRecord],
    suite: &WorldModelSuite,
    cfg: &TrainConfig,
) -> Result<ScoreTables> {
    if corpus.is_empty() {
        return Err(CoadError::EmptyCorpus);
    }
    let vocab = &suite.vocab;
    let v = vocab.len();
    let c = vocab.categories();
    let k = suite.markov_k;

    let mut groups: BTreeMap<FeatKey, Group> = BTreeMap::new();
    for rec in corpus {
        if rec.z.len() != c {
            return Err(CoadError::LengthMismatch {
                what: "corpus belief",
                expected: c,
                got: rec.z.len(),
            });
        }
        let mut ctx = Context::bos();
        for &target in &rec.caption {
            let features = featurize(&ctx, vocab, k);
            let key = FeatKey {
                window: features.window.clone(),
                mentioned: features.mentioned,
                z_bits: rec.z.z_tilde.iter().map(|x| x.to_bits()).collect(),
            };
            let group = groups.entry(key).or_insert_with(|| Group {
                features: features.clone(),
                z: rec.z.clone(),
                counts: vec![0.0; v],
                total: 0.0,
            });
            group.counts[target] += 1.0;
            group.total += 1.0;
            ctx.push(target);
        }
    }

    let mut theta = ScoreTables::zeros(k, v, c);
    let mut adam_m = ScoreTables::zeros(k, v, c);
    let mut adam_v = ScoreTables::zeros(k, v, c);
    let mut grad = ScoreTables::zeros(k, v, c);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);

    for step in 1..=cfg.steps {
        zero_tables(&mut grad);
        for group in groups.values() {
            // Optional per-sample perturbation of context-feature values,
            // mimicking embedding noise on previous tokens.
            let noisy = cfg.context_noise && rng.gen::<f64>() < CONTEXT_NOISE_PROB;
            let w_window: Vec<f64> = group
                .features
                .window
                .iter()
                .map(|_| if noisy { 1.0 + gauss(&mut rng) * CONTEXT_NOISE_SIGMA } else { 1.0 })
                .collect();
            let w_mention = if noisy {
                1.0 + gauss(&mut rng) * CONTEXT_NOISE_SIGMA
            } else {
                1.0
            };

            let scores = weighted_scores(&group.features, &group.z, &theta, &w_window, w_mention, v, c);
            let probs = softmax_scaled(&scores, 1.0)?;
            for y in 0..v {
                let g = group.counts[y] - group.total * probs.get(y);
                grad.bias[y] += g;
                for (j, &tok) in group.features.window.iter().enumerate() {
                    grad.prev[j][tok][y] += g * w_window[j];
                }
                let mut mask = group.features.mentioned;
                while mask != 0 {
                    let cat = mask.trailing_zeros() as usize;
                    mask &= mask - 1;
                    grad.mention[cat][y] += g * w_mention;
                }
                for cat in 0..c {
                    let zc = group.z.coeff(cat);
                    if zc != 0.0 {
                        grad.zweight[cat][y] += g * zc;
                    }
                }
            }
        }
        adam_update(
            &mut theta,
            &mut adam_m,
            &mut adam_v,
            &grad,
            cfg.learning_rate,
            b1,
            b2,
            eps,
            step,
        );
    }
    Ok(theta)
}

/// Next-token distribution of a trained model.
pub fn trained_next<Z: Conditioning>(
    ctx: &Context,
    z: &Z,
    tables: &ScoreTables,
    suite: &WorldModelSuite,
) -> Result<TokenDist> {
    super::conditional_next(ctx, z, tables, &suite.vocab, suite.markov_k)
}

fn weighted_scores(
    features: &CtxFeatures,
    z: &ObjectBelief,
    theta: &ScoreTables,
    w_window: &[f64],
    w_mention: f64,
    v: usize,
    c: usize,
) -> Vec<f64> {
    let mut s = theta.bias.clone();
    for (j, &tok) in features.window.iter().enumerate() {
        let row = &theta.prev[j][tok];
        for y in 0..v {
            s[y] += w_window[j] * row[y];
        }
    }
    let mut mask = features.mentioned;
    while mask != 0 {
        let cat = mask.trailing_zeros() as usize;
        mask &= mask - 1;
        let row = &theta.mention[cat];
        for y in 0..v {
            s[y] += w_mention * row[y];
        }
    }
    for cat in 0..c {
        let zc = z.coeff(cat);
        if zc != 0.0 {
            let row = &theta.zweight[cat];
            for y in 0..v {
                s[y] += zc * row[y];
            }
        }
    }
    s
}

fn zero_tables(t: &mut ScoreTables) {
    t.bias.iter_mut().for_each(|x| *x = 0.0);
    for slot in &mut t.prev {
        for row in slot {
            row.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    for row in &mut t.mention {
        row.iter_mut().for_each(|x| *x = 0.0);
    }
    for row in &mut t.zweight {
        row.iter_mut().for_each(|x| *x = 0.0);
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    theta: &mut ScoreTables,
    m: &mut ScoreTables,
    v: &mut ScoreTables,
    grad: &ScoreTables,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    step: usize,
) {
    let bc1 = 1.0 - b1.powi(step as i32);
    let bc2 = 1.0 - b2.powi(step as i32);
    let apply = |t: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        // Ascent on the log-likelihood.
        *t += lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
    };
    for i in 0..theta.bias.len() {
        apply(&mut theta.bias[i], &mut m.bias[i], &mut v.bias[i], grad.bias[i]);
    }
    for j in 0..theta.prev.len() {
        for t in 0..theta.prev[j].len() {
            for y in 0..theta.prev[j][t].len() {
                apply(
                    &mut theta.prev[j][t][y],
                    &mut m.prev[j][t][y],
                    &mut v.prev[j][t][y],
                    grad.prev[j][t][y],
                );
            }
        }
    }
    for c in 0..theta.mention.len() {
        for y in 0..theta.mention[c].len() {
            apply(
                &mut theta.mention[c][y],
                &mut m.mention[c][y],
                &mut v.mention[c][y],
                grad.mention[c][y],
            );
        }
    }
    for c in 0..theta.zweight.len() {
        for y in 0..theta.zweight[c].len() {
            apply(
                &mut theta.zweight[c][y],
                &mut m.zweight[c][y],
                &mut v.zweight[c][y],
                grad.zweight[c][y],
            );
        }
    }
}

/// Standard-normal draw via Box-Muller.
fn gauss<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
