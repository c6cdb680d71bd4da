//! Hallucination measurement: caption-level CHAIR, polling-based
//! presence probing with three negative-sampling splits, and next-token
//! divergence against the oracle.

use crate::decode::Caption;
use crate::dist::TokenDist;
use crate::error::{CoadError, Result};
use crate::types::{Context, Scene};
use crate::vocab::Vocab;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Caption hallucination rates.
///
/// `chair_s` is the fraction of captions containing at least one
/// hallucinated object; `chair_i` is the fraction of mentioned objects
/// that are hallucinated (0 when nothing is mentioned).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChairReport {
    pub chair_s: f64,
    pub chair_i: f64,
    pub n_captions: usize,
    pub n_mentions: usize,
    pub n_hallucinated_mentions: usize,
    pub n_hallucinated_captions: usize,
}

impl ChairReport {
    /// Sentence-level rate as a percentage.
    pub fn chair_s_percent(&self) -> f64 {
        100.0 * self.chair_s
    }

    /// Instance-level rate as a percentage.
    pub fn chair_i_percent(&self) -> f64 {
        100.0 * self.chair_i
    }
}

/// Per-scene mention/hallucination counts; the unit of paired resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneChairCounts {
    pub mentions: usize,
    pub hallucinated: usize,
}

/// The set of object categories whose naming token appears in the tokens.
pub fn extract_mentions(tokens: &[usize], vocab: &Vocab) -> BTreeSet<usize> {
    tokens
        .iter()
        .filter_map(|&t| vocab.token_category(t))
        .collect()
}

/// Per-scene CHAIR counts; a mention is hallucinated iff its category is
/// absent from the scene's ground truth.
pub fn chair_per_scene(
    captions: &[Caption],
    scenes: &[Scene],
    vocab: &Vocab,
) -> Result<Vec<SceneChairCounts>> {
    if captions.len() != scenes.len() {
        return Err(CoadError::LengthMismatch {
            what: "chair captions vs scenes",
            expected: scenes.len(),
            got: captions.len(),
        });
    }
    Ok(captions
        .iter()
        .zip(scenes)
        .map(|(caption, scene)| {
            let mentions = extract_mentions(&caption.tokens, vocab);
            let hallucinated = mentions.iter().filter(|&&c| !scene.is_present(c)).count();
            SceneChairCounts {
                mentions: mentions.len(),
                hallucinated,
            }
        })
        .collect())
}

/// Aggregates CHAIR over aligned captions and scenes.
pub fn chair(captions: &[Caption], scenes: &[Scene], vocab: &Vocab) -> Result<ChairReport> {
    let per_scene = chair_per_scene(captions, scenes, vocab)?;
    Ok(chair_from_counts(&per_scene))
}

/// CHAIR from precomputed per-scene counts.
pub fn chair_from_counts(per_scene: &[SceneChairCounts]) -> ChairReport {
    let n_captions = per_scene.len();
    let n_mentions: usize = per_scene.iter().map(|s| s.mentions).sum();
    let n_hallucinated_mentions: usize = per_scene.iter().map(|s| s.hallucinated).sum();
    let n_hallucinated_captions = per_scene.iter().filter(|s| s.hallucinated > 0).count();
    ChairReport {
        chair_s: ratio_or_zero(n_hallucinated_captions, n_captions),
        chair_i: ratio_or_zero(n_hallucinated_mentions, n_mentions),
        n_captions,
        n_mentions,
        n_hallucinated_mentions,
        n_hallucinated_captions,
    }
}

fn ratio_or_zero(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Negative-sampling strategy for presence probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopeSplit {
    /// Negatives drawn uniformly from absent categories.
    Random,
    /// Negatives are the globally most frequent absent categories,
    /// ranked by empirical presence counts over the evaluated scenes.
    Popular,
    /// Negatives are the absent categories most co-occurring with the
    /// scene's present categories.
    Adversarial,
}

impl std::fmt::Display for PopeSplit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PopeSplit::Random => "random",
            PopeSplit::Popular => "popular",
            PopeSplit::Adversarial => "adversarial",
        })
    }
}

impl std::str::FromStr for PopeSplit {
    type Err = CoadError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(PopeSplit::Random),
            "popular" => Ok(PopeSplit::Popular),
            "adversarial" => Ok(PopeSplit::Adversarial),
            other => Err(CoadError::Config(format!("unknown POPE split: {other}"))),
        }
    }
}

/// One presence question.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub scene_seed: u64,
    /// Index into the scene list the probe set was built from.
    pub scene_index: usize,
    pub category: usize,
    /// Ground-truth presence of the probed category.
    pub present: bool,
    pub split: PopeSplit,
}

/// Probes for a scene set, balanced per scene as far as each scene allows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub probes: Vec<Probe>,
    pub split: PopeSplit,
    pub k_per_scene: usize,
    /// Scenes that could not contribute a full positive/negative pair
    /// set (e.g. every object present).
    pub unbalanced_scenes: usize,
}

/// Builds `k_per_scene` positive and `k_per_scene` negative probes per
/// scene. Scenes lacking enough present or absent categories contribute
/// what they can and are counted in `unbalanced_scenes`.
pub fn build_pope_probes<R: Rng>(
    scenes: &[Scene],
    split: PopeSplit,
    k_per_scene: usize,
    cooccur: &[Vec<f64>],
    rng: &mut R,
) -> Result<ProbeSet> {
    if scenes.is_empty() {
        return Err(CoadError::Config("probe building needs scenes".into()));
    }
    let c = scenes[0].categories();
    let mut presence_counts = vec![0usize; c];
    for scene in scenes {
        for cat in scene.present_categories() {
            presence_counts[cat] += 1;
        }
    }

    let mut probes = Vec::new();
    let mut unbalanced = 0usize;
    for (scene_index, scene) in scenes.iter().enumerate() {
        let present = scene.present_categories();
        let absent = scene.absent_categories();
        if present.len() < k_per_scene || absent.len() < k_per_scene {
            unbalanced += 1;
        }

        let mut positives: Vec<usize> = present
            .choose_multiple(rng, k_per_scene.min(present.len()))
            .copied()
            .collect();
        positives.sort_unstable();

        let negatives: Vec<usize> = match split {
            PopeSplit::Random => {
                let mut chosen: Vec<usize> = absent
                    .choose_multiple(rng, k_per_scene.min(absent.len()))
                    .copied()
                    .collect();
                chosen.sort_unstable();
                chosen
            }
            PopeSplit::Popular => {
                ranked_top(&absent, k_per_scene, |cat| presence_counts[cat] as f64)
            }
            PopeSplit::Adversarial => ranked_top(&absent, k_per_scene, |cat| {
                present.iter().map(|&p| cooccur[p][cat]).sum::<f64>()
            }),
        };

        for cat in positives {
            probes.push(Probe {
                scene_seed: scene.seed,
                scene_index,
                category: cat,
                present: true,
                split,
            });
        }
        for cat in negatives {
            probes.push(Probe {
                scene_seed: scene.seed,
                scene_index,
                category: cat,
                present: false,
                split,
            });
        }
    }
    Ok(ProbeSet {
        probes,
        split,
        k_per_scene,
        unbalanced_scenes: unbalanced,
    })
}

/// Top `k` candidates by score, descending, ties broken by category index.
fn ranked_top<F: Fn(usize) -> f64>(candidates: &[usize], k: usize, score: F) -> Vec<usize> {
    let mut ranked: Vec<usize> = candidates.to_vec();
    ranked.sort_by(|&a, &b| {
        score(b)
            .partial_cmp(&score(a))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    ranked.truncate(k);
    ranked
}

/// Confusion-matrix metrics over probe answers; yes is the positive
/// class. Metrics with a zero denominator are reported as `None` rather
/// than 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopeReport {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub yes_ratio: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

/// Scores probe answers aligned with the probe set.
pub fn pope_eval(probes: &ProbeSet, answers: &[bool]) -> Result<PopeReport> {
    if answers.len() != probes.probes.len() {
        return Err(CoadError::LengthMismatch {
            what: "pope answers vs probes",
            expected: probes.probes.len(),
            got: answers.len(),
        });
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (probe, &yes) in probes.probes.iter().zip(answers) {
        match (probe.present, yes) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let total = tp + fp + fn_ + tn;
    let frac = |num: usize, den: usize| -> Option<f64> {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    let precision = frac(tp, tp + fp);
    let recall = frac(tp, tp + fn_);
    // The count form of the harmonic mean is exact where the
    // 2PR/(P+R) form accumulates rounding; they agree to 1e-12.
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64),
        _ => None,
    };
    Ok(PopeReport {
        accuracy: frac(tp + tn, total),
        precision,
        recall,
        f1,
        yes_ratio: frac(tp + fp, total),
        tp,
        fp,
        fn_,
        tn,
    })
}

/// KL divergence `sum_i p_i ln(p_i / q_i)`.
///
/// Terms with `p_i = 0` contribute 0; any `q_i = 0 < p_i` makes the
/// divergence infinite (returned as a value, not an error).
pub fn kl_next_token(p: &TokenDist, q: &TokenDist) -> f64 {
    assert_eq!(p.len(), q.len(), "KL over mismatched vocabularies");
    let mut sum = 0.0;
    for (&pi, &qi) in p.as_slice().iter().zip(q.as_slice()) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return f64::INFINITY;
        }
        sum += pi * (pi / qi).ln();
    }
    sum
}

/// Mean next-token KL of a source against the oracle over a set of
/// decoding contexts (typically prefixes of oracle rollouts).
pub fn avg_divergence<S, O>(
    mut source: S,
    mut oracle: O,
    contexts: &[(Scene, Context)],
) -> Result<f64>
where
    S: FnMut(&Scene, &Context) -> Result<TokenDist>,
    O: FnMut(&Scene, &Context) -> Result<TokenDist>,
{
    if contexts.is_empty() {
        return Err(CoadError::Config("divergence needs contexts".into()));
    }
    let mut total = 0.0;
    for (scene, ctx) in contexts {
        let p = source(scene, ctx)?;
        let q = oracle(scene, ctx)?;
        total += kl_next_token(&p, &q);
    }
    Ok(total / contexts.len() as f64)
}
