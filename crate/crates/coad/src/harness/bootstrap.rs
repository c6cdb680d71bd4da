//! Paired bootstrap over scenes for ratio-of-sums metrics.

use crate::metrics::SceneChairCounts;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A bootstrap confidence interval for a metric difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    /// Observed difference on the full scene set.
    pub delta: f64,
    /// 2.5th percentile of the resampled differences.
    pub lo: f64,
    /// 97.5th percentile of the resampled differences.
    pub hi: f64,
    pub resamples: usize,
}

fn chair_i_of(counts: &[SceneChairCounts], idx: &[usize]) -> f64 {
    let mut mentions = 0usize;
    let mut hallucinated = 0usize;
    for &i in idx {
        mentions += counts[i].mentions;
        hallucinated += counts[i].hallucinated;
    }
    if mentions == 0 {
        0.0
    } else {
        hallucinated as f64 / mentions as f64
    }
}

/// 95% CI for `chair_i(a) - chair_i(b)` under paired resampling: each
/// bootstrap replicate draws scene indices with replacement and applies
/// the same indices to both arms.
pub fn paired_bootstrap_chair_i_diff<R: Rng>(
    a: &[SceneChairCounts],
    b: &[SceneChairCounts],
    resamples: usize,
    rng: &mut R,
) -> BootstrapCi {
    assert_eq!(a.len(), b.len(), "paired bootstrap needs aligned scenes");
    let n = a.len();
    let all: Vec<usize> = (0..n).collect();
    let delta = chair_i_of(a, &all) - chair_i_of(b, &all);

    let mut diffs = Vec::with_capacity(resamples);
    let mut idx = vec![0usize; n];
    for _ in 0..resamples {
        for slot in idx.iter_mut() {
            *slot = rng.gen_range(0..n);
        }
        diffs.push(chair_i_of(a, &idx) - chair_i_of(b, &idx));
    }
    diffs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    BootstrapCi {
        delta,
        lo: percentile(&diffs, 0.025),
        hi: percentile(&diffs, 0.975),
        resamples,
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_arms_give_zero_difference() {
        let counts: Vec<SceneChairCounts> = (0..50)
            .map(|i| SceneChairCounts {
                mentions: 3 + i % 4,
                hallucinated: i % 2,
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ci = paired_bootstrap_chair_i_diff(&counts, &counts, 2000, &mut rng);
        assert_eq!(ci.delta, 0.0);
        assert_eq!(ci.lo, 0.0);
        assert_eq!(ci.hi, 0.0);
    }

    #[test]
    fn clearly_separated_arms_exclude_zero() {
        let worse: Vec<SceneChairCounts> = (0..200)
            .map(|i| SceneChairCounts {
                mentions: 4,
                hallucinated: usize::from(i % 2 == 0),
            })
            .collect();
        let better: Vec<SceneChairCounts> = (0..200)
            .map(|_| SceneChairCounts {
                mentions: 4,
                hallucinated: 0,
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ci = paired_bootstrap_chair_i_diff(&worse, &better, 2000, &mut rng);
        assert!(ci.lo > 0.0, "lower CI bound {} should exceed zero", ci.lo);
        assert!((ci.delta - 0.125).abs() < 1e-12);
    }
}
