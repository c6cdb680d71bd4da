//! Shared fixtures for the decoding benchmarks.

use coad::fusion::{FusionConfig, FusionSpace, MarginalMode};
use coad::world::{generate_world, sample_scene, WorldConfig, WorldModelSuite};
use coad::{Context, ObjectBelief, Scene};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A mid-size confounded world shared by all benchmarks.
pub fn bench_world() -> (WorldConfig, WorldModelSuite) {
    let config = WorldConfig {
        perception_fpr: vec![0.25; 8],
        perception_fnr: vec![0.1; 8],
        ..WorldConfig::uniform(8, 16, 0.5, 0.25, 0.1, 0.5, 1234)
            .with_cooccur(1, 0, 26.0)
            .with_cooccur(3, 2, 25.0)
    };
    let suite = generate_world(&config).unwrap();
    (config, suite)
}

/// A scene, its noiseless belief, and a short in-progress context.
pub fn bench_inputs(config: &WorldConfig, suite: &WorldModelSuite) -> (Scene, ObjectBelief, Context) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let scene = sample_scene(config, &mut rng);
    let belief = scene.truth().to_belief();
    let mut ctx = Context::bos();
    ctx.push(suite.vocab.category_token(1));
    ctx.push(suite.vocab.filler_range().start);
    (scene, belief, ctx)
}

/// Fusion configs covering the three marginalization modes.
pub fn fusion_modes() -> Vec<(&'static str, FusionConfig)> {
    let base = FusionConfig {
        alpha: 1.0,
        marginal_mode: MarginalMode::Soft,
        space: FusionSpace::Logit,
        clamp_floor: 0.0,
        rng_seed: 0,
    };
    vec![
        ("soft", base.clone()),
        (
            "exact",
            FusionConfig {
                marginal_mode: MarginalMode::Exact,
                ..base.clone()
            },
        ),
        (
            "mc_1k",
            FusionConfig {
                marginal_mode: MarginalMode::MonteCarlo { samples: 1000 },
                ..base
            },
        ),
    ]
}
