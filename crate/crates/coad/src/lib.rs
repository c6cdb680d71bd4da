//! Causal object-aware decoding in a synthetic multimodal testbed.
//!
//! The crate simulates a small captioning world with planted confounders:
//! an oracle model grounded in true object presence, a pretrained model
//! whose beliefs are corrupted by perception noise and language-prior
//! co-occurrence, and a finetuned model that mixes the two. Decoding-time
//! causal fusion marginalizes the finetuned model over detector-derived
//! object beliefs and contrasts it with the pretrained model, recovering
//! the oracle exactly when the contrast strength matches the mixture
//! weight. Hallucination is measured with caption- and probe-based
//! metrics, and a config-driven harness runs seeded experiments,
//! ablations, sweeps, and throughput benchmarks.

pub mod decode;
pub mod dist;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod metrics;
pub mod seed;
pub mod types;
pub mod vocab;
pub mod world;

pub use dist::{logits_from_probs, normalize, probs_from_logits, LogitVec, TokenDist};
pub use error::{CoadError, Result};
pub use types::{Conditioning, Context, ObjectBelief, ObjectVector, Scene};
pub use vocab::Vocab;
pub use world::{
    detect, finetuned_constructed_next, generate_world, oracle_next, pretrained_next,
    sample_scene, sample_z, DetectorConfig, WorldConfig, WorldModelSuite,
};
