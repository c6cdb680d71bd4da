//! Seeded experiment execution: world build, scene sampling, one
//! detection per scene, per-source decoding and scoring, paired
//! comparisons, and persistence.
//!
//! Every stream is derived from the master seed plus fixed labels, so
//! toggling one source or metric never perturbs another's draws, and
//! decode streams are shared across sources (common random numbers) to
//! keep scene-level comparisons paired.

use super::bootstrap::{paired_bootstrap_chair_i_diff, BootstrapCi};
use super::config::ExperimentConfig;
use super::report::write_run_outputs;
use crate::decode::{
    answer_probe, generate_with_rng, BaseSource, Caption, CoadNoZSource, CoadSource, DecodePolicy,
    MfOnlySource, NextTokenSource, OracleSource, SourceTag,
};
use crate::error::{CoadError, Result};
use crate::fusion::{marginal_finetuned_exact, marginal_finetuned_mc};
use crate::metrics::{
    avg_divergence, build_pope_probes, chair_from_counts, chair_per_scene, pope_eval, ChairReport,
    PopeReport, ProbeSet, SceneChairCounts,
};
use crate::seed::{derive_seed, stream};
use crate::types::{Context, ObjectBelief, Scene};
use crate::world::{detect, generate_world, oracle_next, sample_scene, WorldModelSuite};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::time::Instant;

/// Bootstrap resamples used for paired comparisons.
const BOOTSTRAP_RESAMPLES: usize = 10_000;

/// Wall-clock token throughput of one source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub tokens: usize,
    pub seconds: f64,
    pub tokens_per_sec: f64,
}

impl Throughput {
    fn from_parts(tokens: usize, seconds: f64) -> Self {
        // Clocks can report zero on empty workloads; keep the rate finite
        // so records stay JSON round-trippable.
        let seconds = seconds.max(1e-9);
        Throughput {
            tokens,
            seconds,
            tokens_per_sec: tokens as f64 / seconds,
        }
    }
}

/// Everything measured for one source in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceReport {
    pub source: SourceTag,
    /// Populated when this source failed; other sources still run.
    pub error: Option<String>,
    pub chair: Option<ChairReport>,
    pub chair_per_scene: Option<Vec<SceneChairCounts>>,
    pub pope: Option<PopeReport>,
    pub divergence: Option<f64>,
    pub throughput: Throughput,
}

impl SourceReport {
    fn failed(source: SourceTag, err: CoadError) -> Self {
        SourceReport {
            source,
            error: Some(err.to_string()),
            chair: None,
            chair_per_scene: None,
            pope: None,
            divergence: None,
            throughput: Throughput::from_parts(0, 0.0),
        }
    }
}

/// Paired bootstrap comparison of `chair_i(a) - chair_i(b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: SourceTag,
    pub b: SourceTag,
    pub metric: String,
    pub ci: BootstrapCi,
}

/// One caption as written to `captions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionDump {
    pub scene_seed: u64,
    pub source: SourceTag,
    pub tokens: Vec<String>,
}

/// One fused per-token distribution, recorded when the config enables
/// distribution dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedDistDump {
    pub scene_seed: u64,
    pub source: SourceTag,
    pub step: usize,
    pub dist: Vec<f64>,
}

/// Full record of one run; reconstructs the run given the same binary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    pub master_seed: u64,
    pub detector_invocations: usize,
    pub pope_unbalanced_scenes: Option<usize>,
    pub config: ExperimentConfig,
    pub sources: Vec<SourceReport>,
    pub comparisons: Vec<Comparison>,
    pub captions: Vec<CaptionDump>,
    #[serde(default)]
    pub fused_dists: Vec<FusedDistDump>,
}

/// Runs the experiment and persists `run.json`, `metrics.csv`, and
/// `captions.jsonl` into the config's output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord> {
    let record = run_experiment_in_memory(config)?;
    write_run_outputs(&record, &config.output_dir)?;
    Ok(record)
}

/// Runs the experiment without touching the filesystem.
pub fn run_experiment_in_memory(config: &ExperimentConfig) -> Result<RunRecord> {
    config.validate()?;
    let suite = generate_world(&config.world)?;
    let master = config.master_seed;

    let mut scene_rng = ChaCha8Rng::seed_from_u64(derive_seed(master, &[stream::SCENES]));
    let scenes: Vec<Scene> = (0..config.n_scenes)
        .map(|_| sample_scene(&config.world, &mut scene_rng))
        .collect();

    // One detector invocation per scene, regardless of caption length.
    let beliefs: Vec<ObjectBelief> = scenes
        .iter()
        .map(|scene| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(master, &[stream::DETECT, scene.seed]));
            detect(scene, &config.detector, &mut rng)
        })
        .collect::<Result<_>>()?;
    let detector_invocations = scenes.len();

    let probe_set = match &config.metrics.pope {
        Some(pope) => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master, &[stream::POPE]));
            Some(build_pope_probes(
                &scenes,
                pope.split,
                pope.k_per_scene,
                &config.world.cooccur,
                &mut rng,
            )?)
        }
        None => None,
    };

    let div_contexts = match &config.metrics.divergence {
        Some(div) => Some(divergence_contexts(
            &suite,
            &scenes,
            div.contexts,
            &config.decode,
            master,
        )?),
        None => None,
    };

    let mut sources = Vec::new();
    let mut captions = Vec::new();
    let mut fused_dists = Vec::new();
    for &tag in &config.sources {
        match run_source(
            tag,
            &suite,
            &scenes,
            &beliefs,
            probe_set.as_ref(),
            div_contexts.as_deref(),
            config,
        ) {
            Ok((report, caps, dists)) => {
                sources.push(report);
                captions.extend(caps.into_iter().map(|c| CaptionDump {
                    scene_seed: c.scene_ref,
                    source: c.source_tag,
                    tokens: c.tokens.iter().map(|&t| suite.vocab.name(t).to_string()).collect(),
                }));
                fused_dists.extend(dists);
            }
            Err(err) => sources.push(SourceReport::failed(tag, err)),
        }
    }

    let comparisons = build_comparisons(&sources, master);

    Ok(RunRecord {
        version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: master,
        detector_invocations,
        pope_unbalanced_scenes: probe_set.as_ref().map(|p| p.unbalanced_scenes),
        config: config.clone(),
        sources,
        comparisons,
        captions,
        fused_dists,
    })
}

/// Pairs compared when both arms produced per-scene counts, ordered as
/// (expected worse, expected better).
const COMPARISON_PAIRS: [(SourceTag, SourceTag); 4] = [
    (SourceTag::Base, SourceTag::MfOnly),
    (SourceTag::MfOnly, SourceTag::Coad),
    (SourceTag::Base, SourceTag::Coad),
    (SourceTag::CoadNoZ, SourceTag::Coad),
];

fn build_comparisons(sources: &[SourceReport], master: u64) -> Vec<Comparison> {
    let by_tag: HashMap<SourceTag, &SourceReport> =
        sources.iter().map(|r| (r.source, r)).collect();
    let mut out = Vec::new();
    for (a, b) in COMPARISON_PAIRS {
        let (Some(ra), Some(rb)) = (by_tag.get(&a), by_tag.get(&b)) else {
            continue;
        };
        let (Some(ca), Some(cb)) = (&ra.chair_per_scene, &rb.chair_per_scene) else {
            continue;
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            master,
            &[stream::BOOTSTRAP, tag_id(a), tag_id(b)],
        ));
        out.push(Comparison {
            a,
            b,
            metric: "chair_i".to_string(),
            ci: paired_bootstrap_chair_i_diff(ca, cb, BOOTSTRAP_RESAMPLES, &mut rng),
        });
    }
    out
}

fn tag_id(tag: SourceTag) -> u64 {
    SourceTag::ALL.iter().position(|&t| t == tag).unwrap() as u64
}

/// Builds the per-scene next-token source for a tag.
fn build_source<'a>(
    tag: SourceTag,
    suite: &'a WorldModelSuite,
    scene: &Scene,
    belief: &ObjectBelief,
    config: &ExperimentConfig,
) -> Box<dyn NextTokenSource + 'a> {
    let mc_seed = derive_seed(
        config.master_seed,
        &[stream::MC, config.fusion.rng_seed, scene.seed],
    );
    match tag {
        SourceTag::Oracle => Box::new(OracleSource::new(suite, scene)),
        SourceTag::Base => Box::new(BaseSource::new(suite, scene)),
        SourceTag::MfOnly => Box::new(MfOnlySource::new(
            suite,
            scene,
            belief.clone(),
            config.fusion.marginal_mode,
            mc_seed,
        )),
        SourceTag::Coad => Box::new(CoadSource::new(
            suite,
            scene,
            belief.clone(),
            config.fusion.clone(),
            mc_seed,
        )),
        SourceTag::CoadNoZ => Box::new(CoadNoZSource::new(suite, scene, config.fusion.clone())),
    }
}

fn decode_rng(master: u64, policy: &DecodePolicy, scene: &Scene) -> ChaCha8Rng {
    // Shared across sources: common random numbers pair the per-scene
    // comparisons and make a coad run at alpha = 0 reproduce mf_only
    // captions exactly.
    ChaCha8Rng::seed_from_u64(derive_seed(
        master,
        &[stream::DECODE, policy.rng_seed, scene.seed],
    ))
}

/// Wraps a source and records every distribution it emits.
struct RecordingSource<'s> {
    inner: Box<dyn NextTokenSource + 's>,
    dists: Vec<crate::dist::TokenDist>,
}

impl NextTokenSource for RecordingSource<'_> {
    fn next_dist(&mut self, ctx: &Context) -> Result<crate::dist::TokenDist> {
        let dist = self.inner.next_dist(ctx)?;
        self.dists.push(dist.clone());
        Ok(dist)
    }

    fn tag(&self) -> SourceTag {
        self.inner.tag()
    }
}

#[allow(clippy::too_many_arguments)]
fn run_source(
    tag: SourceTag,
    suite: &WorldModelSuite,
    scenes: &[Scene],
    beliefs: &[ObjectBelief],
    probe_set: Option<&ProbeSet>,
    div_contexts: Option<&[(Scene, Context)]>,
    config: &ExperimentConfig,
) -> Result<(SourceReport, Vec<Caption>, Vec<FusedDistDump>)> {
    let master = config.master_seed;
    let policy = &config.decode;
    let prompt = Context::bos();
    let dump = config.dump_fused_dists && matches!(tag, SourceTag::Coad | SourceTag::CoadNoZ);

    let mut captions = Vec::with_capacity(scenes.len());
    let mut fused_dists = Vec::new();
    let mut tokens = 0usize;
    let mut seconds = 0.0f64;
    for (i, scene) in scenes.iter().enumerate() {
        let inner = build_source(tag, suite, scene, &beliefs[i], config);
        let mut rng = decode_rng(master, policy, scene);
        let caption = if dump {
            let mut recorder = RecordingSource {
                inner,
                dists: Vec::new(),
            };
            let start = Instant::now();
            let caption =
                generate_with_rng(scene, &prompt, &mut recorder, policy, &mut rng)?;
            seconds += start.elapsed().as_secs_f64();
            for (step, dist) in recorder.dists.into_iter().enumerate() {
                fused_dists.push(FusedDistDump {
                    scene_seed: scene.seed,
                    source: tag,
                    step,
                    dist: dist.as_slice().to_vec(),
                });
            }
            caption
        } else {
            let mut source = inner;
            let start = Instant::now();
            let caption = generate_with_rng(scene, &prompt, source.as_mut(), policy, &mut rng)?;
            seconds += start.elapsed().as_secs_f64();
            caption
        };
        tokens += caption.tokens.len();
        captions.push(caption);
    }

    let (chair, per_scene) = if config.metrics.chair {
        let counts = chair_per_scene(&captions, scenes, &suite.vocab)?;
        (Some(chair_from_counts(&counts)), Some(counts))
    } else {
        (None, None)
    };

    let pope = match probe_set {
        Some(set) => Some(answer_probe_set(tag, suite, scenes, beliefs, set, config)?),
        None => None,
    };

    let divergence = match div_contexts {
        Some(contexts) => Some(source_divergence(
            tag, suite, scenes, beliefs, contexts, config,
        )?),
        None => None,
    };

    Ok((
        SourceReport {
            source: tag,
            error: None,
            chair,
            chair_per_scene: per_scene,
            pope,
            divergence,
            throughput: Throughput::from_parts(tokens, seconds),
        },
        captions,
        fused_dists,
    ))
}

fn answer_probe_set(
    tag: SourceTag,
    suite: &WorldModelSuite,
    scenes: &[Scene],
    beliefs: &[ObjectBelief],
    probe_set: &ProbeSet,
    config: &ExperimentConfig,
) -> Result<PopeReport> {
    let mut answers = Vec::with_capacity(probe_set.probes.len());
    let mut current: Option<(usize, Box<dyn NextTokenSource>)> = None;
    for probe in &probe_set.probes {
        let idx = probe.scene_index;
        if current.as_ref().map(|(i, _)| *i) != Some(idx) {
            current = Some((
                idx,
                build_source(tag, suite, &scenes[idx], &beliefs[idx], config),
            ));
        }
        let (_, source) = current.as_mut().unwrap();
        let answer = answer_probe(probe.category, source.as_mut(), &suite.vocab)?;
        answers.push(answer.yes);
    }
    pope_eval(probe_set, &answers)
}

fn source_divergence(
    tag: SourceTag,
    suite: &WorldModelSuite,
    scenes: &[Scene],
    beliefs: &[ObjectBelief],
    contexts: &[(Scene, Context)],
    config: &ExperimentConfig,
) -> Result<f64> {
    let belief_by_seed: HashMap<u64, &ObjectBelief> = scenes
        .iter()
        .zip(beliefs)
        .map(|(s, b)| (s.seed, b))
        .collect();
    avg_divergence(
        |scene: &Scene, ctx: &Context| {
            let belief = belief_by_seed.get(&scene.seed).ok_or_else(|| {
                CoadError::Config("divergence context references unknown scene".into())
            })?;
            let mut source = build_source(tag, suite, scene, belief, config);
            source.next_dist(ctx)
        },
        |scene: &Scene, ctx: &Context| oracle_next(ctx, &scene.truth(), suite),
        contexts,
    )
}

/// Oracle-rollout prefixes used as the context distribution for the
/// divergence metric.
fn divergence_contexts(
    suite: &WorldModelSuite,
    scenes: &[Scene],
    n_contexts: usize,
    policy: &DecodePolicy,
    master: u64,
) -> Result<Vec<(Scene, Context)>> {
    let prompt = Context::bos();
    let mut out = Vec::with_capacity(n_contexts);
    let mut pass = 0u64;
    while out.len() < n_contexts && pass < 64 {
        for scene in scenes {
            if out.len() >= n_contexts {
                break;
            }
            let mut source = OracleSource::new(suite, scene);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                master,
                &[stream::DIV_CONTEXTS, pass, scene.seed],
            ));
            let caption = generate_with_rng(scene, &prompt, &mut source, policy, &mut rng)?;
            let mut ctx = Context::bos();
            for &tok in &caption.tokens {
                if out.len() >= n_contexts {
                    break;
                }
                out.push((scene.clone(), ctx.clone()));
                ctx.push(tok);
            }
        }
        pass += 1;
    }
    if out.is_empty() {
        return Err(CoadError::Config(
            "divergence contexts could not be generated".into(),
        ));
    }
    Ok(out)
}

/// One run per grid point, sharing the world, scenes, and every derived
/// stream so only the fusion strength differs. Outputs land in
/// `output_dir/alpha_<value>/` plus a combined `sweep.csv`.
pub fn sweep_alpha(config: &ExperimentConfig, grid: &[f64]) -> Result<Vec<RunRecord>> {
    if grid.is_empty() {
        return Err(CoadError::Config("alpha grid must be nonempty".into()));
    }
    let mut records = Vec::with_capacity(grid.len());
    for &alpha in grid {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(CoadError::Config(format!("bad alpha in grid: {alpha}")));
        }
        let mut point = config.clone();
        point.fusion.alpha = alpha;
        point.output_dir = config.output_dir.join(format!("alpha_{alpha}"));
        records.push(run_experiment(&point)?);
    }
    let sweep = super::report::sweep_csv(&records);
    std::fs::create_dir_all(&config.output_dir)?;
    std::fs::write(config.output_dir.join("sweep.csv"), sweep)?;
    Ok(records)
}

/// In-memory sweep used by analysis and tests; writes nothing.
pub fn sweep_alpha_in_memory(config: &ExperimentConfig, grid: &[f64]) -> Result<Vec<RunRecord>> {
    if grid.is_empty() {
        return Err(CoadError::Config("alpha grid must be nonempty".into()));
    }
    grid.iter()
        .map(|&alpha| {
            let mut point = config.clone();
            point.fusion.alpha = alpha;
            run_experiment_in_memory(&point)
        })
        .collect()
}

/// Throughput characterization of the configured sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub per_source: Vec<(SourceTag, Throughput)>,
    /// Fused-to-base token-rate ratio when both sources ran.
    pub ratio_coad_vs_base: Option<f64>,
    pub detector_invocations: usize,
    pub n_scenes: usize,
    pub n_tokens_target: usize,
}

/// Measures wall-clock token rates per source on identical scenes until
/// each source has produced at least `n_tokens` tokens.
pub fn bench_throughput(config: &ExperimentConfig, n_tokens: usize) -> Result<ThroughputReport> {
    if n_tokens < 1000 {
        return Err(CoadError::Config(format!(
            "throughput benchmark needs n_tokens >= 1000, got {n_tokens}"
        )));
    }
    config.validate()?;
    let suite = generate_world(&config.world)?;
    let master = config.master_seed;
    let mut scene_rng = ChaCha8Rng::seed_from_u64(derive_seed(master, &[stream::SCENES]));
    let scenes: Vec<Scene> = (0..config.n_scenes)
        .map(|_| sample_scene(&config.world, &mut scene_rng))
        .collect();
    let beliefs: Vec<ObjectBelief> = scenes
        .iter()
        .map(|scene| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(master, &[stream::DETECT, scene.seed]));
            detect(scene, &config.detector, &mut rng)
        })
        .collect::<Result<_>>()?;
    let prompt = Context::bos();

    let mut per_source = Vec::new();
    for &tag in &config.sources {
        let mut tokens = 0usize;
        let mut seconds = 0.0f64;
        let mut pass = 0u64;
        while tokens < n_tokens {
            for (i, scene) in scenes.iter().enumerate() {
                if tokens >= n_tokens {
                    break;
                }
                let mut source = build_source(tag, &suite, scene, &beliefs[i], config);
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    master,
                    &[stream::DECODE, config.decode.rng_seed, pass, scene.seed],
                ));
                let start = Instant::now();
                let caption =
                    generate_with_rng(scene, &prompt, source.as_mut(), &config.decode, &mut rng)?;
                seconds += start.elapsed().as_secs_f64();
                tokens += caption.tokens.len();
            }
            pass += 1;
        }
        per_source.push((tag, Throughput::from_parts(tokens, seconds)));
    }

    let rate_of = |tag: SourceTag| {
        per_source
            .iter()
            .find(|(t, _)| *t == tag)
            .map(|(_, th)| th.tokens_per_sec)
    };
    let ratio_coad_vs_base = match (rate_of(SourceTag::Coad), rate_of(SourceTag::Base)) {
        (Some(coad), Some(base)) if base > 0.0 => Some(coad / base),
        _ => None,
    };

    Ok(ThroughputReport {
        per_source,
        ratio_coad_vs_base,
        detector_invocations: scenes.len(),
        n_scenes: scenes.len(),
        n_tokens_target: n_tokens,
    })
}

/// One point of the Monte Carlo convergence curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McPoint {
    pub samples: usize,
    /// Root-mean-square entry error of the MC marginal against exact
    /// enumeration, across seeds and contexts.
    pub rmse: f64,
}

/// Measures MC-marginal error against exact enumeration on the config's
/// world, producing a plot-ready convergence series.
pub fn mc_convergence_curve(
    config: &ExperimentConfig,
    sample_grid: &[usize],
    n_seeds: usize,
) -> Result<Vec<McPoint>> {
    config.validate()?;
    let suite = generate_world(&config.world)?;
    let master = config.master_seed;
    let mut scene_rng = ChaCha8Rng::seed_from_u64(derive_seed(master, &[stream::SCENES]));
    let scene = sample_scene(&config.world, &mut scene_rng);
    let mut det_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(master, &[stream::DETECT, scene.seed]));
    let belief = detect(&scene, &config.detector, &mut det_rng)?;

    let contexts =
        divergence_contexts(&suite, std::slice::from_ref(&scene), 5, &config.decode, master)?;
    let exact: Vec<_> = contexts
        .iter()
        .map(|(s, ctx)| marginal_finetuned_exact(ctx, s, &belief, &suite))
        .collect::<Result<_>>()?;

    let mut points = Vec::with_capacity(sample_grid.len());
    for &samples in sample_grid {
        let mut sq_sum = 0.0;
        let mut count = 0usize;
        for seed in 0..n_seeds {
            for ((s, ctx), exact_dist) in contexts.iter().zip(&exact) {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    master,
                    &[stream::MC, samples as u64, seed as u64],
                ));
                let mc = marginal_finetuned_mc(ctx, s, &belief, &suite, samples, &mut rng)?;
                for (m, e) in mc.as_slice().iter().zip(exact_dist.as_slice()) {
                    sq_sum += (m - e) * (m - e);
                    count += 1;
                }
            }
        }
        points.push(McPoint {
            samples,
            rmse: (sq_sum / count as f64).sqrt(),
        });
    }
    Ok(points)
}
