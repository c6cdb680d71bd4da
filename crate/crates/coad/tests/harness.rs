//! End-to-end harness behavior: seeded runs, sweeps, ablation wiring,
//! report emission, and throughput accounting.

use coad::decode::{DecodeMode, DecodePolicy, SourceTag};
use coad::fusion::{FusionConfig, FusionSpace, MarginalMode};
use coad::harness::{
    bench_throughput, emit_report, mc_convergence_curve, metrics_csv, run_experiment,
    run_experiment_in_memory, sweep_alpha, sweep_alpha_in_memory, DivergenceSelect,
    ExperimentConfig, MetricsSelect, PopeSelect, RunRecord,
};
use coad::metrics::PopeSplit;
use coad::world::{DetectorConfig, WorldConfig};

/// A world with both confounding pathways planted: percept false
/// positives and strong language-prior co-occurrence.
fn confounded_world(gamma: f64, seed: u64) -> WorldConfig {
    WorldConfig {
        perception_fpr: vec![0.25; 6],
        perception_fnr: vec![0.1; 6],
        ..WorldConfig::uniform(6, 10, 0.5, 0.25, 0.1, gamma, seed)
            .with_cooccur(1, 0, 26.0)
            .with_cooccur(3, 2, 25.0)
            .with_cooccur(5, 4, 24.0)
    }
}

fn base_config(n_scenes: usize, sources: Vec<SourceTag>, master_seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        world: confounded_world(0.5, 97),
        detector: DetectorConfig::noiseless(6),
        fusion: FusionConfig {
            alpha: 1.0,
            marginal_mode: MarginalMode::Exact,
            space: FusionSpace::Probability,
            clamp_floor: 0.0,
            rng_seed: 0,
        },
        decode: DecodePolicy {
            mode: DecodeMode::Sample,
            temperature: 0.2,
            max_tokens: 48,
            rng_seed: 0,
        },
        n_scenes,
        sources,
        metrics: MetricsSelect {
            chair: true,
            pope: None,
            divergence: None,
        },
        dump_fused_dists: false,
        output_dir: std::env::temp_dir().join("coad-harness-unused"),
        master_seed,
    }
}

fn chair_i(record: &RunRecord, tag: SourceTag) -> f64 {
    record
        .sources
        .iter()
        .find(|s| s.source == tag)
        .and_then(|s| s.chair.as_ref())
        .map(|c| c.chair_i)
        .unwrap()
}

#[test]
fn confounded_world_separates_the_three_sources() {
    let config = base_config(
        300,
        vec![SourceTag::Base, SourceTag::MfOnly, SourceTag::Coad],
        11,
    );
    let record = run_experiment_in_memory(&config).unwrap();
    let base = chair_i(&record, SourceTag::Base);
    let mf = chair_i(&record, SourceTag::MfOnly);
    let coad = chair_i(&record, SourceTag::Coad);
    println!("chair_i base={base:.4} mf_only={mf:.4} coad={coad:.4}");
    assert!(coad < mf, "coad {coad} !< mf_only {mf}");
    assert!(mf < base, "mf_only {mf} !< base {base}");
}

#[test]
fn sweep_at_alpha_zero_reproduces_the_marginal_only_source() {
    let mut config = base_config(60, vec![SourceTag::MfOnly], 13);
    config.fusion.alpha = 0.7;
    let mf_record = run_experiment_in_memory(&config).unwrap();

    config.sources = vec![SourceTag::Coad];
    let sweep = sweep_alpha_in_memory(&config, &[0.0]).unwrap();
    let coad_record = &sweep[0];

    // Decode streams are shared across sources, so the captions must be
    // token-identical, not just metric-identical.
    let mf_caps: Vec<_> = mf_record.captions.iter().map(|c| &c.tokens).collect();
    let coad_caps: Vec<_> = coad_record.captions.iter().map(|c| &c.tokens).collect();
    assert_eq!(mf_caps, coad_caps);
    assert_eq!(
        chair_i(&mf_record, SourceTag::MfOnly),
        chair_i(coad_record, SourceTag::Coad)
    );
}

#[test]
fn sweep_curve_attains_its_minimum_at_the_inversion_alpha() {
    let mut config = base_config(120, vec![SourceTag::Coad], 17);
    config.metrics.divergence = Some(DivergenceSelect { contexts: 200 });
    // gamma = 0.5, so the inversion point is alpha = 1.
    let grid = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0];
    let records = sweep_alpha_in_memory(&config, &grid).unwrap();

    let divergences: Vec<f64> = records
        .iter()
        .map(|r| r.sources[0].divergence.unwrap())
        .collect();
    let chair_is: Vec<f64> = records
        .iter()
        .map(|r| chair_i(r, SourceTag::Coad))
        .collect();
    println!("alpha grid: {grid:?}");
    println!("divergence: {divergences:?}");
    println!("chair_i:    {chair_is:?}");

    let argmin = (0..grid.len())
        .min_by(|&a, &b| divergences[a].partial_cmp(&divergences[b]).unwrap())
        .unwrap();
    assert_eq!(grid[argmin], 1.0, "divergence minimum off the inversion point");
    assert!(divergences[argmin] < 1e-9);

    let min_chair = chair_is.iter().cloned().fold(f64::INFINITY, f64::min);
    let at_inversion = chair_is[2];
    assert!(
        at_inversion <= min_chair + 1e-12,
        "chair_i at the inversion alpha should attain the grid minimum"
    );
}

#[test]
fn persisted_records_reemit_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = base_config(40, vec![SourceTag::Base, SourceTag::Coad], 19);
    config.metrics.pope = Some(PopeSelect {
        split: PopeSplit::Adversarial,
        k_per_scene: 1,
    });
    config.metrics.divergence = Some(DivergenceSelect { contexts: 64 });
    config.output_dir = dir.path().join("run");
    let record = run_experiment(&config).unwrap();

    let csv_direct = std::fs::read_to_string(config.output_dir.join("metrics.csv")).unwrap();
    assert_eq!(csv_direct, metrics_csv(&record));

    let loaded: RunRecord = serde_json::from_str(
        &std::fs::read_to_string(config.output_dir.join("run.json")).unwrap(),
    )
    .unwrap();
    let report_dir = dir.path().join("report");
    let written = emit_report(std::slice::from_ref(&loaded), &report_dir).unwrap();
    let reemitted = std::fs::read_to_string(&written[0]).unwrap();
    assert_eq!(csv_direct, reemitted);

    let captions = std::fs::read_to_string(config.output_dir.join("captions.jsonl")).unwrap();
    assert_eq!(captions.lines().count(), record.captions.len());
}

#[test]
fn sweep_emits_a_long_format_csv_keyed_by_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = base_config(20, vec![SourceTag::Coad], 23);
    config.output_dir = dir.path().join("sweep");
    let records = sweep_alpha(&config, &[0.0, 1.0]).unwrap();
    assert_eq!(records.len(), 2);

    let sweep = std::fs::read_to_string(config.output_dir.join("sweep.csv")).unwrap();
    let mut lines = sweep.lines();
    assert_eq!(lines.next().unwrap(), "alpha,source,metric,value");
    assert!(sweep.lines().skip(1).all(|l| l.starts_with("0,") || l.starts_with("1,")));
    assert!(config.output_dir.join("alpha_1/metrics.csv").exists());
}

#[test]
fn throughput_accounting_counts_one_detection_per_scene() {
    let mut config = base_config(25, vec![SourceTag::Base, SourceTag::Coad], 29);
    config.fusion.marginal_mode = MarginalMode::Soft;
    let report = bench_throughput(&config, 1500).unwrap();
    assert_eq!(report.detector_invocations, 25);
    assert_eq!(report.n_scenes, 25);
    let ratio = report.ratio_coad_vs_base.unwrap();
    println!("coad/base throughput ratio: {ratio:.3}");
    assert!(ratio > 0.0);
    for (tag, th) in &report.per_source {
        println!("{tag}: {:.0} tok/s over {} tokens", th.tokens_per_sec, th.tokens);
        assert!(th.tokens >= 1500);
    }
}

#[test]
fn dual_model_decoding_keeps_worthwhile_throughput_in_exact_mode() {
    // Noiseless beliefs are binary, so exact marginalization over six
    // categories enumerates a single object vector.
    let config = base_config(25, vec![SourceTag::Base, SourceTag::Coad], 53);
    let report = bench_throughput(&config, 1500).unwrap();
    let ratio = report.ratio_coad_vs_base.unwrap();
    println!("coad/base throughput ratio (exact mode): {ratio:.3}");
    assert!(ratio >= 0.4, "ratio {ratio}");
}

#[test]
fn throughput_benchmark_rejects_small_budgets() {
    let config = base_config(5, vec![SourceTag::Base], 31);
    assert!(bench_throughput(&config, 999).is_err());
}

#[test]
fn mc_convergence_curve_decreases_with_samples() {
    let mut config = base_config(4, vec![SourceTag::Coad], 37);
    config.detector = DetectorConfig::uniform(6, 0.85, 0.15, 3.0);
    let points = mc_convergence_curve(&config, &[100, 1600, 25_600], 8).unwrap();
    println!("mc curve: {points:?}");
    assert!(points[0].rmse > points[1].rmse);
    assert!(points[1].rmse > points[2].rmse);
}

#[test]
fn fused_distribution_dumps_are_opt_in() {
    let mut config = base_config(5, vec![SourceTag::Base, SourceTag::Coad], 43);
    let record = run_experiment_in_memory(&config).unwrap();
    assert!(record.fused_dists.is_empty());

    config.dump_fused_dists = true;
    let record = run_experiment_in_memory(&config).unwrap();
    assert!(!record.fused_dists.is_empty());
    // Only fused sources are audited, one entry per generated token.
    assert!(record
        .fused_dists
        .iter()
        .all(|d| d.source == SourceTag::Coad));
    let coad_tokens: usize = record
        .captions
        .iter()
        .filter(|c| c.source == SourceTag::Coad)
        .map(|c| c.tokens.len())
        .sum();
    assert_eq!(record.fused_dists.len(), coad_tokens);
    for dump in &record.fused_dists {
        let sum: f64 = dump.dist.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
}

#[test]
fn wide_worlds_run_in_soft_mode_but_fail_validation_in_exact_mode() {
    let mut config = base_config(3, vec![SourceTag::Base, SourceTag::Coad], 41);
    config.world = WorldConfig::uniform(17, 8, 0.4, 0.0, 0.0, 0.5, 5);
    config.detector = DetectorConfig::noiseless(17);
    config.fusion.marginal_mode = MarginalMode::Soft;
    let record = run_experiment_in_memory(&config).unwrap();
    assert!(record.sources.iter().all(|s| s.error.is_none()));

    config.fusion.marginal_mode = MarginalMode::Exact;
    assert!(run_experiment_in_memory(&config).is_err());
}
