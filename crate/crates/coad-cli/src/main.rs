//! CLI for the causal object-aware decoding testbed.
//!
//! Exit codes: 0 on success, 1 on configuration errors, 2 on runtime
//! failures.

use clap::{Parser, Subcommand};
use coad::decode::SourceTag;
use coad::error::CoadError;
use coad::harness::{
    bench_throughput, emit_report, mc_convergence_curve, run_experiment, sweep_alpha,
    ExperimentConfig, RunRecord,
};
use coad::world::generate_world;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "coad", version, about = "Causal object-aware decoding testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a summary of the world a config describes.
    GenWorld {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one experiment and persist run.json, metrics.csv, captions.jsonl.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated source tags overriding the config.
        #[arg(long, value_delimiter = ',')]
        sources: Option<Vec<SourceTag>>,
        /// Overrides the fusion contrast strength.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Run the config once per alpha on a shared world and seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated alpha grid.
        #[arg(long, value_delimiter = ',', required = true)]
        alpha: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure per-source decoding throughput.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Minimum tokens generated per source.
        #[arg(long, default_value_t = 2000)]
        tokens: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional Monte Carlo sample grid for a convergence curve.
        #[arg(long, value_delimiter = ',')]
        mc_grid: Option<Vec<usize>>,
    },
    /// Re-emit CSV tables from persisted run.json records.
    Report {
        #[arg(long, value_delimiter = ',', required = true)]
        records: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_config() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<ExperimentConfig, CoadError> {
    let mut config = ExperimentConfig::from_path(path)?;
    if let Some(seed) = seed {
        config.master_seed = seed;
    }
    if let Some(out) = out {
        config.output_dir = out;
    }
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<(), CoadError> {
    match cli.command {
        Command::GenWorld { config, seed } => gen_world(&load_config(&config, seed, None)?),
        Command::Run {
            config,
            seed,
            out,
            sources,
            alpha,
        } => {
            let mut config = load_config(&config, seed, out)?;
            if let Some(sources) = sources {
                config.sources = sources;
            }
            if let Some(alpha) = alpha {
                config.fusion.alpha = alpha;
            }
            let record = run_experiment(&config)?;
            print_run_summary(&record);
            println!("outputs: {}", config.output_dir.display());
            Ok(())
        }
        Command::Sweep {
            config,
            alpha,
            seed,
            out,
        } => {
            let config = load_config(&config, seed, out)?;
            let records = sweep_alpha(&config, &alpha)?;
            for record in &records {
                println!("alpha = {}", record.config.fusion.alpha);
                print_run_summary(record);
            }
            println!("sweep table: {}", config.output_dir.join("sweep.csv").display());
            Ok(())
        }
        Command::Bench {
            config,
            tokens,
            seed,
            out,
            mc_grid,
        } => {
            let config = load_config(&config, seed, out)?;
            let report = bench_throughput(&config, tokens)?;
            for (tag, th) in &report.per_source {
                println!(
                    "{tag}: {:.1} tokens/s ({} tokens in {:.3}s)",
                    th.tokens_per_sec, th.tokens, th.seconds
                );
            }
            if let Some(ratio) = report.ratio_coad_vs_base {
                println!("coad/base throughput ratio: {ratio:.3}");
            }
            println!(
                "detector invocations: {} ({} scenes)",
                report.detector_invocations, report.n_scenes
            );
            std::fs::create_dir_all(&config.output_dir)?;
            std::fs::write(
                config.output_dir.join("bench.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            if let Some(grid) = mc_grid {
                let points = mc_convergence_curve(&config, &grid, 16)?;
                let mut csv = String::from("samples,rmse\n");
                for p in &points {
                    csv.push_str(&format!("{},{}\n", p.samples, p.rmse));
                }
                std::fs::write(config.output_dir.join("mc_convergence.csv"), csv)?;
                println!(
                    "mc convergence curve: {}",
                    config.output_dir.join("mc_convergence.csv").display()
                );
            }
            Ok(())
        }
        Command::Report { records, out } => {
            let mut loaded = Vec::with_capacity(records.len());
            for path in &records {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CoadError::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                let record: RunRecord = serde_json::from_str(&text)
                    .map_err(|e| CoadError::Config(format!("bad record {}: {e}", path.display())))?;
                loaded.push(record);
            }
            let written = emit_report(&loaded, &out)?;
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn gen_world(config: &ExperimentConfig) -> Result<(), CoadError> {
    let suite = generate_world(&config.world)?;
    let world = &config.world;
    println!("world seed: {}", world.seed);
    println!(
        "categories: {} | vocab: {} tokens ({} fillers)",
        world.categories,
        suite.vocab.len(),
        world.filler_tokens
    );
    println!(
        "gamma: {} | markov_k: {} | inversion alpha: {}",
        world.gamma,
        world.markov_k,
        coad::fusion::inversion_alpha(world.gamma)
    );
    println!("object tokens:");
    for c in 0..world.categories {
        println!(
            "  [{c}] {:<8} prior {:.2} percept fpr/fnr {:.2}/{:.2}",
            suite.vocab.name(suite.vocab.category_token(c)),
            world.presence_prior[c],
            world.perception_fpr[c],
            world.perception_fnr[c]
        );
    }
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for (i, row) in world.cooccur.iter().enumerate() {
        for (j, &boost) in row.iter().enumerate() {
            if boost > 0.0 {
                pairs.push((i, j, boost));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap());
    if pairs.is_empty() {
        println!("co-occurrence boosts: none (unconfounded language prior)");
    } else {
        println!("co-occurrence boosts:");
        for (i, j, boost) in pairs.iter().take(8) {
            println!(
                "  {} -> {}: {boost}",
                suite.vocab.name(suite.vocab.category_token(*i)),
                suite.vocab.name(suite.vocab.category_token(*j))
            );
        }
    }
    Ok(())
}

fn print_run_summary(record: &RunRecord) {
    for source in &record.sources {
        let mut line = format!("  {:<10}", source.source.to_string());
        if let Some(err) = &source.error {
            line.push_str(&format!("ERROR: {err}"));
            println!("{line}");
            continue;
        }
        if let Some(chair) = &source.chair {
            line.push_str(&format!(
                " chair_i {:.4} ({:.2}%) chair_s {:.4} ({:.2}%)",
                chair.chair_i,
                chair.chair_i_percent(),
                chair.chair_s,
                chair.chair_s_percent()
            ));
        }
        if let Some(pope) = &source.pope {
            let fmt = |v: Option<f64>| match v {
                Some(x) => format!("{x:.3}"),
                None => "NA".to_string(),
            };
            line.push_str(&format!(
                " | pope acc {} p {} r {} f1 {} yes {}",
                fmt(pope.accuracy),
                fmt(pope.precision),
                fmt(pope.recall),
                fmt(pope.f1),
                fmt(pope.yes_ratio)
            ));
        }
        if let Some(div) = source.divergence {
            line.push_str(&format!(" | divergence {div:.6}"));
        }
        println!("{line}");
    }
    for cmp in &record.comparisons {
        println!(
            "  {} - {} ({}): delta {:.4} CI [{:.4}, {:.4}]",
            cmp.a, cmp.b, cmp.metric, cmp.ci.delta, cmp.ci.lo, cmp.ci.hi
        );
    }
}
