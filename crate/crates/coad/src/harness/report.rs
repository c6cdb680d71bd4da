//! Flat-file emission of run records: metric CSV tables, JSON records,
//! and caption dumps. Everything in `metrics.csv` is a deterministic
//! function of the config and master seed; wall-clock timings stay in
//! `run.json` only.

use super::run::RunRecord;
use crate::error::{CoadError, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

fn esc(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "NA".to_string(),
    }
}

fn metric_rows(record: &RunRecord) -> Vec<(String, String, String)> {
    let mut rows = Vec::new();
    for report in &record.sources {
        let src = report.source.to_string();
        if let Some(err) = &report.error {
            rows.push((src.clone(), "error".into(), err.clone()));
            continue;
        }
        if let Some(chair) = &report.chair {
            rows.push((src.clone(), "chair_s".into(), format!("{}", chair.chair_s)));
            rows.push((src.clone(), "chair_i".into(), format!("{}", chair.chair_i)));
            rows.push((
                src.clone(),
                "chair_s_pct".into(),
                format!("{}", chair.chair_s_percent()),
            ));
            rows.push((
                src.clone(),
                "chair_i_pct".into(),
                format!("{}", chair.chair_i_percent()),
            ));
            rows.push((
                src.clone(),
                "chair_mentions".into(),
                format!("{}", chair.n_mentions),
            ));
            rows.push((
                src.clone(),
                "chair_hallucinated_mentions".into(),
                format!("{}", chair.n_hallucinated_mentions),
            ));
        }
        if let Some(pope) = &report.pope {
            rows.push((src.clone(), "pope_accuracy".into(), opt(pope.accuracy)));
            rows.push((src.clone(), "pope_precision".into(), opt(pope.precision)));
            rows.push((src.clone(), "pope_recall".into(), opt(pope.recall)));
            rows.push((src.clone(), "pope_f1".into(), opt(pope.f1)));
            rows.push((src.clone(), "pope_yes_ratio".into(), opt(pope.yes_ratio)));
            for (name, count) in [
                ("pope_tp", pope.tp),
                ("pope_fp", pope.fp),
                ("pope_fn", pope.fn_),
                ("pope_tn", pope.tn),
            ] {
                rows.push((src.clone(), name.into(), format!("{count}")));
            }
        }
        if let Some(div) = report.divergence {
            rows.push((src.clone(), "divergence_to_oracle".into(), format!("{div}")));
        }
    }
    for cmp in &record.comparisons {
        let pair = format!("{}_vs_{}", cmp.a, cmp.b);
        rows.push((
            pair.clone(),
            format!("{}_delta", cmp.metric),
            format!("{}", cmp.ci.delta),
        ));
        rows.push((
            pair.clone(),
            format!("{}_ci_lo", cmp.metric),
            format!("{}", cmp.ci.lo),
        ));
        rows.push((
            pair,
            format!("{}_ci_hi", cmp.metric),
            format!("{}", cmp.ci.hi),
        ));
    }
    rows
}

/// Long-format metric table: one row per (source, metric).
pub fn metrics_csv(record: &RunRecord) -> String {
    let mut out = String::from("source,metric,value\n");
    for (source, metric, value) in metric_rows(record) {
        let _ = writeln!(out, "{},{},{}", esc(&source), esc(&metric), esc(&value));
    }
    out
}

/// Long-format table over several records, keyed by fusion alpha.
pub fn sweep_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("alpha,source,metric,value\n");
    for record in records {
        let alpha = record.config.fusion.alpha;
        for (source, metric, value) in metric_rows(record) {
            let _ = writeln!(
                out,
                "{alpha},{},{},{}",
                esc(&source),
                esc(&metric),
                esc(&value)
            );
        }
    }
    out
}

/// Line-delimited caption dump.
pub fn captions_jsonl(record: &RunRecord) -> Result<String> {
    let mut out = String::new();
    for caption in &record.captions {
        out.push_str(&serde_json::to_string(caption)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes `run.json`, `metrics.csv`, and `captions.jsonl` for one run.
pub fn write_run_outputs(record: &RunRecord, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("run.json"),
        serde_json::to_string_pretty(record)?,
    )?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(record))?;
    std::fs::write(dir.join("captions.jsonl"), captions_jsonl(record)?)?;
    Ok(())
}

/// Re-emits CSV tables from persisted records: a single record yields
/// `metrics.csv`, several yield an alpha-keyed `sweep.csv`.
pub fn emit_report(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(CoadError::Config("no records to report".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if records.len() == 1 {
        let path = dir.join("metrics.csv");
        std::fs::write(&path, metrics_csv(&records[0]))?;
        written.push(path);
    } else {
        let path = dir.join("sweep.csv");
        std::fs::write(&path, sweep_csv(records))?;
        written.push(path);
    }
    Ok(written)
}
