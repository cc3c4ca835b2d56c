//! CSV and markdown emission.
//!
//! Everything except `timings.csv` and the time column of the markdown tables
//! is a pure function of the config, so two runs with one seed produce
//! identical `metrics.csv`, `ari.csv` and `forecasts.csv`.

use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use crate::error::{BenchError, Result};
use crate::experiment::{AriEntry, BenchmarkReport, Scores};
use crate::multi::{MultiReport, MultiRow};

fn scores_header(dims: &[String]) -> Vec<String> {
    let mut h: Vec<String> = dims.iter().map(|d| format!("rmse_{d}")).collect();
    h.extend(dims.iter().map(|d| format!("mae_{d}")));
    h.extend(["rmse".into(), "mae".into(), "status".into()]);
    h
}

fn scores_fields(scores: &std::result::Result<Scores, String>, n_dims: usize) -> Vec<String> {
    match scores {
        Ok(s) => {
            let mut f: Vec<String> = s.rmse.iter().chain(&s.mae).map(f64::to_string).collect();
            f.extend([s.rmse_avg().to_string(), s.mae_avg().to_string(), "ok".into()]);
            f
        }
        Err(e) => {
            let mut f = vec![String::new(); 2 * n_dims + 2];
            f.push(format!("error: {e}"));
            f
        }
    }
}

fn parse_scores(fields: &[&str], n_dims: usize) -> Result<std::result::Result<Scores, String>> {
    let status = fields[2 * n_dims + 2];
    if let Some(msg) = status.strip_prefix("error: ") {
        return Ok(Err(msg.to_string()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| BenchError::DataLoad(format!("bad metric `{s}`: {e}")));
    Ok(Ok(Scores {
        rmse: fields[..n_dims].iter().map(|s| num(s)).collect::<Result<_>>()?,
        mae: fields[n_dims..2 * n_dims].iter().map(|s| num(s)).collect::<Result<_>>()?,
    }))
}

fn write_ari(entries: &[AriEntry], first_col: &str, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record([first_col, "k", "against", "time_index", "ari"])?;
    for e in entries {
        let t = e.time_index.map_or_else(String::new, |t| t.to_string());
        w.write_record([e.model.as_str(), &e.k, &e.against, &t, &e.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ari_csv(path: &Path) -> Result<Vec<AriEntry>> {
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            let bad = |what: &str| BenchError::DataLoad(format!("bad {what} in {}", path.display()));
            Ok(AriEntry {
                model: rec[0].to_string(),
                k: rec[1].to_string(),
                against: rec[2].to_string(),
                time_index: if rec[3].is_empty() { None } else { Some(rec[3].parse().map_err(|_| bad("time"))?) },
                value: rec[4].parse().map_err(|_| bad("ARI"))?,
            })
        })
        .collect()
}

/// `(model, k, scores)` rows of a `metrics.csv`.
pub type MetricRecord = (String, String, std::result::Result<Scores, String>);

pub fn read_metrics_csv(path: &Path, n_dims: usize) -> Result<Vec<MetricRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            let fields: Vec<&str> = rec.iter().collect();
            if fields.len() != 2 * n_dims + 5 {
                return Err(BenchError::DataLoad(format!("metrics row has {} fields", fields.len())));
            }
            Ok((fields[0].to_string(), fields[1].to_string(), parse_scores(&fields[2..], n_dims)?))
        })
        .collect()
}

fn fmt_metric(scores: &std::result::Result<Scores, String>) -> (String, String) {
    match scores {
        Ok(s) => (format!("{:.4}", s.rmse_avg()), format!("{:.4}", s.mae_avg())),
        Err(e) => (format!("error: {}", e.replace('|', "/")), String::new()),
    }
}

fn scale_note(report: &BenchmarkReport) -> &'static str {
    match report.scale {
        crate::config::Scale::Standardized => {
            "standardized with training-set statistics (assumed default for comparing errors across dimensions)"
        }
        crate::config::Scale::Raw => "raw units",
    }
}

pub fn render_markdown(report: &BenchmarkReport) -> String {
    let mut md = String::from("# Benchmark report\n\n");
    let _ = writeln!(md, "- Individuals: {} training, {} test (one test set for every row)", report.n_train, report.n_test);
    let _ = writeln!(md, "- Split: {} history steps, {} horizon steps", report.history, report.horizon);
    let _ = writeln!(md, "- Scale: {}", scale_note(report));
    let _ = writeln!(md, "- Dimensions: {}", report.dims.join(", "));
    if report.dims.len() > 1 {
        md.push_str("- RMSE and MAE are averaged over dimensions; `metrics.csv` has per-dimension values\n");
    }
    md.push_str("\n| Model | K | RMSE | MAE | Time (s) |\n|---|---|---|---|---|\n");
    for row in &report.rows {
        let (r, m) = fmt_metric(&row.scores);
        let _ = writeln!(md, "| {} | {} | {r} | {m} | {:.3} |", row.model, row.k, row.seconds);
    }
    let summary: Vec<&AriEntry> = report.ari.iter().filter(|e| e.time_index.is_none()).collect();
    if !summary.is_empty() {
        md.push_str("\n## Cluster agreement (ARI)\n\nStatic models: one partition of the test individuals. Dynamic models: mean over time steps.\n\n| Model | K | Against | ARI |\n|---|---|---|---|\n");
        for e in summary {
            let _ = writeln!(md, "| {} | {} | {} | {:.4} |", e.model, e.k, e.against, e.value);
        }
    }
    md
}

/// Write `metrics.csv`, `ari.csv`, `forecasts.csv`, `timings.csv` and `report.md`.
pub fn emit_report(report: &BenchmarkReport, out_dir: &Path) -> Result<()> {
    if report.rows.is_empty() {
        return Err(BenchError::ConfigInvalid("report has no rows".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let n = report.dims.len();

    let mut w = csv::Writer::from_writer(File::create(out_dir.join("metrics.csv"))?);
    let mut header = vec!["model".to_string(), "k".to_string()];
    header.extend(scores_header(&report.dims));
    w.write_record(&header)?;
    for row in &report.rows {
        let mut rec = vec![row.model.clone(), row.k.clone()];
        rec.extend(scores_fields(&row.scores, n));
        w.write_record(&rec)?;
    }
    w.flush()?;

    write_ari(&report.ari, "model", &out_dir.join("ari.csv"))?;

    let mut w = csv::Writer::from_writer(File::create(out_dir.join("forecasts.csv"))?);
    w.write_record(["model", "k", "individual_id", "dim_name", "time_index", "mean", "lower", "upper", "truth"])?;
    for p in &report.forecasts {
        let opt = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
        w.write_record([
            p.model.as_str(),
            &p.k,
            &p.individual,
            &p.dim,
            &p.time_index.to_string(),
            &p.mean.to_string(),
            &opt(p.interval.map(|i| i.0)),
            &opt(p.interval.map(|i| i.1)),
            &opt(p.truth),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(File::create(out_dir.join("timings.csv"))?);
    w.write_record(["model", "k", "seconds"])?;
    for row in &report.rows {
        w.write_record([row.model.as_str(), &row.k, &format!("{:.3}", row.seconds)])?;
    }
    w.flush()?;

    std::fs::write(out_dir.join("report.md"), render_markdown(report))?;
    Ok(())
}

fn multi_record(row: &MultiRow, n_dims: usize) -> Vec<String> {
    let mut rec = vec![row.replicate.to_string(), format!("{}x{}", row.k1, row.k2), row.approach.to_string()];
    rec.extend(scores_fields(&row.scores, n_dims));
    rec
}

pub fn render_multi_markdown(report: &MultiReport) -> String {
    let mut md = String::from("# Multivariate vs combined univariate\n\n");
    let _ = writeln!(md, "- Individuals: {} training, {} test per replicate", report.n_train, report.n_test);
    let _ = writeln!(md, "- Dimensions: {}", report.dims.join(", "));
    md.push_str("- The combined model pairs the two univariate labels, `k = k1 · k2`\n");
    md.push_str("\n| Replicate | k1 x k2 | Approach | RMSE | MAE | Time (s) |\n|---|---|---|---|---|---|\n");
    for row in &report.rows {
        let (r, m) = fmt_metric(&row.scores);
        let _ = writeln!(md, "| {} | {}x{} | {} | {r} | {m} | {:.3} |", row.replicate, row.k1, row.k2, row.approach, row.seconds);
    }
    md.push_str("\n## Across replicates\n\n| k1 x k2 | Replicates | Mean RMSE (multi) | Mean RMSE (combined) | Gap | 2 x pooled sd | Mean ARI |\n|---|---|---|---|---|---|---|\n");
    for s in report.summaries() {
        let ari = if s.mean_ari.is_empty() { String::new() } else { format!("{:.4}", s.ari_mean()) };
        let _ = writeln!(
            md,
            "| {}x{} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {ari} |",
            s.k1,
            s.k2,
            s.multi_rmse.len(),
            s.multi_mean(),
            s.combined_mean(),
            s.rmse_gap(),
            2.0 * s.pooled_sd()
        );
    }
    md
}

/// Write `multi_metrics.csv`, `multi_ari.csv`, `multi_timings.csv` and `multi_report.md`.
pub fn emit_multi_report(report: &MultiReport, out_dir: &Path) -> Result<()> {
    if report.rows.is_empty() {
        return Err(BenchError::ConfigInvalid("report has no rows".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let n = report.dims.len();
    let mut w = csv::Writer::from_writer(File::create(out_dir.join("multi_metrics.csv"))?);
    let mut header = vec!["replicate".to_string(), "k_pair".to_string(), "approach".to_string()];
    header.extend(scores_header(&report.dims));
    w.write_record(&header)?;
    for row in &report.rows {
        w.write_record(multi_record(row, n))?;
    }
    w.flush()?;

    write_ari(&report.ari, "replicate", &out_dir.join("multi_ari.csv"))?;

    let mut w = csv::Writer::from_writer(File::create(out_dir.join("multi_timings.csv"))?);
    w.write_record(["replicate", "k_pair", "approach", "seconds"])?;
    for row in &report.rows {
        w.write_record([row.replicate.to_string(), format!("{}x{}", row.k1, row.k2), row.approach.into(), format!("{:.3}", row.seconds)])?;
    }
    w.flush()?;

    std::fs::write(out_dir.join("multi_report.md"), render_multi_markdown(report))?;
    Ok(())
}
