//! Plot-ready curve export: merges seeded runs of one configuration into
//! per-env-step mean and one-standard-deviation columns.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetricsRecord;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveRow {
    pub env_steps: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveTable {
    pub config_digest: String,
    pub rows: Vec<CurveRow>,
}

impl CurveTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("env_steps,mean_return,std_return,runs\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.env_steps, r.mean_return, r.std_return, r.runs
            ));
        }
        out
    }
}

struct ParsedRun {
    digest: String,
    records: Vec<MetricsRecord>,
}

fn parse_metrics_file(path: &Path) -> Result<ParsedRun> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let meta_line = lines
        .next()
        .ok_or_else(|| CoreError::Io(format!("{}: empty metrics file", path.display())))?;
    let meta: serde_json::Value = serde_json::from_str(meta_line)?;
    let digest = meta
        .get("config_digest")
        .and_then(|d| d.as_str())
        .ok_or_else(|| CoreError::Io(format!("{}: missing config digest", path.display())))?
        .to_string();
    let mut records = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line)?);
    }
    Ok(ParsedRun { digest, records })
}

/// Merges metric records from multiple runs into one table. All runs must
/// share the configuration digest and the env-step grid.
pub fn export_curves_from_records(runs: &[(String, Vec<MetricsRecord>)]) -> Result<CurveTable> {
    if runs.is_empty() {
        return Err(CoreError::Invalid("no runs to merge".into()));
    }
    let digest = runs[0].0.clone();
    for (d, _) in runs {
        if *d != digest {
            return Err(CoreError::Invalid(format!(
                "cannot merge runs with mismatched configurations ({d} vs {digest})"
            )));
        }
    }
    let grid: Vec<usize> = runs[0].1.iter().map(|m| m.env_steps).collect();
    for (_, records) in runs {
        let steps: Vec<usize> = records.iter().map(|m| m.env_steps).collect();
        if steps != grid {
            return Err(CoreError::Invalid(
                "runs disagree on the env-step grid".into(),
            ));
        }
    }
    let rows = grid
        .iter()
        .enumerate()
        .map(|(i, &env_steps)| {
            let values: Vec<f64> = runs.iter().map(|(_, r)| r[i].eval_return_mean).collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            CurveRow {
                env_steps,
                mean_return: mean,
                std_return: var.sqrt(),
                runs: values.len(),
            }
        })
        .collect();
    Ok(CurveTable {
        config_digest: digest,
        rows,
    })
}

/// File-based variant over metrics.jsonl paths.
pub fn export_curves(paths: &[impl AsRef<Path>]) -> Result<CurveTable> {
    let runs = paths
        .iter()
        .map(|p| {
            let parsed = parse_metrics_file(p.as_ref())?;
            Ok((parsed.digest, parsed.records))
        })
        .collect::<Result<Vec<_>>>()?;
    export_curves_from_records(&runs)
}
