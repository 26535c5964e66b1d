//! CSV and JSON output. Files depend only on their inputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::experiment::{ArmSummary, ExperimentMetadata, ExperimentResult, RunTrace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

pub fn csv_header(n: usize) -> Vec<String> {
    let mut h = vec!["k".to_string()];
    h.extend((0..n).map(|i| format!("u_{i}")));
    h.extend((0..n).map(|i| format!("probe_{i}")));
    h.extend(["objective", "rel_err", "e_norm"].map(String::from));
    h
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_trace_csv(trace: &RunTrace, n: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(csv_header(n))?;
    for row in &trace.rows {
        let mut rec = Vec::with_capacity(2 * n + 4);
        rec.push(row.k.to_string());
        rec.extend(row.u.iter().map(|x| x.to_string()));
        match &row.probe {
            Some(p) => rec.extend(p.iter().map(|x| x.to_string())),
            None => rec.extend(std::iter::repeat_n(String::new(), n)),
        }
        rec.push(opt(row.objective));
        rec.push(row.rel_err.to_string());
        rec.push(opt(row.e_norm));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TraceDocument<'a> {
    metadata: &'a ExperimentMetadata,
    trace: &'a RunTrace,
}

#[derive(Serialize)]
struct SummaryDocument<'a> {
    metadata: &'a ExperimentMetadata,
    arms: Vec<&'a ArmSummary>,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes one trace with the experiment metadata.
pub fn export(trace: &RunTrace, metadata: &ExperimentMetadata, path: &Path, format: ExportFormat) -> Result<()> {
    match format {
        ExportFormat::Csv => write_trace_csv(trace, metadata.n, path),
        ExportFormat::Json => write_json(&TraceDocument { metadata, trace }, path),
    }
}

fn safe_name(name: &str) -> Result<&str> {
    if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
        return Err(Error::Config(format!("arm name '{name}' is not usable as a directory name")));
    }
    Ok(name)
}

/// Layout:
/// `summary.json`, `<arm>/mean.csv`, `<arm>/seed_<s>.csv`, `<arm>/seed_<s>.json`.
pub fn write_experiment(result: &ExperimentResult, dir: &Path, replica_traces: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let summary = dir.join("summary.json");
    write_json(
        &SummaryDocument { metadata: &result.metadata, arms: result.arms.iter().map(|a| &a.summary).collect() },
        &summary,
    )?;
    written.push(summary);
    for arm in &result.arms {
        let sub = dir.join(safe_name(&arm.summary.params.name)?);
        fs::create_dir_all(&sub)?;
        let mean = sub.join("mean.csv");
        export(&arm.mean, &result.metadata, &mean, ExportFormat::Csv)?;
        written.push(mean);
        if replica_traces {
            for r in &arm.replicas {
                for (ext, fmt) in [("csv", ExportFormat::Csv), ("json", ExportFormat::Json)] {
                    let p = sub.join(format!("seed_{}.{ext}", r.stats.seed));
                    export(&r.trace, &result.metadata, &p, fmt)?;
                    written.push(p);
                }
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::experiment::TraceRow;

    #[test]
    fn header_layout() {
        assert_eq!(csv_header(2), ["k", "u_0", "u_1", "probe_0", "probe_1", "objective", "rel_err", "e_norm"]);
    }

    #[test]
    fn final_row_leaves_probe_cells_empty() {
        let dir = tempfile::tempdir().unwrap();
        let trace = RunTrace {
            arm: "a".into(),
            seed: Some(1),
            rows: vec![
                TraceRow { k: 0, u: vec![0.5, 1.0], probe: Some(vec![0.25, 2.0]), objective: Some(3.0), rel_err: 1.0, e_norm: None },
                TraceRow { k: 1, u: vec![0.0, 0.0], probe: None, objective: None, rel_err: 0.0, e_norm: None },
            ],
        };
        let p = dir.path().join("t.csv");
        write_trace_csv(&trace, 2, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "0,0.5,1,0.25,2,3,1,");
        assert_eq!(lines[2], "1,0,0,,,,0,");
    }

    #[test]
    fn rejects_path_like_arm_names() {
        assert!(safe_name("../x").is_err());
        assert!(safe_name("tau5").is_ok());
    }
}
