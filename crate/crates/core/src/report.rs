//! Run artifacts: the transformed CSV, the per-step trace and the lineage
//! report.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dataset::write_csv;
use crate::error::{Error, Result};
use crate::search::{RunResult, TraceRow};

pub const TRANSFORMED_FILE: &str = "transformed.csv";
pub const TRACE_FILE: &str = "trace.tsv";
pub const REPORT_FILE: &str = "report.txt";

pub const TRACE_HEADER: &str = "episode\tstep\thead\top\ttail\tr1\tro\tr2\tU\tP_A\tN";

fn indices(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub fn trace_line(row: &TraceRow) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        row.episode,
        row.step,
        indices(&row.head),
        row.op,
        row.tail.as_deref().map_or_else(|| "-".to_string(), indices),
        row.rewards.head,
        row.rewards.op,
        row.rewards.tail,
        row.quality,
        row.score,
        row.n_features
    )
}

pub fn write_trace<W: Write>(rows: &[TraceRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for row in rows {
        writeln!(w, "{}", trace_line(row))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureReport {
    pub name: String,
    pub is_original: bool,
    pub importance: f64,
    /// JSON form of the lineage tree.
    pub lineage_json: String,
}

/// Per-feature entries of the best set, with forest importances renormalized
/// to sum to one (uniform if the forest never split).
pub fn feature_reports(result: &RunResult) -> Result<Vec<FeatureReport>> {
    let forest = result.evaluator.fit(&result.best)?;
    let mut shares = forest.feature_importances();
    let total: f64 = shares.iter().sum();
    if total > 0.0 {
        shares.iter_mut().for_each(|s| *s /= total);
    } else {
        let n = shares.len() as f64;
        shares.iter_mut().for_each(|s| *s = 1.0 / n);
    }
    result
        .best
        .columns()
        .iter()
        .zip(shares)
        .map(|(c, importance)| {
            Ok(FeatureReport {
                name: c.meta.name.clone(),
                is_original: c.meta.is_original,
                importance,
                lineage_json: serde_json::to_string(&c.meta.lineage)
                    .map_err(|e| Error::InvalidConfig(format!("lineage serialization: {e}")))?,
            })
        })
        .collect()
}

/// Tab-separated `key\tvalue` summary lines followed by one line per
/// feature: `name`, `is_original`, `importance`, `lineage` (JSON).
pub fn write_report<W: Write>(result: &RunResult, mut w: W) -> Result<()> {
    let io = |e| Error::io(REPORT_FILE, e);
    let best_at = result
        .best_at
        .map_or_else(|| "original".to_string(), |(e, s)| format!("{e},{s}"));
    let lines = [
        ("metric", result.metric.to_string()),
        ("original_score", result.original_score.to_string()),
        ("original_quality", result.original_quality.to_string()),
        ("original_features", result.original.n_cols().to_string()),
        ("final_score", result.best_score.to_string()),
        ("final_quality", result.best_quality.to_string()),
        ("final_features", result.best.n_cols().to_string()),
        ("best_at", best_at),
    ];
    for (k, v) in lines {
        writeln!(w, "{k}\t{v}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    writeln!(w, "feature\tis_original\timportance\tlineage").map_err(io)?;
    for f in feature_reports(result)? {
        writeln!(w, "{}\t{}\t{}\t{}", f.name, f.is_original, f.importance, f.lineage_json).map_err(io)?;
    }
    Ok(())
}

/// Write `transformed.csv`, `trace.tsv` and `report.txt` into `dir`.
pub fn write_outputs(result: &RunResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(&result.best, dir.join(TRANSFORMED_FILE))?;
    let trace_path = dir.join(TRACE_FILE);
    let f = File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
    let mut w = BufWriter::new(f);
    write_trace(&result.trace, &mut w).map_err(|e| Error::io(&trace_path, e))?;
    w.flush().map_err(|e| Error::io(&trace_path, e))?;
    let report_path = dir.join(REPORT_FILE);
    let f = File::create(&report_path).map_err(|e| Error::io(&report_path, e))?;
    let mut w = BufWriter::new(f);
    write_report(result, &mut w)?;
    w.flush().map_err(|e| Error::io(&report_path, e))
}
