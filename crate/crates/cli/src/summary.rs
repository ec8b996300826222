//! Trace and summary CSV schemas.

use std::io::Write;

use serde::{Deserialize, Serialize};

use otws_core::Result;

pub const THRESHOLDS: [f64; 2] = [1e-2, 1e-3];
/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub instance_id: usize,
    pub init: String,
    pub iteration: usize,
    pub mcv: f64,
    pub rel_err: f64,
    pub wall_time_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub init: String,
    pub threshold: f64,
    pub mean_iters: f64,
    pub ci95: f64,
    /// Instances that reached the threshold.
    pub samples: usize,
}

/// Mean and `1.96 · s / √N` (NaN half-width for a single sample).
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, Z95 * (var / n).sqrt())
}

/// First checkpoint iteration at which an instance's MCV is at most `threshold`.
pub fn iterations_to(rows: &[TraceRow], threshold: f64) -> Option<usize> {
    rows.iter()
        .find(|r| r.mcv <= threshold)
        .map(|r| r.iteration)
}

/// Summary rows for one (dataset, init) group. `traces` holds each
/// instance's rows in checkpoint order; thresholds nobody reaches are omitted.
pub fn summarize(dataset: &str, init: &str, traces: &[Vec<TraceRow>]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &threshold in &THRESHOLDS {
        let hits: Vec<f64> = traces
            .iter()
            .filter_map(|t| iterations_to(t, threshold))
            .map(|i| i as f64)
            .collect();
        if hits.is_empty() {
            continue;
        }
        let (mean_iters, ci95) = mean_ci(&hits);
        out.push(SummaryRow {
            dataset: dataset.into(),
            init: init.into(),
            threshold,
            mean_iters,
            ci95,
            samples: hits.len(),
        });
    }
    out
}

pub fn write_rows<W: Write, R: Serialize>(out: W, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
        .map_err(|e| otws_core::Error::invalid(format!("flushing csv: {e}")))?;
    Ok(())
}
