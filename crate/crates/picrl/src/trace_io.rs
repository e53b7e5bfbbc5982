//! Trace CSV interchange and the achieved-statistics sidecar.
//!
//! Format: UTF-8, header `t,demand[,ctx1,ctx2,...]`, one row per step,
//! integer `t`, decimal-point reals. Context columns are optional and
//! their count is fixed by the header.

use picrl_core::workload::{autocorrelation, trace_stats, Trace};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum TraceIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing or malformed header: expected `t,demand[,ctx...]`, got `{0}`")]
    Header(String),
    #[error("malformed row {row}: {reason}")]
    Parse { row: usize, reason: String },
    #[error("invalid value at row {row}: {reason}")]
    Validation { row: usize, reason: String },
    #[error("file holds no data rows")]
    Empty,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TraceIoError + '_ {
    move |source| TraceIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads a trace CSV; `row` in errors is the 1-based data row index.
pub fn ingest_csv(path: &Path) -> Result<Trace, TraceIoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or(TraceIoError::Empty)?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "t" || cols[1] != "demand" {
        return Err(TraceIoError::Header(header.to_string()));
    }
    let ctx_width = cols.len() - 2;

    let mut demands = Vec::new();
    let mut context: Vec<Vec<f64>> = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(TraceIoError::Parse {
                row,
                reason: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        fields[0].parse::<i64>().map_err(|_| TraceIoError::Parse {
            row,
            reason: format!("t `{}` is not an integer", fields[0]),
        })?;
        let demand: f64 = fields[1].parse().map_err(|_| TraceIoError::Parse {
            row,
            reason: format!("demand `{}` is not a number", fields[1]),
        })?;
        if !(demand.is_finite() && demand >= 0.0) {
            return Err(TraceIoError::Validation {
                row,
                reason: format!("demand {demand} must be a finite nonnegative real"),
            });
        }
        demands.push(demand);
        if ctx_width > 0 {
            let mut ctx_row = Vec::with_capacity(ctx_width);
            for f in &fields[2..] {
                let v: f64 = f.parse().map_err(|_| TraceIoError::Parse {
                    row,
                    reason: format!("context value `{f}` is not a number"),
                })?;
                ctx_row.push(v);
            }
            context.push(ctx_row);
        }
    }
    if demands.is_empty() {
        return Err(TraceIoError::Empty);
    }
    let mut trace = Trace::new(demands, path.file_stem().and_then(|s| s.to_str()).unwrap_or("trace"));
    if ctx_width > 0 {
        trace.context = Some(context);
    }
    Ok(trace)
}

/// Writes a trace in the interchange format; deterministic byte-for-byte.
pub fn write_trace_csv(path: &Path, trace: &Trace) -> Result<(), TraceIoError> {
    let mut out = String::new();
    let ctx_width = trace.context_width();
    out.push_str("t,demand");
    for i in 1..=ctx_width {
        out.push_str(&format!(",ctx{i}"));
    }
    out.push('\n');
    for (t, &d) in trace.demands.iter().enumerate() {
        out.push_str(&format!("{t},{d}"));
        if let Some(ctx) = &trace.context {
            for v in &ctx[t] {
                out.push_str(&format!(",{v}"));
            }
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(out.as_bytes()).map_err(io_err(path))
}

/// Achieved statistics written next to a generated trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceSidecar {
    pub length: usize,
    pub mean: f64,
    pub std: f64,
    pub cv: f64,
    pub pmr: f64,
    pub autocorr_lag1: f64,
    /// Autocorrelation at the seasonal period, when one was requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub autocorr_period: Option<(usize, f64)>,
}

pub fn sidecar_for(trace: &Trace, period: Option<usize>) -> TraceSidecar {
    let stats = trace_stats(&trace.demands);
    TraceSidecar {
        length: trace.len(),
        mean: stats.mean,
        std: stats.std,
        cv: stats.cv,
        pmr: stats.pmr,
        autocorr_lag1: autocorrelation(&trace.demands, 1),
        autocorr_period: period.map(|p| (p, autocorrelation(&trace.demands, p))),
    }
}

pub fn write_sidecar(path: &Path, sidecar: &TraceSidecar) -> Result<(), TraceIoError> {
    let json = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    fs::write(path, json).map_err(io_err(path))
}
