//! Cross-run comparison artifacts: a metrics table, aligned cumulative
//! regret curves, and a provisioning-error histogram, all as plot-ready
//! CSVs.

use crate::runner::RunSummary;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no run directories given")]
    Empty,
    #[error("missing artifacts: {0:?}")]
    MissingArtifacts(Vec<String>),
    #[error("malformed summary {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

struct LoadedRun {
    summary: RunSummary,
    /// (a − d) per step, across all seeds.
    errors: Vec<f64>,
}

fn load_run(dir: &Path, gaps: &mut Vec<String>) -> Option<LoadedRun> {
    let summary_path = dir.join("summary.json");
    if !summary_path.exists() {
        gaps.push(summary_path.display().to_string());
        return None;
    }
    let text = match fs::read_to_string(&summary_path) {
        Ok(t) => t,
        Err(e) => {
            gaps.push(format!("{}: {e}", summary_path.display()));
            return None;
        }
    };
    let summary: RunSummary = match serde_json::from_str(&text) {
        Ok(s) => s,
        Err(e) => {
            gaps.push(format!("{}: {e}", summary_path.display()));
            return None;
        }
    };

    let mut errors = Vec::new();
    for seed in summary.per_seed.iter().map(|s| s.seed) {
        let steps_path = dir.join(format!("steps_seed{seed}.csv"));
        if !steps_path.exists() {
            gaps.push(steps_path.display().to_string());
            return None;
        }
        let text = match fs::read_to_string(&steps_path) {
            Ok(t) => t,
            Err(e) => {
                gaps.push(format!("{}: {e}", steps_path.display()));
                return None;
            }
        };
        for line in text.lines().skip(1) {
            let mut it = line.split(',');
            let (_t, d, a) = (it.next(), it.next(), it.next());
            if let (Some(d), Some(a)) = (d, a) {
                if let (Ok(d), Ok(a)) = (d.parse::<f64>(), a.parse::<f64>()) {
                    errors.push(a - d);
                }
            }
        }
    }
    Some(LoadedRun { summary, errors })
}

const HIST_BINS: usize = 40;

/// Reads each run directory's summary and step logs and writes
/// `summary_table.csv`, `regret_curve.csv` and `error_hist.csv`.
pub fn generate_report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<(), ReportError> {
    if run_dirs.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut gaps = Vec::new();
    let runs: Vec<LoadedRun> = run_dirs
        .iter()
        .filter_map(|d| load_run(d, &mut gaps))
        .collect();
    if !gaps.is_empty() {
        return Err(ReportError::MissingArtifacts(gaps));
    }

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    // policy × headline metrics
    let mut table = String::from("policy,mae,regret,censor_rate\n");
    for run in &runs {
        let a = &run.summary.aggregate;
        table.push_str(&format!(
            "{},{},{},{}\n",
            run.summary.policy, a.mae, a.regret, a.censoring_rate
        ));
    }
    let table_path = out_dir.join("summary_table.csv");
    fs::write(&table_path, table).map_err(io_err(&table_path))?;

    // Cumulative regret curves aligned on sample index.
    let n_points = runs
        .iter()
        .map(|r| r.summary.regret_curve.len())
        .min()
        .unwrap_or(0);
    let mut curve = String::from("t");
    for run in &runs {
        curve.push_str(&format!(",{}", run.summary.policy));
    }
    curve.push('\n');
    for i in 0..n_points {
        curve.push_str(&format!("{}", runs[0].summary.regret_curve[i].t));
        for run in &runs {
            curve.push_str(&format!(",{}", run.summary.regret_curve[i].regret));
        }
        curve.push('\n');
    }
    let curve_path = out_dir.join("regret_curve.csv");
    fs::write(&curve_path, curve).map_err(io_err(&curve_path))?;

    // Histogram of provisioning error a − d over [−1, 1].
    let mut hist = String::from("bin_lo,bin_hi");
    for run in &runs {
        hist.push_str(&format!(",{}", run.summary.policy));
    }
    hist.push('\n');
    let width = 2.0 / HIST_BINS as f64;
    let mut counts = vec![vec![0usize; runs.len()]; HIST_BINS];
    for (ri, run) in runs.iter().enumerate() {
        for &e in &run.errors {
            let bin = (((e + 1.0) / width) as usize).min(HIST_BINS - 1);
            counts[bin][ri] += 1;
        }
    }
    for (bin, row) in counts.iter().enumerate() {
        let lo = -1.0 + bin as f64 * width;
        hist.push_str(&format!("{lo},{}", lo + width));
        for c in row {
            hist.push_str(&format!(",{c}"));
        }
        hist.push('\n');
    }
    let hist_path = out_dir.join("error_hist.csv");
    fs::write(&hist_path, hist).map_err(io_err(&hist_path))?;
    Ok(())
}
