//! CSV and resolved-config files for a finished run.

use std::fs;
use std::path::{Path, PathBuf};

use super::config::ScenarioConfig;
use super::experiment::TrialRecord;
use super::summary::{Summary, AOA_BIN_DEG};
use super::HarnessError;

pub const TRIALS_HEADER: [&str; 24] = [
    "trial",
    "policy",
    "applied_policy",
    "ap",
    "serving",
    "user_x",
    "user_y",
    "user_orientation_deg",
    "d_obf_m",
    "direct_visible",
    "num_paths",
    "sfo_offset_m",
    "true_aoa_deg",
    "est_aoa_deg",
    "est_distance_m",
    "aoa_error_deg",
    "rssi_db",
    "single_ap_x",
    "single_ap_y",
    "single_ap_error_m",
    "tri_x",
    "tri_y",
    "tri_error_m",
    "status",
];

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, HarnessError> {
    csv::Writer::from_path(path).map_err(|e| HarnessError::Csv {
        path: path.to_path_buf(),
        source: e,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Csv {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn write_trials(records: &[TrialRecord], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(TRIALS_HEADER).map_err(&err)?;
    for r in records {
        let base = |row: &mut Vec<String>| {
            row.push(r.index.to_string());
        };
        let user = [
            num(r.user.position.x),
            num(r.user.position.y),
            num(r.user.orientation.to_degrees()),
        ];
        if let Some(reason) = &r.failure {
            let mut row = Vec::with_capacity(TRIALS_HEADER.len());
            base(&mut row);
            row.extend([String::new(), String::new(), String::new(), String::new()]);
            row.extend(user.iter().cloned());
            row.resize(TRIALS_HEADER.len() - 1, String::new());
            row.push(format!("failed: {reason}"));
            w.write_record(&row).map_err(&err)?;
            continue;
        }
        for o in &r.outcomes {
            if let Some(reason) = &o.error {
                let mut row = Vec::with_capacity(TRIALS_HEADER.len());
                base(&mut row);
                row.extend([o.label.clone(), o.applied.name().to_string(), String::new(), String::new()]);
                row.extend(user.iter().cloned());
                row.resize(TRIALS_HEADER.len() - 1, String::new());
                row.push(format!("failed: {reason}"));
                w.write_record(&row).map_err(&err)?;
                continue;
            }
            for a in &o.aps {
                let (est_aoa, est_dist, status) = match &a.estimate {
                    Ok(p) => (Some(p.angle.to_degrees()), Some(p.distance), "ok".to_string()),
                    Err(e) => (None, None, format!("no estimate: {e}")),
                };
                let mut row = Vec::with_capacity(TRIALS_HEADER.len());
                base(&mut row);
                row.extend([
                    o.label.clone(),
                    o.applied.name().to_string(),
                    a.ap.to_string(),
                    (Some(a.ap) == r.serving_ap).to_string(),
                ]);
                row.extend(user.iter().cloned());
                row.extend([
                    opt(o.d_obf),
                    a.direct_visible.to_string(),
                    a.num_paths.to_string(),
                    num(a.sfo_offset),
                    num(a.true_aoa.to_degrees()),
                    opt(est_aoa),
                    opt(est_dist),
                    opt(a.aoa_error_deg),
                    num(a.rssi_db),
                    opt(a.single_ap.map(|p| p.x)),
                    opt(a.single_ap.map(|p| p.y)),
                    opt(a.single_ap_error),
                    opt(o.triangulation.map(|p| p.x)),
                    opt(o.triangulation.map(|p| p.y)),
                    opt(o.triangulation_error),
                    status,
                ]);
                w.write_record(&row).map_err(&err)?;
            }
        }
    }
    w.flush().map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Scalar metrics as `(policy, metric, value)` rows.
pub fn summary_rows(summary: &Summary) -> Vec<(String, &'static str, f64)> {
    let mut rows = Vec::new();
    for p in &summary.policies {
        let l = &p.label;
        let mut push = |m: &'static str, v: f64| rows.push((l.clone(), m, v));
        push("aoa_error_mean_deg", p.aoa.mean);
        push("aoa_error_median_deg", p.aoa.median);
        push("aoa_error_count", p.aoa.count as f64);
        push("serving_aoa_error_mean_deg", p.serving_aoa.mean);
        push("serving_aoa_error_median_deg", p.serving_aoa.median);
        push("single_ap_error_mean_m", p.single_ap.mean);
        push("single_ap_error_median_m", p.single_ap.median);
        push("single_ap_rmse_m", p.single_ap.rmse);
        push("triangulation_error_mean_m", p.triangulation.mean);
        push("triangulation_error_median_m", p.triangulation.median);
        push("triangulation_rmse_m", p.triangulation.rmse);
        push("triangulation_count", p.triangulation.count as f64);
        push("rssi_mean_db", p.rssi_mean_db);
        push("rssi_delta_db", p.rssi_delta_db);
        push("failed", p.failed as f64);
        push("fallbacks", p.fallbacks as f64);
    }
    rows
}

pub fn write_summary(summary: &Summary, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(["policy", "metric", "value"]).map_err(&err)?;
    for (policy, metric, value) in summary_rows(summary) {
        w.write_record([policy, metric.to_string(), num(value)]).map_err(&err)?;
    }
    w.flush().map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_histogram(summary: &Summary, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(["policy", "bin_start_deg", "bin_end_deg", "count", "fraction"])
        .map_err(&err)?;
    for p in &summary.policies {
        let total: usize = p.aoa_histogram.iter().sum();
        for (i, &c) in p.aoa_histogram.iter().enumerate() {
            let frac = if total == 0 { 0.0 } else { c as f64 / total as f64 };
            w.write_record([
                p.label.clone(),
                num(i as f64 * AOA_BIN_DEG),
                num((i + 1) as f64 * AOA_BIN_DEG),
                c.to_string(),
                num(frac),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_cdf(summary: &Summary, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(["policy", "method", "error_m", "cdf"]).map_err(&err)?;
    for p in &summary.policies {
        for (method, stats) in [("single_ap", &p.single_ap), ("triangulation", &p.triangulation)] {
            for &(x, f) in &stats.cdf {
                w.write_record([p.label.clone(), method.to_string(), num(x), num(f)])
                    .map_err(&err)?;
            }
        }
    }
    w.flush().map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes `scenario.resolved`, `trials.csv`, `summary.csv`,
/// `aoa_histogram.csv` and `localization_cdf.csv` under `outdir`.
pub fn emit_outputs(
    config: &ScenarioConfig,
    records: &[TrialRecord],
    summary: &Summary,
    outdir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(outdir).map_err(|e| HarnessError::Io {
        path: outdir.to_path_buf(),
        source: e,
    })?;
    let resolved = outdir.join("scenario.resolved");
    let text = config.resolved()?.to_toml_string()?;
    fs::write(&resolved, text).map_err(|e| HarnessError::Io {
        path: resolved.clone(),
        source: e,
    })?;
    let trials = outdir.join("trials.csv");
    write_trials(records, &trials)?;
    let summary_path = outdir.join("summary.csv");
    write_summary(summary, &summary_path)?;
    let hist = outdir.join("aoa_histogram.csv");
    write_histogram(summary, &hist)?;
    let cdf = outdir.join("localization_cdf.csv");
    write_cdf(summary, &cdf)?;
    Ok(vec![resolved, trials, summary_path, hist, cdf])
}
