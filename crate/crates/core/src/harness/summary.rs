//! Per-policy aggregation over trial records.

use super::experiment::TrialRecord;
use crate::defender::ObfuscationMode;

pub const AOA_BIN_DEG: f64 = 2.0;
pub const CDF_STEP_M: f64 = 0.1;

/// Error statistics of one localization method.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub rmse: f64,
    /// `(x, P[error ≤ x])` at `CDF_STEP_M` spacing up to the largest error.
    pub cdf: Vec<(f64, f64)>,
}

impl ErrorStats {
    pub fn from_errors(errors: &[f64]) -> Self {
        if errors.is_empty() {
            return Self {
                mean: f64::NAN,
                median: f64::NAN,
                rmse: f64::NAN,
                ..Self::default()
            };
        }
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let steps = (sorted[sorted.len() - 1] / CDF_STEP_M).ceil() as usize;
        let mut cdf = Vec::with_capacity(steps + 1);
        let mut j = 0;
        for s in 0..=steps {
            let x = s as f64 * CDF_STEP_M;
            while j < sorted.len() && sorted[j] <= x + 1e-12 {
                j += 1;
            }
            cdf.push((x, j as f64 / n));
        }
        Self {
            count: sorted.len(),
            mean: sorted.iter().sum::<f64>() / n,
            median: median(&sorted),
            rmse: (sorted.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
            cdf,
        }
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySummary {
    pub label: String,
    pub mode: ObfuscationMode,
    /// AoA errors over every AP observation, degrees.
    pub aoa: ErrorStats,
    /// AoA errors at the serving AP only, degrees.
    pub serving_aoa: ErrorStats,
    /// Counts per `AOA_BIN_DEG` bin over `[0°, 180°]`.
    pub aoa_histogram: Vec<usize>,
    pub single_ap: ErrorStats,
    pub triangulation: ErrorStats,
    /// Mean serving-AP RSSI, dB.
    pub rssi_mean_db: f64,
    /// Mean per-trial serving-AP RSSI difference against `none`, dB.
    pub rssi_delta_db: f64,
    pub failed: usize,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub trials: usize,
    pub failed_trials: usize,
    pub policies: Vec<PolicySummary>,
}

impl Summary {
    pub fn policy(&self, label: &str) -> Option<&PolicySummary> {
        self.policies.iter().find(|p| p.label == label)
    }
}

pub fn summarize(records: &[TrialRecord]) -> Summary {
    let labels: Vec<(String, ObfuscationMode)> = records
        .iter()
        .find(|r| !r.outcomes.is_empty())
        .map(|r| {
            r.outcomes
                .iter()
                .map(|o| (o.label.clone(), o.policy.mode))
                .collect()
        })
        .unwrap_or_default();
    let bins = (180.0 / AOA_BIN_DEG).ceil() as usize;

    let baseline_rssi = |r: &TrialRecord| -> Option<f64> {
        let o = r.outcomes.iter().find(|o| o.policy.mode == ObfuscationMode::None)?;
        o.serving(r).map(|s| s.rssi_db).filter(|v| v.is_finite())
    };

    let policies = labels
        .into_iter()
        .map(|(label, mode)| {
            let mut aoa = Vec::new();
            let mut serving_aoa = Vec::new();
            let mut single = Vec::new();
            let mut tri = Vec::new();
            let mut rssi = Vec::new();
            let mut delta = Vec::new();
            let mut failed = 0;
            let mut fallbacks = 0;
            let mut hist = vec![0usize; bins];
            for r in records {
                let Some(o) = r.outcomes.iter().find(|o| o.label == label) else {
                    failed += 1;
                    continue;
                };
                if o.error.is_some() {
                    failed += 1;
                    continue;
                }
                if o.applied != o.policy.mode {
                    fallbacks += 1;
                }
                for obs in &o.aps {
                    if let Some(e) = obs.aoa_error_deg {
                        aoa.push(e);
                        hist[((e / AOA_BIN_DEG) as usize).min(bins - 1)] += 1;
                        if Some(obs.ap) == r.serving_ap {
                            serving_aoa.push(e);
                        }
                    }
                    if let Some(e) = obs.single_ap_error {
                        single.push(e);
                    }
                }
                if let Some(e) = o.triangulation_error {
                    tri.push(e);
                }
                if let Some(s) = o.serving(r).map(|s| s.rssi_db).filter(|v| v.is_finite()) {
                    rssi.push(s);
                    if let Some(b) = baseline_rssi(r) {
                        delta.push(s - b);
                    }
                }
            }
            let mean = |v: &[f64]| {
                if v.is_empty() {
                    f64::NAN
                } else {
                    v.iter().sum::<f64>() / v.len() as f64
                }
            };
            PolicySummary {
                mode,
                aoa: ErrorStats::from_errors(&aoa),
                serving_aoa: ErrorStats::from_errors(&serving_aoa),
                aoa_histogram: hist,
                single_ap: ErrorStats::from_errors(&single),
                triangulation: ErrorStats::from_errors(&tri),
                rssi_mean_db: mean(&rssi),
                rssi_delta_db: mean(&delta),
                failed,
                fallbacks,
                label,
            }
        })
        .collect();

    Summary {
        trials: records.len(),
        failed_trials: records.iter().filter(|r| r.failure.is_some()).count(),
        policies,
    }
}
