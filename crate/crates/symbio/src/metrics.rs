//! Metric computations over route samples, enforcement outcomes and
//! negotiation transcripts, plus the consolidated report.
//!
//! Everything here is a pure function of recorded data, so metrics
//! recomputed from an audit stream match the live run exactly.

use crate::audit::{AuditPayload, AuditRecord};
use crate::channel::RouteSample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("trajectories share no common time window")]
    MismatchedWindows,
    #[error("empty transcript")]
    EmptyTranscript,
}

/// Root-mean-squared deviation of sampled throughput from the intent target.
pub fn rmse(samples: &[RouteSample], target_mbps: f64) -> Result<f64, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    let sum: f64 = samples
        .iter()
        .map(|s| {
            let d = s.throughput - target_mbps;
            d * d
        })
        .sum();
    Ok((sum / samples.len() as f64).sqrt())
}

/// Mean absolute deviation of values from a reference.
pub fn mae(values: &[f64], reference: f64) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyTranscript);
    }
    Ok(values.iter().map(|v| (v - reference).abs()).sum::<f64>() / values.len() as f64)
}

/// Trapezoidal integral of PRB over time, %·seconds.
pub fn prb_time_integral(samples: &[RouteSample]) -> f64 {
    samples
        .windows(2)
        .map(|w| (w[0].prb + w[1].prb) / 2.0 * (w[1].time_ms - w[0].time_ms) as f64 / 1000.0)
        .sum()
}

/// PRB saved by `run` relative to `baseline` over their common time window,
/// in percent.
pub fn prb_savings(run: &[RouteSample], baseline: &[RouteSample]) -> Result<f64, MetricsError> {
    if run.is_empty() || baseline.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    let start = run[0].time_ms.max(baseline[0].time_ms);
    let end = run[run.len() - 1]
        .time_ms
        .min(baseline[baseline.len() - 1].time_ms);
    if start >= end {
        return Err(MetricsError::MismatchedWindows);
    }
    let window = |samples: &[RouteSample]| -> Vec<RouteSample> {
        samples
            .iter()
            .filter(|s| (start..=end).contains(&s.time_ms))
            .copied()
            .collect()
    };
    let run_integral = prb_time_integral(&window(run));
    let base_integral = prb_time_integral(&window(baseline));
    if base_integral == 0.0 {
        return Err(MetricsError::MismatchedWindows);
    }
    Ok(100.0 * (1.0 - run_integral / base_integral))
}

/// Sample mean and standard deviation (n-1 denominator, 0 for n < 2).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() as f64 - 1.0);
    (mean, var.sqrt())
}

/// Consolidated run metrics. Fields that do not apply to a run kind stay
/// `None`; savings is defined only when a baseline run is paired.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse_mbps: Option<f64>,
    pub mae_mbps: Option<f64>,
    pub mean_iterations: Option<f64>,
    pub sd_iterations: Option<f64>,
    pub mean_rounds: Option<f64>,
    pub sd_rounds: Option<f64>,
    pub convergence_time_ms: Option<f64>,
    pub prb_time_integral: Option<f64>,
    pub prb_savings_percent: Option<f64>,
    pub retunes: Option<u32>,
}

impl MetricsReport {
    /// One CSV line with a fixed header, empty cells for absent metrics.
    pub fn to_csv(&self) -> String {
        fn cell<T: std::fmt::Display>(v: &Option<T>) -> String {
            v.as_ref().map(|x| x.to_string()).unwrap_or_default()
        }
        format!(
            "rmse_mbps,mae_mbps,mean_iterations,sd_iterations,mean_rounds,sd_rounds,convergence_time_ms,prb_time_integral,prb_savings_percent,retunes\n{},{},{},{},{},{},{},{},{},{}\n",
            cell(&self.rmse_mbps),
            cell(&self.mae_mbps),
            cell(&self.mean_iterations),
            cell(&self.sd_iterations),
            cell(&self.mean_rounds),
            cell(&self.sd_rounds),
            cell(&self.convergence_time_ms),
            cell(&self.prb_time_integral),
            cell(&self.prb_savings_percent),
            cell(&self.retunes),
        )
    }
}

impl std::fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fn row(
            f: &mut std::fmt::Formatter<'_>,
            name: &str,
            v: Option<f64>,
            unit: &str,
        ) -> std::fmt::Result {
            if let Some(v) = v {
                writeln!(f, "  {name:<22} {v:>12.3} {unit}")?;
            }
            Ok(())
        }
        writeln!(f, "metrics:")?;
        row(f, "rmse", self.rmse_mbps, "Mbps")?;
        row(f, "mae", self.mae_mbps, "Mbps")?;
        row(f, "mean iterations", self.mean_iterations, "")?;
        row(f, "sd iterations", self.sd_iterations, "")?;
        row(f, "mean rounds", self.mean_rounds, "")?;
        row(f, "sd rounds", self.sd_rounds, "")?;
        row(f, "convergence time", self.convergence_time_ms, "ms")?;
        row(f, "prb integral", self.prb_time_integral, "%*s")?;
        row(f, "prb savings", self.prb_savings_percent, "%")?;
        if let Some(r) = self.retunes {
            writeln!(f, "  {:<22} {r:>12}", "gain retunes")?;
        }
        Ok(())
    }
}

/// Per-enforcement iteration counts pulled back out of an audit stream.
pub fn enforcement_iterations(records: &[AuditRecord]) -> Vec<f64> {
    records
        .iter()
        .filter_map(|r| match &r.payload {
            AuditPayload::Enforcement { iterations, .. } => Some(*iterations as f64),
            _ => None,
        })
        .collect()
}

/// Number of accepted gain retunes in an audit stream.
pub fn retune_count(records: &[AuditRecord]) -> u32 {
    records
        .iter()
        .filter(|r| {
            matches!(
                &r.payload,
                AuditPayload::KpDecision { accepted: true, .. }
            )
        })
        .count() as u32
}

/// Throughput samples reassembled from per-iteration control records; used
/// to recompute route metrics offline.
pub fn control_route(records: &[AuditRecord]) -> Vec<RouteSample> {
    records
        .iter()
        .filter_map(|r| match &r.payload {
            AuditPayload::ControlStep {
                prb, throughput, ..
            } => Some(RouteSample {
                time_ms: r.time_ms,
                prb: *prb,
                throughput: *throughput,
            }),
            _ => None,
        })
        .collect()
}
