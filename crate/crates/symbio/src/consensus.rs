//! Concave multi-agent utility model, gradient-descent consensus and the
//! bootstrap confidence interval used to guard-rail negotiations.
//!
//! Each agent `i` carries `U_i(x_i) = -alpha_i (x_i - d_i)^2`; the mediator
//! carries `U_0 = -gamma * sum_i (x_i - xbar)^2 - beta * (xbar - target)^2`.
//! The solver iterates the per-agent update
//!
//! ```text
//! x_i <- x_i - eta * [ 2 alpha_i (x_i - d_i) + 2 gamma (x_i - xbar) + beta (xbar - target) ]
//! ```
//!
//! clamping to the SLA range, and declares consensus when the spread
//! `max_i |x_i - xbar|` falls below `epsilon` *and* the iterate has stopped
//! moving (largest per-agent step below `step_tol`). The spread test alone
//! degenerates for n = 1, where it is vacuously zero; the stability condition
//! makes the solver land on the stationary point in every dimension.
//!
//! [`optimal_sla_consensus`] is a separate, frozen reference procedure with
//! fixed constants (round-growing mediator weight, per-round convergence
//! test, floor of the average). It is kept verbatim so discrepancies between
//! the general solver and the reference stay observable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConsensusError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("value {value} outside SLA range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("empty input")]
    Empty,
    #[error("restart count must be at least 1")]
    ZeroRestarts,
    #[error("{failed} of {total} restarts failed to converge")]
    TooManyFailures { failed: usize, total: usize },
    #[error("non-finite iterate at index {0}")]
    NonFinite(usize),
}

/// One consensus optimization instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusProblem {
    /// Desired SLA per agent, Mbps.
    pub demands: Vec<f64>,
    /// Sensitivity to deviating from the own demand, one per agent.
    pub alphas: Vec<f64>,
    /// Consensus weight (spread penalty).
    pub gamma: f64,
    /// Alignment weight toward the mediator target.
    pub beta: f64,
    /// Balance between individual and global objectives; enters the combined
    /// utility only, not the iterative update.
    pub lambda: f64,
    /// Mediator's preferred SLA, Mbps.
    pub x_target: f64,
    /// Learning rate.
    pub eta: f64,
    /// Consensus threshold on the spread, Mbps.
    pub epsilon: f64,
    /// Stability threshold on the largest per-agent step.
    #[serde(default = "default_step_tol")]
    pub step_tol: f64,
    /// Admissible SLA interval.
    #[serde(default = "default_sla_range")]
    pub sla_range: (f64, f64),
}

fn default_step_tol() -> f64 {
    1e-6
}

fn default_sla_range() -> (f64, f64) {
    (0.0, 100.0)
}

impl ConsensusProblem {
    /// Uniform-alpha instance over the default SLA range.
    pub fn uniform(
        demands: Vec<f64>,
        alpha: f64,
        gamma: f64,
        beta: f64,
        x_target: f64,
    ) -> Self {
        let n = demands.len();
        Self {
            demands,
            alphas: vec![alpha; n],
            gamma,
            beta,
            lambda: 1.0,
            x_target,
            eta: 0.01,
            epsilon: 0.5,
            step_tol: default_step_tol(),
            sla_range: default_sla_range(),
        }
    }

    pub fn n(&self) -> usize {
        self.demands.len()
    }

    fn check_vec(&self, x: &[f64]) -> Result<(), ConsensusError> {
        if x.len() != self.n() {
            return Err(ConsensusError::DimensionMismatch {
                expected: self.n(),
                got: x.len(),
            });
        }
        let (lo, hi) = self.sla_range;
        for &v in x {
            if !(lo..=hi).contains(&v) {
                return Err(ConsensusError::OutOfRange { value: v, lo, hi });
            }
        }
        Ok(())
    }
}

/// Utility values at a point: per-agent, mediator, and the combined
/// objective `sum_i U_i + lambda * U_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Utilities {
    pub individual: Vec<f64>,
    pub global: f64,
    pub combined: f64,
}

/// Evaluates the utilities at `x`. All terms are non-positive, vanishing
/// only at the respective ideal points.
pub fn utilities(problem: &ConsensusProblem, x: &[f64]) -> Result<Utilities, ConsensusError> {
    problem.check_vec(x)?;
    let n = problem.n() as f64;
    let xbar = x.iter().sum::<f64>() / n;
    let individual: Vec<f64> = x
        .iter()
        .zip(&problem.alphas)
        .zip(&problem.demands)
        .map(|((&xi, &a), &d)| -a * (xi - d) * (xi - d))
        .collect();
    let spread: f64 = x.iter().map(|&xi| (xi - xbar) * (xi - xbar)).sum();
    let global = -problem.gamma * spread
        - problem.beta * (xbar - problem.x_target) * (xbar - problem.x_target);
    let combined = individual.iter().sum::<f64>() + problem.lambda * global;
    Ok(Utilities {
        individual,
        global,
        combined,
    })
}

/// Analytic gradient of the combined objective at `x`.
///
/// `d/dx_i = -2 alpha_i (x_i - d_i) - lambda [ 2 gamma (x_i - xbar) + (2 beta / n)(xbar - target) ]`
pub fn combined_gradient(
    problem: &ConsensusProblem,
    x: &[f64],
) -> Result<Vec<f64>, ConsensusError> {
    problem.check_vec(x)?;
    let n = problem.n() as f64;
    let xbar = x.iter().sum::<f64>() / n;
    Ok(x.iter()
        .zip(&problem.alphas)
        .zip(&problem.demands)
        .map(|((&xi, &a), &d)| {
            -2.0 * a * (xi - d)
                - problem.lambda
                    * (2.0 * problem.gamma * (xi - xbar)
                        + 2.0 * problem.beta / n * (xbar - problem.x_target))
        })
        .collect())
}

/// Consensus solver outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusResult {
    /// Average of the final iterate, Mbps.
    pub value: f64,
    pub iterations: u32,
    pub converged: bool,
    /// Per-iteration x vectors when tracing was requested.
    pub trajectory: Option<Vec<Vec<f64>>>,
}

/// Runs the per-agent gradient update from `x0` until consensus or
/// `max_iters`.
pub fn gd_consensus(
    problem: &ConsensusProblem,
    x0: &[f64],
    max_iters: u32,
) -> Result<ConsensusResult, ConsensusError> {
    run_gd(problem, x0, max_iters, false)
}

/// Same as [`gd_consensus`] but records every iterate.
pub fn gd_consensus_traced(
    problem: &ConsensusProblem,
    x0: &[f64],
    max_iters: u32,
) -> Result<ConsensusResult, ConsensusError> {
    run_gd(problem, x0, max_iters, true)
}

fn run_gd(
    problem: &ConsensusProblem,
    x0: &[f64],
    max_iters: u32,
    trace: bool,
) -> Result<ConsensusResult, ConsensusError> {
    problem.check_vec(x0)?;
    let n = problem.n();
    let (lo, hi) = problem.sla_range;
    let mut x = x0.to_vec();
    let mut trajectory = trace.then(Vec::new);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iters {
        iterations += 1;
        let xbar = x.iter().sum::<f64>() / n as f64;
        let mut max_step: f64 = 0.0;
        for i in 0..n {
            let g = 2.0 * problem.alphas[i] * (x[i] - problem.demands[i])
                + 2.0 * problem.gamma * (x[i] - xbar)
                + problem.beta * (xbar - problem.x_target);
            let next = (x[i] - problem.eta * g).clamp(lo, hi);
            if !next.is_finite() {
                return Err(ConsensusError::NonFinite(i));
            }
            max_step = max_step.max((next - x[i]).abs());
            x[i] = next;
        }
        if let Some(t) = trajectory.as_mut() {
            t.push(x.clone());
        }
        let xbar_new = x.iter().sum::<f64>() / n as f64;
        let spread = x
            .iter()
            .map(|&xi| (xi - xbar_new).abs())
            .fold(0.0f64, f64::max);
        if spread < problem.epsilon && max_step < problem.step_tol {
            converged = true;
            break;
        }
    }

    let value = x.iter().sum::<f64>() / n as f64;
    Ok(ConsensusResult {
        value,
        iterations,
        converged,
        trajectory,
    })
}

/// How restart demands are perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JitterDistribution {
    Gaussian,
    Uniform,
}

/// Perturbation applied to the demand vector per bootstrap restart. Jittered
/// demands are re-clamped to the SLA range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterSpec {
    pub distribution: JitterDistribution,
    /// Mbps; standard deviation for gaussian, half-width for uniform.
    pub scale: f64,
    pub seed: u64,
}

impl Default for JitterSpec {
    fn default() -> Self {
        Self {
            distribution: JitterDistribution::Gaussian,
            scale: 5.0,
            seed: 0,
        }
    }
}

/// 95% confidence interval over bootstrap consensus values.
///
/// `half_width = 1.96 * sd / sqrt(restarts)`. The stored mean is the
/// midpoint of `[lower, upper]`, which keeps `lower + upper == 2 * mean`
/// exact in floating point (the midpoint is within one ulp of the sample
/// mean).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub sd: f64,
    pub half_width: f64,
    pub lower: f64,
    pub upper: f64,
    /// Restarts included in the statistics.
    pub restarts: u32,
    /// Restarts dropped for non-convergence.
    pub excluded: u32,
}

impl ConfidenceInterval {
    fn from_samples(values: &[f64], excluded: u32) -> Self {
        let r = values.len();
        let sample_mean = values.iter().sum::<f64>() / r as f64;
        let all_equal = values.windows(2).all(|w| w[0] == w[1]);
        let sd = if r >= 2 && !all_equal {
            let var = values
                .iter()
                .map(|v| (v - sample_mean) * (v - sample_mean))
                .sum::<f64>()
                / (r as f64 - 1.0);
            var.sqrt()
        } else {
            // a degenerate sample has zero spread by definition; summing
            // identical values would otherwise leak ulp-level noise into sd
            0.0
        };
        let half_width = 1.96 * sd / (r as f64).sqrt();
        let lower = sample_mean - half_width;
        let upper = sample_mean + half_width;
        let mean = (lower + upper) / 2.0;
        Self {
            mean,
            sd,
            half_width,
            lower,
            upper,
            restarts: r as u32,
            excluded,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// Runs `r` independently jittered restarts of the solver and forms the 95%
/// interval over the converged consensus values.
///
/// Non-convergent restarts are excluded from the statistics; more than half
/// failing is an error. `r = 1` yields a zero-width interval and a warning.
pub fn bootstrap_ci(
    problem: &ConsensusProblem,
    jitter: &JitterSpec,
    r: u32,
    max_iters: u32,
) -> Result<ConfidenceInterval, ConsensusError> {
    if r == 0 {
        return Err(ConsensusError::ZeroRestarts);
    }
    if r == 1 {
        log::warn!("bootstrap with a single restart yields a zero-width interval");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(jitter.seed);
    let (lo, hi) = problem.sla_range;
    let normal = Normal::new(0.0, jitter.scale.max(f64::MIN_POSITIVE)).expect("valid sd");
    let uniform = Uniform::new_inclusive(-jitter.scale, jitter.scale);
    let mut values = Vec::with_capacity(r as usize);
    let mut excluded = 0u32;
    for _ in 0..r {
        let jittered: Vec<f64> = problem
            .demands
            .iter()
            .map(|&d| {
                let noise = if jitter.scale == 0.0 {
                    0.0
                } else {
                    match jitter.distribution {
                        JitterDistribution::Gaussian => normal.sample(&mut rng),
                        JitterDistribution::Uniform => uniform.sample(&mut rng),
                    }
                };
                (d + noise).clamp(lo, hi)
            })
            .collect();
        let mut sub = problem.clone();
        sub.demands = jittered.clone();
        let res = run_gd(&sub, &jittered, max_iters, false)?;
        if res.converged {
            values.push(res.value);
        } else {
            excluded += 1;
        }
    }
    if values.is_empty() || excluded as usize * 2 > r as usize {
        return Err(ConsensusError::TooManyFailures {
            failed: excluded as usize,
            total: r as usize,
        });
    }
    Ok(ConfidenceInterval::from_samples(&values, excluded))
}

/// Frozen reference consensus: fixed constants, mediator weight growing per
/// round, per-round step-size convergence test, floor of the round average.
///
/// Returns `None` when 1000 rounds pass without the iterate settling.
pub fn optimal_sla_consensus(
    intents: &[f64],
    network_target: f64,
) -> Result<Option<f64>, ConsensusError> {
    if intents.is_empty() {
        return Err(ConsensusError::Empty);
    }
    for &v in intents {
        if !(0.0..=100.0).contains(&v) {
            return Err(ConsensusError::OutOfRange {
                value: v,
                lo: 0.0,
                hi: 100.0,
            });
        }
    }
    let n = intents.len();
    let iterations = 1000;
    let eta = 0.01;
    let alphas = vec![7.0; n];
    let gammas = vec![7.0; n];
    let initial_betas = 0.5;
    let increase_factor = 0.01;
    let convergence_threshold = 0.5;
    let mut sla: Vec<f64> = intents.to_vec();
    let initial_sla = sla.clone();

    for k in 0..iterations {
        let current_average = sla.iter().sum::<f64>() / n as f64;
        // round variance is observed but never feeds the update
        let _current_variance = sla
            .iter()
            .map(|s| (s - current_average) * (s - current_average))
            .sum::<f64>()
            / n as f64;
        let betas = initial_betas + k as f64 * increase_factor;
        let network_adjustment = betas * (current_average - network_target);

        let mut max_step: f64 = 0.0;
        for i in 0..n {
            let tenant_gradient = 2.0 * alphas[i] * (sla[i] - initial_sla[i]);
            let consensus_gradient = 2.0 * gammas[i] * (sla[i] - current_average);
            let next = (sla[i] - eta * (tenant_gradient + consensus_gradient + network_adjustment))
                .clamp(0.0, 100.0);
            max_step = max_step.max((next - sla[i]).abs());
            sla[i] = next;
        }
        if max_step < convergence_threshold {
            return Ok(Some(current_average.floor()));
        }
    }
    Ok(None)
}
