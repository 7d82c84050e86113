//! Reduced-fidelity comparison controllers: tabular Q-learning over error
//! buckets and a Bayesian-style probe search over PRB.
//!
//! Both honor the same clamp, reaction-delay and iteration-accounting
//! contracts as the proportional loop, so harness comparisons line up. They
//! are qualitative baselines; hyperparameters default to values that show
//! the characteristic behaviors (re-exploration after a channel change,
//! aggressive overshooting probes), not to reproduce testbed error figures.

use crate::audit::{AuditPayload, AuditSink};
use crate::channel::SliceSim;
use crate::control::{EnforcementResult, Intent, TrajectoryPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Tabular Q-learning setup: states are error buckets, actions are PRB
/// deltas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QLearnConfig {
    /// Ascending bucket edges over the throughput error, Mbps.
    pub error_bin_edges: Vec<f64>,
    /// PRB percentage-point deltas.
    pub actions: Vec<f64>,
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub seed: u64,
}

impl Default for QLearnConfig {
    fn default() -> Self {
        Self {
            error_bin_edges: vec![-50.0, -20.0, -10.0, -5.0, 5.0, 10.0, 20.0, 50.0],
            actions: vec![-20.0, -10.0, -5.0, -1.0, 0.0, 1.0, 5.0, 10.0, 20.0],
            learning_rate: 0.4,
            discount: 0.8,
            epsilon_start: 0.8,
            epsilon_decay: 0.97,
            epsilon_min: 0.02,
            seed: 0,
        }
    }
}

/// Online tabular learner; the Q table persists across enforcements so a
/// stationary channel is eventually handled in few iterations, while a
/// channel change forces re-exploration.
pub struct QLearnController {
    cfg: QLearnConfig,
    q: Vec<Vec<f64>>,
    epsilon: f64,
    rng: ChaCha8Rng,
}

impl QLearnController {
    pub fn new(cfg: QLearnConfig) -> Self {
        let states = cfg.error_bin_edges.len() + 1;
        let actions = cfg.actions.len().max(1);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let epsilon = cfg.epsilon_start;
        Self {
            cfg,
            q: vec![vec![0.0; actions]; states],
            epsilon,
            rng,
        }
    }

    fn bucket(&self, error: f64) -> usize {
        self.cfg.error_bin_edges.partition_point(|&e| e < error)
    }

    fn best_action(&self, state: usize) -> usize {
        let row = &self.q[state];
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        best
    }

    /// Runs one enforcement with online learning; same contract as the
    /// proportional loop.
    pub fn enforce(
        &mut self,
        sim: &mut SliceSim,
        intent: &Intent,
        max_iterations: u32,
        episode: u64,
        audit: &mut dyn AuditSink,
    ) -> EnforcementResult {
        let delay = sim.model().reaction_delay_ms.max(1);
        let mut trajectory = Vec::new();
        let mut iterations = 0;
        let mut converged = false;

        while iterations < max_iterations {
            iterations += 1;
            if self.cfg.actions.is_empty() {
                // degenerate config: nothing to pick, the PRB never moves
                sim.advance(delay);
            } else {
                let error = intent.target_mbps - sim.throughput();
                let state = self.bucket(error);
                let a = if self.rng.gen::<f64>() < self.epsilon {
                    self.rng.gen_range(0..self.cfg.actions.len())
                } else {
                    self.best_action(state)
                };
                let target_prb = (sim.state().prb_fraction + self.cfg.actions[a]).clamp(0.0, 100.0);
                sim.enforce(target_prb);
                sim.advance(delay);
                let error_after = intent.target_mbps - sim.throughput();
                let next_state = self.bucket(error_after);
                let reward = -error_after.abs()
                    + if intent.contains(sim.throughput()) {
                        50.0
                    } else {
                        0.0
                    };
                let best_next = self.q[next_state][self.best_action(next_state)];
                let old = self.q[state][a];
                self.q[state][a] +=
                    self.cfg.learning_rate * (reward + self.cfg.discount * best_next - old);
                self.epsilon = (self.epsilon * self.cfg.epsilon_decay).max(self.cfg.epsilon_min);
            }
            trajectory.push(TrajectoryPoint {
                time_ms: sim.time_ms(),
                prb: sim.state().prb_fraction,
                throughput: sim.throughput(),
            });
            if intent.contains(sim.throughput()) {
                converged = true;
                break;
            }
        }

        let result = EnforcementResult {
            iterations,
            converged,
            final_throughput: sim.throughput(),
            trajectory,
        };
        audit.record(
            "baselines",
            sim.time_ms(),
            AuditPayload::Enforcement {
                episode,
                target: intent.target_mbps,
                tolerance: intent.tolerance_mbps,
                iterations: result.iterations,
                converged: result.converged,
                final_throughput: result.final_throughput,
            },
        );
        result
    }
}

/// Bayesian-style probe search over the PRB axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesOptConfig {
    /// Maximum probes per enforcement.
    pub budget: u32,
    pub prior_bounds: (f64, f64),
    /// Scale of the decaying exploration jitter around the surrogate
    /// optimum, as a fraction of the prior width.
    pub exploration: f64,
    pub seed: u64,
}

impl Default for BayesOptConfig {
    fn default() -> Self {
        Self {
            budget: 20,
            prior_bounds: (0.0, 100.0),
            exploration: 0.3,
            seed: 0,
        }
    }
}

/// Probes PRB values guided by a least-squares line over the observed
/// (prb, throughput) pairs. The first probe is the prior midpoint; the
/// second is deliberately aggressive, so the trajectory overshoots before
/// settling.
pub fn bayes_enforce(
    sim: &mut SliceSim,
    intent: &Intent,
    cfg: &BayesOptConfig,
    episode: u64,
    audit: &mut dyn AuditSink,
) -> EnforcementResult {
    let delay = sim.model().reaction_delay_ms.max(1);
    let (lo, hi) = cfg.prior_bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ episode);
    let mut observations: Vec<(f64, f64)> = Vec::new();
    let mut trajectory = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.budget {
        iterations += 1;
        let probe = match observations.len() {
            0 => (lo + hi) / 2.0,
            1 => {
                if observations[0].1 < intent.target_mbps {
                    hi
                } else {
                    lo
                }
            }
            k => {
                let candidate = line_fit_candidate(&observations, intent.target_mbps)
                    .unwrap_or_else(|| rng.gen_range(lo..=hi));
                let decay = 0.5f64.powi(k as i32 - 2);
                let jitter =
                    cfg.exploration * (hi - lo) * decay * (rng.gen::<f64>() - 0.5) * 2.0;
                candidate + jitter
            }
        }
        .clamp(lo, hi)
        .clamp(0.0, 100.0);

        sim.enforce(probe);
        sim.advance(delay);
        observations.push((sim.state().prb_fraction, sim.throughput()));
        trajectory.push(TrajectoryPoint {
            time_ms: sim.time_ms(),
            prb: sim.state().prb_fraction,
            throughput: sim.throughput(),
        });
        if intent.contains(sim.throughput()) {
            converged = true;
            break;
        }
    }

    let result = EnforcementResult {
        iterations,
        converged,
        final_throughput: sim.throughput(),
        trajectory,
    };
    audit.record(
        "baselines",
        sim.time_ms(),
        AuditPayload::Enforcement {
            episode,
            target: intent.target_mbps,
            tolerance: intent.tolerance_mbps,
            iterations: result.iterations,
            converged: result.converged,
            final_throughput: result.final_throughput,
        },
    );
    result
}

/// Least-squares line through the observations, solved for the PRB that
/// yields the target; `None` when the slope is degenerate.
fn line_fit_candidate(obs: &[(f64, f64)], target: f64) -> Option<f64> {
    let n = obs.len() as f64;
    let sx: f64 = obs.iter().map(|o| o.0).sum();
    let sy: f64 = obs.iter().map(|o| o.1).sum();
    let sxx: f64 = obs.iter().map(|o| o.0 * o.0).sum();
    let sxy: f64 = obs.iter().map(|o| o.0 * o.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-9 {
        return None;
    }
    let a = (n * sxy - sx * sy) / denom;
    let b = (sy - a * sx) / n;
    if a.abs() < 1e-9 {
        return None;
    }
    Some((target - b) / a)
}
