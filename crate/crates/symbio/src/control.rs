//! Proportional control of slice throughput.
//!
//! The inner loop: `prb_new = prb + kp * (target - throughput)`, one
//! correction per reaction delay, until the measured throughput enters the
//! intent band or the iteration budget runs out. The gain lives in a shared
//! [`GainCell`] so a meta-optimizer can replace it between iterations without
//! ever interrupting a step in progress.

use crate::audit::{AuditPayload, AuditSink};
use crate::channel::{SliceSim, SliceState};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// A throughput goal with an acceptance band `[target - tol, target + tol]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intent {
    pub target_mbps: f64,
    pub tolerance_mbps: f64,
}

impl Intent {
    pub fn new(target_mbps: f64, tolerance_mbps: f64) -> Self {
        assert!(target_mbps >= 0.0, "intent target must be non-negative");
        assert!(tolerance_mbps > 0.0, "intent tolerance must be positive");
        Self {
            target_mbps,
            tolerance_mbps,
        }
    }

    pub fn contains(&self, throughput_mbps: f64) -> bool {
        (throughput_mbps - self.target_mbps).abs() <= self.tolerance_mbps
    }
}

/// Controller parameters. `kp` maps Mbps of error to PRB percentage points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PControlConfig {
    pub kp: f64,
    pub max_iterations: u32,
    pub kp_bounds: (f64, f64),
}

impl Default for PControlConfig {
    fn default() -> Self {
        Self {
            kp: 0.75,
            max_iterations: 100,
            kp_bounds: (0.05, 10.0),
        }
    }
}

/// Gain shared between the control loop and its meta-optimizer. Replacement
/// is atomic and takes effect at the next control step, never mid-step.
#[derive(Debug, Clone)]
pub struct GainCell(Arc<AtomicU64>);

impl GainCell {
    pub fn new(kp: f64) -> Self {
        Self(Arc::new(AtomicU64::new(kp.to_bits())))
    }

    pub fn load(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::SeqCst))
    }

    pub fn store(&self, kp: f64) {
        self.0.store(kp.to_bits(), Ordering::SeqCst);
    }
}

/// One proportional correction: `prb + kp * (target - throughput)`, clamped
/// to [0, 100].
pub fn control_step(state: &SliceState, intent: &Intent, kp: f64) -> f64 {
    let error = intent.target_mbps - state.throughput_mbps;
    (state.prb_fraction + kp * error).clamp(0.0, 100.0)
}

/// A per-iteration observation from the enforcement loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time_ms: u64,
    pub prb: f64,
    pub throughput: f64,
}

/// Outcome of enforcing one intent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnforcementResult {
    pub iterations: u32,
    pub converged: bool,
    pub final_throughput: f64,
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Drives the slice into the intent band.
///
/// Each iteration applies one control step, waits out the reaction delay and
/// re-measures. An enforcement that starts inside the band still runs one
/// iteration (the correction is the identity there). Budget exhaustion yields
/// `converged = false` rather than an error; the meta layer consumes it.
pub fn enforce_intent(
    sim: &mut SliceSim,
    intent: &Intent,
    cfg: &PControlConfig,
    gain: &GainCell,
    episode: u64,
    audit: &mut dyn AuditSink,
) -> EnforcementResult {
    let delay = sim.model().reaction_delay_ms.max(1);
    let mut trajectory = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let kp = gain.load();
        let error = intent.target_mbps - sim.throughput();
        let new_prb = control_step(sim.state(), intent, kp);
        sim.enforce(new_prb);
        sim.advance(delay);
        trajectory.push(TrajectoryPoint {
            time_ms: sim.time_ms(),
            prb: sim.state().prb_fraction,
            throughput: sim.throughput(),
        });
        audit.record(
            "control",
            sim.time_ms(),
            AuditPayload::ControlStep {
                episode,
                iteration: iterations,
                kp,
                error,
                prb: sim.state().prb_fraction,
                throughput: sim.throughput(),
            },
        );
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
        "control",
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

/// Rolling cluster of iteration counts. Once `n` enforcements have been
/// pushed the arithmetic mean is emitted and the cluster resets.
#[derive(Debug, Clone)]
pub struct KpiWindow {
    cluster: Vec<f64>,
    n: usize,
}

impl KpiWindow {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "cluster size must be at least 1");
        Self {
            cluster: Vec::with_capacity(n),
            n,
        }
    }

    pub fn push(&mut self, iterations: u32) -> Option<f64> {
        self.cluster.push(iterations as f64);
        if self.cluster.len() == self.n {
            let mean = self.cluster.iter().sum::<f64>() / self.n as f64;
            self.cluster.clear();
            Some(mean)
        } else {
            None
        }
    }

    pub fn pending(&self) -> usize {
        self.cluster.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::NullSink;
    use crate::channel::{ChannelTrace, LinkModel, TraceSample};
    use proptest::prelude::*;

    fn flat_sim(mcs: u8, prb: f64) -> SliceSim {
        let trace =
            ChannelTrace::new("flat", vec![TraceSample { time_ms: 0, mcs }]).unwrap();
        SliceSim::new(trace, LinkModel::default(), prb)
    }

    #[test]
    fn control_step_proportional_correction() {
        let model = LinkModel::default();
        let mut state = SliceState::new(40.0, 28, &model, 0);
        state.throughput_mbps = 10.0;
        let intent = Intent::new(20.0, 5.0);
        assert_eq!(control_step(&state, &intent, 0.5), 45.0);
    }

    #[test]
    fn control_step_zero_error_fixed_point() {
        let model = LinkModel::default();
        let mut state = SliceState::new(40.0, 28, &model, 0);
        state.throughput_mbps = 20.0;
        let intent = Intent::new(20.0, 5.0);
        assert_eq!(control_step(&state, &intent, 1.3), 40.0);
    }

    #[test]
    fn control_step_clamps() {
        let model = LinkModel::default();
        let mut state = SliceState::new(95.0, 28, &model, 0);
        state.throughput_mbps = 0.0;
        let intent = Intent::new(20.0, 5.0);
        assert_eq!(control_step(&state, &intent, 1.5), 100.0);
    }

    #[test]
    fn tuned_gain_converges_fast_from_full_allocation() {
        let mut sim = flat_sim(28, 100.0);
        let intent = Intent::new(20.0, 5.0);
        let cfg = PControlConfig::default();
        let gain = GainCell::new(0.75);
        let res = enforce_intent(&mut sim, &intent, &cfg, &gain, 0, &mut NullSink);
        assert!(res.converged);
        assert!(res.iterations <= 2, "took {}", res.iterations);
    }

    #[test]
    fn untuned_gain_crawls() {
        let mut sim = flat_sim(28, 100.0);
        let intent = Intent::new(20.0, 5.0);
        let cfg = PControlConfig::default();
        let gain = GainCell::new(0.10);
        let res = enforce_intent(&mut sim, &intent, &cfg, &gain, 0, &mut NullSink);
        assert!(res.converged);
        // geometric decay of a 100 Mbps error at factor 0.88 per iteration
        assert_eq!(res.iterations, 24);
    }

    #[test]
    fn infeasible_intent_exhausts_budget_pinned_at_full_prb() {
        let mut sim = flat_sim(4, 0.0); // capacity ~17.1 Mbps
        let intent = Intent::new(80.0, 5.0);
        let cfg = PControlConfig::default();
        let gain = GainCell::new(0.75);
        let res = enforce_intent(&mut sim, &intent, &cfg, &gain, 0, &mut NullSink);
        assert!(!res.converged);
        assert_eq!(res.iterations, cfg.max_iterations);
        assert_eq!(sim.state().prb_fraction, 100.0);
    }

    #[test]
    fn in_band_start_counts_one_iteration_unchanged_prb() {
        // capacity(14) = 60, so prb 25% gives exactly 15.0 Mbps
        let mut sim = flat_sim(14, 25.0);
        let intent = Intent::new(15.0, 5.0);
        let cfg = PControlConfig::default();
        let gain = GainCell::new(0.75);
        let res = enforce_intent(&mut sim, &intent, &cfg, &gain, 0, &mut NullSink);
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
        assert_eq!(sim.state().prb_fraction, 25.0);
    }

    #[test]
    fn gain_replacement_applies_at_next_iteration() {
        // First iteration runs at the stale gain, later ones at the new gain.
        let mut sim = flat_sim(28, 100.0);
        let intent = Intent::new(20.0, 5.0);
        let cfg = PControlConfig {
            max_iterations: 1,
            ..Default::default()
        };
        let gain = GainCell::new(0.10);
        enforce_intent(&mut sim, &intent, &cfg, &gain, 0, &mut NullSink);
        let prb_after_slow = sim.state().prb_fraction;
        assert!((prb_after_slow - 90.0).abs() < 1e-9);
        gain.store(0.75);
        let res = enforce_intent(&mut sim, &intent, &cfg, &gain, 1, &mut NullSink);
        assert!(res.converged || res.iterations == 1);
        // 90 + 0.75*(20 - 108) = 24
        assert!((sim.state().prb_fraction - 24.0).abs() < 1e-9);
    }

    #[test]
    fn kpi_window_emits_mean_and_resets() {
        let mut w = KpiWindow::new(3);
        assert_eq!(w.push(5), None);
        assert_eq!(w.push(4), None);
        assert_eq!(w.push(6), Some(5.0));
        assert_eq!(w.pending(), 0);
        assert_eq!(w.push(1), None);
        assert_eq!(w.push(1), None);
        assert_eq!(w.push(1), Some(1.0));
    }

    #[test]
    fn iteration_accounting_matches_control_steps() {
        let mut sink = crate::audit::MemorySink::new("t");
        let mut sim = flat_sim(28, 100.0);
        let intent = Intent::new(20.0, 5.0);
        let cfg = PControlConfig::default();
        let gain = GainCell::new(0.10);
        let res = enforce_intent(&mut sim, &intent, &cfg, &gain, 7, &mut sink);
        let steps = sink
            .records
            .iter()
            .filter(|r| matches!(r.payload, AuditPayload::ControlStep { episode: 7, .. }))
            .count();
        assert_eq!(steps as u32, res.iterations);
    }

    proptest! {
        #[test]
        fn control_step_output_always_in_range(
            prb in 0.0f64..=100.0,
            tp in 0.0f64..=200.0,
            target in 0.0f64..=150.0,
            kp in 0.0f64..=50.0,
        ) {
            let model = LinkModel::default();
            let mut state = SliceState::new(prb, 28, &model, 0);
            state.throughput_mbps = tp;
            let intent = Intent::new(target, 5.0);
            let out = control_step(&state, &intent, kp);
            prop_assert!((0.0..=100.0).contains(&out));
        }

        #[test]
        fn error_decreases_monotonically_under_small_gain(
            mcs in 1u8..=28,
            kp_frac in 0.05f64..0.95,
            prb0 in 0.0f64..=100.0,
        ) {
            // pick kp so that |1 - kp*capacity/100| < 1
            let model = LinkModel::default();
            let cap = model.capacity(mcs);
            let kp = kp_frac * 100.0 / cap; // loop factor = 1 - kp_frac
            let intent = Intent::new(0.2 * cap, 0.02 * cap + 1e-9);
            let mut sim = flat_sim(mcs, prb0);
            let gain = GainCell::new(kp);
            let cfg = PControlConfig { max_iterations: 500, ..Default::default() };
            let res = enforce_intent(&mut sim, &intent, &cfg, &gain, 0, &mut NullSink);
            let mut last = f64::INFINITY;
            for p in &res.trajectory {
                let e = (p.throughput - intent.target_mbps).abs();
                // strictly decreasing until the band is entered, unless
                // already at the clamped fixed point
                if e > intent.tolerance_mbps {
                    prop_assert!(e < last + 1e-9);
                }
                last = e;
            }
        }
    }
}
