//! Deterministic discrete-time simulator of a sliced RAN downlink.
//!
//! An MCS trace is played back as a step function; throughput is
//! `capacity(mcs) * prb_fraction / 100`, and PRB enforcement takes effect only
//! after the link reaction delay. Everything here is integer-millisecond,
//! pure-f64 arithmetic: identical inputs give bit-identical trajectories.

use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;
use thiserror::Error;

/// Highest MCS index understood by the simulator.
pub const MCS_MAX: u8 = 28;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace row {row}: time {time} is not strictly increasing")]
    NonMonotoneTime { row: usize, time: u64 },
    #[error("trace row {row}: mcs {mcs} outside [0, {}]", MCS_MAX)]
    McsOutOfRange { row: usize, mcs: i64 },
    #[error("trace row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("time {t} ms precedes trace start {start} ms")]
    BeforeTraceStart { t: u64, start: u64 },
    #[error("capacity table must have {} entries, got {0}", MCS_MAX as usize + 1)]
    BadCapacityTable(usize),
    #[error("capacity table must be non-decreasing in mcs (index {0})")]
    NonMonotoneCapacity(usize),
    #[error("step duration must be positive")]
    ZeroStep,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One trace sample: the MCS that holds from `time_ms` onward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSample {
    pub time_ms: u64,
    pub mcs: u8,
}

/// Time-indexed MCS values driving the simulated link, zero-order hold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelTrace {
    id: String,
    samples: Vec<TraceSample>,
}

impl ChannelTrace {
    /// Validates monotone timestamps and the MCS range.
    pub fn new(id: impl Into<String>, samples: Vec<TraceSample>) -> Result<Self, ChannelError> {
        if samples.is_empty() {
            return Err(ChannelError::EmptyTrace);
        }
        for (row, s) in samples.iter().enumerate() {
            if s.mcs > MCS_MAX {
                return Err(ChannelError::McsOutOfRange {
                    row,
                    mcs: s.mcs as i64,
                });
            }
            if row > 0 && s.time_ms <= samples[row - 1].time_ms {
                return Err(ChannelError::NonMonotoneTime {
                    row,
                    time: s.time_ms,
                });
            }
        }
        Ok(Self {
            id: id.into(),
            samples,
        })
    }

    /// Loads a CSV trace with header `time_ms,mcs`, one sample per row.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ChannelError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "trace".to_owned());
        Self::from_csv(id, file)
    }

    /// Parses the CSV trace format from any reader.
    pub fn from_csv(id: impl Into<String>, reader: impl Read) -> Result<Self, ChannelError> {
        #[derive(Deserialize)]
        struct Row {
            time_ms: u64,
            mcs: i64,
        }
        let mut rdr = csv::Reader::from_reader(reader);
        let mut samples = Vec::new();
        for (row, rec) in rdr.deserialize::<Row>().enumerate() {
            let rec = rec.map_err(|e| ChannelError::Parse {
                row,
                msg: e.to_string(),
            })?;
            if rec.mcs < 0 || rec.mcs > MCS_MAX as i64 {
                return Err(ChannelError::McsOutOfRange { row, mcs: rec.mcs });
            }
            samples.push(TraceSample {
                time_ms: rec.time_ms,
                mcs: rec.mcs as u8,
            });
        }
        Self::new(id, samples)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn samples(&self) -> &[TraceSample] {
        &self.samples
    }

    pub fn start_time(&self) -> u64 {
        self.samples[0].time_ms
    }

    /// MCS of the latest sample with `time_ms <= t` (zero-order hold, held
    /// past the end of the trace).
    pub fn mcs_at(&self, t: u64) -> Result<u8, ChannelError> {
        if t < self.start_time() {
            return Err(ChannelError::BeforeTraceStart {
                t,
                start: self.start_time(),
            });
        }
        let idx = self.samples.partition_point(|s| s.time_ms <= t);
        Ok(self.samples[idx - 1].mcs)
    }
}

/// Capacity table plus enforcement reaction delay.
///
/// The default table is linear, `capacity(m) = 120 Mbps * m / 28`, anchored to
/// 120 Mbps at full PRB under the best channel; scenarios may override it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    capacity_mbps: Vec<f64>,
    pub reaction_delay_ms: u64,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self::linear(120.0, 5)
    }
}

impl LinkModel {
    /// Linear table: `capacity(m) = peak * m / 28`.
    pub fn linear(peak_mbps: f64, reaction_delay_ms: u64) -> Self {
        let capacity_mbps = (0..=MCS_MAX)
            .map(|m| peak_mbps * m as f64 / MCS_MAX as f64)
            .collect();
        Self {
            capacity_mbps,
            reaction_delay_ms,
        }
    }

    /// Custom table, one full-PRB capacity per MCS index 0..=28, must be
    /// non-decreasing.
    pub fn with_table(
        capacity_mbps: Vec<f64>,
        reaction_delay_ms: u64,
    ) -> Result<Self, ChannelError> {
        if capacity_mbps.len() != MCS_MAX as usize + 1 {
            return Err(ChannelError::BadCapacityTable(capacity_mbps.len()));
        }
        for i in 1..capacity_mbps.len() {
            if capacity_mbps[i] < capacity_mbps[i - 1] {
                return Err(ChannelError::NonMonotoneCapacity(i));
            }
        }
        Ok(Self {
            capacity_mbps,
            reaction_delay_ms,
        })
    }

    /// Full-PRB capacity in Mbps at the given MCS.
    pub fn capacity(&self, mcs: u8) -> f64 {
        self.capacity_mbps[mcs.min(MCS_MAX) as usize]
    }
}

/// A PRB target recorded at enforcement time, applied once `apply_at_ms` is
/// reached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendingPrb {
    pub target: f64,
    pub apply_at_ms: u64,
}

/// The controlled plant: PRB fraction, the throughput it currently yields,
/// and any enforcement still inside the reaction delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceState {
    pub prb_fraction: f64,
    pub throughput_mbps: f64,
    pub time_ms: u64,
    pub pending: Option<PendingPrb>,
}

impl SliceState {
    pub fn new(prb_fraction: f64, mcs: u8, model: &LinkModel, time_ms: u64) -> Self {
        let prb = prb_fraction.clamp(0.0, 100.0);
        Self {
            prb_fraction: prb,
            throughput_mbps: model.capacity(mcs) * prb / 100.0,
            time_ms,
            pending: None,
        }
    }
}

/// Advances the state by `dt` ms under the given MCS, applying the pending
/// PRB target once its apply time is reached and recomputing throughput.
pub fn step(
    state: &SliceState,
    model: &LinkModel,
    mcs: u8,
    dt: u64,
) -> Result<SliceState, ChannelError> {
    if dt == 0 {
        return Err(ChannelError::ZeroStep);
    }
    let mut next = state.clone();
    next.time_ms = state.time_ms + dt;
    if let Some(p) = next.pending {
        if p.apply_at_ms <= next.time_ms {
            next.prb_fraction = p.target;
            next.pending = None;
        }
    }
    next.throughput_mbps = model.capacity(mcs) * next.prb_fraction / 100.0;
    Ok(next)
}

/// Records a PRB target to be applied after the reaction delay. Targets are
/// clamped to [0, 100]; throughput is unchanged until the delay elapses.
pub fn enforce_prb(state: &SliceState, target: f64, model: &LinkModel) -> SliceState {
    let mut next = state.clone();
    next.pending = Some(PendingPrb {
        target: target.clamp(0.0, 100.0),
        apply_at_ms: state.time_ms + model.reaction_delay_ms,
    });
    next
}

/// A throughput/PRB sample on the route timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteSample {
    pub time_ms: u64,
    pub prb: f64,
    pub throughput: f64,
}

/// A running simulation: trace playback, slice state and a fixed-cadence
/// route recorder for post-hoc metrics.
///
/// Stepping is single-threaded and millisecond-granular; one instance is
/// confined to one execution context.
#[derive(Debug, Clone)]
pub struct SliceSim {
    trace: ChannelTrace,
    model: LinkModel,
    state: SliceState,
    sample_cadence_ms: u64,
    route: Vec<RouteSample>,
}

impl SliceSim {
    pub fn new(trace: ChannelTrace, model: LinkModel, initial_prb: f64) -> Self {
        let t0 = trace.start_time();
        let mcs = trace.samples()[0].mcs;
        let state = SliceState::new(initial_prb, mcs, &model, t0);
        Self {
            trace,
            model,
            state,
            sample_cadence_ms: 5,
            route: Vec::new(),
        }
    }

    pub fn with_sample_cadence(mut self, cadence_ms: u64) -> Self {
        self.sample_cadence_ms = cadence_ms.max(1);
        self
    }

    pub fn state(&self) -> &SliceState {
        &self.state
    }

    pub fn model(&self) -> &LinkModel {
        &self.model
    }

    pub fn time_ms(&self) -> u64 {
        self.state.time_ms
    }

    pub fn mcs(&self) -> u8 {
        self.trace
            .mcs_at(self.state.time_ms)
            .expect("sim time never precedes trace start")
    }

    pub fn throughput(&self) -> f64 {
        self.state.throughput_mbps
    }

    /// Advances one millisecond at a time so pending PRB targets and trace
    /// samples land on their exact tick.
    pub fn advance(&mut self, ms: u64) {
        for _ in 0..ms {
            let mcs = self
                .trace
                .mcs_at(self.state.time_ms + 1)
                .expect("monotone time");
            self.state = step(&self.state, &self.model, mcs, 1).expect("dt > 0");
            if self.state.time_ms % self.sample_cadence_ms == 0 {
                self.route.push(RouteSample {
                    time_ms: self.state.time_ms,
                    prb: self.state.prb_fraction,
                    throughput: self.state.throughput_mbps,
                });
            }
        }
    }

    /// Schedules a PRB change through the reaction delay.
    pub fn enforce(&mut self, target: f64) {
        self.state = enforce_prb(&self.state, target, &self.model);
    }

    /// Replaces the allocation immediately, bypassing the reaction delay.
    /// Models a fresh slice instantiation at episode start.
    pub fn reset_prb(&mut self, prb: f64) {
        let mcs = self.mcs();
        let t = self.state.time_ms;
        self.state = SliceState::new(prb, mcs, &self.model, t);
    }

    pub fn route(&self) -> &[RouteSample] {
        &self.route
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(samples: &[(u64, u8)]) -> ChannelTrace {
        ChannelTrace::new(
            "t",
            samples
                .iter()
                .map(|&(time_ms, mcs)| TraceSample { time_ms, mcs })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn load_trace_parses_csv() {
        let csv = "time_ms,mcs\n0,28\n200000,14\n400000,28\n";
        let tr = ChannelTrace::from_csv("route", csv.as_bytes()).unwrap();
        assert_eq!(tr.samples().len(), 3);
        assert_eq!(tr.samples()[1].mcs, 14);
    }

    #[test]
    fn load_trace_singleton() {
        let tr = ChannelTrace::from_csv("one", "time_ms,mcs\n0,28\n".as_bytes()).unwrap();
        assert_eq!(tr.samples().len(), 1);
    }

    #[test]
    fn load_trace_rejects_non_increasing_time() {
        let err = ChannelTrace::from_csv("bad", "time_ms,mcs\n10,5\n10,6\n".as_bytes());
        assert!(matches!(
            err,
            Err(ChannelError::NonMonotoneTime { row: 1, .. })
        ));
    }

    #[test]
    fn load_trace_rejects_mcs_out_of_range() {
        let err = ChannelTrace::from_csv("bad", "time_ms,mcs\n0,29\n".as_bytes());
        assert!(matches!(err, Err(ChannelError::McsOutOfRange { .. })));
    }

    #[test]
    fn load_trace_rejects_empty() {
        let err = ChannelTrace::from_csv("bad", "time_ms,mcs\n".as_bytes());
        assert!(matches!(err, Err(ChannelError::EmptyTrace)));
    }

    #[test]
    fn load_trace_rejects_garbage_row() {
        let err = ChannelTrace::from_csv("bad", "time_ms,mcs\n0,abc\n".as_bytes());
        assert!(matches!(err, Err(ChannelError::Parse { row: 0, .. })));
    }

    #[test]
    fn mcs_at_holds_between_samples() {
        let tr = trace(&[(0, 28), (100, 14)]);
        assert_eq!(tr.mcs_at(50).unwrap(), 28);
        assert_eq!(tr.mcs_at(100).unwrap(), 14); // boundary inclusive
        assert_eq!(tr.mcs_at(1_000_000_000).unwrap(), 14); // hold past end
    }

    #[test]
    fn mcs_at_before_start_errors() {
        let tr = trace(&[(10, 28)]);
        assert!(matches!(
            tr.mcs_at(5),
            Err(ChannelError::BeforeTraceStart { .. })
        ));
    }

    #[test]
    fn step_recomputes_throughput() {
        let model = LinkModel::default();
        let s = SliceState::new(100.0, 28, &model, 0);
        let s = step(&s, &model, 28, 1).unwrap();
        assert_eq!(s.throughput_mbps, 120.0);
        let zero = SliceState::new(0.0, 17, &model, 0);
        assert_eq!(step(&zero, &model, 17, 1).unwrap().throughput_mbps, 0.0);
        let half = SliceState::new(50.0, 14, &model, 0);
        assert_eq!(step(&half, &model, 14, 1).unwrap().throughput_mbps, 30.0);
    }

    #[test]
    fn step_rejects_zero_dt() {
        let model = LinkModel::default();
        let s = SliceState::new(10.0, 28, &model, 0);
        assert!(matches!(step(&s, &model, 28, 0), Err(ChannelError::ZeroStep)));
    }

    #[test]
    fn enforcement_respects_reaction_delay() {
        let model = LinkModel::default(); // 5 ms delay
        let tr = trace(&[(0, 28)]);
        let mut sim = SliceSim::new(tr, model, 20.0);
        sim.enforce(70.0);
        sim.advance(4);
        assert_eq!(sim.state().prb_fraction, 20.0); // still old at t=4
        sim.advance(1);
        assert_eq!(sim.state().prb_fraction, 70.0); // new at exactly t=5
        assert_eq!(sim.throughput(), 120.0 * 0.70);
    }

    #[test]
    fn enforcement_clamps_target() {
        let model = LinkModel::default();
        let s = SliceState::new(50.0, 28, &model, 0);
        let s = enforce_prb(&s, 130.0, &model);
        assert_eq!(s.pending.unwrap().target, 100.0);
        let s = enforce_prb(&s, -3.0, &model);
        assert_eq!(s.pending.unwrap().target, 0.0);
    }

    #[test]
    fn idempotent_enforcement_leaves_state_unchanged() {
        let model = LinkModel::default();
        let tr = trace(&[(0, 28)]);
        let mut sim = SliceSim::new(tr, model, 40.0);
        let tp_before = sim.throughput();
        sim.enforce(40.0);
        sim.advance(10);
        assert_eq!(sim.state().prb_fraction, 40.0);
        assert_eq!(sim.throughput(), tp_before);
    }

    #[test]
    fn capacity_table_must_be_monotone() {
        let mut table: Vec<f64> = (0..=28).map(|m| m as f64).collect();
        table[10] = 0.0;
        assert!(matches!(
            LinkModel::with_table(table, 5),
            Err(ChannelError::NonMonotoneCapacity(10))
        ));
    }

    #[test]
    fn deterministic_trajectories() {
        let tr = trace(&[(0, 28), (50, 12), (120, 25)]);
        let run = |_: ()| {
            let mut sim = SliceSim::new(tr.clone(), LinkModel::default(), 30.0);
            sim.enforce(80.0);
            sim.advance(60);
            sim.enforce(10.0);
            sim.advance(60);
            sim.route().to_vec()
        };
        let a = run(());
        let b = run(());
        assert_eq!(a, b);
    }

    #[test]
    fn capacity_bounds_throughput() {
        let tr = trace(&[(0, 28), (40, 7)]);
        let model = LinkModel::default();
        let mut sim = SliceSim::new(tr, model, 100.0);
        for _ in 0..20 {
            sim.enforce(97.0);
            sim.advance(7);
            let cap = sim.model().capacity(sim.mcs());
            assert!(sim.throughput() <= cap + 1e-12);
        }
    }
}
