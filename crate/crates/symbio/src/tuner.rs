//! Meta-optimizer for the proportional gain.
//!
//! Watches the convergence KPI emitted after every enforcement cluster. While
//! the KPI stays at or below the trigger threshold nothing happens; above it,
//! a decision backend (the built-in deterministic heuristic, or any prompted
//! backend) proposes a new gain, which is validated, clamped and swapped into
//! the shared [`GainCell`] between control iterations. A bounded action
//! memory of past (gain, KPI) pairs rides along in every request.
//!
//! Prompted HTTP backends are queried on a worker thread so the control loop
//! never waits on model latency; the decision is applied at the next poll
//! point. Scripted backends resolve synchronously, keeping scripted runs
//! deterministic.

use crate::audit::{AuditPayload, AuditSink};
use crate::backend::{self, BackendError, BackendSpec, CompletionRequest, PromptContext};
use crate::control::GainCell;
use crate::prompts;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::mpsc;

/// One remembered retune: the gain that was set and the KPI that triggered
/// it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub kp: f64,
    pub mean_iters: f64,
}

/// Bounded ring of past retunes, most recent first, FIFO-evicted.
#[derive(Debug, Clone, Default)]
pub struct ActionMemory {
    entries: VecDeque<MemoryEntry>,
    capacity: usize,
}

impl ActionMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, entry: MemoryEntry) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_back();
        }
        self.entries.push_front(entry);
    }

    /// Most recent first.
    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Tuner parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunerConfig {
    /// KPI threshold; at or below it the backend is never consulted.
    pub tau: f64,
    /// Action-memory size; 0 disables memory entirely.
    pub memory_capacity: usize,
    pub kp_bounds: (f64, f64),
    /// KPI advertised to the backend as the goal; defaults to `tau`.
    pub target_kpi: f64,
    /// Additive gain step of the heuristic's cold start.
    pub initial_step: f64,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            memory_capacity: 10,
            kp_bounds: (0.05, 10.0),
            target_kpi: 2.0,
            initial_step: 0.4,
        }
    }
}

/// Snapshot handed to a decision backend.
#[derive(Debug, Clone, PartialEq)]
pub struct KpDecisionRequest {
    pub current_kp: f64,
    pub current_kpi: f64,
    pub target_kpi: f64,
    /// Most recent first.
    pub memory: Vec<MemoryEntry>,
}

/// A validated gain decision.
#[derive(Debug, Clone, PartialEq)]
pub struct KpDecision {
    pub kp: f64,
    pub raw_response: String,
    pub latency_ms: u64,
}

/// Outcome of one KPI observation.
#[derive(Debug, Clone, PartialEq)]
pub enum MetaAction {
    /// KPI within threshold, or the backend failed; gain unchanged.
    None,
    /// Gain replaced.
    Retune(KpDecision),
    /// Query dispatched to a worker; result lands at a later poll.
    Deferred,
}

/// Deterministic retune rule.
///
/// With no history the gain rises by the initial step. With history, the
/// direction and size of the last change are read off the two most recent
/// memory entries; if the KPI improved since that change the rule continues
/// in the same direction with the same step, otherwise it reverses and
/// halves the step. Output is clamped to the gain bounds.
pub fn heuristic_decide(req: &KpDecisionRequest, cfg: &TunerConfig) -> KpDecision {
    let (dir, step) = match (req.memory.first(), req.memory.get(1)) {
        (Some(last), Some(prev)) if last.kp != prev.kp => {
            let last_dir = if last.kp > prev.kp { 1.0 } else { -1.0 };
            let last_step = (last.kp - prev.kp).abs();
            if req.current_kpi < last.mean_iters {
                (last_dir, last_step)
            } else {
                (-last_dir, last_step / 2.0)
            }
        }
        // single entry or a repeated gain: no past change to judge
        _ => (1.0, cfg.initial_step),
    };
    let kp = (req.current_kp + dir * step).clamp(cfg.kp_bounds.0, cfg.kp_bounds.1);
    KpDecision {
        kp,
        raw_response: format!("heuristic: dir {dir:+}, step {step}"),
        latency_ms: 0,
    }
}

/// Queries a prompted backend with the rendered retune prompt and extracts
/// the `"Kp"` field. Out-of-bounds values are clamped with a warning; parse
/// and transport failures surface as errors.
pub fn llm_decide(
    req: &KpDecisionRequest,
    spec: &BackendSpec,
    cfg: &TunerConfig,
) -> Result<(KpDecision, backend::ChatExchange), BackendError> {
    let memory_pairs: Vec<(f64, f64)> = req.memory.iter().map(|e| (e.kp, e.mean_iters)).collect();
    let prompt = prompts::render_kp_prompt(
        req.target_kpi,
        req.current_kp,
        req.current_kpi,
        &memory_pairs,
    );
    let exchange = backend::complete(
        spec,
        &CompletionRequest {
            prompt,
            context: PromptContext::KpTuning {
                current_kp: req.current_kp,
                current_kpi: req.current_kpi,
                target_kpi: req.target_kpi,
                memory: memory_pairs,
            },
        },
    )?;
    let raw = backend::extract_json_field(&exchange.response, "Kp")?;
    let kp = raw.clamp(cfg.kp_bounds.0, cfg.kp_bounds.1);
    if kp != raw {
        log::warn!("backend proposed kp {raw} outside bounds, clamped to {kp}");
    }
    Ok((
        KpDecision {
            kp,
            raw_response: exchange.response.clone(),
            latency_ms: exchange.latency_ms,
        },
        exchange,
    ))
}

/// Decision-backend selector.
#[derive(Debug, Clone, PartialEq)]
pub enum KpBackend {
    /// In-process deterministic rule, no prompt round trip.
    Heuristic,
    /// Any backend reachable through the prompt pipeline.
    Prompted(BackendSpec),
}

/// The meta-optimizer: owns the action memory and the shared gain cell.
pub struct GainTuner {
    cfg: TunerConfig,
    backend: KpBackend,
    gain: GainCell,
    memory: ActionMemory,
    pending: Option<mpsc::Receiver<Result<(KpDecision, backend::ChatExchange), BackendError>>>,
    pending_kpi: f64,
    retunes: u32,
}

impl GainTuner {
    pub fn new(cfg: TunerConfig, backend: KpBackend, gain: GainCell) -> Self {
        let memory = ActionMemory::new(cfg.memory_capacity);
        Self {
            cfg,
            backend,
            gain,
            memory,
            pending: None,
            pending_kpi: 0.0,
            retunes: 0,
        }
    }

    pub fn gain(&self) -> &GainCell {
        &self.gain
    }

    pub fn retunes(&self) -> u32 {
        self.retunes
    }

    pub fn memory(&self) -> &ActionMemory {
        &self.memory
    }

    fn request(&self, kpi: f64) -> KpDecisionRequest {
        KpDecisionRequest {
            current_kp: self.gain.load(),
            current_kpi: kpi,
            target_kpi: self.cfg.target_kpi,
            memory: self.memory.entries().copied().collect(),
        }
    }

    /// Feeds one KPI sample. Consults the backend only when `kpi > tau`;
    /// a backend failure leaves the loop on its old gain.
    pub fn observe(&mut self, kpi: f64, time_ms: u64, audit: &mut dyn AuditSink) -> MetaAction {
        if kpi <= self.cfg.tau {
            return MetaAction::None;
        }
        if self.pending.is_some() {
            // one in-flight query at a time; drain it first
            return self.poll(time_ms, audit);
        }
        let req = self.request(kpi);
        match &self.backend {
            KpBackend::Heuristic => {
                let decision = heuristic_decide(&req, &self.cfg);
                self.apply(kpi, decision, "heuristic", None, time_ms, audit)
            }
            KpBackend::Prompted(spec) => {
                if spec.is_http() {
                    // model latency must stay invisible to the control loop
                    let (tx, rx) = mpsc::channel();
                    let spec = spec.clone();
                    let cfg = self.cfg.clone();
                    std::thread::spawn(move || {
                        let _ = tx.send(llm_decide(&req, &spec, &cfg));
                    });
                    self.pending = Some(rx);
                    self.pending_kpi = kpi;
                    MetaAction::Deferred
                } else {
                    let label = spec.label();
                    match llm_decide(&req, spec, &self.cfg) {
                        Ok((decision, exchange)) => {
                            self.apply(kpi, decision, &label, Some(exchange), time_ms, audit)
                        }
                        Err(e) => self.fail(kpi, &label, e, time_ms, audit),
                    }
                }
            }
        }
    }

    /// Applies a decision that finished on the worker thread, if any.
    pub fn poll(&mut self, time_ms: u64, audit: &mut dyn AuditSink) -> MetaAction {
        let Some(rx) = &self.pending else {
            return MetaAction::None;
        };
        match rx.try_recv() {
            Ok(result) => {
                self.pending = None;
                let kpi = self.pending_kpi;
                let label = match &self.backend {
                    KpBackend::Prompted(spec) => spec.label(),
                    KpBackend::Heuristic => "heuristic".to_owned(),
                };
                match result {
                    Ok((decision, exchange)) => {
                        self.apply(kpi, decision, &label, Some(exchange), time_ms, audit)
                    }
                    Err(e) => self.fail(kpi, &label, e, time_ms, audit),
                }
            }
            Err(mpsc::TryRecvError::Empty) => MetaAction::Deferred,
            Err(mpsc::TryRecvError::Disconnected) => {
                self.pending = None;
                MetaAction::None
            }
        }
    }

    fn apply(
        &mut self,
        kpi: f64,
        decision: KpDecision,
        label: &str,
        exchange: Option<backend::ChatExchange>,
        time_ms: u64,
        audit: &mut dyn AuditSink,
    ) -> MetaAction {
        if let Some(ex) = exchange {
            audit.record(
                "tuner",
                time_ms,
                AuditPayload::BackendExchange {
                    agent: label.to_owned(),
                    prompt: ex.prompt,
                    response: ex.response,
                    latency_ms: ex.latency_ms,
                    error: None,
                },
            );
        }
        let old_kp = self.gain.load();
        self.memory.push(MemoryEntry {
            kp: decision.kp,
            mean_iters: kpi,
        });
        self.gain.store(decision.kp);
        self.retunes += 1;
        audit.record(
            "tuner",
            time_ms,
            AuditPayload::KpDecision {
                trigger_kpi: kpi,
                old_kp,
                new_kp: decision.kp,
                backend: label.to_owned(),
                raw_response: decision.raw_response.clone(),
                accepted: true,
            },
        );
        MetaAction::Retune(decision)
    }

    fn fail(
        &mut self,
        kpi: f64,
        label: &str,
        error: BackendError,
        time_ms: u64,
        audit: &mut dyn AuditSink,
    ) -> MetaAction {
        let kp = self.gain.load();
        audit.record(
            "tuner",
            time_ms,
            AuditPayload::KpDecision {
                trigger_kpi: kpi,
                old_kp: kp,
                new_kp: kp,
                backend: label.to_owned(),
                raw_response: error.to_string(),
                accepted: false,
            },
        );
        log::warn!("gain decision failed, continuing on kp {kp}: {error}");
        MetaAction::None
    }
}
