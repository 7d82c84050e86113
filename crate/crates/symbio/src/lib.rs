//! Desk-scale testbed for LLM-supervised RAN slice control and guard-railed
//! multi-tenant SLA negotiation.
//!
//! The crate has two halves that share a common backend and audit layer:
//!
//! * A real-time half: a deterministic downlink simulator ([`channel`]) driven
//!   by MCS traces, a proportional controller that enforces throughput intents
//!   ([`control`]), and a meta-optimizer that retunes the controller gain from
//!   a convergence KPI ([`tuner`]). Reduced-fidelity Q-learning and
//!   Bayesian-probe controllers live in [`baselines`] for comparison runs.
//!
//! * A negotiation half: a concave multi-agent utility model with a
//!   gradient-descent consensus solver and bootstrap confidence intervals
//!   ([`consensus`]), and a round-based SLA negotiation protocol whose bids
//!   are guard-railed by those intervals ([`negotiation`]).
//!
//! Decision backends (scripted personalities for deterministic runs, plus an
//! OpenAI-style chat-completions client) are in [`backend`]; every decision,
//! control step and exchange flows through the append-only audit log in
//! [`audit`]; metric computations over trajectories and transcripts are in
//! [`metrics`].

pub mod audit;
pub mod backend;
pub mod baselines;
pub mod channel;
pub mod consensus;
pub mod control;
pub mod metrics;
pub mod negotiation;
pub mod prompts;
pub mod tuner;
