//! Multi-round SLA negotiation between tenant agents and a mediator,
//! optionally guard-railed by a bootstrap confidence interval.
//!
//! A round queries every tenant in parallel (own intent, the other agents'
//! latest messages, the chat history and the guard-rail), then the mediator
//! with all tenant proposals on the table. The game ends once the spread of
//! the round's bids, mediator included, falls inside an epsilon band; the
//! consensus value is the floor of the final-round tenant mean. Failures
//! mark an agent abstaining for the round rather than killing the game.

use crate::audit::{AuditPayload, AuditSink, RoundBid};
use crate::backend::{self, BackendError, BackendSpec, CompletionRequest, PromptContext};
use crate::consensus::{
    bootstrap_ci, ConfidenceInterval, ConsensusError, ConsensusProblem, JitterSpec,
};
use crate::prompts;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const TRANSCRIPT_SCHEMA: &str = "symbio.transcript";
pub const TRANSCRIPT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NegotiationError {
    #[error("agent {agent}: no parseable throughput claim: {source}")]
    Unparseable {
        agent: String,
        source: BackendError,
    },
    #[error("agent {agent}: throughput {value} outside [0, 100]")]
    RangeViolation { agent: String, value: f64 },
    #[error("round {0}: every agent abstained")]
    AllAbstained(u32),
    #[error("a negotiation needs at least 2 tenants, got {0}")]
    TooFewTenants(usize),
    #[error("max_rounds must be at least 1")]
    NoRounds,
    #[error("epsilon band must be positive")]
    BadEpsilon,
    #[error("guard-rail optimization failed: {0}")]
    Guardrail(#[from] ConsensusError),
    #[error("empty transcript")]
    EmptyTranscript,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One negotiating tenant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TenantSpec {
    pub id: String,
    /// Operator intent text; must embed the numeric claim as
    /// `{"throughput": <goal>}` so the side-car can extract it.
    pub intent_prompt: String,
    pub backend: BackendSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediatorSpec {
    pub intent_prompt: String,
    pub backend: BackendSpec,
}

/// When the side-car computes the guard-rail interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardrailMode {
    /// No interval; agents negotiate unconstrained.
    Off,
    /// One pass before round 1 (the default; sufficient in practice).
    PreGame,
    /// Recomputed from the latest bids before every round.
    PerRound,
}

/// Side-car optimizer weights used to build the consensus problem from the
/// extracted demands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub lambda: f64,
    pub x_target: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub step_tol: f64,
    pub max_iters: u32,
}

impl Default for ProblemParams {
    fn default() -> Self {
        // consensus-dominant weights: the spread fixed point must sit well
        // inside epsilon for the solver to declare consensus at all
        Self {
            alpha: 1.0,
            gamma: 150.0,
            beta: 1.0,
            lambda: 1.0,
            x_target: 50.0,
            eta: 0.002,
            epsilon: 0.5,
            step_tol: 1e-6,
            max_iters: 20_000,
        }
    }
}

impl ProblemParams {
    pub fn problem(&self, demands: Vec<f64>) -> ConsensusProblem {
        let n = demands.len();
        ConsensusProblem {
            demands,
            alphas: vec![self.alpha; n],
            gamma: self.gamma,
            beta: self.beta,
            lambda: self.lambda,
            x_target: self.x_target,
            eta: self.eta,
            epsilon: self.epsilon,
            step_tol: self.step_tol,
            sla_range: (0.0, 100.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegotiationConfig {
    pub tenants: Vec<TenantSpec>,
    pub mediator: MediatorSpec,
    pub max_rounds: u32,
    /// Consensus band on the round spread, Mbps.
    pub epsilon_mbps: f64,
    pub guardrail: GuardrailMode,
    pub problem: ProblemParams,
    pub jitter: JitterSpec,
    pub restarts: u32,
}

impl NegotiationConfig {
    pub fn validate(&self) -> Result<(), NegotiationError> {
        if self.tenants.len() < 2 {
            return Err(NegotiationError::TooFewTenants(self.tenants.len()));
        }
        if self.max_rounds < 1 {
            return Err(NegotiationError::NoRounds);
        }
        if self.epsilon_mbps <= 0.0 {
            return Err(NegotiationError::BadEpsilon);
        }
        Ok(())
    }
}

/// One structured SLA proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlaProposal {
    pub agent_id: String,
    pub round: u32,
    pub throughput: f64,
    pub reasoning: String,
    pub latency_ms: u64,
    pub within_guardrail: bool,
}

/// All proposals of one round; abstentions are listed by agent id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub proposals: Vec<SlaProposal>,
    pub mediator: Option<SlaProposal>,
    pub abstained: Vec<String>,
    pub spread: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Consensus { throughput_mbps: f64 },
    Timeout,
}

/// The ordered audit trail of a game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegotiationTranscript {
    pub rounds: Vec<RoundRecord>,
    pub outcome: Outcome,
    pub guardrail: Option<ConfidenceInterval>,
    /// Wall-clock duration; reported but excluded from the serialized
    /// transcript so scripted replays stay byte-identical.
    #[serde(skip)]
    pub wall_time_ms: u64,
}

impl NegotiationTranscript {
    /// Line-delimited JSON: a schema header, one line per round, one outcome
    /// line.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), NegotiationError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header = serde_json::json!({
            "schema": TRANSCRIPT_SCHEMA,
            "version": TRANSCRIPT_VERSION,
            "guardrail": self.guardrail,
        });
        writeln!(out, "{header}")?;
        for round in &self.rounds {
            writeln!(out, "{}", serde_json::to_string(round).expect("round"))?;
        }
        writeln!(
            out,
            "{}",
            serde_json::to_string(&self.outcome).expect("outcome")
        )?;
        Ok(())
    }

    /// All tenant bids, every round.
    pub fn tenant_bids(&self) -> Vec<f64> {
        self.rounds
            .iter()
            .flat_map(|r| r.proposals.iter().map(|p| p.throughput))
            .collect()
    }
}

/// Pulls the numeric claims out of intent prompts (or any per-agent text),
/// producing the initial demand vector for the side-car optimizer.
pub fn extract_initial_demands(
    sources: &[(String, String)],
) -> Result<Vec<f64>, NegotiationError> {
    let mut demands = Vec::with_capacity(sources.len());
    for (agent, text) in sources {
        let value = backend::extract_json_field(text, "throughput").map_err(|source| {
            NegotiationError::Unparseable {
                agent: agent.clone(),
                source,
            }
        })?;
        if !(0.0..=100.0).contains(&value) {
            return Err(NegotiationError::RangeViolation {
                agent: agent.clone(),
                value,
            });
        }
        demands.push(value);
    }
    Ok(demands)
}

/// Renders the boxed guard-rail instruction with integer bounds.
pub fn render_guardrail(interval: &ConfidenceInterval) -> String {
    prompts::render_guardrail(interval)
}

struct GameState {
    history: String,
    last_messages: Vec<(String, String)>, // (agent id, raw message)
    last_bids: Vec<Option<f64>>,          // per tenant index
    mediator_last: Option<f64>,
}

/// Runs a full negotiation.
pub fn run_negotiation(
    cfg: &NegotiationConfig,
    audit: &mut dyn AuditSink,
) -> Result<NegotiationTranscript, NegotiationError> {
    cfg.validate()?;
    let started = std::time::Instant::now();

    let sources: Vec<(String, String)> = cfg
        .tenants
        .iter()
        .map(|t| (t.id.clone(), t.intent_prompt.clone()))
        .collect();
    let demands = extract_initial_demands(&sources)?;

    let compute_rail = |demands: &[f64]| -> Result<ConfidenceInterval, NegotiationError> {
        let problem = cfg.problem.problem(demands.to_vec());
        Ok(bootstrap_ci(
            &problem,
            &cfg.jitter,
            cfg.restarts,
            cfg.problem.max_iters,
        )?)
    };

    let mut guardrail = match cfg.guardrail {
        GuardrailMode::Off => None,
        GuardrailMode::PreGame | GuardrailMode::PerRound => Some(compute_rail(&demands)?),
    };

    let mut state = GameState {
        history: String::new(),
        last_messages: Vec::new(),
        last_bids: vec![None; cfg.tenants.len()],
        mediator_last: None,
    };
    let mut rounds = Vec::new();
    let mut outcome = Outcome::Timeout;

    for round in 1..=cfg.max_rounds {
        if round > 1 && cfg.guardrail == GuardrailMode::PerRound {
            let latest: Vec<f64> = state
                .last_bids
                .iter()
                .zip(&demands)
                .map(|(bid, d)| bid.unwrap_or(*d))
                .collect();
            guardrail = Some(compute_rail(&latest)?);
        }
        let record = run_round(cfg, &demands, &guardrail, round, &mut state, audit)?;
        let spread = record.spread;
        let tenant_bids: Vec<f64> = record.proposals.iter().map(|p| p.throughput).collect();
        rounds.push(record);
        if !tenant_bids.is_empty() && spread < cfg.epsilon_mbps {
            let mean = tenant_bids.iter().sum::<f64>() / tenant_bids.len() as f64;
            outcome = Outcome::Consensus {
                throughput_mbps: mean.floor(),
            };
            break;
        }
    }

    Ok(NegotiationTranscript {
        rounds,
        outcome,
        guardrail,
        wall_time_ms: started.elapsed().as_millis() as u64,
    })
}

/// Queries all tenants in parallel, then the mediator; parses and flags the
/// proposals and appends the round to the audit stream.
fn run_round(
    cfg: &NegotiationConfig,
    demands: &[f64],
    guardrail: &Option<ConfidenceInterval>,
    round: u32,
    state: &mut GameState,
    audit: &mut dyn AuditSink,
) -> Result<RoundRecord, NegotiationError> {
    let rail_bounds = guardrail.as_ref().map(|g| (g.lower, g.upper));
    let rail_text = guardrail.as_ref().map(render_guardrail);

    // tenant turns, fanned out; results are joined in tenant order so the
    // transcript never depends on scheduling
    let mut exchanges: Vec<Result<backend::ChatExchange, BackendError>> =
        Vec::with_capacity(cfg.tenants.len());
    std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .tenants
            .iter()
            .enumerate()
            .map(|(i, tenant)| {
                let others: Vec<(String, String)> = state
                    .last_messages
                    .iter()
                    .filter(|(id, _)| id != &tenant.id)
                    .cloned()
                    .collect();
                let prompt = prompts::render_tenant_prompt(
                    &tenant.intent_prompt,
                    &state.history,
                    &others,
                    rail_text.as_deref(),
                );
                let req = CompletionRequest {
                    prompt,
                    context: PromptContext::Negotiation {
                        own_goal: demands[i],
                        round,
                        guardrail: rail_bounds,
                        mediator_last: state.mediator_last,
                        own_last: state.last_bids[i],
                        others_last: state
                            .last_bids
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| *j != i)
                            .filter_map(|(_, b)| *b)
                            .collect(),
                        bids_this_round: Vec::new(),
                    },
                };
                let spec = &tenant.backend;
                scope.spawn(move || backend::complete(spec, &req))
            })
            .collect();
        for handle in handles {
            exchanges.push(handle.join().expect("tenant backend thread panicked"));
        }
    });

    let mut proposals = Vec::new();
    let mut abstained = Vec::new();
    let mut new_messages = Vec::new();
    for (i, (tenant, result)) in cfg.tenants.iter().zip(exchanges).enumerate() {
        match result {
            Ok(exchange) => {
                audit.record(
                    "negotiation",
                    0,
                    AuditPayload::BackendExchange {
                        agent: tenant.id.clone(),
                        prompt: exchange.prompt.clone(),
                        response: exchange.response.clone(),
                        latency_ms: exchange.latency_ms,
                        error: None,
                    },
                );
                match parse_proposal(&tenant.id, round, &exchange, rail_bounds) {
                    Ok(p) => {
                        state.last_bids[i] = Some(p.throughput);
                        new_messages.push((tenant.id.clone(), exchange.response.clone()));
                        proposals.push(p);
                    }
                    Err(e) => {
                        log::warn!("round {round}: {} abstains: {e}", tenant.id);
                        abstained.push(tenant.id.clone());
                    }
                }
            }
            Err(e) => {
                audit.record(
                    "negotiation",
                    0,
                    AuditPayload::BackendExchange {
                        agent: tenant.id.clone(),
                        prompt: String::new(),
                        response: String::new(),
                        latency_ms: 0,
                        error: Some(e.to_string()),
                    },
                );
                log::warn!("round {round}: {} abstains: {e}", tenant.id);
                abstained.push(tenant.id.clone());
            }
        }
    }
    if proposals.is_empty() {
        return Err(NegotiationError::AllAbstained(round));
    }

    // mediator speaks last, with all tenant proposals on the table
    let tenant_msgs: Vec<(String, String)> = proposals
        .iter()
        .map(|p| (p.agent_id.clone(), p.reasoning.clone()))
        .collect();
    let mediator_prompt = prompts::render_mediator_prompt(
        &cfg.mediator.intent_prompt,
        &state.history,
        &tenant_msgs,
        rail_text.as_deref(),
    );
    let mediator_req = CompletionRequest {
        prompt: mediator_prompt,
        context: PromptContext::Negotiation {
            own_goal: cfg.problem.x_target,
            round,
            guardrail: rail_bounds,
            mediator_last: state.mediator_last,
            own_last: state.mediator_last,
            others_last: Vec::new(),
            bids_this_round: proposals.iter().map(|p| p.throughput).collect(),
        },
    };
    let mediator = match backend::complete(&cfg.mediator.backend, &mediator_req) {
        Ok(exchange) => {
            audit.record(
                "negotiation",
                0,
                AuditPayload::BackendExchange {
                    agent: "mediator".to_owned(),
                    prompt: exchange.prompt.clone(),
                    response: exchange.response.clone(),
                    latency_ms: exchange.latency_ms,
                    error: None,
                },
            );
            match parse_proposal("mediator", round, &exchange, rail_bounds) {
                Ok(p) => {
                    state.mediator_last = Some(p.throughput);
                    new_messages.push(("mediator".to_owned(), exchange.response.clone()));
                    Some(p)
                }
                Err(e) => {
                    log::warn!("round {round}: mediator abstains: {e}");
                    abstained.push("mediator".to_owned());
                    None
                }
            }
        }
        Err(e) => {
            audit.record(
                "negotiation",
                0,
                AuditPayload::BackendExchange {
                    agent: "mediator".to_owned(),
                    prompt: String::new(),
                    response: String::new(),
                    latency_ms: 0,
                    error: Some(e.to_string()),
                },
            );
            log::warn!("round {round}: mediator abstains: {e}");
            abstained.push("mediator".to_owned());
            None
        }
    };

    // spread over this round's bids, mediator proposal included
    let mut bids: Vec<f64> = proposals.iter().map(|p| p.throughput).collect();
    if let Some(m) = &mediator {
        bids.push(m.throughput);
    }
    let spread = bids.iter().cloned().fold(f64::MIN, f64::max)
        - bids.iter().cloned().fold(f64::MAX, f64::min);

    for (id, msg) in &new_messages {
        state
            .history
            .push_str(&format!("round {round} [{id}]: {msg}\n"));
    }
    state.last_messages = new_messages;

    audit.record(
        "negotiation",
        0,
        AuditPayload::NegotiationRound {
            round,
            bids: proposals
                .iter()
                .map(|p| RoundBid {
                    agent: p.agent_id.clone(),
                    throughput: Some(p.throughput),
                    within_guardrail: p.within_guardrail,
                })
                .collect(),
            mediator: mediator.as_ref().map(|m| m.throughput),
            spread,
        },
    );

    Ok(RoundRecord {
        round,
        proposals,
        mediator,
        abstained,
        spread,
    })
}

fn parse_proposal(
    agent_id: &str,
    round: u32,
    exchange: &backend::ChatExchange,
    rail: Option<(f64, f64)>,
) -> Result<SlaProposal, NegotiationError> {
    let throughput =
        backend::extract_json_field(&exchange.response, "throughput").map_err(|source| {
            NegotiationError::Unparseable {
                agent: agent_id.to_owned(),
                source,
            }
        })?;
    if !(0.0..=100.0).contains(&throughput) {
        return Err(NegotiationError::RangeViolation {
            agent: agent_id.to_owned(),
            value: throughput,
        });
    }
    let within_guardrail = match rail {
        Some((lo, hi)) => (lo..=hi).contains(&throughput),
        None => true,
    };
    Ok(SlaProposal {
        agent_id: agent_id.to_owned(),
        round,
        throughput,
        reasoning: exchange.response.clone(),
        latency_ms: exchange.latency_ms,
        within_guardrail,
    })
}

/// Numeric transcript score: MAE of every tenant bid against the reference
/// (by default the bootstrap mean), plus round count and wall time.
pub fn score_numeric(
    transcript: &NegotiationTranscript,
    pareto_ref: f64,
) -> Result<(f64, u32, u64), NegotiationError> {
    let bids = transcript.tenant_bids();
    if bids.is_empty() {
        return Err(NegotiationError::EmptyTranscript);
    }
    let mae = bids.iter().map(|b| (b - pareto_ref).abs()).sum::<f64>() / bids.len() as f64;
    Ok((mae, transcript.rounds.len() as u32, transcript.wall_time_ms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::MemorySink;

    fn tenant(id: &str, goal: f64, personality: &str) -> TenantSpec {
        TenantSpec {
            id: id.to_owned(),
            intent_prompt: format!("Serve my users well. {{\"throughput\": {goal}}}"),
            backend: BackendSpec::scripted(personality),
        }
    }

    fn config(personality: &str, goals: &[f64], guardrail: GuardrailMode) -> NegotiationConfig {
        NegotiationConfig {
            tenants: goals
                .iter()
                .enumerate()
                .map(|(i, &g)| tenant(&format!("tenant{}", i + 1), g, personality))
                .collect(),
            mediator: MediatorSpec {
                intent_prompt: "Find a fair SLA. {\"throughput\": 55}".to_owned(),
                backend: BackendSpec::scripted("mediator"),
            },
            max_rounds: 10,
            epsilon_mbps: 2.0,
            guardrail,
            problem: ProblemParams {
                x_target: 55.0,
                ..Default::default()
            },
            jitter: JitterSpec {
                seed: 11,
                ..Default::default()
            },
            restarts: 100,
        }
    }

    #[test]
    fn extract_demands_happy_path() {
        let sources = vec![
            ("a".to_owned(), "{\"throughput\": 10}".to_owned()),
            ("b".to_owned(), "prose first {\"throughput\": 90}".to_owned()),
        ];
        assert_eq!(extract_initial_demands(&sources).unwrap(), vec![10.0, 90.0]);
    }

    #[test]
    fn extract_demands_identifies_bad_agent() {
        let sources = vec![
            ("a".to_owned(), "{\"throughput\": 10}".to_owned()),
            ("b".to_owned(), "no numbers here".to_owned()),
        ];
        match extract_initial_demands(&sources) {
            Err(NegotiationError::Unparseable { agent, .. }) => assert_eq!(agent, "b"),
            other => panic!("expected unparseable, got {other:?}"),
        }
    }

    #[test]
    fn extract_demands_rejects_range_violation() {
        let sources = vec![("a".to_owned(), "{\"throughput\": -5}".to_owned())];
        assert!(matches!(
            extract_initial_demands(&sources),
            Err(NegotiationError::RangeViolation { .. })
        ));
    }

    #[test]
    fn cooperative_game_converges_in_two_rounds() {
        let cfg = config("cooperative", &[10.0, 50.0, 100.0], GuardrailMode::Off);
        let mut sink = MemorySink::new("t");
        let tr = run_negotiation(&cfg, &mut sink).unwrap();
        assert!(matches!(tr.outcome, Outcome::Consensus { .. }));
        assert!(tr.rounds.len() <= 2, "took {} rounds", tr.rounds.len());
    }

    #[test]
    fn compliant_game_stays_inside_guardrail() {
        let cfg = config("compliant", &[10.0, 50.0, 100.0], GuardrailMode::PreGame);
        let mut sink = MemorySink::new("t");
        let tr = run_negotiation(&cfg, &mut sink).unwrap();
        let rail = tr.guardrail.unwrap();
        assert!(matches!(tr.outcome, Outcome::Consensus { .. }));
        for round in &tr.rounds {
            for p in &round.proposals {
                assert!(p.within_guardrail);
                assert!(rail.lower <= p.throughput && p.throughput <= rail.upper);
            }
        }
    }

    #[test]
    fn greedy_game_flags_out_of_rail_bids() {
        let cfg = config("greedy", &[10.0, 50.0, 100.0], GuardrailMode::PreGame);
        let mut sink = MemorySink::new("t");
        let tr = run_negotiation(&cfg, &mut sink).unwrap();
        let rail = tr.guardrail.unwrap();
        let first = &tr.rounds[0];
        for p in &first.proposals {
            let inside = rail.lower <= p.throughput && p.throughput <= rail.upper;
            assert_eq!(p.within_guardrail, inside);
        }
        // the opening greedy bids sit far outside the interval
        assert!(first.proposals.iter().any(|p| !p.within_guardrail));
    }

    #[test]
    fn divergent_game_times_out_with_one_round() {
        let mut cfg = config("greedy", &[0.0, 100.0], GuardrailMode::Off);
        cfg.max_rounds = 1;
        let mut sink = MemorySink::new("t");
        let tr = run_negotiation(&cfg, &mut sink).unwrap();
        assert_eq!(tr.outcome, Outcome::Timeout);
        assert_eq!(tr.rounds.len(), 1);
    }

    #[test]
    fn failing_tenant_abstains_and_game_continues() {
        let mut cfg = config("cooperative", &[10.0, 90.0], GuardrailMode::Off);
        cfg.tenants.push(TenantSpec {
            id: "broken".to_owned(),
            intent_prompt: "{\"throughput\": 50}".to_owned(),
            backend: BackendSpec::scripted("no-such-personality"),
        });
        let mut sink = MemorySink::new("t");
        let tr = run_negotiation(&cfg, &mut sink).unwrap();
        assert!(tr.rounds[0].abstained.contains(&"broken".to_owned()));
        assert!(matches!(tr.outcome, Outcome::Consensus { .. }));
    }

    #[test]
    fn all_abstaining_is_an_error() {
        let mut cfg = config("cooperative", &[10.0, 90.0], GuardrailMode::Off);
        for t in &mut cfg.tenants {
            t.backend = BackendSpec::scripted("no-such-personality");
        }
        let mut sink = MemorySink::new("t");
        assert!(matches!(
            run_negotiation(&cfg, &mut sink),
            Err(NegotiationError::AllAbstained(1))
        ));
    }

    #[test]
    fn round_indices_are_gapless_and_spread_small_at_consensus() {
        let cfg = config("cooperative", &[20.0, 40.0, 60.0, 80.0], GuardrailMode::Off);
        let mut sink = MemorySink::new("t");
        let tr = run_negotiation(&cfg, &mut sink).unwrap();
        for (i, r) in tr.rounds.iter().enumerate() {
            assert_eq!(r.round as usize, i + 1);
        }
        if matches!(tr.outcome, Outcome::Consensus { .. }) {
            assert!(tr.rounds.last().unwrap().spread < cfg.epsilon_mbps);
        }
    }

    #[test]
    fn transcripts_are_byte_identical_across_runs() {
        let cfg = config("compliant", &[10.0, 50.0, 100.0], GuardrailMode::PreGame);
        let dir = tempfile::tempdir().unwrap();
        let mut paths = Vec::new();
        for i in 0..2 {
            let mut sink = MemorySink::new("t");
            let tr = run_negotiation(&cfg, &mut sink).unwrap();
            let p = dir.path().join(format!("t{i}.jsonl"));
            tr.write_jsonl(&p).unwrap();
            paths.push(p);
        }
        let a = std::fs::read(&paths[0]).unwrap();
        let b = std::fs::read(&paths[1]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn round_count_does_not_grow_with_agent_count() {
        let mut rounds_by_n = Vec::new();
        for n in [2usize, 5, 10, 20] {
            let goals: Vec<f64> = (0..n).map(|i| (i as f64 * 97.0) % 101.0).collect();
            let cfg = config("cooperative", &goals, GuardrailMode::Off);
            let mut sink = MemorySink::new("t");
            let tr = run_negotiation(&cfg, &mut sink).unwrap();
            assert!(matches!(tr.outcome, Outcome::Consensus { .. }));
            rounds_by_n.push(tr.rounds.len());
        }
        for w in rounds_by_n.windows(2) {
            assert!(w[1] <= w[0], "rounds grew with agent count: {rounds_by_n:?}");
        }
        assert!(*rounds_by_n.iter().max().unwrap() <= 5);
    }

    #[test]
    fn score_numeric_hand_computed() {
        let tr = NegotiationTranscript {
            rounds: vec![RoundRecord {
                round: 1,
                proposals: vec![
                    SlaProposal {
                        agent_id: "a".into(),
                        round: 1,
                        throughput: 50.0,
                        reasoning: "r".into(),
                        latency_ms: 0,
                        within_guardrail: true,
                    },
                    SlaProposal {
                        agent_id: "b".into(),
                        round: 1,
                        throughput: 60.0,
                        reasoning: "r".into(),
                        latency_ms: 0,
                        within_guardrail: true,
                    },
                ],
                mediator: None,
                abstained: vec![],
                spread: 10.0,
            }],
            outcome: Outcome::Timeout,
            guardrail: None,
            wall_time_ms: 1,
        };
        let (mae, rounds, _) = score_numeric(&tr, 55.0).unwrap();
        assert_eq!(mae, 5.0);
        assert_eq!(rounds, 1);
    }
}
