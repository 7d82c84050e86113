//! Append-only audit log: every control step, gain decision, backend exchange
//! and negotiation round of a run, as line-delimited JSON.
//!
//! The first line of a file is a schema-versioned header; each following line
//! is one [`AuditRecord`]. Records carry a strictly increasing sequence number
//! and simulation time (negotiation-only records use 0), never wall-clock
//! time, so scripted runs with a fixed seed produce byte-identical streams.

use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

pub const AUDIT_SCHEMA: &str = "symbio.audit";
pub const AUDIT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Malformed {
        line: usize,
        source: serde_json::Error,
    },
    #[error("missing or invalid header line")]
    BadHeader,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditHeader {
    pub schema: String,
    pub version: u32,
    pub run_id: String,
}

/// One bid inside a negotiation round record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundBid {
    pub agent: String,
    pub throughput: Option<f64>,
    pub within_guardrail: bool,
}

/// Kind-specific payload of an audit record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditPayload {
    ControlStep {
        episode: u64,
        iteration: u32,
        kp: f64,
        error: f64,
        prb: f64,
        throughput: f64,
    },
    Enforcement {
        episode: u64,
        target: f64,
        tolerance: f64,
        iterations: u32,
        converged: bool,
        final_throughput: f64,
    },
    KpDecision {
        trigger_kpi: f64,
        old_kp: f64,
        new_kp: f64,
        backend: String,
        raw_response: String,
        accepted: bool,
    },
    NegotiationRound {
        round: u32,
        bids: Vec<RoundBid>,
        mediator: Option<f64>,
        spread: f64,
    },
    BackendExchange {
        agent: String,
        prompt: String,
        response: String,
        latency_ms: u64,
        error: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub time_ms: u64,
    pub run_id: String,
    pub source: String,
    #[serde(flatten)]
    pub payload: AuditPayload,
}

/// Destination for audit records. Producers hand records to one sink; the
/// sink owns ordering.
pub trait AuditSink {
    fn record(&mut self, source: &str, time_ms: u64, payload: AuditPayload);
}

/// Discards everything.
pub struct NullSink;

impl AuditSink for NullSink {
    fn record(&mut self, _source: &str, _time_ms: u64, _payload: AuditPayload) {}
}

/// Collects records in memory; used by tests and live metric computation.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub run_id: String,
    pub records: Vec<AuditRecord>,
}

impl MemorySink {
    pub fn new(run_id: impl Into<String>) -> Self {
        Self {
            run_id: run_id.into(),
            records: Vec::new(),
        }
    }
}

impl AuditSink for MemorySink {
    fn record(&mut self, source: &str, time_ms: u64, payload: AuditPayload) {
        self.records.push(AuditRecord {
            seq: self.records.len() as u64,
            time_ms,
            run_id: self.run_id.clone(),
            source: source.to_owned(),
            payload,
        });
    }
}

/// Durable writer: header line first, then one record per line, flushed on
/// every append so a crash loses at most the torn final line.
pub struct AuditWriter {
    out: BufWriter<File>,
    run_id: String,
    seq: u64,
}

impl AuditWriter {
    pub fn create(path: impl AsRef<Path>, run_id: impl Into<String>) -> Result<Self, AuditError> {
        let run_id = run_id.into();
        let file = File::create(path)?;
        let mut out = BufWriter::new(file);
        let header = AuditHeader {
            schema: AUDIT_SCHEMA.to_owned(),
            version: AUDIT_VERSION,
            run_id: run_id.clone(),
        };
        serde_json::to_writer(&mut out, &header).expect("header serializes");
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(Self { out, run_id, seq: 0 })
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    fn append(&mut self, rec: &AuditRecord) -> Result<(), AuditError> {
        serde_json::to_writer(&mut self.out, rec).expect("record serializes");
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

impl AuditSink for AuditWriter {
    fn record(&mut self, source: &str, time_ms: u64, payload: AuditPayload) {
        let rec = AuditRecord {
            seq: self.seq,
            time_ms,
            run_id: self.run_id.clone(),
            source: source.to_owned(),
            payload,
        };
        self.seq += 1;
        // I/O failures must surface, not vanish; the sink trait is infallible
        // so a failed append is a hard error for the run.
        self.append(&rec).expect("audit append failed");
    }
}

/// Result of replaying an audit file.
#[derive(Debug)]
pub struct AuditStream {
    pub header: AuditHeader,
    pub records: Vec<AuditRecord>,
    /// Non-fatal recovery notes, e.g. a torn final line that was skipped.
    pub warnings: Vec<String>,
}

/// Reads an audit file back. A malformed final line (torn write) is skipped
/// with a warning; malformed interior lines are hard errors.
pub fn read_audit(path: impl AsRef<Path>) -> Result<AuditStream, AuditError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = Vec::new();
    for line in reader.lines() {
        lines.push(line?);
    }
    if lines.is_empty() {
        return Err(AuditError::BadHeader);
    }
    let header: AuditHeader =
        serde_json::from_str(&lines[0]).map_err(|_| AuditError::BadHeader)?;
    if header.schema != AUDIT_SCHEMA {
        return Err(AuditError::BadHeader);
    }
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let last = lines.len() - 1;
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<AuditRecord>(line) {
            Ok(rec) => records.push(rec),
            Err(e) if i == last => {
                let msg = format!("skipping torn final line {}: {e}", i + 1);
                log::warn!("{msg}");
                warnings.push(msg);
            }
            Err(source) => return Err(AuditError::Malformed { line: i + 1, source }),
        }
    }
    Ok(AuditStream {
        header,
        records,
        warnings,
    })
}
