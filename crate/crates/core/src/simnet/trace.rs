//! Event traces and the security properties checked over them.

use serde::{Deserialize, Serialize};

use crate::agents::{AuditOutcome, MessageKind};
use crate::federated::RoundMetrics;
use crate::types::Did;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AdversaryAction {
    TamperEnvelope,
    ReplayEnvelope,
    InjectForgedRequest,
    TamperResult,
    ForgeAttestation,
    PoisonUpdate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Send {
        msg_id: u64,
        from: String,
        to: String,
        kind: Option<MessageKind>,
        size: usize,
    },
    Drop {
        msg_id: u64,
    },
    Receive {
        msg_id: u64,
        node: String,
        accepted: bool,
    },
    Adversary {
        action: AdversaryAction,
        msg_id: Option<u64>,
        request_id: Option<String>,
        agent: Option<Did>,
    },
    /// A user agent's audit entry, with the simulator's ground truth on
    /// whether the request was covered by a grant.
    Decision {
        user: String,
        peer: Did,
        request_id: Option<String>,
        outcome: AuditOutcome,
        authorized: bool,
    },
    SpResult {
        provider: String,
        user: String,
        request_id: String,
        outcome: String,
    },
    Round {
        provider: String,
        metrics: RoundMetrics,
    },
    StepFailed {
        step: usize,
        error: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub t_ms: u64,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventTrace {
    records: Vec<TraceRecord>,
}

impl EventTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t_ms: u64, event: TraceEvent) {
        let seq = self.records.len() as u64;
        self.records.push(TraceRecord { seq, t_ms, event });
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn events(&self) -> impl Iterator<Item = &TraceEvent> {
        self.records.iter().map(|r| &r.event)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("trace serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { records })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SecurityProperty {
    NoUnauthorizedPermit,
    AllTamperRejected,
    AllForgedAttRejected,
    PoisonExcluded,
}

impl SecurityProperty {
    pub const ALL: [SecurityProperty; 4] = [
        Self::NoUnauthorizedPermit,
        Self::AllTamperRejected,
        Self::AllForgedAttRejected,
        Self::PoisonExcluded,
    ];
}

impl std::str::FromStr for SecurityProperty {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| format!("{p:?}").eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown property `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport {
    pub property: SecurityProperty,
    pub holds: bool,
    /// Events the property constrained.
    pub checked: usize,
    pub counterexamples: Vec<TraceRecord>,
}

/// Index of the first `Round` record after `from`.
fn next_round(records: &[TraceRecord], from: usize) -> Option<&RoundMetrics> {
    records[from..].iter().find_map(|r| match &r.event {
        TraceEvent::Round { metrics, .. } => Some(metrics),
        _ => None,
    })
}

/// True if the adversarial action at `idx` produced an accepted message.
fn action_succeeded(records: &[TraceRecord], idx: usize) -> bool {
    let TraceEvent::Adversary {
        action,
        msg_id,
        request_id,
        agent,
    } = &records[idx].event
    else {
        return false;
    };
    match action {
        AdversaryAction::TamperEnvelope | AdversaryAction::ReplayEnvelope => records.iter().any(|r| {
            matches!(&r.event, TraceEvent::Receive { msg_id: m, accepted: true, .. } if Some(*m) == *msg_id)
        }),
        AdversaryAction::TamperResult | AdversaryAction::ForgeAttestation | AdversaryAction::PoisonUpdate => {
            let verified = records.iter().any(|r| {
                matches!(&r.event, TraceEvent::SpResult { request_id: q, outcome, .. }
                    if Some(q) == request_id.as_ref() && outcome == "Verified")
            });
            let aggregated = agent.as_ref().is_some_and(|a| {
                next_round(records, idx).is_some_and(|m| m.accepted_agents.contains(a))
            });
            verified || aggregated
        }
        AdversaryAction::InjectForgedRequest => false,
    }
}

/// Checks one property over a trace.
pub fn assert_security(trace: &EventTrace, property: SecurityProperty) -> SecurityReport {
    let records = trace.records();
    let mut checked = 0;
    let mut counterexamples = Vec::new();
    let actions: &[AdversaryAction] = match property {
        SecurityProperty::NoUnauthorizedPermit => &[],
        SecurityProperty::AllTamperRejected => &[
            AdversaryAction::TamperEnvelope,
            AdversaryAction::ReplayEnvelope,
            AdversaryAction::TamperResult,
        ],
        SecurityProperty::AllForgedAttRejected => &[AdversaryAction::ForgeAttestation],
        SecurityProperty::PoisonExcluded => &[AdversaryAction::PoisonUpdate],
    };
    for (i, r) in records.iter().enumerate() {
        match &r.event {
            TraceEvent::Decision {
                outcome,
                authorized,
                ..
            } if property == SecurityProperty::NoUnauthorizedPermit => {
                checked += 1;
                if *outcome == AuditOutcome::Permit && !authorized {
                    counterexamples.push(r.clone());
                }
            }
            TraceEvent::Adversary { action, .. } if actions.contains(action) => {
                checked += 1;
                if action_succeeded(records, i) {
                    counterexamples.push(r.clone());
                }
            }
            _ => {}
        }
    }
    SecurityReport {
        property,
        holds: counterexamples.is_empty(),
        checked,
        counterexamples,
    }
}
