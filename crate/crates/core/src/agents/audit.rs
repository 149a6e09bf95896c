//! Hash-chained record of every inbound message and its outcome.

use serde::{Deserialize, Serialize};

use crate::access::{Decision, DenyReason};
use crate::encoding::Encoder;
use crate::types::{content_hash, ComputationRequest, ContentHash, Did, OperationKind, Timestamp};

/// Why an envelope was dropped before reaching the decision procedure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TransportFault {
    UnknownPeer,
    TamperDetected,
    Replay,
    WrongRecipient,
    Malformed,
    UnexpectedMessage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuditOutcome {
    Permit,
    Deny(DenyReason),
    Rejected(TransportFault),
}

impl From<Decision> for AuditOutcome {
    fn from(d: Decision) -> Self {
        match d {
            Decision::Permit => Self::Permit,
            Decision::Deny(r) => Self::Deny(r),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub at: Timestamp,
    pub peer: Did,
    pub request_id: Option<String>,
    pub function_id: Option<String>,
    pub source_id: Option<String>,
    pub operation: Option<OperationKind>,
    pub outcome: AuditOutcome,
    pub result_hash: Option<String>,
    pub prev_hash: String,
    pub entry_hash: String,
}

impl AuditEntry {
    fn compute_hash(&self) -> ContentHash {
        let mut enc = Encoder::new();
        enc.fixed(b"datagent/audit/v1")
            .u64(self.seq)
            .value(&self.at)
            .value(&self.peer)
            .value(&self.request_id)
            .value(&self.function_id)
            .value(&self.source_id)
            .value(&self.operation)
            .str(&serde_json::to_string(&self.outcome).expect("outcome serializes"))
            .value(&self.result_hash)
            .str(&self.prev_hash);
        content_hash(enc.as_slice())
    }
}

/// Append-only, hash-chained audit trail.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AuditLog {
    entries: Vec<AuditEntry>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(
        &mut self,
        at: Timestamp,
        peer: Did,
        request: Option<&ComputationRequest>,
        outcome: AuditOutcome,
        result_hash: Option<ContentHash>,
    ) -> &AuditEntry {
        let prev_hash = self.head().to_hex();
        let mut entry = AuditEntry {
            seq: self.entries.len() as u64,
            at,
            peer,
            request_id: request.map(|r| r.request_id.to_hex()),
            function_id: request.map(|r| r.function_id.clone()),
            source_id: request.map(|r| r.selector.source_id.clone()),
            operation: request.map(|r| r.operation),
            outcome,
            result_hash: result_hash.map(|h| h.to_hex()),
            prev_hash,
            entry_hash: String::new(),
        };
        entry.entry_hash = entry.compute_hash().to_hex();
        self.entries.push(entry);
        self.entries.last().expect("just pushed")
    }

    /// Hash of the latest entry, or all zeros when empty.
    pub fn head(&self) -> ContentHash {
        self.entries
            .last()
            .and_then(|e| hex::decode(&e.entry_hash).ok())
            .and_then(|b| <[u8; 32]>::try_from(b).ok())
            .map(ContentHash)
            .unwrap_or_default()
    }

    pub fn entries(&self) -> &[AuditEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Index of the first entry whose link or hash does not check out.
    pub fn verify(&self) -> Result<(), usize> {
        let mut prev = ContentHash::default().to_hex();
        for (i, e) in self.entries.iter().enumerate() {
            if e.seq != i as u64 || e.prev_hash != prev || e.entry_hash != e.compute_hash().to_hex()
            {
                return Err(i);
            }
            prev = e.entry_hash.clone();
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{DataSelector, RecordLimit, RequestId};

    fn log(n: usize) -> AuditLog {
        let mut log = AuditLog::new();
        for i in 0..n {
            log.append(
                Timestamp(i as u64),
                Did::from("did:dga:zPeer"),
                Some(&ComputationRequest::unsigned(
                    RequestId([i as u8; 16]),
                    Did::from("did:dga:zPeer"),
                    OperationKind::Compute,
                    "count",
                    vec![],
                    DataSelector::new("src", "comment.v1", RecordLimit::Bounded(5)),
                    Timestamp(0),
                )),
                if i % 2 == 0 {
                    AuditOutcome::Permit
                } else {
                    AuditOutcome::Deny(DenyReason::NoGrant)
                },
                None,
            );
        }
        log
    }

    #[test]
    fn chain_verifies_and_survives_jsonl() {
        let l = log(5);
        assert_eq!(l.verify(), Ok(()));
        let back = AuditLog::from_jsonl(&l.to_jsonl()).unwrap();
        assert_eq!(back, l);
        assert_eq!(back.verify(), Ok(()));
    }

    #[test]
    fn edits_and_deletions_break_the_chain() {
        let mut l = log(5);
        l.entries[2].outcome = AuditOutcome::Deny(DenyReason::RateLimited);
        assert_eq!(l.verify(), Err(2));

        let mut l = log(5);
        l.entries.remove(1);
        assert_eq!(l.verify(), Err(1));
    }
}
