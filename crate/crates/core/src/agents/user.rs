//! The user-controlled agent: access control, enclave execution and audit.

use std::collections::BTreeMap;

use ed25519_dalek::VerifyingKey;
use serde_json::Value;

use crate::access::{AccessPolicy, Decision, DenyReason, RequestHistory};
use crate::analytics::TrainParams;
use crate::channel::{ChannelError, MessageEnvelope, SecureChannel};
use crate::enclave::{EnclaveError, EnclaveInstance, FunctionBundle, Measurement};
use crate::encoding::Canonical;
use crate::federated::ModelUpdate;
use crate::identity::{AgentIdentity, DidDocument};
use crate::plug::{
    Credential, DataSourceDescriptor, IngestReport, PlugError, PlugRegistry, SourceSpec,
};
use crate::store::RecordStore;
use crate::types::{ComputationRequest, Did, OperationKind, RequestId, Timestamp, DAY_MS};

use super::audit::{AuditLog, AuditOutcome, TransportFault};
use super::session::{ChannelCounters, HistoryCount, SeenRequest, UserSession};
use super::wire::WireMessage;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UserConfig {
    /// Maximum |issued_at - now| accepted.
    pub freshness_window_ms: u64,
    /// How long a seen request id is remembered.
    pub replay_retention_ms: u64,
}

impl Default for UserConfig {
    fn default() -> Self {
        Self {
            freshness_window_ms: 5 * 60 * 1000,
            replay_retention_ms: DAY_MS,
        }
    }
}

/// Hook on every outgoing reply, before it is sealed. Honest agents use
/// [`NoTap`]; the simulator uses it to model a compromised host.
pub trait OutboundTap {
    fn on_reply(&mut self, to: &Did, msg: &mut WireMessage);
}

pub struct NoTap;

impl OutboundTap for NoTap {
    fn on_reply(&mut self, _to: &Did, _msg: &mut WireMessage) {}
}

struct Peer {
    key: VerifyingKey,
    channel: SecureChannel,
}

pub struct UserController {
    identity: AgentIdentity,
    policy: AccessPolicy,
    history: RequestHistory,
    plugs: PlugRegistry,
    store: RecordStore,
    enclave: EnclaveInstance,
    peers: BTreeMap<Did, Peer>,
    seen: BTreeMap<(Did, RequestId), Timestamp>,
    audit: AuditLog,
    config: UserConfig,
}

impl std::fmt::Debug for UserController {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UserController")
            .field("did", self.identity.did())
            .field("records", &self.store.len())
            .field("peers", &self.peers.keys().collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

impl UserController {
    pub fn new(identity: AgentIdentity, enclave: EnclaveInstance) -> Self {
        let policy = AccessPolicy::new(identity.did().clone());
        Self::from_parts(
            identity,
            policy,
            PlugRegistry::new(),
            RecordStore::in_memory(),
            enclave,
        )
    }

    pub fn from_parts(
        identity: AgentIdentity,
        policy: AccessPolicy,
        plugs: PlugRegistry,
        store: RecordStore,
        enclave: EnclaveInstance,
    ) -> Self {
        Self {
            identity,
            policy,
            history: RequestHistory::new(),
            plugs,
            store,
            enclave,
            peers: BTreeMap::new(),
            seen: BTreeMap::new(),
            audit: AuditLog::new(),
            config: UserConfig::default(),
        }
    }

    pub fn with_config(mut self, config: UserConfig) -> Self {
        self.config = config;
        self
    }

    pub fn did(&self) -> &Did {
        self.identity.did()
    }

    pub fn identity(&self) -> &AgentIdentity {
        &self.identity
    }

    /// DID document advertising the endorsed enclave key.
    pub fn document(&self) -> DidDocument {
        self.identity
            .document_with_enclave(Some(self.enclave.endorsement().clone()))
    }

    pub fn policy(&self) -> &AccessPolicy {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut AccessPolicy {
        &mut self.policy
    }

    pub fn history(&self) -> &RequestHistory {
        &self.history
    }

    pub fn set_history(&mut self, history: RequestHistory) {
        self.history = history;
    }

    pub fn plugs(&self) -> &PlugRegistry {
        &self.plugs
    }

    pub fn store(&self) -> &RecordStore {
        &self.store
    }

    pub fn enclave(&self) -> &EnclaveInstance {
        &self.enclave
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn set_audit(&mut self, audit: AuditLog) {
        self.audit = audit;
    }

    pub fn register_source(
        &mut self,
        spec: SourceSpec,
        credential: &Credential,
    ) -> Result<DataSourceDescriptor, PlugError> {
        self.plugs
            .register_source(spec, credential, &mut self.policy)
            .cloned()
    }

    pub fn ingest(
        &mut self,
        source_id: &str,
        items: &[Value],
        now: Timestamp,
    ) -> Result<IngestReport, PlugError> {
        self.plugs.ingest(&mut self.store, source_id, items, now)
    }

    pub fn load_bundle(&mut self, bundle: &FunctionBundle) -> Result<Measurement, EnclaveError> {
        self.enclave.load_bundle(bundle)
    }

    /// Verifies `doc` and opens a channel to its subject.
    pub fn connect(&mut self, doc: &DidDocument) -> Result<(), ChannelError> {
        let channel = SecureChannel::establish(&self.identity, doc)?;
        let key = doc.verify()?;
        self.peers.insert(doc.did.clone(), Peer { key, channel });
        Ok(())
    }

    pub fn channel(&self, peer: &Did) -> Option<&SecureChannel> {
        self.peers.get(peer).map(|p| &p.channel)
    }

    pub fn channel_mut(&mut self, peer: &Did) -> Option<&mut SecureChannel> {
        self.peers.get_mut(peer).map(|p| &mut p.channel)
    }

    /// Counters of connected peers, the replay set and request history.
    pub fn export_session(&self) -> UserSession {
        UserSession {
            counters: self
                .peers
                .iter()
                .map(|(did, p)| ChannelCounters {
                    peer: did.clone(),
                    send: p.channel.send_counter(),
                    recv: p.channel.recv_counter(),
                })
                .collect(),
            seen: self
                .seen
                .iter()
                .map(|((requester, id), at)| SeenRequest {
                    requester: requester.clone(),
                    request_id: id.to_hex(),
                    issued_at: *at,
                })
                .collect(),
            history: self
                .history
                .entries()
                .map(|(sp, source_id, day, count)| HistoryCount {
                    sp: sp.clone(),
                    source_id: source_id.to_owned(),
                    day,
                    count,
                })
                .collect(),
        }
    }

    /// Restores a saved session. Peers must already be connected; counters
    /// of unknown peers are ignored.
    pub fn import_session(&mut self, session: &UserSession) -> Result<(), String> {
        for c in &session.counters {
            if let Some(p) = self.peers.get_mut(&c.peer) {
                p.channel.resume_counters(c.send, c.recv);
            }
        }
        for s in &session.seen {
            let id: [u8; 16] = hex::decode(&s.request_id)
                .ok()
                .and_then(|b| b.try_into().ok())
                .ok_or_else(|| format!("bad request id `{}`", s.request_id))?;
            self.seen
                .insert((s.requester.clone(), RequestId(id)), s.issued_at);
        }
        for h in &session.history {
            self.history
                .set(h.sp.clone(), h.source_id.clone(), h.day, h.count);
        }
        Ok(())
    }

    /// Processes one inbound envelope and returns the sealed reply, if any.
    /// Every call appends exactly one audit entry.
    pub fn handle_envelope(
        &mut self,
        env: &MessageEnvelope,
        now: Timestamp,
    ) -> Option<MessageEnvelope> {
        self.handle_envelope_with(env, now, &mut NoTap)
    }

    pub fn handle_envelope_with(
        &mut self,
        env: &MessageEnvelope,
        now: Timestamp,
        tap: &mut dyn OutboundTap,
    ) -> Option<MessageEnvelope> {
        let sender = env.sender_did.clone();
        let Some(peer) = self.peers.get_mut(&sender) else {
            self.reject(now, sender, TransportFault::UnknownPeer);
            return None;
        };
        let plaintext = match peer.channel.unpack(env) {
            Ok(p) => p,
            Err(e) => {
                let fault = match e {
                    ChannelError::Replay { .. } => TransportFault::Replay,
                    ChannelError::WrongRecipient(_) => TransportFault::WrongRecipient,
                    _ => TransportFault::TamperDetected,
                };
                self.reject(now, sender, fault);
                return None;
            }
        };
        let re = match WireMessage::from_canonical_bytes(&plaintext) {
            Ok(WireMessage::Request(re)) => re,
            Ok(_) => {
                self.reject(now, sender, TransportFault::UnexpectedMessage);
                return None;
            }
            Err(_) => {
                self.reject(now, sender, TransportFault::Malformed);
                return None;
            }
        };
        let mut reply = self.handle_request(&re, &sender, now);
        tap.on_reply(&sender, &mut reply);
        let peer = self.peers.get_mut(&sender).expect("peer checked above");
        Some(peer.channel.pack(&reply.to_canonical_bytes()))
    }

    fn reject(&mut self, now: Timestamp, peer: Did, fault: TransportFault) {
        self.audit
            .append(now, peer, None, AuditOutcome::Rejected(fault), None);
    }

    /// Decision and execution for an authenticated request from `sender`.
    /// Returns the plaintext reply and records it in the audit log.
    pub fn handle_request(
        &mut self,
        re: &ComputationRequest,
        sender: &Did,
        now: Timestamp,
    ) -> WireMessage {
        let retention = self.config.replay_retention_ms;
        self.seen
            .retain(|_, issued| issued.millis().saturating_add(retention) > now.millis());
        self.history.prune(now);

        let decision = self.decide(re, sender, now);
        let reply = match decision {
            Decision::Deny(reason) => WireMessage::Deny {
                request_id: re.request_id,
                reason,
            },
            Decision::Permit => {
                self.history
                    .record(&re.requester_did, &re.selector.source_id, now);
                self.execute(re)
            }
        };
        let (outcome, result_hash) = match &reply {
            WireMessage::ComputeReply { result, .. } => (AuditOutcome::Permit, Some(result.hash())),
            WireMessage::TrainReply(u) => (AuditOutcome::Permit, Some(u.result.hash())),
            WireMessage::Deny { reason, .. } => (AuditOutcome::Deny(*reason), None),
            _ => unreachable!("handle_request only emits replies"),
        };
        self.audit
            .append(now, sender.clone(), Some(re), outcome, result_hash);
        reply
    }

    fn decide(&mut self, re: &ComputationRequest, sender: &Did, now: Timestamp) -> Decision {
        if re.issued_at.abs_diff(now) > self.config.freshness_window_ms {
            return Decision::Deny(DenyReason::Stale);
        }
        let seen_key = (re.requester_did.clone(), re.request_id);
        if self.seen.contains_key(&seen_key) {
            return Decision::Deny(DenyReason::Replay);
        }
        // The request must be signed by the peer that sent it.
        let key = (re.requester_did == *sender)
            .then(|| self.peers.get(sender).map(|p| p.key))
            .flatten();
        let decision = self.policy.allow(re, key.as_ref(), now, &self.history);
        if decision != Decision::Deny(DenyReason::BadSignature) {
            self.seen.insert(seen_key, re.issued_at);
        }
        if decision.is_permit() {
            let training = self.enclave.is_training_function(&re.function_id);
            if training != (re.operation == OperationKind::Train) {
                return Decision::Deny(DenyReason::PolicyViolation);
            }
        }
        decision
    }

    fn execute(&mut self, re: &ComputationRequest) -> WireMessage {
        let records = self.store.query(&re.selector);
        let deny = WireMessage::Deny {
            request_id: re.request_id,
            reason: DenyReason::ExecutionFailed,
        };
        let Ok((result, attestation)) = self.enclave.execute(re, &records, &self.plugs) else {
            return deny;
        };
        if re.operation == OperationKind::Train {
            let Ok(tp) = TrainParams::from_canonical_bytes(&re.function_params) else {
                return deny;
            };
            WireMessage::TrainReply(ModelUpdate {
                round: tp.round,
                agent_did: self.identity.did().clone(),
                result,
                attestation,
            })
        } else {
            WireMessage::ComputeReply {
                result,
                attestation,
            }
        }
    }
}
