//! The service provider's side: signed requests out, verified results in.

use std::collections::BTreeMap;

use ed25519_dalek::VerifyingKey;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::access::DenyReason;
use crate::analytics::FunctionOutput;
use crate::channel::{ChannelError, MessageEnvelope, SecureChannel};
use crate::enclave::{
    vendor_root_key, vrf, Attestation, FunctionBundle, Measurement, ENCLAVE_VERSION,
};
use crate::encoding::Canonical;
use crate::federated::ModelUpdate;
use crate::identity::{AgentIdentity, DidDocument};
use crate::types::{
    ComputationRequest, ComputeResult, DataSelector, Did, OperationKind, RequestId, Timestamp,
};

use super::session::{ChannelCounters, PendingRequest, SpSession};
use super::transport::Transport;
use super::wire::WireMessage;

/// Default time an SP waits for a reply, in simulated milliseconds.
pub const DEFAULT_REPLY_TIMEOUT_MS: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpError {
    #[error("no channel to {0}")]
    UnknownPeer(Did),
    #[error("function `{0}` is not registered")]
    UnknownFunction(String),
    #[error("request {request_id} denied: {reason}")]
    Denied {
        request_id: RequestId,
        reason: DenyReason,
    },
    #[error("attestation for request {request_id} failed verification")]
    AttestationInvalid { request_id: RequestId },
    #[error("{0} has no vendor-endorsed enclave")]
    UntrustedEnclave(Did),
    #[error("no reply to request {request_id}")]
    Timeout { request_id: RequestId },
    #[error("reply for unknown request {0}")]
    UnknownRequest(RequestId),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("malformed or unexpected reply")]
    Malformed,
}

impl SpError {
    /// False for errors raised before the envelope was authenticated.
    pub fn is_transport_accepted(&self) -> bool {
        !matches!(self, Self::Channel(_) | Self::UnknownPeer(_))
    }
}

/// A result whose attestation checked out.
#[derive(Clone, Debug, PartialEq)]
pub struct VerifiedResult {
    pub from: Did,
    pub request: ComputationRequest,
    pub result: ComputeResult,
    pub attestation: Attestation,
    pub output: FunctionOutput,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SpReply {
    Computed(Box<VerifiedResult>),
    Denied {
        request_id: RequestId,
        reason: DenyReason,
    },
    /// Training updates are checked by the aggregator, not here.
    Update(ModelUpdate),
}

impl SpReply {
    pub fn request_id(&self) -> RequestId {
        match self {
            Self::Computed(v) => v.request.request_id,
            Self::Denied { request_id, .. } => *request_id,
            Self::Update(u) => u.result.request_id,
        }
    }
}

struct SpPeer {
    channel: SecureChannel,
    enclave_key: Option<VerifyingKey>,
}

struct Pending {
    target: Did,
    request: ComputationRequest,
}

pub struct SpController {
    identity: AgentIdentity,
    vendor: VerifyingKey,
    peers: BTreeMap<Did, SpPeer>,
    bundles: BTreeMap<String, (FunctionBundle, Measurement)>,
    pending: BTreeMap<RequestId, Pending>,
    rng: ChaCha20Rng,
}

impl std::fmt::Debug for SpController {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpController")
            .field("did", self.identity.did())
            .field("bundles", &self.bundles.keys().collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

impl SpController {
    /// `request_seed` drives request-id generation.
    pub fn new(identity: AgentIdentity, request_seed: u64) -> Self {
        Self {
            identity,
            vendor: vendor_root_key(),
            peers: BTreeMap::new(),
            bundles: BTreeMap::new(),
            pending: BTreeMap::new(),
            rng: ChaCha20Rng::seed_from_u64(request_seed),
        }
    }

    pub fn did(&self) -> &Did {
        self.identity.did()
    }

    pub fn identity(&self) -> &AgentIdentity {
        &self.identity
    }

    pub fn document(&self) -> DidDocument {
        self.identity.document()
    }

    /// Opens a channel to `doc`'s subject and records its enclave key if the
    /// vendor endorsement verifies.
    pub fn connect(&mut self, doc: &DidDocument) -> Result<(), ChannelError> {
        let channel = SecureChannel::establish(&self.identity, doc)?;
        let enclave_key = doc.enclave.as_ref().and_then(|e| e.verify(&self.vendor));
        self.peers.insert(
            doc.did.clone(),
            SpPeer {
                channel,
                enclave_key,
            },
        );
        Ok(())
    }

    pub fn channel(&self, peer: &Did) -> Option<&SecureChannel> {
        self.peers.get(peer).map(|p| &p.channel)
    }

    pub fn channel_mut(&mut self, peer: &Did) -> Option<&mut SecureChannel> {
        self.peers.get_mut(peer).map(|p| &mut p.channel)
    }

    pub fn enclave_key(&self, peer: &Did) -> Option<VerifyingKey> {
        self.peers.get(peer).and_then(|p| p.enclave_key)
    }

    /// Endorsed enclave keys of all connected peers.
    pub fn enclave_keys(&self) -> BTreeMap<Did, VerifyingKey> {
        self.peers
            .iter()
            .filter_map(|(d, p)| p.enclave_key.map(|k| (d.clone(), k)))
            .collect()
    }

    /// Registers a bundle and returns the measurement a genuine enclave
    /// will report for it.
    pub fn register_bundle(&mut self, bundle: FunctionBundle) -> Measurement {
        let m = bundle.measure(ENCLAVE_VERSION);
        self.bundles.insert(bundle.function_id.clone(), (bundle, m));
        m
    }

    pub fn bundle(&self, function_id: &str) -> Option<&FunctionBundle> {
        self.bundles.get(function_id).map(|b| &b.0)
    }

    pub fn bundles(&self) -> impl Iterator<Item = &FunctionBundle> {
        self.bundles.values().map(|b| &b.0)
    }

    pub fn expected_measurement(&self, function_id: &str) -> Option<Measurement> {
        self.bundles.get(function_id).map(|b| b.1)
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    /// Channel counters and outstanding requests.
    pub fn export_session(&self) -> SpSession {
        SpSession {
            counters: self
                .peers
                .iter()
                .map(|(did, p)| ChannelCounters {
                    peer: did.clone(),
                    send: p.channel.send_counter(),
                    recv: p.channel.recv_counter(),
                })
                .collect(),
            pending: self
                .pending
                .values()
                .map(|p| PendingRequest {
                    target: p.target.clone(),
                    request: hex::encode(p.request.to_canonical_bytes()),
                })
                .collect(),
        }
    }

    /// Restores a saved session. Peers must already be connected.
    pub fn import_session(&mut self, session: &SpSession) -> Result<(), String> {
        for c in &session.counters {
            if let Some(p) = self.peers.get_mut(&c.peer) {
                p.channel.resume_counters(c.send, c.recv);
            }
        }
        for p in &session.pending {
            let request = hex::decode(&p.request)
                .ok()
                .and_then(|b| ComputationRequest::from_canonical_bytes(&b).ok())
                .ok_or("bad pending request")?;
            self.pending.insert(
                request.request_id,
                Pending {
                    target: p.target.clone(),
                    request,
                },
            );
        }
        Ok(())
    }

    /// Builds, signs and seals a request to `target`.
    pub fn issue(
        &mut self,
        target: &Did,
        operation: OperationKind,
        function_id: &str,
        function_params: Vec<u8>,
        selector: DataSelector,
        now: Timestamp,
    ) -> Result<(ComputationRequest, MessageEnvelope), SpError> {
        if !self.bundles.contains_key(function_id) {
            return Err(SpError::UnknownFunction(function_id.to_owned()));
        }
        if !self.peers.contains_key(target) {
            return Err(SpError::UnknownPeer(target.clone()));
        }
        let re = ComputationRequest::unsigned(
            RequestId::random(&mut self.rng),
            self.identity.did().clone(),
            operation,
            function_id,
            function_params,
            selector,
            now,
        )
        .signed(self.identity.signing_key());
        let env = self.seal(target, &WireMessage::Request(re.clone()))?;
        self.pending.insert(
            re.request_id,
            Pending {
                target: target.clone(),
                request: re.clone(),
            },
        );
        Ok((re, env))
    }

    /// Seals an arbitrary message to a connected peer.
    pub fn seal(&mut self, target: &Did, msg: &WireMessage) -> Result<MessageEnvelope, SpError> {
        let peer = self
            .peers
            .get_mut(target)
            .ok_or_else(|| SpError::UnknownPeer(target.clone()))?;
        Ok(peer.channel.pack(&msg.to_canonical_bytes()))
    }

    /// Stops waiting for a request.
    pub fn forget(&mut self, request_id: &RequestId) {
        self.pending.remove(request_id);
    }

    /// Opens a reply, matches it to a pending request and, for compute
    /// results, verifies the attestation.
    pub fn open_reply(&mut self, env: &MessageEnvelope) -> Result<SpReply, SpError> {
        let peer = self
            .peers
            .get_mut(&env.sender_did)
            .ok_or_else(|| SpError::UnknownPeer(env.sender_did.clone()))?;
        let plaintext = peer.channel.unpack(env)?;
        let msg = WireMessage::from_canonical_bytes(&plaintext).map_err(|_| SpError::Malformed)?;
        let request_id = msg.request_id().ok_or(SpError::Malformed)?;
        let pending = match self.pending.get(&request_id) {
            Some(p) if p.target == env.sender_did => p,
            _ => return Err(SpError::UnknownRequest(request_id)),
        };
        let reply = match msg {
            WireMessage::Deny { request_id, reason } => SpReply::Denied { request_id, reason },
            WireMessage::ComputeReply {
                result,
                attestation,
            } => {
                let key = self
                    .enclave_key(&env.sender_did)
                    .ok_or_else(|| SpError::UntrustedEnclave(env.sender_did.clone()))?;
                let expected = self
                    .expected_measurement(&pending.request.function_id)
                    .ok_or_else(|| SpError::UnknownFunction(pending.request.function_id.clone()))?;
                if !vrf(&key, &expected, &pending.request, &result, &attestation) {
                    return Err(SpError::AttestationInvalid { request_id });
                }
                let output = FunctionOutput::from_canonical_bytes(&result.payload)
                    .map_err(|_| SpError::AttestationInvalid { request_id })?;
                SpReply::Computed(Box::new(VerifiedResult {
                    from: env.sender_did.clone(),
                    request: pending.request.clone(),
                    result,
                    attestation,
                    output,
                }))
            }
            WireMessage::TrainReply(u) if u.agent_did == env.sender_did => SpReply::Update(u),
            _ => return Err(SpError::Malformed),
        };
        self.pending.remove(&request_id);
        Ok(reply)
    }

    /// One request, one reply: issue, exchange and verify.
    pub fn sp_request_compute(
        &mut self,
        transport: &mut dyn Transport,
        target: &Did,
        function_id: &str,
        selector: DataSelector,
        timeout_ms: u64,
    ) -> Result<VerifiedResult, SpError> {
        let now = transport.now();
        let (re, env) = self.issue(
            target,
            OperationKind::Compute,
            function_id,
            Vec::new(),
            selector,
            now,
        )?;
        let replies = transport.exchange(vec![env], timeout_ms);
        let mut outcome = Err(SpError::Timeout {
            request_id: re.request_id,
        });
        for env in &replies {
            let opened = self.open_reply(env);
            transport.observe_reply(
                env,
                opened
                    .as_ref()
                    .err()
                    .map_or(true, SpError::is_transport_accepted),
            );
            match opened {
                Ok(SpReply::Computed(v)) if v.request.request_id == re.request_id => return Ok(*v),
                Ok(SpReply::Denied { request_id, reason }) if request_id == re.request_id => {
                    return Err(SpError::Denied { request_id, reason })
                }
                Err(e @ SpError::AttestationInvalid { .. }) => outcome = Err(e),
                _ => {}
            }
        }
        self.forget(&re.request_id);
        outcome
    }
}
