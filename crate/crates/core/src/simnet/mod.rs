//! Deterministic discrete-event network of providers, user agents and an
//! adversary.
//!
//! Time is virtual. Links are FIFO per direction: a message never overtakes
//! an earlier one on the same link, so channel counters stay monotone for
//! honest traffic. All randomness comes from the scenario seed, so a
//! scenario run twice yields the same trace byte for byte.

pub mod scenario;
pub mod trace;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use ed25519_dalek::SigningKey;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::access::ComputationPolicy;
use crate::agents::{
    AuditOutcome, MessageKind, OutboundTap, SpController, SpError, SpReply, Transport,
    UserController, WireMessage,
};
use crate::analytics::{
    FunctionOutput, FunctionSpec, ModelParams, TrainHyper, TrainOutcome, TrainParams,
};
use crate::channel::{MessageEnvelope, SecureChannel};
use crate::enclave::{Attestation, EnclaveInstance, FunctionBundle, ENCLAVE_VERSION};
use crate::encoding::{Canonical, Encoder};
use crate::federated::{run_rounds, GlobalModel, ModelUpdate, RoundConfig, RoundMetrics};
use crate::identity::{AgentIdentity, DidDocument};
use crate::plug::{Credential, PlugKind, SourceSpec};
use crate::synth;
use crate::types::{
    content_hash, ComputationRequest, ComputeResult, ContentHash, DataSelector, Did, OperationKind,
    RecordLimit, RequestId, Timestamp,
};

pub use scenario::{BundleDef, FunctionDef, Scenario, ScenarioError, Step};
pub use trace::{
    assert_security, AdversaryAction, EventTrace, SecurityProperty, SecurityReport, TraceEvent,
    TraceRecord,
};

/// Node name of the simulated rogue agent.
pub const ROGUE_NAME: &str = "mallory";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatencyModel {
    Fixed { ms: u64 },
    Uniform { min_ms: u64, max_ms: u64 },
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self::Uniform {
            min_ms: 5,
            max_ms: 20,
        }
    }
}

impl LatencyModel {
    pub fn sample(&self, rng: &mut impl Rng) -> u64 {
        match *self {
            Self::Fixed { ms } => ms,
            Self::Uniform { min_ms, max_ms } => rng.gen_range(min_ms..=max_ms),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Self::Uniform { min_ms, max_ms } if min_ms > max_ms => {
                Err(format!("latency min {min_ms} exceeds max {max_ms}"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start_ms: u64,
    #[serde(default)]
    pub latency: LatencyModel,
    #[serde(default)]
    pub drop_rate: f64,
    /// Reply collection timeout per exchange.
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    /// Virtual time between consecutive compute requests.
    #[serde(default = "default_gap")]
    pub request_gap_ms: u64,
}

fn default_start() -> u64 {
    1_700_000_000_000
}
fn default_timeout() -> u64 {
    crate::federated::DEFAULT_ROUND_TIMEOUT_MS
}
fn default_gap() -> u64 {
    1_000
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            start_ms: default_start(),
            latency: LatencyModel::default(),
            drop_rate: 0.0,
            timeout_ms: default_timeout(),
            request_gap_ms: default_gap(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdversaryMode {
    #[default]
    None,
    /// Flips a bit of an envelope in flight.
    TamperEnvelope,
    /// Delivers a second copy of an envelope.
    ReplayEnvelope,
    /// Sends requests the user never authorized, from the rogue's own DID
    /// or claiming the provider's DID.
    InjectForgedRequest,
    /// A compromised host edits the enclave's result before sealing it.
    TamperResult,
    /// A compromised host fabricates a result and signs σ with a non-enclave key.
    ForgeAttestation,
    /// The rogue participant answers training requests with unattested updates.
    PoisonUpdate,
}

impl std::str::FromStr for AdversaryMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Self::None,
            Self::TamperEnvelope,
            Self::ReplayEnvelope,
            Self::InjectForgedRequest,
            Self::TamperResult,
            Self::ForgeAttestation,
            Self::PoisonUpdate,
        ]
        .into_iter()
        .find(|m| format!("{m:?}").eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("unknown adversary mode `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    #[serde(default)]
    pub mode: AdversaryMode,
    /// Chance of acting on each eligible message.
    #[serde(default = "default_probability")]
    pub probability: f64,
    /// Restricts the adversary to traffic of one user.
    #[serde(default)]
    pub target: Option<String>,
}

fn default_probability() -> f64 {
    1.0
}

impl Default for AdversarySpec {
    fn default() -> Self {
        Self {
            mode: AdversaryMode::None,
            probability: 1.0,
            target: None,
        }
    }
}

/// One frame a user agent put on the wire, with its plaintext.
#[derive(Clone, Debug, PartialEq)]
pub struct CapturedFrame {
    pub from: String,
    pub kind: MessageKind,
    pub wire_bytes: Vec<u8>,
    pub plaintext: Vec<u8>,
}

/// A verified compute result collected by a provider.
#[derive(Clone, Debug, PartialEq)]
pub struct ComputeRecord {
    pub step: usize,
    pub user: String,
    pub output: FunctionOutput,
}

pub struct SimOutcome {
    pub trace: EventTrace,
    pub final_models: Vec<(usize, GlobalModel)>,
    pub results: Vec<ComputeRecord>,
    pub captures: Vec<CapturedFrame>,
    pub users: Vec<UserController>,
    pub user_names: Vec<String>,
    pub providers: Vec<SpController>,
    pub rogue_did: Did,
}

impl SimOutcome {
    pub fn user(&self, name: &str) -> Option<&UserController> {
        self.user_names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.users[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Node {
    Provider(usize),
    User(usize),
    Rogue,
}

struct Delivery {
    msg_id: u64,
    from: Node,
    to: Node,
    env: MessageEnvelope,
}

struct GroundGrant {
    user: usize,
    sp: Did,
    source: String,
    op: OperationKind,
    expires_at: Option<u64>,
}

struct Rogue {
    identity: AgentIdentity,
    channels: BTreeMap<Did, SecureChannel>,
    injected: u64,
}

struct Network {
    adversary: AdversarySpec,
    latency: LatencyModel,
    drop_rate: f64,
    timeout_ms: u64,
    users: Vec<UserController>,
    user_names: Vec<String>,
    user_sources: Vec<Vec<(String, String)>>,
    provider_names: Vec<String>,
    provider_dids: Vec<Did>,
    public_bundles: Vec<FunctionBundle>,
    rogue: Rogue,
    nodes: BTreeMap<Did, Node>,
    clock: u64,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    in_flight: BTreeMap<u64, Delivery>,
    link_last: BTreeMap<(Node, Node), u64>,
    net_rng: ChaCha8Rng,
    adv_rng: ChaCha8Rng,
    next_msg: u64,
    next_seq: u64,
    trace: EventTrace,
    inbox: BTreeMap<usize, Vec<MessageEnvelope>>,
    awaiting_open: BTreeMap<ContentHash, VecDeque<u64>>,
    injected: BTreeSet<String>,
    grants: Vec<GroundGrant>,
    captures: Vec<CapturedFrame>,
}

fn derived_seed(sim_seed: u64, role: &str, name: &str) -> [u8; 32] {
    let mut enc = Encoder::new();
    enc.fixed(b"datagent/sim/seed")
        .u64(sim_seed)
        .str(role)
        .str(name);
    content_hash(enc.as_slice()).0
}

fn derived_u64(sim_seed: u64, role: &str, name: &str) -> u64 {
    let s = derived_seed(sim_seed, role, name);
    u64::from_be_bytes(s[..8].try_into().expect("8 bytes"))
}

/// Tap that lets a compromised host rewrite replies, and records what the
/// user agent emitted.
struct SimTap<'a> {
    mode: AdversaryMode,
    probability: f64,
    active: bool,
    rng: &'a mut ChaCha8Rng,
    forge_key: &'a SigningKey,
    acted: Option<(AdversaryAction, RequestId)>,
    emitted: Option<(MessageKind, Vec<u8>)>,
}

fn forge_output(output: &FunctionOutput) -> FunctionOutput {
    match output {
        FunctionOutput::Trained(t) => FunctionOutput::Trained(TrainOutcome {
            model_out: ModelParams {
                layout: t.model_out.layout,
                weights: vec![1000.0; t.model_out.weights.len()],
            },
            n_samples: t.n_samples.saturating_mul(1000).max(1),
            loss_final: 0.0,
        }),
        _ => FunctionOutput::Scalar(1.0e9),
    }
}

impl OutboundTap for SimTap<'_> {
    fn on_reply(&mut self, _to: &Did, msg: &mut WireMessage) {
        let acting = self.active
            && matches!(
                self.mode,
                AdversaryMode::TamperResult | AdversaryMode::ForgeAttestation
            )
            && matches!(
                msg,
                WireMessage::ComputeReply { .. } | WireMessage::TrainReply(_)
            )
            && self.rng.gen_bool(self.probability);
        if acting {
            let (result, att) = match msg {
                WireMessage::ComputeReply {
                    result,
                    attestation,
                } => (result, attestation),
                WireMessage::TrainReply(u) => (&mut u.result, &mut u.attestation),
                _ => unreachable!("checked above"),
            };
            if self.mode == AdversaryMode::TamperResult {
                let i = self.rng.gen_range(0..result.payload.len());
                result.payload[i] ^= 1 << self.rng.gen_range(0..8);
                self.acted = Some((AdversaryAction::TamperResult, result.request_id));
            } else {
                if let Ok(out) = FunctionOutput::from_canonical_bytes(&result.payload) {
                    result.payload = forge_output(&out).to_canonical_bytes();
                }
                att.result_hash = result.hash();
                att.resign(self.forge_key);
                self.acted = Some((AdversaryAction::ForgeAttestation, result.request_id));
            }
        }
        self.emitted = Some((msg.kind(), msg.to_canonical_bytes()));
    }
}

fn mutate_envelope(env: &mut MessageEnvelope, rng: &mut impl Rng) {
    let bit = 1u8 << rng.gen_range(0..8);
    match rng.gen_range(0..4) {
        0 if !env.ciphertext.is_empty() => {
            let i = rng.gen_range(0..env.ciphertext.len());
            env.ciphertext[i] ^= bit;
        }
        1 => env.aead_tag[rng.gen_range(0..16)] ^= bit,
        2 => env.sender_signature[rng.gen_range(0..64)] ^= bit,
        _ => env.counter ^= u64::from(bit),
    }
}

impl Network {
    fn name(&self, n: Node) -> String {
        match n {
            Node::Provider(p) => self.provider_names[p].clone(),
            Node::User(u) => self.user_names[u].clone(),
            Node::Rogue => ROGUE_NAME.to_owned(),
        }
    }

    fn push(&mut self, event: TraceEvent) {
        self.trace.push(self.clock, event);
    }

    fn fresh_msg(&mut self) -> u64 {
        self.next_msg += 1;
        self.next_msg
    }

    /// Whether the adversary acts on traffic between `a` and `b`.
    fn targeted(&self, a: Node, b: Node) -> bool {
        match &self.adversary.target {
            None => true,
            Some(t) => [a, b]
                .iter()
                .any(|n| matches!(n, Node::User(u) if &self.user_names[*u] == t)),
        }
    }

    fn coin(&mut self, mode: AdversaryMode, a: Node, b: Node) -> bool {
        self.adversary.mode == mode
            && self.targeted(a, b)
            && self.adv_rng.gen_bool(self.adversary.probability)
    }

    fn schedule(
        &mut self,
        from: Node,
        to: Node,
        msg_id: u64,
        env: MessageEnvelope,
        not_before: u64,
    ) -> u64 {
        let lat = self.latency.sample(&mut self.net_rng);
        let last = self.link_last.get(&(from, to)).copied().unwrap_or(0);
        let at = (not_before + lat).max(last);
        self.link_last.insert((from, to), at);
        self.next_seq += 1;
        self.queue.push(Reverse((at, self.next_seq)));
        self.in_flight.insert(
            self.next_seq,
            Delivery {
                msg_id,
                from,
                to,
                env,
            },
        );
        at
    }

    /// Puts a frame on the wire; honest frames are exposed to the adversary.
    fn send(
        &mut self,
        from: Node,
        to: Node,
        mut env: MessageEnvelope,
        kind: MessageKind,
        honest: bool,
    ) {
        let msg_id = self.fresh_msg();
        if honest && self.coin(AdversaryMode::TamperEnvelope, from, to) {
            mutate_envelope(&mut env, &mut self.adv_rng);
            self.push(TraceEvent::Adversary {
                action: AdversaryAction::TamperEnvelope,
                msg_id: Some(msg_id),
                request_id: None,
                agent: None,
            });
        }
        let size = env.to_canonical_bytes().len();
        self.push(TraceEvent::Send {
            msg_id,
            from: self.name(from),
            to: self.name(to),
            kind: Some(kind),
            size,
        });
        if self.net_rng.gen_bool(self.drop_rate) {
            self.push(TraceEvent::Drop { msg_id });
            return;
        }
        let at = self.schedule(from, to, msg_id, env.clone(), self.clock);

        if honest && self.coin(AdversaryMode::ReplayEnvelope, from, to) {
            let dup = self.fresh_msg();
            self.push(TraceEvent::Adversary {
                action: AdversaryAction::ReplayEnvelope,
                msg_id: Some(dup),
                request_id: None,
                agent: None,
            });
            self.push(TraceEvent::Send {
                msg_id: dup,
                from: ROGUE_NAME.to_owned(),
                to: self.name(to),
                kind: None,
                size,
            });
            self.schedule(from, to, dup, env, at);
        }
        if let (true, Node::Provider(p), Node::User(u)) = (honest, from, to) {
            if self.coin(AdversaryMode::InjectForgedRequest, from, to) {
                self.inject(p, u);
            }
        }
    }

    fn inject(&mut self, provider: usize, user: usize) {
        let Some((source, schema)) = self.user_sources[user].first().cloned() else {
            return;
        };
        let Some(function) = self.public_bundles.first().map(|b| b.function_id.clone()) else {
            return;
        };
        // Alternate between the rogue's own DID and a spoofed provider DID.
        let requester = if self.rogue.injected % 2 == 0 {
            self.rogue.identity.did().clone()
        } else {
            self.provider_dids[provider].clone()
        };
        self.rogue.injected += 1;
        let re = ComputationRequest::unsigned(
            RequestId::random(&mut self.adv_rng),
            requester,
            OperationKind::Compute,
            function,
            Vec::new(),
            DataSelector::new(source, schema, RecordLimit::Bounded(10)),
            Timestamp(self.clock),
        )
        .signed(self.rogue.identity.signing_key());
        let user_did = self.users[user].did().clone();
        let Some(ch) = self.rogue.channels.get_mut(&user_did) else {
            return;
        };
        let env = ch.pack(&WireMessage::Request(re.clone()).to_canonical_bytes());
        self.injected.insert(re.request_id.to_hex());
        self.push(TraceEvent::Adversary {
            action: AdversaryAction::InjectForgedRequest,
            msg_id: Some(self.next_msg + 1),
            request_id: Some(re.request_id.to_hex()),
            agent: None,
        });
        self.send(
            Node::Rogue,
            Node::User(user),
            env,
            MessageKind::Request,
            false,
        );
    }

    fn authorized(
        &self,
        user: usize,
        peer: &Did,
        entry: &crate::agents::AuditEntry,
        t: u64,
    ) -> bool {
        if entry
            .request_id
            .as_ref()
            .is_some_and(|r| self.injected.contains(r))
        {
            return false;
        }
        self.grants.iter().any(|g| {
            g.user == user
                && &g.sp == peer
                && entry.source_id.as_deref() == Some(g.source.as_str())
                && entry.operation == Some(g.op)
                && g.expires_at.map_or(true, |e| t < e)
        })
    }

    fn deliver_to_user(&mut self, u: usize, d: Delivery) {
        let t = self.clock;
        let forge_key = SigningKey::from_bytes(&derived_seed(0, "forger", ROGUE_NAME));
        let active = self.targeted(Node::User(u), d.from);
        let mut tap = SimTap {
            mode: self.adversary.mode,
            probability: self.adversary.probability,
            active,
            rng: &mut self.adv_rng,
            forge_key: &forge_key,
            acted: None,
            emitted: None,
        };
        let reply = self.users[u].handle_envelope_with(&d.env, Timestamp(t), &mut tap);
        let (acted, emitted) = (tap.acted, tap.emitted);

        let entry = self.users[u]
            .audit()
            .entries()
            .last()
            .expect("every envelope is audited")
            .clone();
        let accepted = !matches!(entry.outcome, AuditOutcome::Rejected(_));
        self.push(TraceEvent::Receive {
            msg_id: d.msg_id,
            node: self.user_names[u].clone(),
            accepted,
        });
        if accepted {
            let authorized = self.authorized(u, &entry.peer, &entry, t);
            self.push(TraceEvent::Decision {
                user: self.user_names[u].clone(),
                peer: entry.peer.clone(),
                request_id: entry.request_id.clone(),
                outcome: entry.outcome,
                authorized,
            });
        }
        if let Some((action, rid)) = acted {
            self.push(TraceEvent::Adversary {
                action,
                msg_id: None,
                request_id: Some(rid.to_hex()),
                agent: Some(self.users[u].did().clone()),
            });
        }
        if let (Some(env), Some((kind, plaintext))) = (reply, emitted) {
            self.captures.push(CapturedFrame {
                from: self.user_names[u].clone(),
                kind,
                wire_bytes: env.to_canonical_bytes(),
                plaintext,
            });
            self.send(Node::User(u), d.from, env, kind, d.from != Node::Rogue);
        }
    }

    fn deliver_to_rogue(&mut self, d: Delivery) {
        let sender = d.env.sender_did.clone();
        let opened = self
            .rogue
            .channels
            .get_mut(&sender)
            .and_then(|ch| ch.unpack(&d.env).ok());
        self.push(TraceEvent::Receive {
            msg_id: d.msg_id,
            node: ROGUE_NAME.to_owned(),
            accepted: opened.is_some(),
        });
        let Node::Provider(p) = d.from else { return };
        let Some(Ok(WireMessage::Request(re))) =
            opened.map(|b| WireMessage::from_canonical_bytes(&b))
        else {
            return;
        };
        if !self.coin(AdversaryMode::PoisonUpdate, d.from, Node::Rogue) {
            return;
        }
        let Ok(tp) = TrainParams::from_canonical_bytes(&re.function_params) else {
            return;
        };
        let Some(bundle) = self
            .public_bundles
            .iter()
            .find(|b| b.function_id == re.function_id)
        else {
            return;
        };
        let weights = (0..tp.model.weights.len())
            .map(|_| self.adv_rng.gen_range(-1000.0..1000.0))
            .collect();
        let outcome = TrainOutcome {
            model_out: ModelParams {
                layout: tp.model.layout,
                weights,
            },
            n_samples: 1_000_000,
            loss_final: 0.0,
        };
        let result = ComputeResult {
            request_id: re.request_id,
            payload: FunctionOutput::Trained(outcome).to_canonical_bytes(),
            record_count: 1_000_000,
        };
        let mut attestation = Attestation {
            measurement: bundle.measure(ENCLAVE_VERSION),
            request_hash: re.hash(),
            result_hash: result.hash(),
            nonce: self.adv_rng.gen(),
            enclave_signature: [0; 64],
        };
        attestation.resign(self.rogue.identity.signing_key());
        let update = ModelUpdate {
            round: tp.round,
            agent_did: self.rogue.identity.did().clone(),
            result,
            attestation,
        };
        self.push(TraceEvent::Adversary {
            action: AdversaryAction::PoisonUpdate,
            msg_id: None,
            request_id: Some(re.request_id.to_hex()),
            agent: Some(self.rogue.identity.did().clone()),
        });
        let ch = self.rogue.channels.get_mut(&sender).expect("opened above");
        let env = ch.pack(&WireMessage::TrainReply(update).to_canonical_bytes());
        self.send(
            Node::Rogue,
            Node::Provider(p),
            env,
            MessageKind::TrainReply,
            false,
        );
    }

    fn run_until(&mut self, deadline: u64) {
        while let Some(&Reverse((at, seq))) = self.queue.peek() {
            if at > deadline {
                break;
            }
            self.queue.pop();
            self.clock = self.clock.max(at);
            let d = self.in_flight.remove(&seq).expect("scheduled delivery");
            match d.to {
                Node::User(u) => self.deliver_to_user(u, d),
                Node::Rogue => self.deliver_to_rogue(d),
                Node::Provider(p) => {
                    self.awaiting_open
                        .entry(ContentHash::of(&d.env))
                        .or_default()
                        .push_back(d.msg_id);
                    self.inbox.entry(p).or_default().push(d.env);
                }
            }
        }
    }
}

/// A provider's view of the simulated network.
struct ProviderLink<'a> {
    net: &'a mut Network,
    provider: usize,
}

impl Transport for ProviderLink<'_> {
    fn now(&self) -> Timestamp {
        Timestamp(self.net.clock)
    }

    fn exchange(
        &mut self,
        outbound: Vec<MessageEnvelope>,
        timeout_ms: u64,
    ) -> Vec<MessageEnvelope> {
        let deadline = self.net.clock + timeout_ms;
        let expected = outbound.len();
        for env in outbound {
            if let Some(&to) = self.net.nodes.get(&env.recipient_did) {
                self.net.send(
                    Node::Provider(self.provider),
                    to,
                    env,
                    MessageKind::Request,
                    true,
                );
            }
        }
        self.net.run_until(deadline);
        let replies = self.net.inbox.remove(&self.provider).unwrap_or_default();
        if replies.len() < expected {
            self.net.clock = self.net.clock.max(deadline);
        }
        replies
    }

    fn observe_reply(&mut self, env: &MessageEnvelope, accepted: bool) {
        let msg_id = self
            .net
            .awaiting_open
            .get_mut(&ContentHash::of(env))
            .and_then(VecDeque::pop_front);
        if let Some(msg_id) = msg_id {
            let node = self.net.provider_names[self.provider].clone();
            self.net.push(TraceEvent::Receive {
                msg_id,
                node,
                accepted,
            });
        }
    }

    fn on_round_complete(&mut self, metrics: &RoundMetrics) {
        let provider = self.net.provider_names[self.provider].clone();
        self.net.push(TraceEvent::Round {
            provider,
            metrics: metrics.clone(),
        });
    }
}

fn source_items(
    src: &scenario::SourceDef,
    seed: u64,
    start_ms: u64,
) -> Result<Vec<serde_json::Value>, ScenarioError> {
    let mut items = src.items.clone();
    if let Some(path) = &src.file {
        for line in std::fs::read_to_string(path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
        {
            items.push(
                serde_json::from_str(line)
                    .map_err(|e| ScenarioError::Invalid(format!("{}: {e}", path.display())))?,
            );
        }
    }
    match &src.synthetic {
        None => {}
        Some(scenario::SyntheticDef::RandomComments { count, payload_len }) => items.extend(
            synth::random_comment_items(*count, *payload_len, start_ms, seed),
        ),
        Some(scenario::SyntheticDef::WordComments {
            count,
            words_per_item,
            vocab,
        }) => {
            let vocab: Vec<&str> = vocab.iter().map(String::as_str).collect();
            if vocab.is_empty() {
                return Err(ScenarioError::Invalid(format!(
                    "source `{}` has an empty vocabulary",
                    src.id
                )));
            }
            items.extend(synth::word_comment_items(
                *count,
                *words_per_item,
                &vocab,
                seed,
            ))
        }
        Some(scenario::SyntheticDef::LabeledTitles { count }) => {
            items.extend(synth::labeled_title_items(*count, seed))
        }
    }
    Ok(items)
}

fn build(s: &Scenario) -> Result<(Network, Vec<SpController>), ScenarioError> {
    let seed = s.sim.seed;
    let start = s.sim.start_ms;
    let invalid = |m: String| ScenarioError::Invalid(m);

    let mut providers = Vec::new();
    let mut public_bundles = Vec::new();
    for p in &s.providers {
        let identity = AgentIdentity::from_seed(&derived_seed(seed, "provider", &p.name));
        let mut sp = SpController::new(identity, derived_u64(seed, "requests", &p.name));
        for b in &p.bundles {
            let bundle = FunctionBundle::new(&b.id, &b.function.to_spec()?, sp.did().clone());
            sp.register_bundle(bundle.clone());
            public_bundles.push(bundle);
        }
        providers.push(sp);
    }

    let mut users = Vec::new();
    let mut user_sources = Vec::new();
    let mut grants = Vec::new();
    for (ui, u) in s.users.iter().enumerate() {
        let identity = AgentIdentity::from_seed(&derived_seed(seed, "user", &u.name));
        let enclave = EnclaveInstance::launch(&derived_seed(seed, "enclave", &u.name));
        let mut uc = UserController::new(identity, enclave);
        let mut sources = Vec::new();
        for src in &u.sources {
            let qualified = format!("{}/{}", u.name, src.id);
            uc.register_source(
                SourceSpec {
                    source_id: src.id.clone(),
                    schema_tag: src.schema.clone(),
                    plug_kind: PlugKind::FileDrop,
                    initial_policy: ComputationPolicy::new(
                        src.policy.functions.iter().cloned(),
                        src.policy.max_records,
                        src.policy.max_requests_per_day,
                    ),
                    signer_seed: Some(derived_seed(seed, "source", &qualified)),
                },
                &Credential("simulated".into()),
            )
            .map_err(|e| invalid(format!("user `{}`: {e}", u.name)))?;
            let items = source_items(src, derived_u64(seed, "data", &qualified), start)?;
            uc.ingest(&src.id, &items, Timestamp(start))
                .map_err(|e| invalid(format!("user `{}`: {e}", u.name)))?;
            sources.push((src.id.clone(), src.schema.clone()));
        }
        for g in &u.grants {
            let p = s
                .providers
                .iter()
                .position(|p| p.name == g.provider)
                .expect("validated");
            let sp = providers[p].did().clone();
            let expires_at = g.expires_in_ms.map(|ms| start + ms);
            uc.policy_mut().grant(
                sp.clone(),
                g.source.clone(),
                g.operation,
                Timestamp(start),
                expires_at.map(Timestamp),
            );
            grants.push(GroundGrant {
                user: ui,
                sp,
                source: g.source.clone(),
                op: g.operation,
                expires_at,
            });
        }
        for b in &public_bundles {
            uc.load_bundle(b)
                .map_err(|e| invalid(format!("user `{}`: {e}", u.name)))?;
        }
        users.push(uc);
        user_sources.push(sources);
    }

    // The rogue advertises a copy of a genuine endorsement it cannot sign for.
    let rogue_identity = AgentIdentity::from_seed(&derived_seed(seed, "rogue", ROGUE_NAME));
    let rogue_doc: DidDocument = rogue_identity
        .document_with_enclave(users.first().map(|u| u.enclave().endorsement().clone()));
    let mut rogue = Rogue {
        identity: rogue_identity,
        channels: BTreeMap::new(),
        injected: 0,
    };

    let mut nodes = BTreeMap::new();
    nodes.insert(rogue.identity.did().clone(), Node::Rogue);
    for (i, sp) in providers.iter().enumerate() {
        nodes.insert(sp.did().clone(), Node::Provider(i));
    }
    for (i, u) in users.iter().enumerate() {
        nodes.insert(u.did().clone(), Node::User(i));
    }

    let connect_err = |e: crate::channel::ChannelError| invalid(format!("connect: {e}"));
    let mut trace = EventTrace::new();
    let mut captures = Vec::new();
    let mut next_msg = 0;
    for (ui, uc) in users.iter_mut().enumerate() {
        let doc = uc.document();
        for (pi, sp) in providers.iter_mut().enumerate() {
            sp.connect(&doc).map_err(connect_err)?;
            uc.connect(&sp.document()).map_err(connect_err)?;
            next_msg += 1;
            let bytes = doc.to_canonical_bytes();
            trace.push(
                start,
                TraceEvent::Send {
                    msg_id: next_msg,
                    from: s.users[ui].name.clone(),
                    to: s.providers[pi].name.clone(),
                    kind: Some(MessageKind::DidDocument),
                    size: bytes.len(),
                },
            );
            trace.push(
                start,
                TraceEvent::Receive {
                    msg_id: next_msg,
                    node: s.providers[pi].name.clone(),
                    accepted: true,
                },
            );
            captures.push(CapturedFrame {
                from: s.users[ui].name.clone(),
                kind: MessageKind::DidDocument,
                wire_bytes: bytes.clone(),
                plaintext: bytes,
            });
        }
        uc.connect(&rogue_doc).map_err(connect_err)?;
        rogue.channels.insert(
            uc.did().clone(),
            SecureChannel::establish(&rogue.identity, &doc).map_err(connect_err)?,
        );
    }
    for sp in providers.iter_mut() {
        sp.connect(&rogue_doc).map_err(connect_err)?;
        rogue.channels.insert(
            sp.did().clone(),
            SecureChannel::establish(&rogue.identity, &sp.document()).map_err(connect_err)?,
        );
    }

    let net = Network {
        adversary: s.adversary.clone(),
        latency: s.sim.latency,
        drop_rate: s.sim.drop_rate,
        timeout_ms: s.sim.timeout_ms,
        users,
        user_names: s.users.iter().map(|u| u.name.clone()).collect(),
        user_sources,
        provider_names: s.providers.iter().map(|p| p.name.clone()).collect(),
        provider_dids: providers.iter().map(|p| p.did().clone()).collect(),
        public_bundles,
        rogue,
        nodes,
        clock: start,
        queue: BinaryHeap::new(),
        in_flight: BTreeMap::new(),
        link_last: BTreeMap::new(),
        net_rng: ChaCha8Rng::seed_from_u64(derived_u64(seed, "rng", "network")),
        adv_rng: ChaCha8Rng::seed_from_u64(derived_u64(seed, "rng", "adversary")),
        next_msg,
        next_seq: 0,
        trace,
        inbox: BTreeMap::new(),
        awaiting_open: BTreeMap::new(),
        injected: BTreeSet::new(),
        grants,
        captures,
    };
    Ok((net, providers))
}

fn compute_step(
    net: &mut Network,
    sp: &mut SpController,
    p: usize,
    step_idx: usize,
    user: usize,
    function: &str,
    selector: &DataSelector,
    results: &mut Vec<ComputeRecord>,
) -> Result<(), SpError> {
    let timeout = net.timeout_ms;
    let target = net.users[user].did().clone();
    let (re, env) = sp.issue(
        &target,
        OperationKind::Compute,
        function,
        Vec::new(),
        selector.clone(),
        Timestamp(net.clock),
    )?;
    let mut link = ProviderLink { net, provider: p };
    let replies = link.exchange(vec![env], timeout);
    let mut outcome = "Timeout".to_owned();
    for env in &replies {
        let opened = sp.open_reply(env);
        link.observe_reply(
            env,
            opened
                .as_ref()
                .err()
                .map_or(true, SpError::is_transport_accepted),
        );
        match opened {
            Ok(SpReply::Computed(v)) if v.request.request_id == re.request_id => {
                outcome = "Verified".into();
                results.push(ComputeRecord {
                    step: step_idx,
                    user: link.net.user_names[user].clone(),
                    output: v.output,
                });
            }
            Ok(SpReply::Denied { request_id, reason }) if request_id == re.request_id => {
                outcome = format!("Denied({reason})");
            }
            Err(SpError::AttestationInvalid { request_id }) if request_id == re.request_id => {
                outcome = "AttestationInvalid".into();
            }
            _ => {}
        }
    }
    sp.forget(&re.request_id);
    let net = link.net;
    net.push(TraceEvent::SpResult {
        provider: net.provider_names[p].clone(),
        user: net.user_names[user].clone(),
        request_id: re.request_id.to_hex(),
        outcome,
    });
    Ok(())
}

/// Runs a scenario to completion.
pub fn run_sim(s: &Scenario) -> Result<SimOutcome, ScenarioError> {
    s.validate()?;
    let (mut net, mut providers) = build(s)?;
    let provider_idx = |name: &str| {
        s.providers
            .iter()
            .position(|p| p.name == name)
            .expect("validated")
    };
    let user_idx = |name: &str| {
        s.users
            .iter()
            .position(|u| u.name == name)
            .expect("validated")
    };
    let mut results = Vec::new();
    let mut final_models = Vec::new();

    for (i, step) in s.steps.iter().enumerate() {
        match step {
            Step::Compute {
                provider,
                user,
                function,
                source,
                schema,
                max_records,
                repeat,
            } => {
                let p = provider_idx(provider);
                let u = user_idx(user);
                let selector = DataSelector::new(
                    source.clone(),
                    schema.clone(),
                    RecordLimit::Bounded(*max_records),
                );
                for _ in 0..*repeat {
                    if let Err(e) = compute_step(
                        &mut net,
                        &mut providers[p],
                        p,
                        i,
                        u,
                        function,
                        &selector,
                        &mut results,
                    ) {
                        net.push(TraceEvent::StepFailed {
                            step: i,
                            error: e.to_string(),
                        });
                        break;
                    }
                    net.clock += s.sim.request_gap_ms;
                }
            }
            Step::Train {
                provider,
                users,
                function,
                source,
                schema,
                rounds,
                epochs,
                learning_rate,
                min_participants,
                max_records,
                model_seed,
                include_rogue,
            } => {
                let p = provider_idx(provider);
                let sp = &mut providers[p];
                let mut eligible: BTreeSet<Did> = if users.is_empty() {
                    net.users.iter().map(|u| u.did().clone()).collect()
                } else {
                    users
                        .iter()
                        .map(|n| net.users[user_idx(n)].did().clone())
                        .collect()
                };
                if *include_rogue {
                    eligible.insert(net.rogue.identity.did().clone());
                }
                let layout = match sp
                    .bundle(function)
                    .and_then(|b| FunctionSpec::from_canonical_bytes(&b.code_spec).ok())
                {
                    Some(FunctionSpec::Train { layout }) => layout,
                    _ => {
                        net.push(TraceEvent::StepFailed {
                            step: i,
                            error: format!("`{function}` is not a training function"),
                        });
                        continue;
                    }
                };
                let config = RoundConfig {
                    eligible_agents: eligible,
                    min_participants: *min_participants as usize,
                    rounds_total: *rounds,
                    hyper: TrainHyper {
                        epochs: *epochs,
                        learning_rate: *learning_rate,
                        seed: *model_seed,
                    },
                    function_id: function.clone(),
                    expected_measurement: sp.expected_measurement(function).expect("bundle exists"),
                    selector: DataSelector::new(
                        source.clone(),
                        schema.clone(),
                        RecordLimit::Bounded(*max_records),
                    ),
                    timeout_ms: s.sim.timeout_ms,
                };
                let initial = GlobalModel::new(ModelParams::initial(layout, *model_seed));
                let mut link = ProviderLink {
                    net: &mut net,
                    provider: p,
                };
                match run_rounds(sp, &config, initial, &mut link) {
                    Ok(model) => final_models.push((i, model)),
                    Err(e) => net.push(TraceEvent::StepFailed {
                        step: i,
                        error: e.to_string(),
                    }),
                }
            }
            Step::Advance { ms } => net.clock += ms,
        }
    }

    Ok(SimOutcome {
        trace: net.trace,
        final_models,
        results,
        captures: net.captures,
        users: net.users,
        user_names: net.user_names,
        providers,
        rogue_did: net.rogue.identity.did().clone(),
    })
}
