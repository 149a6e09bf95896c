//! The service provider's model aggregator.
//!
//! Each round the aggregator sends one signed `Train` request per eligible
//! agent, collects the returned [`ModelUpdate`]s, drops every update that
//! fails attestation verification (or is stale, misrouted or malformed),
//! and averages the survivors weighted by sample count (FedAvg).

use std::collections::{BTreeMap, BTreeSet};

use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{SpController, SpReply, Transport};
use crate::analytics::{ModelParams, TrainHyper, TrainOutcome, TrainParams};
use crate::enclave::{vrf, Attestation, Measurement};
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::types::{
    ComputationRequest, ComputeResult, ContentHash, DataSelector, Did, OperationKind, RequestId,
};

/// Simulated collection timeout per round.
pub const DEFAULT_ROUND_TIMEOUT_MS: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FederatedError {
    #[error("{survivors} valid updates, need {required}")]
    NoValidUpdates { survivors: usize, required: usize },
    #[error("round {round}: {survivors} valid updates, need {required}")]
    InsufficientParticipants {
        round: u64,
        survivors: usize,
        required: usize,
    },
    #[error("invalid round config: {0}")]
    InvalidConfig(String),
    #[error("function `{0}` is not a registered training bundle")]
    NotATrainingFunction(String),
}

/// One agent's attested contribution to a round.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelUpdate {
    pub round: u64,
    pub agent_did: Did,
    pub result: ComputeResult,
    pub attestation: Attestation,
}

impl ModelUpdate {
    pub fn outcome(&self) -> Result<TrainOutcome, DecodeError> {
        match crate::analytics::FunctionOutput::from_canonical_bytes(&self.result.payload)? {
            crate::analytics::FunctionOutput::Trained(t) => Ok(t),
            _ => Err(DecodeError::Invalid(
                "payload is not a training outcome".into(),
            )),
        }
    }
}

impl Canonical for ModelUpdate {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.u64(self.round)
            .value(&self.agent_did)
            .value(&self.result)
            .value(&self.attestation);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            round: dec.u64()?,
            agent_did: dec.value()?,
            result: dec.value()?,
            attestation: dec.value()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RejectReason {
    RoundMismatch,
    UnknownRequest,
    AgentMismatch,
    Duplicate,
    UntrustedEnclave,
    AttestationInvalid,
    MalformedPayload,
    LayoutMismatch,
    NoSamples,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u64,
    pub participants: usize,
    pub rejected: usize,
    pub mean_loss: f64,
    pub accepted_agents: Vec<Did>,
    pub rejected_agents: Vec<(Did, RejectReason)>,
    pub params_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalModel {
    pub params: ModelParams,
    pub round: u64,
    pub history: Vec<RoundMetrics>,
}

impl GlobalModel {
    pub fn new(params: ModelParams) -> Self {
        Self {
            params,
            round: 0,
            history: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RoundConfig {
    pub eligible_agents: BTreeSet<Did>,
    pub min_participants: usize,
    pub rounds_total: u64,
    pub hyper: TrainHyper,
    pub function_id: String,
    pub expected_measurement: Measurement,
    pub selector: DataSelector,
    pub timeout_ms: u64,
}

impl RoundConfig {
    pub fn validate(&self) -> Result<(), FederatedError> {
        if self.min_participants == 0 {
            return Err(FederatedError::InvalidConfig(
                "min_participants must be >= 1".into(),
            ));
        }
        if self.min_participants > self.eligible_agents.len() {
            return Err(FederatedError::InvalidConfig(format!(
                "min_participants {} exceeds {} eligible agents",
                self.min_participants,
                self.eligible_agents.len()
            )));
        }
        Ok(())
    }
}

/// Everything `aggregate` checks updates against.
pub struct AggregationContext<'a> {
    pub round: u64,
    pub expected_measurement: Measurement,
    /// Requests sent this round, keyed by id, with their target agent.
    pub requests: &'a BTreeMap<RequestId, (Did, ComputationRequest)>,
    /// Endorsed enclave attestation keys of the agents.
    pub enclave_keys: &'a BTreeMap<Did, VerifyingKey>,
    pub template: &'a ModelParams,
    pub min_participants: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregated {
    pub params: ModelParams,
    pub accepted: Vec<(Did, TrainOutcome)>,
    pub rejected: Vec<(Did, RejectReason)>,
}

impl Aggregated {
    pub fn mean_loss(&self) -> f64 {
        let n: u64 = self.accepted.iter().map(|(_, o)| o.n_samples).sum();
        if n == 0 {
            return 0.0;
        }
        self.accepted
            .iter()
            .map(|(_, o)| o.loss_final * o.n_samples as f64)
            .sum::<f64>()
            / n as f64
    }
}

fn check_update(
    u: &ModelUpdate,
    ctx: &AggregationContext<'_>,
    seen: &BTreeSet<RequestId>,
) -> Result<TrainOutcome, RejectReason> {
    if u.round != ctx.round {
        return Err(RejectReason::RoundMismatch);
    }
    let (target, request) = ctx
        .requests
        .get(&u.result.request_id)
        .ok_or(RejectReason::UnknownRequest)?;
    if *target != u.agent_did {
        return Err(RejectReason::AgentMismatch);
    }
    if seen.contains(&u.result.request_id) {
        return Err(RejectReason::Duplicate);
    }
    let key = ctx
        .enclave_keys
        .get(&u.agent_did)
        .ok_or(RejectReason::UntrustedEnclave)?;
    if !vrf(
        key,
        &ctx.expected_measurement,
        request,
        &u.result,
        &u.attestation,
    ) {
        return Err(RejectReason::AttestationInvalid);
    }
    let outcome = u.outcome().map_err(|_| RejectReason::MalformedPayload)?;
    if outcome.model_out.layout != ctx.template.layout || outcome.model_out.validate().is_err() {
        return Err(RejectReason::LayoutMismatch);
    }
    if outcome.n_samples == 0 {
        return Err(RejectReason::NoSamples);
    }
    Ok(outcome)
}

/// `Build`: attestation-gated, sample-weighted mean of the updates.
///
/// Survivors are folded in ascending DID order so the result does not
/// depend on arrival order.
pub fn aggregate(
    updates: &[ModelUpdate],
    ctx: &AggregationContext<'_>,
) -> Result<Aggregated, FederatedError> {
    let mut seen = BTreeSet::new();
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for u in updates {
        match check_update(u, ctx, &seen) {
            Ok(o) => {
                seen.insert(u.result.request_id);
                accepted.push((u.agent_did.clone(), o));
            }
            Err(reason) => rejected.push((u.agent_did.clone(), reason)),
        }
    }
    if accepted.len() < ctx.min_participants || accepted.is_empty() {
        return Err(FederatedError::NoValidUpdates {
            survivors: accepted.len(),
            required: ctx.min_participants.max(1),
        });
    }
    accepted.sort_by(|a, b| a.0.cmp(&b.0));

    let total: f64 = accepted.iter().map(|(_, o)| o.n_samples as f64).sum();
    let mut weights = vec![0.0; ctx.template.weights.len()];
    for (_, o) in &accepted {
        let n = o.n_samples as f64;
        for (acc, w) in weights.iter_mut().zip(&o.model_out.weights) {
            *acc += n * w;
        }
    }
    for w in &mut weights {
        *w /= total;
    }
    Ok(Aggregated {
        params: ModelParams {
            layout: ctx.template.layout,
            weights,
        },
        accepted,
        rejected,
    })
}

/// Training request parameters for `round` starting from `current`.
pub fn train_params(round: u64, current: &ModelParams, hyper: &TrainHyper) -> Vec<u8> {
    TrainParams {
        round,
        model: current.clone(),
        hyper: *hyper,
    }
    .to_canonical_bytes()
}

pub fn params_hash(params: &ModelParams) -> ContentHash {
    ContentHash::of(params)
}

/// Runs `config.rounds_total` rounds of distribute, collect and aggregate.
///
/// Agents that are not connected, time out or send rejected updates simply
/// do not contribute. A round with fewer than `min_participants` accepted
/// updates aborts the run.
pub fn run_rounds(
    sp: &mut SpController,
    config: &RoundConfig,
    initial: GlobalModel,
    transport: &mut dyn Transport,
) -> Result<GlobalModel, FederatedError> {
    config.validate()?;
    if sp.expected_measurement(&config.function_id).is_none() {
        return Err(FederatedError::NotATrainingFunction(
            config.function_id.clone(),
        ));
    }
    let mut model = initial;
    for _ in 0..config.rounds_total {
        let round = model.round + 1;
        let params = train_params(round, &model.params, &config.hyper);
        let now = transport.now();

        let mut requests = BTreeMap::new();
        let mut outbound = Vec::new();
        for agent in &config.eligible_agents {
            if let Ok((re, env)) = sp.issue(
                agent,
                OperationKind::Train,
                &config.function_id,
                params.clone(),
                config.selector.clone(),
                now,
            ) {
                requests.insert(re.request_id, (agent.clone(), re));
                outbound.push(env);
            }
        }

        let mut updates: Vec<ModelUpdate> = Vec::new();
        for env in transport.exchange(outbound, config.timeout_ms) {
            let opened = sp.open_reply(&env);
            transport.observe_reply(
                &env,
                opened
                    .as_ref()
                    .err()
                    .map_or(true, |e| e.is_transport_accepted()),
            );
            if let Ok(SpReply::Update(u)) = opened {
                updates.push(u);
            }
        }
        for id in requests.keys() {
            sp.forget(id);
        }

        let keys = sp.enclave_keys();
        let ctx = AggregationContext {
            round,
            expected_measurement: config.expected_measurement,
            requests: &requests,
            enclave_keys: &keys,
            template: &model.params,
            min_participants: config.min_participants,
        };
        let agg = aggregate(&updates, &ctx).map_err(|e| match e {
            FederatedError::NoValidUpdates {
                survivors,
                required,
            } => FederatedError::InsufficientParticipants {
                round,
                survivors,
                required,
            },
            other => other,
        })?;
        let metrics = RoundMetrics {
            round,
            participants: agg.accepted.len(),
            rejected: agg.rejected.len(),
            mean_loss: agg.mean_loss(),
            accepted_agents: agg.accepted.iter().map(|a| a.0.clone()).collect(),
            rejected_agents: agg.rejected.clone(),
            params_hash: params_hash(&agg.params).to_hex(),
        };
        transport.on_round_complete(&metrics);
        model.params = agg.params;
        model.round = round;
        model.history.push(metrics);
    }
    Ok(model)
}
