//! The user's access-control settings and the request decision procedure.
//!
//! A request is permitted only when all of the following hold:
//!
//! 1. its signature verifies under the requester's key (authentication),
//! 2. an unexpired grant exists for `(requester, source, operation)`,
//! 3. the source's computation policy admits the function, the record
//!    bound and today's request count.
//!
//! Anything else is denied; an empty policy denies everything.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::types::{ComputationRequest, Did, OperationKind, Timestamp};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("no grant for ({sp}, {source_id}, {op})")]
    NoSuchGrant {
        sp: Did,
        source_id: String,
        op: OperationKind,
    },
    #[error("invalid policy: {0}")]
    Invalid(String),
    #[error("policy file: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grant {
    pub sp_did: Did,
    pub source_id: String,
    pub operation: OperationKind,
    pub granted_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expires_at: Option<Timestamp>,
}

impl Grant {
    pub fn is_active(&self, now: Timestamp) -> bool {
        self.expires_at.map_or(true, |exp| now < exp)
    }

    fn key(&self) -> GrantKey {
        (self.sp_did.clone(), self.source_id.clone(), self.operation)
    }
}

type GrantKey = (Did, String, OperationKind);

/// Constraints every request against one data source must satisfy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputationPolicy {
    pub allowed_function_ids: BTreeSet<String>,
    pub max_records: u32,
    pub max_requests_per_day: u32,
    #[serde(default = "default_true")]
    pub require_enclave: bool,
}

fn default_true() -> bool {
    true
}

impl ComputationPolicy {
    pub fn new<I, S>(functions: I, max_records: u32, max_requests_per_day: u32) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            allowed_function_ids: functions.into_iter().map(Into::into).collect(),
            max_records,
            max_requests_per_day,
            require_enclave: true,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.allowed_function_ids.is_empty() {
            return Err(PolicyError::Invalid("allowed_function_ids is empty".into()));
        }
        if self.max_records == 0 || self.max_requests_per_day == 0 {
            return Err(PolicyError::Invalid("numeric limits must be >= 1".into()));
        }
        if !self.require_enclave {
            return Err(PolicyError::Invalid("require_enclave must be true".into()));
        }
        Ok(())
    }
}

impl Canonical for ComputationPolicy {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.value(&self.allowed_function_ids)
            .u32(self.max_records)
            .u32(self.max_requests_per_day)
            .bool(self.require_enclave);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            allowed_function_ids: dec.value()?,
            max_records: dec.u32()?,
            max_requests_per_day: dec.u32()?,
            require_enclave: dec.bool()?,
        })
    }
}

/// Why a request was refused. Only this reason ever leaves the agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DenyReason {
    NoGrant,
    PolicyViolation,
    BadSignature,
    RateLimited,
    Expired,
    /// Duplicate request id.
    Replay,
    /// `issued_at` outside the freshness window.
    Stale,
    /// Permitted, but the enclave could not produce a result.
    ExecutionFailed,
}

impl DenyReason {
    fn tag(self) -> u8 {
        match self {
            Self::NoGrant => 0,
            Self::PolicyViolation => 1,
            Self::BadSignature => 2,
            Self::RateLimited => 3,
            Self::Expired => 4,
            Self::Replay => 5,
            Self::Stale => 6,
            Self::ExecutionFailed => 7,
        }
    }
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Canonical for DenyReason {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.u8(self.tag());
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => Self::NoGrant,
            1 => Self::PolicyViolation,
            2 => Self::BadSignature,
            3 => Self::RateLimited,
            4 => Self::Expired,
            5 => Self::Replay,
            6 => Self::Stale,
            7 => Self::ExecutionFailed,
            tag => {
                return Err(DecodeError::InvalidTag {
                    what: "deny reason",
                    tag,
                })
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Permit,
    Deny(DenyReason),
}

impl Decision {
    pub fn is_permit(self) -> bool {
        self == Self::Permit
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Permit => f.write_str("Permit"),
            Self::Deny(r) => write!(f, "Deny({r})"),
        }
    }
}

impl Canonical for Decision {
    fn encode_into(&self, enc: &mut Encoder) {
        match self {
            Self::Permit => {
                enc.u8(0);
            }
            Self::Deny(r) => {
                enc.u8(1).value(r);
            }
        }
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(Self::Permit),
            1 => Ok(Self::Deny(dec.value()?)),
            tag => Err(DecodeError::InvalidTag {
                what: "decision",
                tag,
            }),
        }
    }
}

/// Permitted-request counts per `(sp, source, UTC day)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RequestHistory {
    counts: BTreeMap<(Did, String, u64), u32>,
}

impl RequestHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, sp: &Did, source_id: &str, now: Timestamp) -> u32 {
        self.counts
            .get(&(sp.clone(), source_id.to_owned(), now.day()))
            .copied()
            .unwrap_or(0)
    }

    pub fn record(&mut self, sp: &Did, source_id: &str, now: Timestamp) {
        *self
            .counts
            .entry((sp.clone(), source_id.to_owned(), now.day()))
            .or_insert(0) += 1;
    }

    /// `(sp, source, UTC day, count)` for every counter.
    pub fn entries(&self) -> impl Iterator<Item = (&Did, &str, u64, u32)> {
        self.counts
            .iter()
            .map(|((sp, src, day), n)| (sp, src.as_str(), *day, *n))
    }

    pub fn set(&mut self, sp: Did, source_id: impl Into<String>, day: u64, count: u32) {
        self.counts.insert((sp, source_id.into(), day), count);
    }

    /// Drops counters for days before `now`'s day.
    pub fn prune(&mut self, now: Timestamp) {
        let today = now.day();
        self.counts.retain(|(_, _, day), _| *day >= today);
    }
}

/// `Valid(RE, CP)`: the computation-policy half of the decision.
pub fn valid_request(
    re: &ComputationRequest,
    cp: &ComputationPolicy,
    history: &RequestHistory,
    now: Timestamp,
) -> bool {
    re.operation != OperationKind::Share
        && cp.allowed_function_ids.contains(&re.function_id)
        && re.selector.max_records.within(cp.max_records)
        && history.count(&re.requester_did, &re.selector.source_id, now) < cp.max_requests_per_day
}

/// The user's access-control settings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessPolicy {
    owner_did: Did,
    grants: BTreeMap<GrantKey, Grant>,
    policies: BTreeMap<String, ComputationPolicy>,
    revision: u64,
}

impl AccessPolicy {
    pub fn new(owner_did: Did) -> Self {
        Self {
            owner_did,
            grants: BTreeMap::new(),
            policies: BTreeMap::new(),
            revision: 0,
        }
    }

    pub fn owner_did(&self) -> &Did {
        &self.owner_did
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn grants(&self) -> impl Iterator<Item = &Grant> {
        self.grants.values()
    }

    pub fn policies(&self) -> &BTreeMap<String, ComputationPolicy> {
        &self.policies
    }

    pub fn policy_for(&self, source_id: &str) -> Option<&ComputationPolicy> {
        self.policies.get(source_id)
    }

    /// Grants `op` on `source_id` to `sp` until `expires_at`.
    ///
    /// Re-granting an existing triple replaces its expiry. A grant whose
    /// expiry is not after `now` is born expired, so it removes any existing
    /// grant for the triple instead of storing an ill-formed one.
    pub fn grant(
        &mut self,
        sp_did: Did,
        source_id: impl Into<String>,
        op: OperationKind,
        now: Timestamp,
        expires_at: Option<Timestamp>,
    ) {
        let g = Grant {
            sp_did,
            source_id: source_id.into(),
            operation: op,
            granted_at: now,
            expires_at,
        };
        if expires_at.is_some_and(|exp| exp <= now) {
            self.grants.remove(&g.key());
        } else {
            self.grants.insert(g.key(), g);
        }
        self.revision += 1;
    }

    pub fn revoke(
        &mut self,
        sp_did: &Did,
        source_id: &str,
        op: OperationKind,
    ) -> Result<Grant, PolicyError> {
        let removed = self
            .grants
            .remove(&(sp_did.clone(), source_id.to_owned(), op))
            .ok_or_else(|| PolicyError::NoSuchGrant {
                sp: sp_did.clone(),
                source_id: source_id.to_owned(),
                op,
            })?;
        self.revision += 1;
        Ok(removed)
    }

    pub fn set_policy(
        &mut self,
        source_id: impl Into<String>,
        cp: ComputationPolicy,
    ) -> Result<(), PolicyError> {
        cp.validate()?;
        self.policies.insert(source_id.into(), cp);
        self.revision += 1;
        Ok(())
    }

    /// `Perm(DS) = (SP, OP) -> 1`.
    pub fn perm(&self, source_id: &str, sp_did: &Did, op: OperationKind, now: Timestamp) -> bool {
        op != OperationKind::Share
            && self
                .grants
                .get(&(sp_did.clone(), source_id.to_owned(), op))
                .is_some_and(|g| g.is_active(now))
    }

    /// `Allow(RE) = Valid(AC) ∧ Valid(RE, CP)`.
    ///
    /// `requester_key` is the verified signing key registered for
    /// `re.requester_did`, or `None` if the requester is unknown.
    pub fn allow(
        &self,
        re: &ComputationRequest,
        requester_key: Option<&VerifyingKey>,
        now: Timestamp,
        history: &RequestHistory,
    ) -> Decision {
        if !requester_key.is_some_and(|k| re.verify(k)) {
            return Decision::Deny(DenyReason::BadSignature);
        }
        if re.operation == OperationKind::Share {
            return Decision::Deny(DenyReason::PolicyViolation);
        }
        let source = &re.selector.source_id;
        match self
            .grants
            .get(&(re.requester_did.clone(), source.clone(), re.operation))
        {
            None => return Decision::Deny(DenyReason::NoGrant),
            Some(g) if !g.is_active(now) => return Decision::Deny(DenyReason::Expired),
            Some(_) => {}
        }
        let Some(cp) = self.policies.get(source) else {
            return Decision::Deny(DenyReason::PolicyViolation);
        };
        if !cp.allowed_function_ids.contains(&re.function_id)
            || !re.selector.max_records.within(cp.max_records)
        {
            return Decision::Deny(DenyReason::PolicyViolation);
        }
        if !valid_request(re, cp, history, now) {
            return Decision::Deny(DenyReason::RateLimited);
        }
        Decision::Permit
    }

    pub fn to_toml(&self) -> String {
        let file = PolicyFile {
            owner: self.owner_did.clone(),
            revision: self.revision,
            grant: self.grants.values().cloned().collect(),
            policy: self.policies.clone(),
        };
        toml::to_string_pretty(&file).expect("policy file serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, PolicyError> {
        let file: PolicyFile = toml::from_str(text)?;
        let mut grants = BTreeMap::new();
        for g in file.grant {
            if g.expires_at.is_some_and(|exp| exp <= g.granted_at) {
                return Err(PolicyError::Invalid(format!(
                    "grant ({}, {}, {}) expires before it was granted",
                    g.sp_did, g.source_id, g.operation
                )));
            }
            if grants.insert(g.key(), g.clone()).is_some() {
                return Err(PolicyError::Invalid(format!(
                    "duplicate grant ({}, {}, {})",
                    g.sp_did, g.source_id, g.operation
                )));
            }
        }
        for cp in file.policy.values() {
            cp.validate()?;
        }
        Ok(Self {
            owner_did: file.owner,
            grants,
            policies: file.policy,
            revision: file.revision,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    owner: Did,
    #[serde(default)]
    revision: u64,
    #[serde(default)]
    grant: Vec<Grant>,
    #[serde(default)]
    policy: BTreeMap<String, ComputationPolicy>,
}
