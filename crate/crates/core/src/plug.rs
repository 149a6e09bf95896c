//! Data plugs: source registration and record ingestion.
//!
//! Each registered source gets its own signing key. Ingested items are
//! schema-checked, signed with that key and appended to the store, so every
//! stored record can later be traced back to the source that produced it.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io;
use std::path::Path;

use ed25519_dalek::{SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::access::{AccessPolicy, ComputationPolicy, PolicyError};
use crate::encoding::Encoder;
use crate::schema::{is_registered, RecordPayload};
use crate::store::{DataRecord, RecordId, RecordStore, StoreError};
use crate::types::{content_hash, Timestamp};

/// Default mock-API polling cadence.
pub const DEFAULT_POLL_INTERVAL_MS: u64 = 30_000;

const MOCK_TOKEN_PREFIX: &str = "mock-token:";

#[derive(Debug, Error)]
pub enum PlugError {
    #[error("source `{0}` is already registered")]
    DuplicateSource(String),
    #[error("credential rejected for source `{0}`")]
    BadCredential(String),
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("schema `{0}` is not registered")]
    UnknownSchema(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("reading plug input: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlugKind {
    /// Line-delimited JSON files dropped into a directory.
    FileDrop,
    /// An in-process fake service polled with a token.
    MockApi,
}

/// Opaque credential presented at registration.
#[derive(Clone, PartialEq, Eq)]
pub struct Credential(pub String);

impl std::fmt::Debug for Credential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Credential(..)")
    }
}

impl Credential {
    fn accepted_by(&self, kind: PlugKind) -> bool {
        match kind {
            PlugKind::FileDrop => !self.0.trim().is_empty(),
            PlugKind::MockApi => self
                .0
                .strip_prefix(MOCK_TOKEN_PREFIX)
                .is_some_and(|rest| !rest.is_empty()),
        }
    }

    /// Handle stored in the descriptor instead of the secret itself.
    fn reference(&self) -> String {
        format!("cred:{}", &content_hash(self.0.as_bytes()).to_hex()[..16])
    }
}

/// What the user supplies when adding a source.
#[derive(Clone, Debug)]
pub struct SourceSpec {
    pub source_id: String,
    pub schema_tag: String,
    pub plug_kind: PlugKind,
    pub initial_policy: ComputationPolicy,
    /// Seed for the simulated source's signing key; random when absent.
    pub signer_seed: Option<[u8; 32]>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataSourceDescriptor {
    pub source_id: String,
    pub schema_tag: String,
    pub source_signing_key: [u8; 32],
    pub plug_kind: PlugKind,
    pub credential_ref: String,
    pub initial_policy: ComputationPolicy,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Debug)]
struct RegisteredSource {
    descriptor: DataSourceDescriptor,
    signer: SigningKey,
    signer_seed: [u8; 32],
    next_seq: u64,
}

/// Persisted form of one registered source (includes the simulated
/// source's private seed, so it belongs in agent-private state only).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SourceState {
    pub source_id: String,
    pub schema_tag: String,
    pub plug_kind: PlugKind,
    pub credential_ref: String,
    pub signer_seed: String,
    pub initial_policy: ComputationPolicy,
}

/// The sources registered with one agent.
#[derive(Debug, Default)]
pub struct PlugRegistry {
    sources: BTreeMap<String, RegisteredSource>,
}

/// Anything that can resolve a source id to its verification key.
pub trait SourceKeyring {
    fn source_key(&self, source_id: &str) -> Option<VerifyingKey>;
}

impl SourceKeyring for PlugRegistry {
    fn source_key(&self, source_id: &str) -> Option<VerifyingKey> {
        self.sources
            .get(source_id)
            .map(|s| s.signer.verifying_key())
    }
}

impl SourceKeyring for BTreeMap<String, VerifyingKey> {
    fn source_key(&self, source_id: &str) -> Option<VerifyingKey> {
        self.get(source_id).copied()
    }
}

fn record_id_for(source_id: &str, seq: u64) -> RecordId {
    let mut enc = Encoder::new();
    enc.fixed(b"datagent/record-id/v1").str(source_id).u64(seq);
    let h = content_hash(enc.as_slice());
    let mut id = [0u8; 16];
    id.copy_from_slice(&h.0[..16]);
    RecordId(id)
}

impl PlugRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a source and installs its initial computation policy.
    pub fn register_source(
        &mut self,
        spec: SourceSpec,
        credential: &Credential,
        policy: &mut AccessPolicy,
    ) -> Result<&DataSourceDescriptor, PlugError> {
        if self.sources.contains_key(&spec.source_id) {
            return Err(PlugError::DuplicateSource(spec.source_id));
        }
        if !is_registered(&spec.schema_tag) {
            return Err(PlugError::UnknownSchema(spec.schema_tag));
        }
        if !credential.accepted_by(spec.plug_kind) {
            return Err(PlugError::BadCredential(spec.source_id));
        }
        policy.set_policy(spec.source_id.clone(), spec.initial_policy.clone())?;

        let seed = spec.signer_seed.unwrap_or_else(|| {
            let mut s = [0u8; 32];
            rand::RngCore::fill_bytes(&mut rand::rngs::OsRng, &mut s);
            s
        });
        let descriptor = DataSourceDescriptor {
            source_id: spec.source_id.clone(),
            schema_tag: spec.schema_tag,
            source_signing_key: SigningKey::from_bytes(&seed).verifying_key().to_bytes(),
            plug_kind: spec.plug_kind,
            credential_ref: credential.reference(),
            initial_policy: spec.initial_policy,
        };
        let entry = self
            .sources
            .entry(spec.source_id)
            .or_insert(RegisteredSource {
                descriptor,
                signer: SigningKey::from_bytes(&seed),
                signer_seed: seed,
                next_seq: 0,
            });
        Ok(&entry.descriptor)
    }

    pub fn list_sources(&self) -> impl Iterator<Item = &DataSourceDescriptor> {
        self.sources.values().map(|s| &s.descriptor)
    }

    pub fn descriptor(&self, source_id: &str) -> Option<&DataSourceDescriptor> {
        self.sources.get(source_id).map(|s| &s.descriptor)
    }

    /// Validates, signs and appends each item. Invalid items are counted
    /// and skipped.
    pub fn ingest(
        &mut self,
        store: &mut RecordStore,
        source_id: &str,
        raw_items: &[Value],
        now: Timestamp,
    ) -> Result<IngestReport, PlugError> {
        let src = self
            .sources
            .get_mut(source_id)
            .ok_or_else(|| PlugError::UnknownSource(source_id.to_owned()))?;
        if src.next_seq == 0 {
            src.next_seq = store.records_of(source_id).count() as u64;
        }
        let mut report = IngestReport::default();
        for item in raw_items {
            let Ok(payload) = RecordPayload::from_json(&src.descriptor.schema_tag, item) else {
                report.rejected += 1;
                continue;
            };
            let collected_at = match item.get("collected_at") {
                None => now,
                Some(v) => match v.as_u64() {
                    Some(ms) => Timestamp(ms),
                    None => {
                        report.rejected += 1;
                        continue;
                    }
                },
            };
            let record = DataRecord::new_signed(
                record_id_for(source_id, src.next_seq),
                source_id,
                &payload,
                collected_at,
                &src.signer,
            );
            debug_assert!(record.verify(&src.signer.verifying_key()));
            store.append(record)?;
            src.next_seq += 1;
            report.accepted += 1;
        }
        Ok(report)
    }

    /// FileDrop: one JSON object per line; blank lines are skipped and
    /// unparsable lines count as rejected.
    pub fn ingest_file(
        &mut self,
        store: &mut RecordStore,
        source_id: &str,
        path: impl AsRef<Path>,
        now: Timestamp,
    ) -> Result<IngestReport, PlugError> {
        let text = fs::read_to_string(path)?;
        let mut items = Vec::new();
        let mut unparsable = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<Value>(line) {
                Ok(v) => items.push(v),
                Err(_) => unparsable += 1,
            }
        }
        let mut report = self.ingest(store, source_id, &items, now)?;
        report.rejected += unparsable;
        Ok(report)
    }

    /// Pulls everything pending for `source_id` from a mock API.
    pub fn poll_mock(
        &mut self,
        store: &mut RecordStore,
        source_id: &str,
        api: &mut MockApiService,
        now: Timestamp,
    ) -> Result<IngestReport, PlugError> {
        let items = api.drain(source_id);
        self.ingest(store, source_id, &items, now)
    }

    pub fn export_state(&self) -> Vec<SourceState> {
        self.sources
            .values()
            .map(|s| SourceState {
                source_id: s.descriptor.source_id.clone(),
                schema_tag: s.descriptor.schema_tag.clone(),
                plug_kind: s.descriptor.plug_kind,
                credential_ref: s.descriptor.credential_ref.clone(),
                signer_seed: hex::encode(s.signer_seed),
                initial_policy: s.descriptor.initial_policy.clone(),
            })
            .collect()
    }

    /// Restores a registry saved with [`PlugRegistry::export_state`].
    pub fn import_state(states: Vec<SourceState>) -> Result<Self, PlugError> {
        let mut reg = Self::new();
        for st in states {
            let seed: [u8; 32] = hex::decode(&st.signer_seed)
                .ok()
                .and_then(|b| b.try_into().ok())
                .ok_or_else(|| PlugError::BadCredential(st.source_id.clone()))?;
            let signer = SigningKey::from_bytes(&seed);
            let descriptor = DataSourceDescriptor {
                source_id: st.source_id.clone(),
                schema_tag: st.schema_tag,
                source_signing_key: signer.verifying_key().to_bytes(),
                plug_kind: st.plug_kind,
                credential_ref: st.credential_ref,
                initial_policy: st.initial_policy,
            };
            reg.sources.insert(
                st.source_id,
                RegisteredSource {
                    descriptor,
                    signer,
                    signer_seed: seed,
                    next_seq: 0,
                },
            );
        }
        Ok(reg)
    }
}

/// Checks the chain of possession for one source.
pub fn verify_chain(store: &RecordStore, registry: &impl SourceKeyring, source_id: &str) -> bool {
    match registry.source_key(source_id) {
        Some(key) => store.verify_chain(source_id, &key),
        None => store.records_of(source_id).next().is_none(),
    }
}

/// Fake third-party API holding queued items per source.
#[derive(Debug, Default)]
pub struct MockApiService {
    pending: BTreeMap<String, VecDeque<Value>>,
}

impl MockApiService {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&mut self, source_id: &str, item: Value) {
        self.pending
            .entry(source_id.to_owned())
            .or_default()
            .push_back(item);
    }

    fn drain(&mut self, source_id: &str) -> Vec<Value> {
        self.pending
            .get_mut(source_id)
            .map(|q| q.drain(..).collect())
            .unwrap_or_default()
    }
}
