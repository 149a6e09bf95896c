//! User-controlled data agents.
//!
//! Personal records are ingested through data plugs and signed by their
//! source. Service providers send signed computation requests over an
//! authenticated, encrypted channel; the user's controller checks them
//! against the access policy, runs permitted functions inside a simulated
//! attesting enclave and replies with the result plus an attestation. Model
//! training follows the same path, with the provider's aggregator accepting
//! only attestation-verified updates.

pub mod access;
pub mod agents;
pub mod analytics;
pub mod bench;
pub mod channel;
pub mod enclave;
pub mod encoding;
pub mod federated;
pub mod identity;
pub mod plug;
pub mod schema;
pub mod simnet;
pub mod store;
pub mod synth;
pub mod types;

pub use access::{AccessPolicy, ComputationPolicy, Decision, DenyReason, Grant, RequestHistory};
pub use channel::{ChannelError, MessageEnvelope, SecureChannel};
pub use enclave::{vrf, Attestation, EnclaveInstance, FunctionBundle, Measurement};
pub use encoding::{Canonical, DecodeError};
pub use identity::{AgentIdentity, DidDocument};
pub use store::{DataRecord, RecordStore};
pub use types::{
    content_hash, ComputationRequest, ComputeResult, ContentHash, DataSelector, Did, OperationKind,
    RecordLimit, RequestId, Timestamp,
};
