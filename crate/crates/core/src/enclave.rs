//! In-process stand-in for an attesting trusted execution environment.
//!
//! An [`EnclaveInstance`] holds a per-instance attestation key, endorsed by
//! a simulated hardware vendor root. Loaded bundles are measured
//! (`sha256(bundle ‖ version tag)`) and sealed: no method hands their
//! `code_spec` back out. Every execution emits an [`Attestation`] binding
//! the measurement, the request hash and the result hash under the
//! attestation key; [`vrf`] is the matching verifier.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use thiserror::Error;

use crate::analytics::{EvalError, FunctionSpec};
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::plug::SourceKeyring;
use crate::schema::RecordPayload;
use crate::store::DataRecord;
use crate::types::{
    content_hash, verify_signature, ComputationRequest, ComputeResult, ContentHash, Did,
    SignatureBytes,
};

pub const ENCLAVE_VERSION: &str = "datagent-enclave-sim/1";

const ATTESTATION_CONTEXT: &[u8] = b"datagent/attestation/v1";
const ENDORSEMENT_CONTEXT: &[u8] = b"datagent/enclave-endorsement/v1";
const VENDOR_ROOT_SEED: &[u8] = b"datagent simulated tee vendor root v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnclaveError {
    #[error("code_spec does not decode to a known function family: {0}")]
    UnknownFunctionFamily(String),
    #[error("function `{0}` is already loaded")]
    DuplicateFunction(String),
    #[error("bundle declares output schema `{declared}`, family emits `{actual}`")]
    OutputSchemaMismatch {
        declared: String,
        actual: &'static str,
    },
    #[error("function `{0}` is not loaded")]
    FunctionNotLoaded(String),
    #[error("input record failed source-signature verification")]
    InputSignatureInvalid,
    #[error("input record does not match the request selector")]
    InputMismatch,
    #[error("evaluation failed: {0}")]
    Evaluation(#[from] EvalError),
}

/// A service provider's function, shipped to user enclaves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FunctionBundle {
    pub function_id: String,
    pub code_spec: Vec<u8>,
    pub output_schema: String,
    pub provided_by: Did,
}

impl FunctionBundle {
    pub fn new(function_id: impl Into<String>, spec: &FunctionSpec, provided_by: Did) -> Self {
        Self {
            function_id: function_id.into(),
            code_spec: spec.to_canonical_bytes(),
            output_schema: spec.output_schema().to_owned(),
            provided_by,
        }
    }

    /// Measurement this bundle gets on an enclave running `version`.
    pub fn measure(&self, version: &str) -> Measurement {
        let mut enc = Encoder::new();
        enc.value(self).str(version);
        Measurement(content_hash(enc.as_slice()))
    }
}

impl Canonical for FunctionBundle {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.str(&self.function_id)
            .bytes(&self.code_spec)
            .str(&self.output_schema)
            .value(&self.provided_by);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            function_id: dec.string()?,
            code_spec: dec.bytes()?,
            output_schema: dec.string()?,
            provided_by: dec.value()?,
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Measurement(pub ContentHash);

impl fmt::Debug for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Measurement({})", self.0.to_hex())
    }
}

impl fmt::Display for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_hex())
    }
}

impl Canonical for Measurement {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.value(&self.0);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self(dec.value()?))
    }
}

/// σ: the enclave's signed statement about one execution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attestation {
    pub measurement: Measurement,
    pub request_hash: ContentHash,
    pub result_hash: ContentHash,
    pub nonce: [u8; 16],
    pub enclave_signature: SignatureBytes,
}

impl Attestation {
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.fixed(ATTESTATION_CONTEXT);
        self.encode_unsigned(&mut enc);
        enc.into_bytes()
    }

    fn encode_unsigned(&self, enc: &mut Encoder) {
        enc.value(&self.measurement)
            .value(&self.request_hash)
            .value(&self.result_hash)
            .fixed(&self.nonce);
    }

    /// Re-signs the attestation with an arbitrary key (used by adversaries
    /// and tests to produce forgeries).
    pub fn resign(&mut self, key: &SigningKey) {
        self.enclave_signature = key.sign(&self.signing_bytes()).to_bytes();
    }
}

impl Canonical for Attestation {
    fn encode_into(&self, enc: &mut Encoder) {
        self.encode_unsigned(enc);
        enc.fixed(&self.enclave_signature);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            measurement: dec.value()?,
            request_hash: dec.value()?,
            result_hash: dec.value()?,
            nonce: dec.array("nonce")?,
            enclave_signature: dec.array("signature")?,
        })
    }
}

/// `Vrf`: accepts iff σ is signed by `verifier_key`, names the expected
/// measurement, and binds exactly this request and this result.
pub fn vrf(
    verifier_key: &VerifyingKey,
    measurement_expected: &Measurement,
    re: &ComputationRequest,
    result: &ComputeResult,
    att: &Attestation,
) -> bool {
    verify_signature(verifier_key, &att.signing_bytes(), &att.enclave_signature)
        && att.measurement == *measurement_expected
        && att.request_hash == re.hash()
        && att.result_hash == result.hash()
        && result.request_id == re.request_id
}

/// Vendor certificate over an enclave attestation key, published in the
/// hosting agent's DID document.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnclaveEndorsement {
    pub attestation_public_key: [u8; 32],
    pub vendor_signature: SignatureBytes,
}

impl EnclaveEndorsement {
    fn signing_bytes(attestation_public_key: &[u8; 32]) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.fixed(ENDORSEMENT_CONTEXT).fixed(attestation_public_key);
        enc.into_bytes()
    }

    /// The attestation key, if the endorsement verifies under `vendor`.
    pub fn verify(&self, vendor: &VerifyingKey) -> Option<VerifyingKey> {
        let msg = Self::signing_bytes(&self.attestation_public_key);
        if !verify_signature(vendor, &msg, &self.vendor_signature) {
            return None;
        }
        VerifyingKey::from_bytes(&self.attestation_public_key).ok()
    }
}

impl Canonical for EnclaveEndorsement {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.fixed(&self.attestation_public_key)
            .fixed(&self.vendor_signature);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            attestation_public_key: dec.array("attestation key")?,
            vendor_signature: dec.array("signature")?,
        })
    }
}

/// The simulated hardware vendor whose root key certifies genuine enclaves.
pub struct SimulatedVendor {
    root: SigningKey,
}

impl SimulatedVendor {
    pub fn root() -> Self {
        Self {
            root: SigningKey::from_bytes(&content_hash(VENDOR_ROOT_SEED).0),
        }
    }

    pub fn public_key(&self) -> VerifyingKey {
        self.root.verifying_key()
    }

    fn endorse(&self, attestation_key: &VerifyingKey) -> EnclaveEndorsement {
        let pk = attestation_key.to_bytes();
        EnclaveEndorsement {
            attestation_public_key: pk,
            vendor_signature: self
                .root
                .sign(&EnclaveEndorsement::signing_bytes(&pk))
                .to_bytes(),
        }
    }
}

/// Public key of the simulated vendor root.
pub fn vendor_root_key() -> VerifyingKey {
    SimulatedVendor::root().public_key()
}

struct LoadedFunction {
    spec: FunctionSpec,
    measurement: Measurement,
}

pub struct EnclaveInstance {
    attestation_key: SigningKey,
    endorsement: EnclaveEndorsement,
    version: String,
    loaded: BTreeMap<String, LoadedFunction>,
    nonce_counter: AtomicU64,
}

impl fmt::Debug for EnclaveInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnclaveInstance")
            .field("version", &self.version)
            .field("functions", &self.loaded.keys().collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

impl EnclaveInstance {
    /// A genuine enclave: its attestation key is endorsed by the vendor root.
    pub fn launch(seed: &[u8; 32]) -> Self {
        Self::launch_version(seed, ENCLAVE_VERSION)
    }

    pub fn launch_version(seed: &[u8; 32], version: &str) -> Self {
        let mut buf = b"datagent/enclave/attestation-key".to_vec();
        buf.extend_from_slice(seed);
        let attestation_key = SigningKey::from_bytes(&content_hash(&buf).0);
        let endorsement = SimulatedVendor::root().endorse(&attestation_key.verifying_key());
        Self {
            attestation_key,
            endorsement,
            version: version.to_owned(),
            loaded: BTreeMap::new(),
            nonce_counter: AtomicU64::new(0),
        }
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn attestation_public_key(&self) -> VerifyingKey {
        self.attestation_key.verifying_key()
    }

    pub fn endorsement(&self) -> &EnclaveEndorsement {
        &self.endorsement
    }

    pub fn load_bundle(&mut self, bundle: &FunctionBundle) -> Result<Measurement, EnclaveError> {
        if self.loaded.contains_key(&bundle.function_id) {
            return Err(EnclaveError::DuplicateFunction(bundle.function_id.clone()));
        }
        let spec = FunctionSpec::from_canonical_bytes(&bundle.code_spec)
            .map_err(|e| EnclaveError::UnknownFunctionFamily(e.to_string()))?;
        if spec.output_schema() != bundle.output_schema {
            return Err(EnclaveError::OutputSchemaMismatch {
                declared: bundle.output_schema.clone(),
                actual: spec.output_schema(),
            });
        }
        let measurement = bundle.measure(&self.version);
        self.loaded.insert(
            bundle.function_id.clone(),
            LoadedFunction { spec, measurement },
        );
        Ok(measurement)
    }

    pub fn measurement_of(&self, function_id: &str) -> Option<Measurement> {
        self.loaded.get(function_id).map(|f| f.measurement)
    }

    /// Loaded function ids with their measurements; code stays sealed.
    pub fn loaded_functions(&self) -> impl Iterator<Item = (&str, Measurement)> {
        self.loaded
            .iter()
            .map(|(id, f)| (id.as_str(), f.measurement))
    }

    pub fn is_training_function(&self, function_id: &str) -> bool {
        self.loaded
            .get(function_id)
            .is_some_and(|f| f.spec.is_training())
    }

    fn next_nonce(&self) -> [u8; 16] {
        let n = self.nonce_counter.fetch_add(1, Ordering::Relaxed);
        let mut enc = Encoder::new();
        enc.fixed(b"datagent/enclave/nonce")
            .fixed(&self.attestation_key.verifying_key().to_bytes())
            .u64(n);
        let mut out = [0u8; 16];
        out.copy_from_slice(&content_hash(enc.as_slice()).0[..16]);
        out
    }

    /// `Cmp(SP, RE, DS) -> (r, σ)`.
    ///
    /// Every input record must carry a valid source signature and match the
    /// request's selector.
    pub fn execute(
        &self,
        re: &ComputationRequest,
        records: &[DataRecord],
        keyring: &impl SourceKeyring,
    ) -> Result<(ComputeResult, Attestation), EnclaveError> {
        let f = self
            .loaded
            .get(&re.function_id)
            .ok_or_else(|| EnclaveError::FunctionNotLoaded(re.function_id.clone()))?;

        let mut payloads = Vec::with_capacity(records.len());
        for r in records {
            if r.source_id != re.selector.source_id || r.schema_tag != re.selector.schema_tag {
                return Err(EnclaveError::InputMismatch);
            }
            let key = keyring
                .source_key(&r.source_id)
                .ok_or(EnclaveError::InputSignatureInvalid)?;
            if !r.verify(&key) {
                return Err(EnclaveError::InputSignatureInvalid);
            }
            payloads.push(
                r.decode_payload()
                    .map_err(|_| EnclaveError::InputSignatureInvalid)?,
            );
        }
        if !re.selector.max_records.allows(payloads.len()) {
            return Err(EnclaveError::InputMismatch);
        }

        let output = f.spec.evaluate(&re.function_params, &payloads)?;
        let result = ComputeResult {
            request_id: re.request_id,
            payload: output.to_canonical_bytes(),
            record_count: payloads.len() as u64,
        };
        let mut att = Attestation {
            measurement: f.measurement,
            request_hash: re.hash(),
            result_hash: result.hash(),
            nonce: self.next_nonce(),
            enclave_signature: [0; 64],
        };
        att.enclave_signature = self.attestation_key.sign(&att.signing_bytes()).to_bytes();
        Ok((result, att))
    }
}

/// Decodes a record list into payloads (used by the centralized baseline,
/// which runs functions outside any enclave).
pub fn decode_payloads(records: &[DataRecord]) -> Vec<RecordPayload> {
    records
        .iter()
        .filter_map(|r| r.decode_payload().ok())
        .collect()
}
