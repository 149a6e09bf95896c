//! Protocol value types shared by every component.

use std::fmt;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};

/// Milliseconds in one UTC day.
pub const DAY_MS: u64 = 86_400_000;

pub type SignatureBytes = [u8; 64];

/// SHA-256 digest of a canonical encoding.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ContentHash(pub [u8; 32]);

/// SHA-256 of `bytes`.
pub fn content_hash(bytes: &[u8]) -> ContentHash {
    ContentHash(Sha256::digest(bytes).into())
}

impl ContentHash {
    pub fn of<T: Canonical>(value: &T) -> Self {
        content_hash(&value.to_canonical_bytes())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({})", self.to_hex())
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Canonical for ContentHash {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.fixed(&self.0);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self(dec.array("content hash")?))
    }
}

/// Integer milliseconds since the Unix epoch, UTC.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn millis(self) -> u64 {
        self.0
    }

    /// UTC day index, used for daily rate limits.
    pub fn day(self) -> u64 {
        self.0 / DAY_MS
    }

    pub fn plus(self, ms: u64) -> Self {
        Self(self.0.saturating_add(ms))
    }

    pub fn abs_diff(self, other: Self) -> u64 {
        self.0.abs_diff(other.0)
    }
}

impl Canonical for Timestamp {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.u64(self.0);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self(dec.u64()?))
    }
}

/// A decentralized identifier string, e.g. `did:dga:z6Mk...`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Did(pub String);

impl Did {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Did({})", self.0)
    }
}

impl fmt::Display for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Did {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl Canonical for Did {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.str(&self.0);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self(dec.string()?))
    }
}

/// 128-bit request nonce.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct RequestId(pub [u8; 16]);

impl RequestId {
    pub fn random<R: rand::RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut b = [0u8; 16];
        rng.fill_bytes(&mut b);
        Self(b)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RequestId({})", self.to_hex())
    }
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Canonical for RequestId {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.fixed(&self.0);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self(dec.array("request id")?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OperationKind {
    Compute,
    Train,
    /// Decoded for completeness; every component rejects it.
    Share,
}

impl OperationKind {
    pub const ALL: [OperationKind; 3] = [Self::Compute, Self::Train, Self::Share];

    fn tag(self) -> u8 {
        match self {
            Self::Compute => 0,
            Self::Train => 1,
            Self::Share => 2,
        }
    }
}

impl fmt::Display for OperationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Compute => "Compute",
            Self::Train => "Train",
            Self::Share => "Share",
        })
    }
}

impl std::str::FromStr for OperationKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "compute" => Ok(Self::Compute),
            "train" => Ok(Self::Train),
            "share" => Ok(Self::Share),
            other => Err(format!("unknown operation `{other}`")),
        }
    }
}

impl Canonical for OperationKind {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.u8(self.tag());
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(Self::Compute),
            1 => Ok(Self::Train),
            2 => Ok(Self::Share),
            tag => Err(DecodeError::InvalidTag {
                what: "operation kind",
                tag,
            }),
        }
    }
}

/// Upper bound on the number of records a selector may return.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RecordLimit {
    Bounded(u32),
    Unlimited,
}

impl RecordLimit {
    pub fn allows(self, n: usize) -> bool {
        match self {
            Self::Bounded(max) => n <= max as usize,
            Self::Unlimited => true,
        }
    }

    /// True when this limit never exceeds `cap`.
    pub fn within(self, cap: u32) -> bool {
        matches!(self, Self::Bounded(max) if max <= cap)
    }
}

impl Canonical for RecordLimit {
    fn encode_into(&self, enc: &mut Encoder) {
        match self {
            Self::Bounded(n) => enc.u8(0).u32(*n),
            Self::Unlimited => enc.u8(1),
        };
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => match dec.u32()? {
                0 => Err(DecodeError::Invalid(
                    "bounded record limit must be >= 1".into(),
                )),
                n => Ok(Self::Bounded(n)),
            },
            1 => Ok(Self::Unlimited),
            tag => Err(DecodeError::InvalidTag {
                what: "record limit",
                tag,
            }),
        }
    }
}

/// Which slice of the user's data a request wants to run over.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DataSelector {
    pub source_id: String,
    pub schema_tag: String,
    pub max_records: RecordLimit,
    /// Inclusive `[start, end]`.
    pub time_range: Option<(Timestamp, Timestamp)>,
}

impl DataSelector {
    pub fn new(
        source_id: impl Into<String>,
        schema_tag: impl Into<String>,
        max_records: RecordLimit,
    ) -> Self {
        Self {
            source_id: source_id.into(),
            schema_tag: schema_tag.into(),
            max_records,
            time_range: None,
        }
    }

    pub fn with_time_range(mut self, start: Timestamp, end: Timestamp) -> Self {
        self.time_range = Some((start, end));
        self
    }

    pub fn is_valid(&self) -> bool {
        let range_ok = self.time_range.map_or(true, |(s, e)| s <= e);
        let limit_ok = !matches!(self.max_records, RecordLimit::Bounded(0));
        range_ok && limit_ok
    }

    pub fn admits(&self, at: Timestamp) -> bool {
        self.time_range.map_or(true, |(s, e)| s <= at && at <= e)
    }
}

impl Canonical for DataSelector {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.str(&self.source_id)
            .str(&self.schema_tag)
            .value(&self.max_records)
            .value(&self.time_range);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let sel = Self {
            source_id: dec.string()?,
            schema_tag: dec.string()?,
            max_records: dec.value()?,
            time_range: dec.value()?,
        };
        if !sel.is_valid() {
            return Err(DecodeError::Invalid(
                "selector time range start > end".into(),
            ));
        }
        Ok(sel)
    }
}

const REQUEST_SIG_CONTEXT: &[u8] = b"datagent/request/v1";

/// A service provider's signed request to run a function over user data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComputationRequest {
    pub request_id: RequestId,
    pub requester_did: Did,
    pub operation: OperationKind,
    pub function_id: String,
    pub function_params: Vec<u8>,
    pub selector: DataSelector,
    pub issued_at: Timestamp,
    pub requester_signature: SignatureBytes,
}

impl ComputationRequest {
    /// Builds an unsigned request; call [`ComputationRequest::sign`] before sending.
    pub fn unsigned(
        request_id: RequestId,
        requester_did: Did,
        operation: OperationKind,
        function_id: impl Into<String>,
        function_params: Vec<u8>,
        selector: DataSelector,
        issued_at: Timestamp,
    ) -> Self {
        Self {
            request_id,
            requester_did,
            operation,
            function_id: function_id.into(),
            function_params,
            selector,
            issued_at,
            requester_signature: [0u8; 64],
        }
    }

    /// Canonical encoding of every field except the signature, with a
    /// domain-separation prefix.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.fixed(REQUEST_SIG_CONTEXT);
        self.encode_unsigned(&mut enc);
        enc.into_bytes()
    }

    fn encode_unsigned(&self, enc: &mut Encoder) {
        enc.value(&self.request_id)
            .value(&self.requester_did)
            .value(&self.operation)
            .str(&self.function_id)
            .bytes(&self.function_params)
            .value(&self.selector)
            .value(&self.issued_at);
    }

    pub fn sign(&mut self, key: &SigningKey) {
        self.requester_signature = key.sign(&self.signing_bytes()).to_bytes();
    }

    pub fn signed(mut self, key: &SigningKey) -> Self {
        self.sign(key);
        self
    }

    pub fn verify(&self, key: &VerifyingKey) -> bool {
        let sig = Signature::from_bytes(&self.requester_signature);
        key.verify(&self.signing_bytes(), &sig).is_ok()
    }

    pub fn hash(&self) -> ContentHash {
        ContentHash::of(self)
    }
}

impl Canonical for ComputationRequest {
    fn encode_into(&self, enc: &mut Encoder) {
        self.encode_unsigned(enc);
        enc.fixed(&self.requester_signature);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            request_id: dec.value()?,
            requester_did: dec.value()?,
            operation: dec.value()?,
            function_id: dec.string()?,
            function_params: dec.bytes()?,
            selector: dec.value()?,
            issued_at: dec.value()?,
            requester_signature: dec.array("signature")?,
        })
    }
}

/// Output of one enclave execution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComputeResult {
    pub request_id: RequestId,
    /// Function-specific canonical output.
    pub payload: Vec<u8>,
    /// Number of records the function consumed.
    pub record_count: u64,
}

impl ComputeResult {
    pub fn hash(&self) -> ContentHash {
        ContentHash::of(self)
    }
}

impl Canonical for ComputeResult {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.value(&self.request_id)
            .bytes(&self.payload)
            .u64(self.record_count);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            request_id: dec.value()?,
            payload: dec.bytes()?,
            record_count: dec.u64()?,
        })
    }
}

pub(crate) fn verify_signature(key: &VerifyingKey, msg: &[u8], sig: &SignatureBytes) -> bool {
    key.verify(msg, &Signature::from_bytes(sig)).is_ok()
}
