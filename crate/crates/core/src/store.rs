//! Append-only store of source-signed records.
//!
//! On disk the store is a single log of frames, each a big-endian `u32`
//! length followed by the canonical encoding of one [`DataRecord`]. Opening a
//! store replays the log and rebuilds the in-memory index; a torn final frame
//! (crash mid-append) is truncated away.

use std::cmp::Reverse;
use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use thiserror::Error;

use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::schema::{RecordPayload, SchemaError};
use crate::types::{verify_signature, DataSelector, SignatureBytes, Timestamp};

const RECORD_SIG_CONTEXT: &[u8] = b"datagent/record/v1";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store io: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt log frame {frame}: {source}")]
    Corrupt { frame: usize, source: DecodeError },
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordId(pub [u8; 16]);

impl fmt::Debug for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RecordId({})", hex::encode(self.0))
    }
}

impl Canonical for RecordId {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.fixed(&self.0);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self(dec.array("record id")?))
    }
}

/// One unit of personal data, signed by the source it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataRecord {
    pub record_id: RecordId,
    pub source_id: String,
    pub schema_tag: String,
    pub payload: Vec<u8>,
    pub collected_at: Timestamp,
    pub source_signature: SignatureBytes,
}

impl DataRecord {
    pub fn new_signed(
        record_id: RecordId,
        source_id: impl Into<String>,
        payload: &RecordPayload,
        collected_at: Timestamp,
        source_key: &SigningKey,
    ) -> Self {
        let mut r = Self {
            record_id,
            source_id: source_id.into(),
            schema_tag: payload.schema_tag().to_owned(),
            payload: payload.encode(),
            collected_at,
            source_signature: [0; 64],
        };
        r.source_signature = source_key.sign(&r.signing_bytes()).to_bytes();
        r
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.fixed(RECORD_SIG_CONTEXT);
        self.encode_unsigned(&mut enc);
        enc.into_bytes()
    }

    fn encode_unsigned(&self, enc: &mut Encoder) {
        enc.value(&self.record_id)
            .str(&self.source_id)
            .str(&self.schema_tag)
            .bytes(&self.payload)
            .value(&self.collected_at);
    }

    pub fn verify(&self, source_key: &VerifyingKey) -> bool {
        verify_signature(source_key, &self.signing_bytes(), &self.source_signature)
    }

    pub fn decode_payload(&self) -> Result<RecordPayload, SchemaError> {
        RecordPayload::decode(&self.schema_tag, &self.payload)
    }
}

impl Canonical for DataRecord {
    fn encode_into(&self, enc: &mut Encoder) {
        self.encode_unsigned(enc);
        enc.fixed(&self.source_signature);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            record_id: dec.value()?,
            source_id: dec.string()?,
            schema_tag: dec.string()?,
            payload: dec.bytes()?,
            collected_at: dec.value()?,
            source_signature: dec.array("signature")?,
        })
    }
}

type IndexKey = (String, String, Reverse<Timestamp>, RecordId);

#[derive(Debug, Default)]
pub struct RecordStore {
    records: Vec<DataRecord>,
    index: BTreeMap<IndexKey, usize>,
    log_path: Option<PathBuf>,
}

impl RecordStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a log-backed store and replays it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut store = Self {
            log_path: Some(path.clone()),
            ..Self::default()
        };
        let mut raw = Vec::new();
        match File::open(&path) {
            Ok(mut f) => {
                f.read_to_end(&mut raw)?;
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(store),
            Err(e) => return Err(e.into()),
        }

        let mut pos = 0usize;
        let mut frame = 0usize;
        while raw.len() - pos >= 4 {
            let len = u32::from_be_bytes(raw[pos..pos + 4].try_into().expect("4 bytes")) as usize;
            if raw.len() - pos - 4 < len {
                break;
            }
            let body = &raw[pos + 4..pos + 4 + len];
            let record = DataRecord::from_canonical_bytes(body)
                .map_err(|source| StoreError::Corrupt { frame, source })?;
            store.index_record(record);
            pos += 4 + len;
            frame += 1;
        }
        if pos != raw.len() {
            // torn tail from an interrupted append
            OpenOptions::new()
                .write(true)
                .open(&path)?
                .set_len(pos as u64)?;
        }
        Ok(store)
    }

    fn index_record(&mut self, record: DataRecord) {
        let key = (
            record.source_id.clone(),
            record.schema_tag.clone(),
            Reverse(record.collected_at),
            record.record_id,
        );
        self.index.insert(key, self.records.len());
        self.records.push(record);
    }

    /// Appends a record. Callers are responsible for having verified it.
    pub(crate) fn append(&mut self, record: DataRecord) -> Result<(), StoreError> {
        if let Some(path) = &self.log_path {
            let body = record.to_canonical_bytes();
            let mut frame = Vec::with_capacity(body.len() + 4);
            frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
            frame.extend_from_slice(&body);
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            f.write_all(&frame)?;
            f.sync_data()?;
        }
        self.index_record(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in append order.
    pub fn iter(&self) -> impl Iterator<Item = &DataRecord> {
        self.records.iter()
    }

    pub fn records_of<'a>(
        &'a self,
        source_id: &'a str,
    ) -> impl Iterator<Item = &'a DataRecord> + 'a {
        self.records
            .iter()
            .filter(move |r| r.source_id == source_id)
    }

    /// Records matching the selector, newest first (ties by ascending record
    /// id), truncated to `max_records`.
    pub fn query(&self, selector: &DataSelector) -> Vec<DataRecord> {
        let lo = (
            selector.source_id.clone(),
            selector.schema_tag.clone(),
            Reverse(Timestamp(u64::MAX)),
            RecordId([0; 16]),
        );
        let hi = (
            selector.source_id.clone(),
            selector.schema_tag.clone(),
            Reverse(Timestamp(0)),
            RecordId([0xff; 16]),
        );
        let limit = match selector.max_records {
            crate::types::RecordLimit::Bounded(n) => n as usize,
            crate::types::RecordLimit::Unlimited => usize::MAX,
        };
        self.index
            .range(lo..=hi)
            .filter(|((_, _, Reverse(at), _), _)| selector.admits(*at))
            .take(limit)
            .map(|(_, &i)| self.records[i].clone())
            .collect()
    }

    /// True iff every stored record of `source_id` carries a valid signature.
    pub fn verify_chain(&self, source_id: &str, source_key: &VerifyingKey) -> bool {
        self.records_of(source_id).all(|r| r.verify(source_key))
    }
}
