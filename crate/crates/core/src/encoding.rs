//! Deterministic, self-delimiting binary encoding.
//!
//! Every value that is signed, hashed or attested goes through this codec so
//! that two processes holding equal values always produce identical bytes.
//! The layout is documented in `docs/encoding.md`:
//!
//! * integers are fixed-width big-endian,
//! * booleans are a single `0x00`/`0x01` byte,
//! * strings and byte strings carry a `u32` length prefix,
//! * sequences carry a `u32` element count,
//! * maps and sets are emitted in ascending key order and decoding rejects
//!   any other order (including duplicates),
//! * optional values are a `0x00`/`0x01` presence byte followed by the value,
//! * enums are a `u8` discriminant followed by the variant's fields.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unexpected end of input while reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after value")]
    Trailing(usize),
    #[error("invalid discriminant {tag:#04x} for {what}")]
    InvalidTag { what: &'static str, tag: u8 },
    #[error("string is not valid utf-8")]
    Utf8,
    #[error("map or set keys are not strictly ascending")]
    Unordered,
    #[error("invalid value: {0}")]
    Invalid(String),
}

/// Growable output buffer for canonical encodings.
#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(u8::from(v))
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u128(&mut self, v: u128) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    /// IEEE-754 bit pattern, big-endian.
    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.u64(v.to_bits())
    }

    /// Raw bytes of a statically known width; no length prefix.
    pub fn fixed(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    pub fn len(&mut self, n: usize) -> &mut Self {
        let n = u32::try_from(n).expect("canonical length exceeds u32::MAX");
        self.u32(n)
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.len(v.len()).fixed(v)
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    pub fn value<T: Canonical + ?Sized>(&mut self, v: &T) -> &mut Self {
        v.encode_into(self);
        self
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.buf
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor over a canonical encoding.
#[derive(Debug)]
pub struct Decoder<'a> {
    input: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        Self { input, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.input.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Truncated(what));
        }
        let out = &self.input[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], DecodeError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N, what)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1, "u8")?[0])
    }

    pub fn bool(&mut self) -> Result<bool, DecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(DecodeError::InvalidTag { what: "bool", tag }),
        }
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.array("u32")?))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.array("u64")?))
    }

    pub fn i64(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from_be_bytes(self.array("i64")?))
    }

    pub fn u128(&mut self) -> Result<u128, DecodeError> {
        Ok(u128::from_be_bytes(self.array("u128")?))
    }

    pub fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_bits(self.u64()?))
    }

    /// Reads a `u32` length and checks it against the bytes still available,
    /// assuming each element needs at least `min_elem` bytes.
    pub fn len(&mut self, min_elem: usize) -> Result<usize, DecodeError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_elem) > self.remaining() {
            return Err(DecodeError::Truncated("length-prefixed value"));
        }
        Ok(n)
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let n = self.len(1)?;
        Ok(self.take(n, "bytes")?.to_vec())
    }

    pub fn string(&mut self) -> Result<String, DecodeError> {
        let n = self.len(1)?;
        let raw = self.take(n, "string")?;
        std::str::from_utf8(raw)
            .map(str::to_owned)
            .map_err(|_| DecodeError::Utf8)
    }

    pub fn value<T: Canonical>(&mut self) -> Result<T, DecodeError> {
        T::decode_from(self)
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}

/// A type with exactly one byte representation per value.
pub trait Canonical: Sized {
    fn encode_into(&self, enc: &mut Encoder);
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError>;

    fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_into(&mut enc);
        enc.into_bytes()
    }

    /// Decodes a complete value; trailing bytes are an error.
    fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let v = Self::decode_from(&mut dec)?;
        dec.finish()?;
        Ok(v)
    }
}

macro_rules! canonical_primitive {
    ($($t:ty => $m:ident),* $(,)?) => {
        $(impl Canonical for $t {
            fn encode_into(&self, enc: &mut Encoder) {
                enc.$m(*self);
            }
            fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
                dec.$m()
            }
        })*
    };
}

canonical_primitive!(u8 => u8, bool => bool, u32 => u32, u64 => u64, i64 => i64, u128 => u128, f64 => f64);

impl Canonical for String {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.str(self);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.string()
    }
}

impl<const N: usize> Canonical for [u8; N] {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.fixed(self);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.array("fixed array")
    }
}

// `Vec<u8>` falls out of this impl with the same layout as `Encoder::bytes`.
impl<T: Canonical> Canonical for Vec<T> {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.len(self.len());
        for item in self {
            item.encode_into(enc);
        }
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let n = dec.len(1)?;
        let mut out = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            out.push(T::decode_from(dec)?);
        }
        Ok(out)
    }
}

impl<T: Canonical> Canonical for Option<T> {
    fn encode_into(&self, enc: &mut Encoder) {
        match self {
            None => {
                enc.u8(0);
            }
            Some(v) => {
                enc.u8(1);
                v.encode_into(enc);
            }
        }
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(None),
            1 => Ok(Some(T::decode_from(dec)?)),
            tag => Err(DecodeError::InvalidTag {
                what: "option",
                tag,
            }),
        }
    }
}

impl<A: Canonical, B: Canonical> Canonical for (A, B) {
    fn encode_into(&self, enc: &mut Encoder) {
        self.0.encode_into(enc);
        self.1.encode_into(enc);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok((A::decode_from(dec)?, B::decode_from(dec)?))
    }
}

impl<K: Canonical + Ord, V: Canonical> Canonical for BTreeMap<K, V> {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.len(self.len());
        for (k, v) in self {
            k.encode_into(enc);
            v.encode_into(enc);
        }
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let n = dec.len(1)?;
        let mut out = BTreeMap::new();
        for _ in 0..n {
            let k = K::decode_from(dec)?;
            if out.last_key_value().is_some_and(|(last, _)| *last >= k) {
                return Err(DecodeError::Unordered);
            }
            let v = V::decode_from(dec)?;
            out.insert(k, v);
        }
        Ok(out)
    }
}

impl<T: Canonical + Ord> Canonical for BTreeSet<T> {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.len(self.len());
        for item in self {
            item.encode_into(enc);
        }
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let n = dec.len(1)?;
        let mut out = BTreeSet::new();
        for _ in 0..n {
            let item = T::decode_from(dec)?;
            if out.last().is_some_and(|last| *last >= item) {
                return Err(DecodeError::Unordered);
            }
            out.insert(item);
        }
        Ok(out)
    }
}
