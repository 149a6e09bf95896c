//! Self-certifying agent identities and DID documents.
//!
//! A DID is `did:dga:z<base58btc(sha256(signing_public_key)[..16])>`; it can
//! be checked against the document's signing key without any registry.

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use thiserror::Error;
use x25519_dalek::{PublicKey as AgreementPublicKey, StaticSecret};

use crate::enclave::EnclaveEndorsement;
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::types::{content_hash, verify_signature, Did, SignatureBytes};

pub const DID_METHOD_PREFIX: &str = "did:dga:";
const DID_HASH_PREFIX_LEN: usize = 16;
const DOC_SIG_CONTEXT: &[u8] = b"datagent/diddoc/v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("seed must be 32 bytes, got {0}")]
    MalformedSeed(usize),
    #[error("invalid DID document: {0}")]
    InvalidDidDocument(&'static str),
}

/// Derives the DID for a signing public key.
pub fn did_for_key(signing_public_key: &[u8; 32]) -> Did {
    let digest = content_hash(signing_public_key);
    let encoded = bs58::encode(&digest.0[..DID_HASH_PREFIX_LEN]).into_string();
    Did(format!("{DID_METHOD_PREFIX}z{encoded}"))
}

/// An agent's DID plus its signing and key-agreement key pairs.
///
/// Private halves never leave this struct through any encoding.
#[derive(Clone)]
pub struct AgentIdentity {
    did: Did,
    signing: SigningKey,
    agreement: StaticSecret,
}

impl AgentIdentity {
    /// Deterministic when `seed` is given, random otherwise.
    pub fn generate(seed: Option<&[u8]>) -> Result<Self, IdentityError> {
        match seed {
            Some(s) => {
                let s: [u8; 32] = s
                    .try_into()
                    .map_err(|_| IdentityError::MalformedSeed(s.len()))?;
                Ok(Self::from_seed(&s))
            }
            None => Ok(Self::random(&mut rand::rngs::OsRng)),
        }
    }

    pub fn from_seed(seed: &[u8; 32]) -> Self {
        let sub = |label: &[u8]| {
            let mut buf = Vec::with_capacity(label.len() + 32);
            buf.extend_from_slice(label);
            buf.extend_from_slice(seed);
            content_hash(&buf).0
        };
        let signing = SigningKey::from_bytes(&sub(b"datagent/identity/sign"));
        let agreement = StaticSecret::from(sub(b"datagent/identity/agree"));
        Self::from_keys(signing, agreement)
    }

    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(&seed)
    }

    fn from_keys(signing: SigningKey, agreement: StaticSecret) -> Self {
        let did = did_for_key(&signing.verifying_key().to_bytes());
        Self {
            did,
            signing,
            agreement,
        }
    }

    pub fn did(&self) -> &Did {
        &self.did
    }

    pub fn signing_key(&self) -> &SigningKey {
        &self.signing
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.signing.verifying_key()
    }

    pub fn agreement_public(&self) -> [u8; 32] {
        AgreementPublicKey::from(&self.agreement).to_bytes()
    }

    pub(crate) fn agreement_secret(&self) -> &StaticSecret {
        &self.agreement
    }

    pub fn sign(&self, msg: &[u8]) -> SignatureBytes {
        self.signing.sign(msg).to_bytes()
    }

    pub fn document(&self) -> DidDocument {
        self.document_with_enclave(None)
    }

    /// DID document advertising an endorsed enclave attestation key.
    pub fn document_with_enclave(&self, enclave: Option<EnclaveEndorsement>) -> DidDocument {
        let mut doc = DidDocument {
            did: self.did.clone(),
            signing_public_key: self.verifying_key().to_bytes(),
            agreement_public_key: self.agreement_public(),
            enclave,
            self_signature: [0u8; 64],
        };
        doc.self_signature = self.sign(&doc.signing_bytes());
        doc
    }
}

impl fmt::Debug for AgentIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AgentIdentity")
            .field("did", &self.did)
            .finish_non_exhaustive()
    }
}

/// Public half of an identity, self-signed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DidDocument {
    pub did: Did,
    pub signing_public_key: [u8; 32],
    pub agreement_public_key: [u8; 32],
    /// Extension: the hosting agent's enclave attestation key.
    pub enclave: Option<EnclaveEndorsement>,
    pub self_signature: SignatureBytes,
}

impl DidDocument {
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.fixed(DOC_SIG_CONTEXT);
        self.encode_unsigned(&mut enc);
        enc.into_bytes()
    }

    fn encode_unsigned(&self, enc: &mut Encoder) {
        enc.value(&self.did)
            .fixed(&self.signing_public_key)
            .fixed(&self.agreement_public_key)
            .value(&self.enclave);
    }

    /// Checks the DID derivation and the self-signature; returns the signing key.
    pub fn verify(&self) -> Result<VerifyingKey, IdentityError> {
        let key = VerifyingKey::from_bytes(&self.signing_public_key)
            .map_err(|_| IdentityError::InvalidDidDocument("signing key is not a curve point"))?;
        if did_for_key(&self.signing_public_key) != self.did {
            return Err(IdentityError::InvalidDidDocument(
                "did does not match signing key",
            ));
        }
        if !verify_signature(&key, &self.signing_bytes(), &self.self_signature) {
            return Err(IdentityError::InvalidDidDocument("bad self-signature"));
        }
        Ok(key)
    }

    pub fn is_valid(&self) -> bool {
        self.verify().is_ok()
    }

    pub fn verifying_key(&self) -> Option<VerifyingKey> {
        VerifyingKey::from_bytes(&self.signing_public_key).ok()
    }

    /// File name used by `keygen`.
    pub fn file_name(&self) -> String {
        format!("{}.diddoc", self.did.as_str().replace(':', "_"))
    }
}

impl Canonical for DidDocument {
    fn encode_into(&self, enc: &mut Encoder) {
        self.encode_unsigned(enc);
        enc.fixed(&self.self_signature);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            did: dec.value()?,
            signing_public_key: dec.array("signing key")?,
            agreement_public_key: dec.array("agreement key")?,
            enclave: dec.value()?,
            self_signature: dec.array("signature")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_generation_is_deterministic() {
        let a = AgentIdentity::generate(Some(&[1; 32])).unwrap();
        let b = AgentIdentity::generate(Some(&[1; 32])).unwrap();
        assert_eq!(a.did(), b.did());
        assert_eq!(a.document(), b.document());
    }

    #[test]
    fn random_identities_differ() {
        let a = AgentIdentity::generate(None).unwrap();
        let b = AgentIdentity::generate(None).unwrap();
        assert_ne!(a.did(), b.did());
    }

    #[test]
    fn malformed_seed_is_rejected() {
        assert_eq!(
            AgentIdentity::generate(Some(&[0; 31])).unwrap_err(),
            IdentityError::MalformedSeed(31)
        );
    }

    #[test]
    fn own_document_verifies() {
        let id = AgentIdentity::from_seed(&[9; 32]);
        let doc = id.document();
        assert!(doc.verify().is_ok());
        assert!(doc.did.as_str().starts_with("did:dga:z"));
        let back = DidDocument::from_canonical_bytes(&doc.to_canonical_bytes()).unwrap();
        assert_eq!(back, doc);
    }

    #[test]
    fn tampered_documents_fail() {
        let doc = AgentIdentity::from_seed(&[9; 32]).document();

        let mut t = doc.clone();
        t.agreement_public_key[0] ^= 1;
        assert!(t.verify().is_err());

        // swapping in another key breaks the did derivation
        let mut t = doc.clone();
        t.signing_public_key = AgentIdentity::from_seed(&[8; 32])
            .verifying_key()
            .to_bytes();
        assert_eq!(
            t.verify().unwrap_err(),
            IdentityError::InvalidDidDocument("did does not match signing key")
        );
    }

    #[test]
    fn private_keys_never_appear_in_document_bytes() {
        let id = AgentIdentity::from_seed(&[4; 32]);
        let bytes = id.document().to_canonical_bytes();
        let secret = id.signing_key().to_bytes();
        let agree = id.agreement_secret().to_bytes();
        assert!(!bytes.windows(32).any(|w| w == secret || w == agree));
    }
}
