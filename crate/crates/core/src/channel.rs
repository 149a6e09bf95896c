//! Mutually authenticated, encrypted, replay-protected agent-to-agent messaging.
//!
//! Both ends run X25519 over their agreement keys and hash the shared secret
//! together with both DIDs into a session key. Each direction gets its own
//! ChaCha20-Poly1305 subkey; the 96-bit nonce is `0u32 || counter`. The
//! sender, recipient and counter are bound as associated data, and the whole
//! envelope is additionally signed with the sender's Ed25519 key.

use chacha20poly1305::aead::{AeadInPlace, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce, Tag};
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use thiserror::Error;
use x25519_dalek::PublicKey as AgreementPublicKey;

use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::identity::{AgentIdentity, DidDocument, IdentityError};
use crate::types::{content_hash, verify_signature, Did, SignatureBytes};

const SESSION_CONTEXT: &[u8] = b"datagent/channel/v1";
const DIRECTION_CONTEXT: &[u8] = b"datagent/channel/direction/v1";
const ENVELOPE_SIG_CONTEXT: &[u8] = b"datagent/envelope/v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error(transparent)]
    InvalidDidDocument(#[from] IdentityError),
    #[error("envelope failed authentication")]
    TamperDetected,
    #[error("replayed counter {counter} (last seen {last_seen})")]
    Replay { counter: u64, last_seen: u64 },
    #[error("envelope addressed to {0}")]
    WrongRecipient(Did),
}

/// A sealed message on the wire.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessageEnvelope {
    pub sender_did: Did,
    pub recipient_did: Did,
    pub counter: u64,
    pub ciphertext: Vec<u8>,
    pub aead_tag: [u8; 16],
    pub sender_signature: SignatureBytes,
}

impl MessageEnvelope {
    fn associated_data(sender: &Did, recipient: &Did, counter: u64) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.value(sender).value(recipient).u64(counter);
        enc.into_bytes()
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.fixed(ENVELOPE_SIG_CONTEXT)
            .value(&self.sender_did)
            .value(&self.recipient_did)
            .u64(self.counter)
            .bytes(&self.ciphertext)
            .fixed(&self.aead_tag);
        enc.into_bytes()
    }
}

impl Canonical for MessageEnvelope {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.value(&self.sender_did)
            .value(&self.recipient_did)
            .u64(self.counter)
            .bytes(&self.ciphertext)
            .fixed(&self.aead_tag)
            .fixed(&self.sender_signature);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            sender_did: dec.value()?,
            recipient_did: dec.value()?,
            counter: dec.u64()?,
            ciphertext: dec.bytes()?,
            aead_tag: dec.array("aead tag")?,
            sender_signature: dec.array("signature")?,
        })
    }
}

/// One end of a long-lived session with a single peer.
///
/// Not `Sync`-shared by design of its API: `pack` and `unpack` take `&mut
/// self`, so callers sharing a channel across threads must wrap it in a lock.
pub struct SecureChannel {
    local_did: Did,
    peer_did: Did,
    local_signing: SigningKey,
    peer_signing: VerifyingKey,
    session_key: [u8; 32],
    send_cipher: ChaCha20Poly1305,
    recv_cipher: ChaCha20Poly1305,
    send_counter: u64,
    recv_counter: u64,
}

impl std::fmt::Debug for SecureChannel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecureChannel")
            .field("local_did", &self.local_did)
            .field("peer_did", &self.peer_did)
            .field("send_counter", &self.send_counter)
            .field("recv_counter", &self.recv_counter)
            .finish_non_exhaustive()
    }
}

fn direction_key(session_key: &[u8; 32], sender: &Did, recipient: &Did) -> ChaCha20Poly1305 {
    let mut enc = Encoder::new();
    enc.fixed(DIRECTION_CONTEXT)
        .fixed(session_key)
        .value(sender)
        .value(recipient);
    let k = content_hash(enc.as_slice());
    ChaCha20Poly1305::new(Key::from_slice(&k.0))
}

fn nonce_for(counter: u64) -> Nonce {
    let mut n = [0u8; 12];
    n[4..].copy_from_slice(&counter.to_be_bytes());
    *Nonce::from_slice(&n)
}

impl SecureChannel {
    /// Verifies the peer document and derives the shared session key.
    pub fn establish(local: &AgentIdentity, peer: &DidDocument) -> Result<Self, ChannelError> {
        let peer_signing = peer.verify()?;
        let peer_agreement = AgreementPublicKey::from(peer.agreement_public_key);
        let shared = local.agreement_secret().diffie_hellman(&peer_agreement);
        if !shared.was_contributory() {
            return Err(IdentityError::InvalidDidDocument("low-order agreement key").into());
        }

        let (lo, hi) = if local.did() <= &peer.did {
            (local.did(), &peer.did)
        } else {
            (&peer.did, local.did())
        };
        let mut enc = Encoder::new();
        enc.fixed(SESSION_CONTEXT)
            .fixed(shared.as_bytes())
            .value(lo)
            .value(hi);
        let session_key = content_hash(enc.as_slice()).0;

        Ok(Self {
            local_did: local.did().clone(),
            peer_did: peer.did.clone(),
            local_signing: local.signing_key().clone(),
            peer_signing,
            send_cipher: direction_key(&session_key, local.did(), &peer.did),
            recv_cipher: direction_key(&session_key, &peer.did, local.did()),
            session_key,
            send_counter: 0,
            recv_counter: 0,
        })
    }

    pub fn local_did(&self) -> &Did {
        &self.local_did
    }

    pub fn peer_did(&self) -> &Did {
        &self.peer_did
    }

    pub fn session_key(&self) -> &[u8; 32] {
        &self.session_key
    }

    pub fn send_counter(&self) -> u64 {
        self.send_counter
    }

    pub fn recv_counter(&self) -> u64 {
        self.recv_counter
    }

    /// Restores persisted counters (CLI state files). Counters never move backwards.
    pub fn resume_counters(&mut self, send: u64, recv: u64) {
        self.send_counter = self.send_counter.max(send);
        self.recv_counter = self.recv_counter.max(recv);
    }

    pub fn pack(&mut self, plaintext: &[u8]) -> MessageEnvelope {
        self.send_counter += 1;
        let counter = self.send_counter;
        let aad = MessageEnvelope::associated_data(&self.local_did, &self.peer_did, counter);
        let mut buf = plaintext.to_vec();
        let tag = self
            .send_cipher
            .encrypt_in_place_detached(&nonce_for(counter), &aad, &mut buf)
            .expect("chacha20poly1305 encryption cannot fail for in-memory buffers");
        let mut env = MessageEnvelope {
            sender_did: self.local_did.clone(),
            recipient_did: self.peer_did.clone(),
            counter,
            ciphertext: buf,
            aead_tag: tag.into(),
            sender_signature: [0u8; 64],
        };
        env.sender_signature = self.local_signing.sign(&env.signing_bytes()).to_bytes();
        env
    }

    /// Authenticates, decrypts and records the counter of an inbound envelope.
    pub fn unpack(&mut self, env: &MessageEnvelope) -> Result<Vec<u8>, ChannelError> {
        if env.recipient_did != self.local_did {
            return Err(ChannelError::WrongRecipient(env.recipient_did.clone()));
        }
        if env.sender_did != self.peer_did {
            return Err(ChannelError::TamperDetected);
        }
        if !verify_signature(
            &self.peer_signing,
            &env.signing_bytes(),
            &env.sender_signature,
        ) {
            return Err(ChannelError::TamperDetected);
        }
        let aad =
            MessageEnvelope::associated_data(&env.sender_did, &env.recipient_did, env.counter);
        let mut buf = env.ciphertext.clone();
        self.recv_cipher
            .decrypt_in_place_detached(
                &nonce_for(env.counter),
                &aad,
                &mut buf,
                Tag::from_slice(&env.aead_tag),
            )
            .map_err(|_| ChannelError::TamperDetected)?;
        if env.counter <= self.recv_counter {
            return Err(ChannelError::Replay {
                counter: env.counter,
                last_seen: self.recv_counter,
            });
        }
        self.recv_counter = env.counter;
        Ok(buf)
    }
}
