//! Plaintext messages carried inside sealed envelopes.

use crate::access::DenyReason;
use crate::enclave::Attestation;
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::federated::ModelUpdate;
use crate::identity::DidDocument;
use crate::types::{ComputationRequest, ComputeResult, RequestId};

#[derive(Clone, Debug, PartialEq)]
pub enum WireMessage {
    Request(ComputationRequest),
    Deny {
        request_id: RequestId,
        reason: DenyReason,
    },
    ComputeReply {
        result: ComputeResult,
        attestation: Attestation,
    },
    TrainReply(ModelUpdate),
    DidDocument(DidDocument),
}

/// Message kinds, used for traces and the outbound allow-list.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
pub enum MessageKind {
    Request,
    Deny,
    ComputeReply,
    TrainReply,
    DidDocument,
}

impl MessageKind {
    /// Kinds a user agent may ever emit.
    pub const USER_OUTBOUND: [MessageKind; 4] = [
        Self::Deny,
        Self::ComputeReply,
        Self::TrainReply,
        Self::DidDocument,
    ];
}

impl WireMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            Self::Request(_) => MessageKind::Request,
            Self::Deny { .. } => MessageKind::Deny,
            Self::ComputeReply { .. } => MessageKind::ComputeReply,
            Self::TrainReply(_) => MessageKind::TrainReply,
            Self::DidDocument(_) => MessageKind::DidDocument,
        }
    }

    pub fn request_id(&self) -> Option<RequestId> {
        match self {
            Self::Request(re) => Some(re.request_id),
            Self::Deny { request_id, .. } => Some(*request_id),
            Self::ComputeReply { result, .. } => Some(result.request_id),
            Self::TrainReply(u) => Some(u.result.request_id),
            Self::DidDocument(_) => None,
        }
    }
}

impl Canonical for WireMessage {
    fn encode_into(&self, enc: &mut Encoder) {
        match self {
            Self::Request(re) => enc.u8(0).value(re),
            Self::Deny { request_id, reason } => enc.u8(1).value(request_id).value(reason),
            Self::ComputeReply {
                result,
                attestation,
            } => enc.u8(2).value(result).value(attestation),
            Self::TrainReply(u) => enc.u8(3).value(u),
            Self::DidDocument(d) => enc.u8(4).value(d),
        };
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => Self::Request(dec.value()?),
            1 => Self::Deny {
                request_id: dec.value()?,
                reason: dec.value()?,
            },
            2 => Self::ComputeReply {
                result: dec.value()?,
                attestation: dec.value()?,
            },
            3 => Self::TrainReply(dec.value()?),
            4 => Self::DidDocument(dec.value()?),
            tag => {
                return Err(DecodeError::InvalidTag {
                    what: "wire message",
                    tag,
                })
            }
        })
    }
}
