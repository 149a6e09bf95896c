//! The two controllers, their wire format and the audit trail.

pub mod audit;
pub mod provider;
pub mod session;
pub mod transport;
pub mod user;
pub mod wire;

pub use audit::{AuditEntry, AuditLog, AuditOutcome, TransportFault};
pub use provider::{SpController, SpError, SpReply, VerifiedResult, DEFAULT_REPLY_TIMEOUT_MS};
pub use session::{
    ChannelCounters, HistoryCount, PendingRequest, SeenRequest, SpSession, UserSession,
};
pub use transport::{LocalTransport, Transport};
pub use user::{NoTap, OutboundTap, UserConfig, UserController};
pub use wire::{MessageKind, WireMessage};
