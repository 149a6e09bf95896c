//! Controller state that must survive a process restart.

use serde::{Deserialize, Serialize};

use crate::types::{Did, Timestamp};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelCounters {
    pub peer: Did,
    pub send: u64,
    pub recv: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeenRequest {
    pub requester: Did,
    pub request_id: String,
    pub issued_at: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryCount {
    pub sp: Did,
    pub source_id: String,
    pub day: u64,
    pub count: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSession {
    #[serde(default)]
    pub counters: Vec<ChannelCounters>,
    #[serde(default)]
    pub seen: Vec<SeenRequest>,
    #[serde(default)]
    pub history: Vec<HistoryCount>,
}

/// An outstanding request; `request` is its canonical encoding in hex.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingRequest {
    pub target: Did,
    pub request: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpSession {
    #[serde(default)]
    pub counters: Vec<ChannelCounters>,
    #[serde(default)]
    pub pending: Vec<PendingRequest>,
}
