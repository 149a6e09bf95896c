//! Message delivery between service providers and user agents.

use std::collections::{BTreeMap, BTreeSet};

use crate::channel::MessageEnvelope;
use crate::federated::RoundMetrics;
use crate::types::{Did, Timestamp};

use super::user::UserController;

/// What a service provider needs from the network.
pub trait Transport {
    fn now(&self) -> Timestamp;

    /// Delivers `outbound` and returns the replies that arrive within
    /// `timeout_ms`.
    fn exchange(&mut self, outbound: Vec<MessageEnvelope>, timeout_ms: u64)
        -> Vec<MessageEnvelope>;

    /// Notification that the provider opened `env`; `accepted` is false if
    /// the channel rejected it.
    fn observe_reply(&mut self, _env: &MessageEnvelope, _accepted: bool) {}

    /// Notification after each completed training round.
    fn on_round_complete(&mut self, _metrics: &RoundMetrics) {}
}

/// Synchronous in-process delivery with a manual clock.
#[derive(Debug)]
pub struct LocalTransport {
    users: BTreeMap<Did, UserController>,
    offline: BTreeSet<Did>,
    clock: Timestamp,
}

impl LocalTransport {
    pub fn new(now: Timestamp) -> Self {
        Self {
            users: BTreeMap::new(),
            offline: BTreeSet::new(),
            clock: now,
        }
    }

    pub fn add_user(&mut self, user: UserController) {
        self.users.insert(user.did().clone(), user);
    }

    pub fn user(&self, did: &Did) -> Option<&UserController> {
        self.users.get(did)
    }

    pub fn user_mut(&mut self, did: &Did) -> Option<&mut UserController> {
        self.users.get_mut(did)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserController> {
        self.users.values()
    }

    pub fn set_offline(&mut self, did: &Did, offline: bool) {
        if offline {
            self.offline.insert(did.clone());
        } else {
            self.offline.remove(did);
        }
    }

    pub fn advance(&mut self, ms: u64) {
        self.clock = self.clock.plus(ms);
    }
}

impl Transport for LocalTransport {
    fn now(&self) -> Timestamp {
        self.clock
    }

    fn exchange(
        &mut self,
        outbound: Vec<MessageEnvelope>,
        _timeout_ms: u64,
    ) -> Vec<MessageEnvelope> {
        let now = self.clock;
        outbound
            .iter()
            .filter(|env| !self.offline.contains(&env.recipient_did))
            .filter_map(|env| {
                self.users
                    .get_mut(&env.recipient_did)?
                    .handle_envelope(env, now)
            })
            .collect()
    }
}
