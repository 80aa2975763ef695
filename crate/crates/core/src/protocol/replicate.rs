//! Leader-side bookkeeping of what each peer holds.

use alloc::collections::BTreeMap;

use super::log::BlockLog;
use super::message::AppendEntriesReply;
use crate::ledger::{NodeId, SimTime, Term};

/// One outstanding block per peer; replies or a retransmit timeout free the
/// slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Replicator {
    next: BTreeMap<NodeId, u64>,
    matched: BTreeMap<NodeId, u64>,
    inflight: BTreeMap<NodeId, SimTime>,
}

impl Replicator {
    pub fn new(peers: impl IntoIterator<Item = NodeId>, last_num: u64) -> Self {
        let mut next = BTreeMap::new();
        let mut matched = BTreeMap::new();
        for p in peers {
            next.insert(p, last_num + 1);
            matched.insert(p, 0);
        }
        Self {
            next,
            matched,
            inflight: BTreeMap::new(),
        }
    }

    pub fn peers(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.next.keys().copied()
    }

    pub fn next_of(&self, peer: NodeId) -> Option<u64> {
        self.next.get(&peer).copied()
    }

    pub fn matched_of(&self, peer: NodeId) -> Option<u64> {
        self.matched.get(&peer).copied()
    }

    /// Block number to send to `peer` now, if any.
    pub fn due(
        &self,
        peer: NodeId,
        log: &BlockLog,
        now: SimTime,
        retransmit: SimTime,
    ) -> Option<u64> {
        let next = *self.next.get(&peer)?;
        if next > log.last_num() {
            return None;
        }
        match self.inflight.get(&peer) {
            Some(&sent) if now.saturating_sub(sent) < retransmit => None,
            _ => Some(next),
        }
    }

    pub fn mark_sent(&mut self, peer: NodeId, now: SimTime) {
        self.inflight.insert(peer, now);
    }

    /// Folds a reply into the peer's progress.
    pub fn on_reply(&mut self, peer: NodeId, reply: &AppendEntriesReply, log: &BlockLog) {
        let (Some(next), Some(matched)) = (
            self.next.get(&peer).copied(),
            self.matched.get(&peer).copied(),
        ) else {
            return;
        };
        let last = log.last_num();
        let (new_next, new_matched) = match (reply.for_block, reply.success) {
            (Some(n), true) => {
                self.inflight.remove(&peer);
                (next.max(n + 1), matched.max(n))
            }
            (Some(_), false) => {
                self.inflight.remove(&peer);
                (next.min(reply.last_num + 1).max(matched + 1), matched)
            }
            (None, _) => {
                if log.hash_at(reply.last_num) == Some(reply.last_hash) {
                    let m = matched.max(reply.last_num);
                    if self.inflight.contains_key(&peer) && next > m + 1 {
                        // a block is already on its way
                        (next, m)
                    } else {
                        (m + 1, m)
                    }
                } else {
                    (next.min(reply.last_num.min(last)).max(matched + 1), matched)
                }
            }
        };
        self.next.insert(peer, new_next.min(last + 1).max(1));
        self.matched.insert(peer, new_matched);
    }

    /// Highest block of `term` held by at least `quorum` replicas, the
    /// leader included.
    pub fn quorum_point(&self, log: &BlockLog, term: Term, quorum: usize) -> Option<u64> {
        let mut best = None;
        for n in (log.commit_num() + 1)..=log.last_num() {
            if log.term_at(n) != Some(term) {
                continue;
            }
            let holders = 1 + self.matched.values().filter(|&&m| m >= n).count();
            if holders >= quorum {
                best = Some(n);
            }
        }
        best
    }
}
