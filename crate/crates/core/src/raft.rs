//! Plain Raft over the same blocks, messages and timers as the RAC replica:
//! no risk lists, no evaluators, no certificates.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ledger::{Block, NodeId, SimTime, Term, TransactionRequest};
use crate::protocol::message::*;
use crate::protocol::{
    Addr, BlockLog, Cluster, Effects, Input, NodeFaults, Note, Replica, Replicator, Timer,
};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RaftRole {
    Follower,
    Candidate,
    Leader,
}

impl RaftRole {
    pub fn name(self) -> &'static str {
        match self {
            Self::Follower => "follower",
            Self::Candidate => "candidate",
            Self::Leader => "leader",
        }
    }
}

#[derive(Debug)]
struct LeaderState {
    queue: VecDeque<TransactionRequest>,
    queued: BTreeSet<u64>,
    repl: Replicator,
}

pub struct RaftNode {
    id: NodeId,
    cluster: Arc<Cluster>,
    faults: NodeFaults,
    rng: ChaCha8Rng,
    role: RaftRole,
    term: Term,
    voted_for: Option<NodeId>,
    leader: Option<NodeId>,
    log: BlockLog,
    election_gen: u64,
    votes: BTreeSet<NodeId>,
    lead: Option<LeaderState>,
}

impl RaftNode {
    pub fn new(id: NodeId, cluster: Arc<Cluster>, faults: NodeFaults) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(seed::derive(
            cluster.seed,
            &[seed::tag::TIMER, u64::from(id.value)],
        ));
        Self {
            id,
            cluster,
            faults,
            rng,
            role: RaftRole::Follower,
            term: Term(0),
            voted_for: None,
            leader: None,
            log: BlockLog::new(),
            election_gen: 0,
            votes: BTreeSet::new(),
            lead: None,
        }
    }

    pub fn role(&self) -> RaftRole {
        self.role
    }

    pub fn voted_for(&self) -> Option<NodeId> {
        self.voted_for
    }

    pub fn leader(&self) -> Option<NodeId> {
        self.leader
    }

    fn arm_election(&mut self, now: SimTime, fx: &mut Effects) {
        self.election_gen += 1;
        let cfg = &self.cluster.config;
        let (lo, hi) = (cfg.election_timeout_min.0, cfg.election_timeout_max.0);
        let d = self.rng.gen_range(lo..=hi);
        fx.timer(now + SimTime(d), Timer::Election(self.election_gen));
    }

    fn observe_term(&mut self, term: Term, fx: &mut Effects) -> bool {
        if term <= self.term {
            return false;
        }
        self.term = term;
        self.voted_for = None;
        self.leader = None;
        self.step_down(fx);
        true
    }

    fn step_down(&mut self, fx: &mut Effects) {
        if self.role != RaftRole::Follower {
            fx.note(Note::SteppedDown { term: self.term });
        }
        self.role = RaftRole::Follower;
        self.lead = None;
        self.votes.clear();
    }

    fn others(&self) -> Vec<NodeId> {
        self.cluster
            .nodes
            .iter()
            .copied()
            .filter(|n| *n != self.id)
            .collect()
    }

    fn on_election_timeout(&mut self, now: SimTime, fx: &mut Effects) {
        if self.role == RaftRole::Leader {
            return;
        }
        self.term = self.term.next();
        self.role = RaftRole::Candidate;
        self.voted_for = Some(self.id);
        self.leader = None;
        self.votes = BTreeSet::from([self.id]);
        fx.note(Note::Candidacy { term: self.term });
        let rv = RequestVote {
            term: self.term,
            candidate_id: self.id,
            last_block_num: self.log.last_num(),
            last_block_term: self.log.last_term(),
        };
        for n in self.others() {
            fx.send(n, Message::RequestVote(rv.clone()));
        }
        self.arm_election(now, fx);
        self.try_win(now, fx);
    }

    fn on_request_vote(&mut self, now: SimTime, from: NodeId, rv: RequestVote, fx: &mut Effects) {
        if self.observe_term(rv.term, fx) {
            self.arm_election(now, fx);
        }
        let reason = if rv.term < self.term {
            Some("stale_term")
        } else if rv.candidate_id != from {
            Some("sender_mismatch")
        } else if self.voted_for.is_some_and(|v| v != from) && !self.cluster.config.grant_every_vote
        {
            Some("already_voted")
        } else if !self
            .log
            .is_up_to_date(rv.last_block_term, rv.last_block_num)
        {
            Some("stale_log")
        } else {
            None
        };
        let granted = reason.is_none();
        match reason {
            None => {
                self.voted_for = Some(from);
                self.arm_election(now, fx);
                fx.note(Note::VoteGranted {
                    candidate: from,
                    term: self.term,
                });
            }
            Some(reason) => fx.note(Note::VoteDenied {
                candidate: rv.candidate_id,
                term: rv.term,
                reason,
            }),
        }
        fx.send(
            from,
            Message::VoteReply(VoteReply {
                term: self.term,
                voter: self.id,
                vote_granted: granted,
            }),
        );
    }

    fn on_vote_reply(&mut self, now: SimTime, from: NodeId, vr: VoteReply, fx: &mut Effects) {
        if self.observe_term(vr.term, fx) {
            self.arm_election(now, fx);
            return;
        }
        if self.role != RaftRole::Candidate || vr.term != self.term || vr.voter != from {
            return;
        }
        if vr.vote_granted {
            self.votes.insert(from);
            self.try_win(now, fx);
        }
    }

    fn try_win(&mut self, now: SimTime, fx: &mut Effects) {
        if self.role != RaftRole::Candidate || self.votes.len() < self.cluster.quorum() {
            return;
        }
        self.role = RaftRole::Leader;
        self.leader = Some(self.id);
        self.election_gen += 1;
        fx.note(Note::Elected {
            term: self.term,
            votes: self.votes.len(),
        });
        let mut st = LeaderState {
            queue: VecDeque::new(),
            queued: BTreeSet::new(),
            repl: Replicator::new(self.others(), self.log.last_num()),
        };
        // stands in for the usual no-op entry: a block of this term carries
        // the stranded entries, and commit drops the duplicates
        for n in self.log.commit_num() + 1..=self.log.last_num() {
            for e in &self.log.get(n).expect("inside chain").entries {
                if !self.log.is_committed(e.request_id) && st.queued.insert(e.request_id) {
                    st.queue.push_back(e.clone());
                }
            }
        }
        self.lead = Some(st);
        self.heartbeat(now, fx);
        fx.note(Note::Established { term: self.term });
        let cfg = &self.cluster.config;
        fx.timer(now + cfg.heartbeat_interval, Timer::Heartbeat(self.term));
        fx.timer(now + cfg.batch_interval, Timer::Batch(self.term));
    }

    fn append_entries(&self, block: Option<u64>) -> AppendEntries {
        AppendEntries {
            term: self.term,
            accountant_id: self.id,
            block: block.and_then(|n| self.log.get(n).cloned()),
            block_term: block.and_then(|n| self.log.term_at(n)).unwrap_or_default(),
            certificate: Certificate::new(),
            commit_num: self.log.commit_num(),
            commit_hash: self.log.commit_hash(),
        }
    }

    fn heartbeat(&mut self, now: SimTime, fx: &mut Effects) {
        let hb = Message::AppendEntries(self.append_entries(None));
        for p in self.others() {
            fx.send(p, hb.clone());
            self.pump(now, p, fx);
        }
    }

    fn pump(&mut self, now: SimTime, peer: NodeId, fx: &mut Effects) {
        let retransmit = self.cluster.config.retransmit;
        let Some(n) = self
            .lead
            .as_ref()
            .and_then(|l| l.repl.due(peer, &self.log, now, retransmit))
        else {
            return;
        };
        fx.send(peer, Message::AppendEntries(self.append_entries(Some(n))));
        if let Some(l) = self.lead.as_mut() {
            l.repl.mark_sent(peer, now);
        }
    }

    fn package(&mut self, now: SimTime, fx: &mut Effects) {
        let max = self.cluster.config.max_batch;
        let Some(l) = self.lead.as_mut() else {
            return;
        };
        if l.queue.is_empty() {
            return;
        }
        let take = l.queue.len().min(max);
        let mut entries: Vec<TransactionRequest> = l.queue.drain(..take).collect();
        for e in &entries {
            l.queued.remove(&e.request_id);
        }
        let tampered = self.faults.tamper;
        if tampered {
            if let Some(b) = entries[0].payload.first_mut() {
                *b ^= 0xff;
            }
        }
        let block = Block::new(self.log.last_num() + 1, self.log.last_hash(), now, entries);
        let num = block.block_num;
        let n_entries = block.entries.len();
        let Ok(digest) = self.log.append_own(block, self.term) else {
            return;
        };
        fx.note(Note::Proposed {
            block_num: num,
            digest,
            entries: n_entries,
            tampered,
        });
        fx.note(Note::Appended {
            block_num: num,
            digest,
            empty: false,
            block_term: self.term,
        });
        for p in self.others() {
            self.pump(now, p, fx);
        }
        self.advance(fx);
    }

    fn advance(&mut self, fx: &mut Effects) {
        let quorum = self.cluster.quorum();
        let Some(k) = self
            .lead
            .as_ref()
            .and_then(|l| l.repl.quorum_point(&self.log, self.term, quorum))
        else {
            return;
        };
        let done = self.log.advance_commit(k);
        for c in done {
            for e in &c.fresh {
                fx.reply_client(
                    e.client_id,
                    Message::ClientReply(ClientReply {
                        request_id: e.request_id,
                        block_num: c.block_num,
                    }),
                );
            }
            fx.note(commit_note(&c, true));
        }
    }

    fn on_client_request(
        &mut self,
        now: SimTime,
        from: Addr,
        req: ClientRequest,
        fx: &mut Effects,
    ) {
        if req.judgment_copy {
            return;
        }
        let tx = req.tx;
        if self.role == RaftRole::Leader {
            let committed = self.log.is_committed(tx.request_id);
            let pending = self.log.uncommitted_ids().contains(&tx.request_id);
            let max = self.cluster.config.max_batch;
            let Some(l) = self.lead.as_mut() else {
                return;
            };
            if !committed && !pending && l.queued.insert(tx.request_id) {
                l.queue.push_back(tx);
            }
            if l.queue.len() >= max {
                self.package(now, fx);
            }
            return;
        }
        match (from, self.leader) {
            (Addr::Client(_), Some(l)) if l != self.id => fx.send(
                l,
                Message::ClientRequest(ClientRequest {
                    tx,
                    judgment_copy: false,
                }),
            ),
            _ => fx.reply_client(
                tx.client_id,
                Message::Redirect(Redirect {
                    request_id: tx.request_id,
                    leader: self.leader,
                }),
            ),
        }
    }

    fn on_append_entries(
        &mut self,
        now: SimTime,
        from: NodeId,
        ae: AppendEntries,
        fx: &mut Effects,
    ) {
        let for_block = ae.block.as_ref().map(|b| b.block_num);
        if ae.term < self.term || ae.accountant_id != from {
            self.reply(from, false, for_block, None, fx);
            return;
        }
        self.observe_term(ae.term, fx);
        if self.role == RaftRole::Leader {
            return;
        }
        if self.role == RaftRole::Candidate {
            self.step_down(fx);
        }
        self.leader = Some(from);
        self.arm_election(now, fx);
        let Some(block) = ae.block else {
            self.follow(ae.commit_num, ae.commit_hash, fx);
            self.reply(from, true, None, None, fx);
            return;
        };
        let num = block.block_num;
        let digest = block.hash();
        let empty = block.empty_flag;
        let (ok, hint) = match self.log.offer(block, ae.block_term) {
            crate::protocol::Offer::Appended => {
                fx.note(Note::Appended {
                    block_num: num,
                    digest,
                    empty,
                    block_term: ae.block_term,
                });
                (true, None)
            }
            crate::protocol::Offer::Duplicate => (true, None),
            crate::protocol::Offer::Missing { have } => (false, Some(have)),
            crate::protocol::Offer::Conflict { at } => (false, Some(at.saturating_sub(1))),
            crate::protocol::Offer::Rejected(_) => (false, Some(self.log.commit_num())),
        };
        self.follow(ae.commit_num, ae.commit_hash, fx);
        self.reply(from, ok, Some(num), if ok { Some(num) } else { hint }, fx);
    }

    fn follow(&mut self, num: u64, hash: crate::ledger::Digest, fx: &mut Effects) {
        for c in self.log.follow_commit(num, hash) {
            fx.note(commit_note(&c, false));
        }
    }

    fn reply(
        &self,
        to: NodeId,
        success: bool,
        for_block: Option<u64>,
        hint: Option<u64>,
        fx: &mut Effects,
    ) {
        let last_num = hint.unwrap_or(self.log.last_num());
        fx.send(
            to,
            Message::AppendEntriesReply(AppendEntriesReply {
                term: self.term,
                success,
                for_block,
                last_num,
                last_hash: self
                    .log
                    .hash_at(last_num)
                    .unwrap_or(crate::ledger::Digest::ZERO),
            }),
        );
    }

    fn on_append_entries_reply(
        &mut self,
        now: SimTime,
        from: NodeId,
        r: AppendEntriesReply,
        fx: &mut Effects,
    ) {
        if self.observe_term(r.term, fx) {
            self.arm_election(now, fx);
            return;
        }
        if self.role != RaftRole::Leader || r.term != self.term {
            return;
        }
        if let Some(l) = self.lead.as_mut() {
            l.repl.on_reply(from, &r, &self.log);
        }
        self.advance(fx);
        self.pump(now, from, fx);
    }

    fn on_timer(&mut self, now: SimTime, t: Timer, fx: &mut Effects) {
        match t {
            Timer::Election(g) if g == self.election_gen => self.on_election_timeout(now, fx),
            Timer::Heartbeat(term) if term == self.term && self.role == RaftRole::Leader => {
                self.heartbeat(now, fx);
                fx.timer(
                    now + self.cluster.config.heartbeat_interval,
                    Timer::Heartbeat(term),
                );
            }
            Timer::Batch(term) if term == self.term && self.role == RaftRole::Leader => {
                self.package(now, fx);
                fx.timer(now + self.cluster.config.batch_interval, Timer::Batch(term));
            }
            _ => {}
        }
    }
}

fn commit_note(c: &crate::protocol::CommittedBlock, by_leader: bool) -> Note {
    Note::Committed {
        block_num: c.block_num,
        digest: c.digest,
        empty: c.empty,
        by_leader,
        fresh: c
            .fresh
            .iter()
            .map(|e| (e.request_id, e.client_id, e.submit_time))
            .collect(),
    }
}

impl Replica for RaftNode {
    fn id(&self) -> NodeId {
        self.id
    }

    fn role_name(&self) -> &'static str {
        self.role.name()
    }

    fn is_leader(&self) -> bool {
        self.role == RaftRole::Leader
    }

    fn term(&self) -> Term {
        self.term
    }

    fn log(&self) -> &BlockLog {
        &self.log
    }

    fn start(&mut self, now: SimTime, fx: &mut Effects) {
        self.arm_election(now, fx);
    }

    fn step(&mut self, now: SimTime, input: Input, fx: &mut Effects) {
        match input {
            Input::Timer(t) => self.on_timer(now, t, fx),
            Input::Restart => {
                self.step_down(fx);
                self.leader = None;
                self.arm_election(now, fx);
            }
            Input::Deliver { from, msg } => match (from, msg) {
                (from @ Addr::Client(_), Message::ClientRequest(m)) => {
                    self.on_client_request(now, from, m, fx)
                }
                (Addr::Client(_), _) => {}
                (Addr::Node(n), Message::RequestVote(m)) => self.on_request_vote(now, n, m, fx),
                (Addr::Node(n), Message::VoteReply(m)) => self.on_vote_reply(now, n, m, fx),
                (Addr::Node(n), Message::AppendEntries(m)) => self.on_append_entries(now, n, m, fx),
                (Addr::Node(n), Message::AppendEntriesReply(m)) => {
                    self.on_append_entries_reply(now, n, m, fx)
                }
                (from @ Addr::Node(_), Message::ClientRequest(m)) => {
                    self.on_client_request(now, from, m, fx)
                }
                // risk and judgment traffic has no meaning here
                (Addr::Node(_), _) => {}
            },
        }
    }

    fn faults_mut(&mut self) -> &mut NodeFaults {
        &mut self.faults
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::OrgId;
    use crate::protocol::ProtocolConfig;

    fn id(v: u32) -> NodeId {
        NodeId::new(v, OrgId(0))
    }

    fn node(v: u32, n: u32) -> RaftNode {
        let c = Arc::new(Cluster {
            nodes: (0..n).map(id).collect(),
            evaluators: BTreeSet::new(),
            config: ProtocolConfig::default(),
            seed: 3,
        });
        RaftNode::new(id(v), c, NodeFaults::default())
    }

    fn campaign(r: &mut RaftNode) -> Effects {
        let mut fx = Effects::default();
        r.start(SimTime::ZERO, &mut fx);
        let (at, t) = fx.timers[0];
        let mut fx = Effects::default();
        r.step(at, Input::Timer(t), &mut fx);
        fx
    }

    fn deliver(r: &mut RaftNode, from: u32, msg: Message) -> Effects {
        let mut fx = Effects::default();
        r.step(
            SimTime::from_ms(400),
            Input::Deliver {
                from: Addr::Node(id(from)),
                msg,
            },
            &mut fx,
        );
        fx
    }

    fn request(fx: &Effects) -> RequestVote {
        fx.sends
            .iter()
            .find_map(|(_, m)| match m {
                Message::RequestVote(rv) => Some(rv.clone()),
                _ => None,
            })
            .unwrap()
    }

    #[test]
    fn timeout_starts_a_campaign() {
        let mut a = node(0, 3);
        let fx = campaign(&mut a);
        assert_eq!(a.role(), RaftRole::Candidate);
        assert_eq!(a.term(), Term(1));
        assert_eq!(a.voted_for(), Some(id(0)));
        assert_eq!(fx.sends.len(), 2);
    }

    #[test]
    fn one_vote_per_term() {
        let mut a = node(0, 3);
        let mut b = node(1, 3);
        let rv_a = request(&campaign(&mut a));
        let rv_b = request(&campaign(&mut b));
        let mut c = node(2, 3);
        deliver(&mut c, 0, Message::RequestVote(rv_a));
        let fx = deliver(&mut c, 1, Message::RequestVote(rv_b));
        assert!(fx.notes.iter().any(|n| matches!(
            n,
            Note::VoteDenied {
                reason: "already_voted",
                ..
            }
        )));
        assert_eq!(c.voted_for(), Some(id(0)));
    }

    #[test]
    fn majority_makes_a_leader() {
        let mut a = node(0, 3);
        campaign(&mut a);
        let fx = deliver(
            &mut a,
            1,
            Message::VoteReply(VoteReply {
                term: Term(1),
                voter: id(1),
                vote_granted: true,
            }),
        );
        assert_eq!(a.role(), RaftRole::Leader);
        assert!(fx
            .notes
            .iter()
            .any(|n| matches!(n, Note::Established { .. })));
    }

    #[test]
    fn vote_reply_from_someone_else_is_ignored() {
        let mut a = node(0, 5);
        campaign(&mut a);
        deliver(
            &mut a,
            1,
            Message::VoteReply(VoteReply {
                term: Term(1),
                voter: id(2),
                vote_granted: true,
            }),
        );
        deliver(
            &mut a,
            2,
            Message::VoteReply(VoteReply {
                term: Term(1),
                voter: id(2),
                vote_granted: true,
            }),
        );
        assert_eq!(a.role(), RaftRole::Candidate);
    }
}
