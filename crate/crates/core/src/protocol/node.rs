use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::log::{BlockLog, CommittedBlock, Offer};
use super::message::*;
use super::replicate::Replicator;
use super::*;
use crate::behavior::{ActionSymbol, BehaviorRole};
use crate::ledger::{Block, Digest, NodeId, RiskNodeList, SimTime, Term, TransactionRequest};
use crate::risk::{self, SyscallTrace};
use crate::seed;

/// Risk lists received for one election.
#[derive(Debug, Clone)]
struct RnlRound {
    term: Term,
    replies: BTreeMap<NodeId, RiskNodeList>,
    settled: bool,
}

#[derive(Debug, Clone)]
struct Deferred {
    from: NodeId,
    msg: Judgment,
    deadline: SimTime,
}

#[derive(Debug, Default)]
struct EvaluatorState {
    traces: BTreeMap<Term, BTreeMap<NodeId, SyscallTrace>>,
    assessed: BTreeSet<Term>,
    results: BTreeMap<Term, Option<BTreeSet<NodeId>>>,
    copies: BTreeMap<u64, TransactionRequest>,
    deferred: Vec<Deferred>,
    given: BTreeMap<(Term, u64), JudgmentVerdict>,
}

#[derive(Debug)]
struct Judging {
    block: Block,
    digest: Digest,
    verdicts: Certificate,
}

#[derive(Debug)]
struct AccountantState {
    queue: VecDeque<TransactionRequest>,
    queued: BTreeSet<u64>,
    proposed: BTreeSet<u64>,
    repl: Replicator,
    judging: Option<Judging>,
    certs: BTreeMap<u64, Certificate>,
}

enum Judged {
    Ready(JudgmentVerdict, &'static str),
    Wait(&'static str),
}

/// One RAC replica. All state changes go through [`Replica::step`].
pub struct RacNode {
    id: NodeId,
    cluster: Arc<Cluster>,
    faults: NodeFaults,
    traces: Arc<dyn TraceSource + Send + Sync>,
    rng: ChaCha8Rng,
    role: Role,
    term: Term,
    voted_for: Option<NodeId>,
    leader: Option<NodeId>,
    log: BlockLog,
    rnl: RiskNodeList,
    /// Listed on risk assessment alone. Each settled round replaces these;
    /// behaviour listings stay.
    assessed: BTreeSet<NodeId>,
    election_gen: u64,
    /// After an empty block the node moved to a fresh term without voting;
    /// it may stand in that term instead of opening another one.
    campaign_in_place: bool,
    votes: BTreeSet<NodeId>,
    trace_sent: Option<Term>,
    round: Option<RnlRound>,
    deferred_votes: Vec<(NodeId, RequestVote)>,
    strikes: BTreeMap<NodeId, u32>,
    eval: Option<EvaluatorState>,
    acct: Option<AccountantState>,
}

impl RacNode {
    pub fn new(
        id: NodeId,
        cluster: Arc<Cluster>,
        faults: NodeFaults,
        traces: Arc<dyn TraceSource + Send + Sync>,
    ) -> Self {
        let is_eval = cluster.is_evaluator(&id);
        let rng = ChaCha8Rng::seed_from_u64(seed::derive(
            cluster.seed,
            &[seed::tag::TIMER, u64::from(id.value)],
        ));
        Self {
            id,
            cluster,
            faults,
            traces,
            rng,
            role: if is_eval {
                Role::Evaluator
            } else {
                Role::Follower
            },
            term: Term(0),
            voted_for: None,
            leader: None,
            log: BlockLog::new(),
            rnl: RiskNodeList::new(),
            assessed: BTreeSet::new(),
            election_gen: 0,
            campaign_in_place: false,
            votes: BTreeSet::new(),
            trace_sent: None,
            round: None,
            deferred_votes: Vec::new(),
            strikes: BTreeMap::new(),
            eval: is_eval.then(EvaluatorState::default),
            acct: None,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn voted_for(&self) -> Option<NodeId> {
        self.voted_for
    }

    pub fn leader(&self) -> Option<NodeId> {
        self.leader
    }

    pub fn risk_list(&self) -> &RiskNodeList {
        &self.rnl
    }

    fn cfg(&self) -> &ProtocolConfig {
        &self.cluster.config
    }

    fn is_evaluator(&self) -> bool {
        self.eval.is_some()
    }

    fn base_role(&self) -> Role {
        if self.is_evaluator() {
            Role::Evaluator
        } else {
            Role::Follower
        }
    }

    fn group_size(&self) -> usize {
        self.cluster.evaluators.len()
    }

    fn act(
        &self,
        fx: &mut Effects,
        role: BehaviorRole,
        block_num: Option<u64>,
        action: ActionSymbol,
    ) {
        fx.actions.push(BehaviorEvent {
            role,
            term: self.term,
            block_num,
            action,
        });
    }

    fn arm_election(&mut self, now: SimTime, fx: &mut Effects) {
        self.election_gen += 1;
        if self.is_evaluator() {
            return;
        }
        let (lo, hi) = (
            self.cfg().election_timeout_min.0,
            self.cfg().election_timeout_max.0,
        );
        let d = self.rng.gen_range(lo..=hi);
        fx.timer(now + SimTime(d), Timer::Election(self.election_gen));
    }

    fn disarm_election(&mut self) {
        self.election_gen += 1;
    }

    /// Standard term rule: a higher term demotes the node to its base role.
    fn observe_term(&mut self, term: Term, fx: &mut Effects) -> bool {
        if term <= self.term {
            return false;
        }
        self.term = term;
        self.voted_for = None;
        self.leader = None;
        self.campaign_in_place = false;
        self.deferred_votes.clear();
        self.step_down(fx);
        true
    }

    fn step_down(&mut self, fx: &mut Effects) {
        if matches!(self.role, Role::Candidate | Role::Accountant) {
            fx.note(Note::SteppedDown { term: self.term });
        }
        self.role = self.base_role();
        self.acct = None;
        self.votes.clear();
    }

    /// Leaves the current term after an accountant was found Byzantine.
    fn depose(&mut self, now: SimTime, fx: &mut Effects) {
        self.term = self.term.next();
        self.voted_for = None;
        self.leader = None;
        self.deferred_votes.clear();
        self.step_down(fx);
        self.campaign_in_place = true;
        self.arm_election(now, fx);
    }

    fn list(&mut self, node: NodeId, reason: RnlReason, fx: &mut Effects) {
        self.assessed.remove(&node);
        if self.rnl.insert(node, self.term) {
            fx.note(Note::RnlAdded { node, reason });
        }
    }

    /// Drops assessment listings that `keep` no longer backs.
    fn expire_assessed(&mut self, keep: &BTreeSet<NodeId>, fx: &mut Effects) {
        let stale: Vec<NodeId> = self.assessed.difference(keep).copied().collect();
        for node in stale {
            self.assessed.remove(&node);
            self.rnl.remove(&node);
            fx.note(Note::RnlRemoved { node });
        }
    }

    fn round_settled(&self, term: Term) -> bool {
        self.round
            .as_ref()
            .is_some_and(|r| r.term == term && r.settled)
    }

    fn round_pending(&self, term: Term) -> bool {
        self.round
            .as_ref()
            .is_some_and(|r| r.term == term && !r.settled)
    }

    fn ensure_round(&mut self, now: SimTime, term: Term, fx: &mut Effects) {
        if self.round.as_ref().is_some_and(|r| r.term >= term) {
            return;
        }
        self.round = Some(RnlRound {
            term,
            replies: BTreeMap::new(),
            settled: false,
        });
        if self.group_size() == 0 {
            self.settle(now, fx);
        } else {
            fx.timer(now + self.cfg().rnl_timeout, Timer::RnlSettle(term));
        }
    }

    /// Phase one: send last term's syscalls to every evaluator, once per
    /// term.
    fn submit_trace(&mut self, now: SimTime, fx: &mut Effects) {
        let term = self.term;
        self.ensure_round(now, term, fx);
        if self.trace_sent == Some(term) {
            return;
        }
        self.trace_sent = Some(term);
        let trace = self.traces.trace(self.id, term);
        fx.note(Note::TraceSubmitted {
            term,
            len: trace.calls.len(),
        });
        let evaluators: Vec<NodeId> = self.cluster.evaluators.iter().copied().collect();
        for e in evaluators {
            fx.send(
                e,
                Message::RiskCompute(RiskCompute {
                    term,
                    node_id: self.id,
                    system_call: trace.clone(),
                }),
            );
        }
        if !self.is_evaluator() {
            self.act(
                fx,
                BehaviorRole::Follower,
                None,
                ActionSymbol::SendSystemcall,
            );
        }
    }

    fn settle(&mut self, now: SimTime, fx: &mut Effects) {
        let Some(round) = self.round.as_mut() else {
            return;
        };
        if round.settled {
            return;
        }
        round.settled = true;
        let (term, replies) = (round.term, round.replies.len());
        let need = majority(self.cluster.evaluators.len());
        let backed = (replies > 0 && replies >= need).then(|| backed_by(&round.replies, need));
        if let Some(backed) = backed {
            self.expire_assessed(&backed, fx);
        }
        fx.note(Note::RnlSettled {
            term,
            replies,
            listed: self.rnl.len(),
        });
        if self.trace_sent == Some(term) && !self.is_evaluator() {
            let a = if self.rnl.contains(&self.id) {
                ActionSymbol::Abnormal
            } else {
                ActionSymbol::Normal
            };
            self.act(fx, BehaviorRole::Follower, None, a);
        }
        if term != self.term {
            return;
        }
        if self.role == Role::Candidate && self.rnl.contains(&self.id) && !self.faults.sybil {
            self.step_down(fx);
        }
        for (cand, rv) in core::mem::take(&mut self.deferred_votes) {
            self.decide_vote(now, cand, &rv, fx);
        }
        self.try_win(now, fx);
    }

    fn on_election_timeout(&mut self, now: SimTime, fx: &mut Effects) {
        if self.role == Role::Accountant || self.is_evaluator() {
            return;
        }
        if self.rnl.contains(&self.id) && !self.faults.sybil {
            // listed nodes can only follow
            self.arm_election(now, fx);
            return;
        }
        if !(self.campaign_in_place && self.voted_for.is_none()) {
            self.term = self.term.next();
        }
        self.campaign_in_place = false;
        self.role = Role::Candidate;
        self.voted_for = Some(self.id);
        self.leader = None;
        self.acct = None;
        self.deferred_votes.clear();
        self.votes = BTreeSet::from([self.id]);
        fx.note(Note::Candidacy { term: self.term });
        self.submit_trace(now, fx);
        let rv = RequestVote {
            term: self.term,
            candidate_id: self.id,
            last_block_num: self.log.last_num(),
            last_block_term: self.log.last_term(),
        };
        let others: Vec<NodeId> = self
            .cluster
            .nodes
            .iter()
            .copied()
            .filter(|n| *n != self.id)
            .collect();
        for n in &others {
            fx.send(*n, Message::RequestVote(rv.clone()));
        }
        if self.faults.sybil {
            let forged = match self.cfg().forged_votes {
                0 => self.cluster.size() / 2,
                k => k,
            };
            for claimed in others.iter().take(forged) {
                fx.send(
                    self.id,
                    Message::VoteReply(VoteReply {
                        term: self.term,
                        voter: *claimed,
                        vote_granted: true,
                    }),
                );
            }
        }
        self.arm_election(now, fx);
        self.try_win(now, fx);
    }

    fn on_request_vote(&mut self, now: SimTime, from: NodeId, rv: RequestVote, fx: &mut Effects) {
        if rv.term < self.term {
            self.reply_vote(from, false, fx);
            fx.note(Note::VoteDenied {
                candidate: rv.candidate_id,
                term: rv.term,
                reason: "stale_term",
            });
            return;
        }
        if self.observe_term(rv.term, fx) {
            self.arm_election(now, fx);
        }
        self.submit_trace(now, fx);
        if self.round_settled(rv.term) {
            self.decide_vote(now, from, &rv, fx);
        } else {
            self.deferred_votes.push((from, rv));
        }
    }

    fn decide_vote(&mut self, now: SimTime, from: NodeId, rv: &RequestVote, fx: &mut Effects) {
        let cand = rv.candidate_id;
        let reason = if rv.term != self.term {
            Some("stale_term")
        } else if cand != from {
            Some("sender_mismatch")
        } else if self.rnl.contains(&cand) {
            Some("risk_listed")
        } else if self.voted_for.is_some_and(|v| v != cand) && !self.cfg().grant_every_vote {
            Some("already_voted")
        } else if !self
            .log
            .is_up_to_date(rv.last_block_term, rv.last_block_num)
        {
            Some("stale_log")
        } else {
            None
        };
        match reason {
            None => {
                self.voted_for = Some(cand);
                self.arm_election(now, fx);
                fx.note(Note::VoteGranted {
                    candidate: cand,
                    term: self.term,
                });
                self.reply_vote(from, true, fx);
            }
            Some(reason) => {
                fx.note(Note::VoteDenied {
                    candidate: cand,
                    term: rv.term,
                    reason,
                });
                self.reply_vote(from, false, fx);
            }
        }
    }

    fn reply_vote(&self, to: NodeId, granted: bool, fx: &mut Effects) {
        fx.send(
            to,
            Message::VoteReply(VoteReply {
                term: self.term,
                voter: self.id,
                vote_granted: granted,
            }),
        );
    }

    fn on_vote_reply(&mut self, now: SimTime, from: NodeId, vr: VoteReply, fx: &mut Effects) {
        if vr.term > self.term {
            self.observe_term(vr.term, fx);
            self.arm_election(now, fx);
            return;
        }
        if self.role != Role::Candidate || vr.term != self.term {
            return;
        }
        if vr.voter != from && !self.faults.sybil {
            fx.note(Note::ForgedVote {
                claimed: vr.voter,
                sender: from,
            });
            return;
        }
        if vr.vote_granted {
            self.votes.insert(vr.voter);
            self.try_win(now, fx);
        }
    }

    fn try_win(&mut self, now: SimTime, fx: &mut Effects) {
        if self.role != Role::Candidate || self.votes.len() < self.cluster.quorum() {
            return;
        }
        if !self.faults.sybil && (!self.round_settled(self.term) || self.rnl.contains(&self.id)) {
            return;
        }
        self.become_accountant(now, fx);
    }

    fn become_accountant(&mut self, now: SimTime, fx: &mut Effects) {
        self.role = Role::Accountant;
        self.leader = Some(self.id);
        self.disarm_election();
        fx.note(Note::Elected {
            term: self.term,
            votes: self.votes.len(),
        });
        let peers: Vec<NodeId> = self
            .cluster
            .nodes
            .iter()
            .copied()
            .filter(|n| *n != self.id)
            .collect();
        let mut st = AccountantState {
            queue: VecDeque::new(),
            queued: BTreeSet::new(),
            proposed: BTreeSet::new(),
            repl: Replicator::new(peers, self.log.last_num()),
            judging: None,
            certs: BTreeMap::new(),
        };
        // Entries stranded in blocks of earlier terms are proposed again;
        // commit keeps only the first occurrence.
        for n in self.log.commit_num() + 1..=self.log.last_num() {
            for e in &self.log.get(n).expect("inside chain").entries {
                if !self.log.is_committed(e.request_id) && st.queued.insert(e.request_id) {
                    st.queue.push_back(e.clone());
                }
            }
        }
        self.acct = Some(st);
        self.broadcast_heartbeat(now, fx);
        fx.note(Note::Established { term: self.term });
        fx.timer(
            now + self.cfg().heartbeat_interval,
            Timer::Heartbeat(self.term),
        );
        fx.timer(now + self.cfg().batch_interval, Timer::Batch(self.term));
    }

    fn append_entries(&self, block: Option<u64>) -> AppendEntries {
        let (block, block_term, certificate) = match block {
            None => (None, Term(0), Certificate::new()),
            Some(n) => (
                self.log.get(n).cloned(),
                self.log.term_at(n).unwrap_or_default(),
                self.acct
                    .as_ref()
                    .and_then(|a| a.certs.get(&n).cloned())
                    .unwrap_or_default(),
            ),
        };
        AppendEntries {
            term: self.term,
            accountant_id: self.id,
            block,
            block_term,
            certificate,
            commit_num: self.log.commit_num(),
            commit_hash: self.log.commit_hash(),
        }
    }

    fn broadcast_heartbeat(&mut self, now: SimTime, fx: &mut Effects) {
        let hb = Message::AppendEntries(self.append_entries(None));
        let peers: Vec<NodeId> = match &self.acct {
            Some(a) => a.repl.peers().collect(),
            None => return,
        };
        for p in &peers {
            fx.send(*p, hb.clone());
        }
        for p in peers {
            self.pump(now, p, fx);
        }
    }

    /// Sends `peer` its next block if nothing is outstanding.
    fn pump(&mut self, now: SimTime, peer: NodeId, fx: &mut Effects) {
        let retransmit = self.cfg().retransmit;
        let Some(n) = self
            .acct
            .as_ref()
            .and_then(|a| a.repl.due(peer, &self.log, now, retransmit))
        else {
            return;
        };
        let msg = self.append_entries(Some(n));
        fx.send(peer, Message::AppendEntries(msg));
        if let Some(a) = self.acct.as_mut() {
            a.repl.mark_sent(peer, now);
        }
    }

    fn pump_all(&mut self, now: SimTime, fx: &mut Effects) {
        let peers: Vec<NodeId> = match &self.acct {
            Some(a) => a.repl.peers().collect(),
            None => return,
        };
        for p in peers {
            self.pump(now, p, fx);
        }
    }

    fn on_client_request(
        &mut self,
        now: SimTime,
        from: Addr,
        req: ClientRequest,
        fx: &mut Effects,
    ) {
        let tx = req.tx;
        if let Some(ev) = self.eval.as_mut() {
            if !self.log.is_committed(tx.request_id) {
                ev.copies.entry(tx.request_id).or_insert_with(|| tx.clone());
                self.recheck_deferred(now, false, fx);
            }
            if req.judgment_copy {
                return;
            }
        }
        if req.judgment_copy {
            return;
        }
        if self.role == Role::Accountant {
            self.enqueue(tx);
            let full = self
                .acct
                .as_ref()
                .is_some_and(|a| a.queue.len() >= self.cfg().max_batch);
            if full {
                self.try_package(now, fx);
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

    fn enqueue(&mut self, tx: TransactionRequest) {
        let committed = self.log.is_committed(tx.request_id);
        let Some(a) = self.acct.as_mut() else {
            return;
        };
        if committed || a.proposed.contains(&tx.request_id) || !a.queued.insert(tx.request_id) {
            return;
        }
        a.queue.push_back(tx);
    }

    /// Phase four: package pending requests and ask the evaluators.
    fn try_package(&mut self, now: SimTime, fx: &mut Effects) {
        let max = self.cfg().max_batch;
        let judgment_timeout = self.cfg().judgment_timeout;
        let Some(a) = self.acct.as_mut() else {
            return;
        };
        if a.judging.is_some() || a.queue.is_empty() {
            return;
        }
        let take = a.queue.len().min(max);
        let mut entries: Vec<TransactionRequest> = a.queue.drain(..take).collect();
        for e in &entries {
            a.queued.remove(&e.request_id);
            a.proposed.insert(e.request_id);
        }
        let tampered = self.faults.tamper;
        if tampered {
            if let Some(b) = entries[0].payload.first_mut() {
                *b ^= 0xff;
            }
        }
        let block = Block::new(self.log.last_num() + 1, self.log.last_hash(), now, entries);
        let digest = block.hash();
        let num = block.block_num;
        fx.note(Note::Proposed {
            block_num: num,
            digest,
            entries: block.entries.len(),
            tampered,
        });
        self.act(
            fx,
            BehaviorRole::Accountant,
            Some(num),
            ActionSymbol::Receive,
        );
        self.act(
            fx,
            BehaviorRole::Accountant,
            Some(num),
            ActionSymbol::GenerateNewBlock,
        );
        let msg = Judgment {
            term: self.term,
            accountant_id: self.id,
            block: block.clone(),
        };
        for e in self.cluster.evaluators.iter() {
            fx.send(*e, Message::Judgment(msg.clone()));
        }
        self.act(
            fx,
            BehaviorRole::Accountant,
            Some(num),
            ActionSymbol::Broadcast,
        );
        if let Some(a) = self.acct.as_mut() {
            a.judging = Some(Judging {
                block,
                digest,
                verdicts: Certificate::new(),
            });
        }
        if self.group_size() == 0 {
            self.decide(now, fx);
        } else {
            fx.timer(
                now + judgment_timeout,
                Timer::Judgment {
                    term: self.term,
                    block_num: num,
                },
            );
        }
    }

    fn on_judgment_reply(
        &mut self,
        now: SimTime,
        from: NodeId,
        jr: JudgmentReply,
        fx: &mut Effects,
    ) {
        if jr.term > self.term {
            self.observe_term(jr.term, fx);
            self.arm_election(now, fx);
            return;
        }
        if jr.evaluator != from || !self.cluster.is_evaluator(&from) || jr.term != self.term {
            return;
        }
        let group = self.group_size();
        let Some(j) = self.acct.as_mut().and_then(|a| a.judging.as_mut()) else {
            return;
        };
        if j.block.block_num != jr.block_num || j.digest != jr.block_digest {
            return;
        }
        j.verdicts.insert(from, jr.verdict);
        if j.verdicts.len() == group {
            self.decide(now, fx);
        }
    }

    /// Phase six: keep or void the block, append it and replicate.
    fn decide(&mut self, now: SimTime, fx: &mut Effects) {
        let group = self.group_size();
        let Some(j) = self.acct.as_mut().and_then(|a| a.judging.take()) else {
            return;
        };
        let voided = certificate_voids(&j.verdicts, group);
        let num = j.block.block_num;
        let block = if voided { j.block.emptied() } else { j.block };
        let digest = match self.log.append_own(block, self.term) {
            Ok(d) => d,
            Err(_) => return,
        };
        fx.note(Note::Decided {
            block_num: num,
            digest,
            empty: voided,
            fails: j
                .verdicts
                .values()
                .filter(|v| **v == JudgmentVerdict::Fail)
                .count(),
            missing: group - j.verdicts.len(),
        });
        fx.note(Note::Appended {
            block_num: num,
            digest,
            empty: voided,
            block_term: self.term,
        });
        let action = if voided {
            ActionSymbol::EmptyBlock
        } else {
            ActionSymbol::ValidBlock
        };
        self.act(fx, BehaviorRole::Accountant, Some(num), action);
        if let Some(a) = self.acct.as_mut() {
            a.certs.insert(num, j.verdicts);
        }
        self.pump_all(now, fx);
        if voided {
            // the accountant sees its own empty block like everyone else
            self.list(self.id, RnlReason::EmptyBlock, fx);
            self.depose(now, fx);
        } else {
            self.advance(now, fx);
        }
    }

    fn on_append_entries_reply(
        &mut self,
        now: SimTime,
        from: NodeId,
        r: AppendEntriesReply,
        fx: &mut Effects,
    ) {
        if r.term > self.term {
            self.observe_term(r.term, fx);
            self.arm_election(now, fx);
            return;
        }
        if self.role != Role::Accountant || r.term != self.term {
            return;
        }
        if let Some(a) = self.acct.as_mut() {
            a.repl.on_reply(from, &r, &self.log);
        }
        self.advance(now, fx);
        self.pump(now, from, fx);
    }

    /// Commits whatever a quorum holds, answers clients and packages the
    /// next block.
    fn advance(&mut self, now: SimTime, fx: &mut Effects) {
        let quorum = self.cluster.quorum();
        let Some(k) = self
            .acct
            .as_ref()
            .and_then(|a| a.repl.quorum_point(&self.log, self.term, quorum))
        else {
            self.try_package(now, fx);
            return;
        };
        let done = self.log.advance_commit(k);
        for c in &done {
            for e in &c.fresh {
                fx.reply_client(
                    e.client_id,
                    Message::ClientReply(ClientReply {
                        request_id: e.request_id,
                        block_num: c.block_num,
                    }),
                );
            }
            if let Some(a) = self.acct.as_mut() {
                for e in &self.log.get(c.block_num).expect("committed").entries {
                    a.proposed.remove(&e.request_id);
                    if a.queued.remove(&e.request_id) {
                        a.queue.retain(|q| q.request_id != e.request_id);
                    }
                }
            }
        }
        self.note_commits(done, true, fx);
        self.try_package(now, fx);
    }

    fn note_commits(&mut self, done: Vec<CommittedBlock>, by_leader: bool, fx: &mut Effects) {
        for c in done {
            if let Some(ev) = self.eval.as_mut() {
                for e in &self.log.get(c.block_num).expect("committed").entries {
                    ev.copies.remove(&e.request_id);
                }
            }
            fx.note(Note::Committed {
                block_num: c.block_num,
                digest: c.digest,
                empty: c.empty,
                by_leader,
                fresh: c
                    .fresh
                    .iter()
                    .map(|e| (e.request_id, e.client_id, e.submit_time))
                    .collect(),
            });
        }
    }

    fn ae_reply(
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
                last_hash: self.log.hash_at(last_num).unwrap_or(Digest::ZERO),
            }),
        );
    }

    fn on_append_entries(
        &mut self,
        now: SimTime,
        from: NodeId,
        ae: AppendEntries,
        fx: &mut Effects,
    ) {
        let for_block = ae.block.as_ref().map(|b| b.block_num);
        if ae.term < self.term {
            self.ae_reply(from, false, for_block, None, fx);
            return;
        }
        if ae.accountant_id != from || self.rnl.contains(&from) {
            fx.note(Note::IgnoredLeader {
                leader: from,
                reason: if ae.accountant_id != from {
                    "sender_mismatch"
                } else {
                    "risk_listed"
                },
            });
            self.ae_reply(from, false, for_block, None, fx);
            return;
        }
        if self.round_pending(ae.term) {
            // wait for this term's risk lists before accepting its leader
            return;
        }
        self.observe_term(ae.term, fx);
        if self.role == Role::Accountant {
            // a second leader in our own term can only be Byzantine
            fx.note(Note::IgnoredLeader {
                leader: from,
                reason: "duplicate_leader",
            });
            return;
        }
        if self.role == Role::Candidate {
            self.step_down(fx);
        }
        if self.leader != Some(from) {
            self.leader = Some(from);
        }
        self.campaign_in_place = false;
        self.arm_election(now, fx);

        let Some(block) = ae.block else {
            let done = self.log.follow_commit(ae.commit_num, ae.commit_hash);
            self.note_commits(done, false, fx);
            self.ae_reply(from, true, None, None, fx);
            return;
        };
        let num = block.block_num;
        let own = ae.block_term == ae.term;
        let group = self.group_size();
        if own {
            let foreign = ae.certificate.keys().any(|e| !self.cluster.is_evaluator(e));
            // verdicts are unsigned, so each evaluator checks its own entry
            let misreported = self.eval.as_ref().is_some_and(|ev| {
                ae.certificate
                    .get(&self.id)
                    .is_some_and(|v| ev.given.get(&(ae.term, num)) != Some(v))
            });
            if foreign
                || misreported
                || block.empty_flag != certificate_voids(&ae.certificate, group)
            {
                fx.note(Note::CertificateMismatch { accountant: from });
                self.list(from, RnlReason::CertificateMismatch, fx);
                self.depose(now, fx);
                self.ae_reply(from, false, Some(num), None, fx);
                return;
            }
        }
        let follower = !self.is_evaluator();
        if follower {
            self.act(fx, BehaviorRole::Follower, Some(num), ActionSymbol::Receive);
        }
        let empty = block.empty_flag;
        let digest = block.hash();
        let (ok, hint) = match self.log.offer(block, ae.block_term) {
            Offer::Appended => {
                fx.note(Note::Appended {
                    block_num: num,
                    digest,
                    empty,
                    block_term: ae.block_term,
                });
                if follower {
                    self.act(
                        fx,
                        BehaviorRole::Follower,
                        Some(num),
                        ActionSymbol::AdditionNewBlock,
                    );
                }
                self.recheck_deferred(now, false, fx);
                (true, None)
            }
            Offer::Duplicate => (true, None),
            Offer::Missing { have } => (false, Some(have)),
            Offer::Conflict { at } => (false, Some(at.saturating_sub(1))),
            Offer::Rejected(_) => (false, Some(self.log.commit_num())),
        };
        let done = self.log.follow_commit(ae.commit_num, ae.commit_hash);
        self.note_commits(done, false, fx);
        if ok && own {
            let decision = if empty {
                JudgmentVerdict::Fail
            } else {
                JudgmentVerdict::Success
            };
            let strikes_allowed = self.cfg().evaluator_strikes.max(1);
            for (e, v) in &ae.certificate {
                if *v != decision {
                    let s = self.strikes.entry(*e).or_insert(0);
                    *s += 1;
                    if *s >= strikes_allowed {
                        self.list(*e, RnlReason::EvaluatorMinority, fx);
                    }
                }
            }
            if let Some(v) = ae.certificate.get(&self.id) {
                let a = if *v == decision {
                    ActionSymbol::Success
                } else {
                    ActionSymbol::Fail
                };
                self.act(fx, BehaviorRole::Evaluator, Some(num), a);
            }
            if empty {
                self.list(from, RnlReason::EmptyBlock, fx);
                self.depose(now, fx);
            }
        }
        self.ae_reply(from, ok, Some(num), if ok { Some(num) } else { hint }, fx);
    }

    fn on_judgment(&mut self, now: SimTime, from: NodeId, j: Judgment, fx: &mut Effects) {
        if j.term < self.term {
            let digest = j.block.hash();
            fx.send(
                from,
                Message::JudgmentReply(JudgmentReply {
                    term: self.term,
                    evaluator: self.id,
                    block_num: j.block.block_num,
                    block_digest: digest,
                    verdict: JudgmentVerdict::Fail,
                }),
            );
            return;
        }
        self.observe_term(j.term, fx);
        if !self.is_evaluator() || j.accountant_id != from {
            return;
        }
        self.act(
            fx,
            BehaviorRole::Evaluator,
            Some(j.block.block_num),
            ActionSymbol::Receive,
        );
        match self.judge(&j.block) {
            Judged::Ready(v, reason) => self.give_verdict(from, &j, v, reason, fx),
            Judged::Wait(_) => {
                let deadline = now + self.cfg().judgment_grace;
                fx.timer(deadline, Timer::Grace);
                if let Some(ev) = self.eval.as_mut() {
                    ev.deferred.push(Deferred {
                        from,
                        msg: j,
                        deadline,
                    });
                }
            }
        }
    }

    /// Phase five: header checks and entry-by-entry comparison with the
    /// client copies.
    fn judge(&self, block: &Block) -> Judged {
        let Some(ev) = self.eval.as_ref() else {
            return Judged::Ready(JudgmentVerdict::Fail, "not_evaluator");
        };
        if block.block_num == 0 || !block.is_well_formed() {
            return Judged::Ready(JudgmentVerdict::Fail, "malformed");
        }
        match self.log.hash_at(block.block_num - 1) {
            Some(h) if h == block.prehash => {}
            _ => return Judged::Wait("unknown_parent"),
        }
        let mut unknown = false;
        for e in &block.entries {
            match ev.copies.get(&e.request_id) {
                Some(c) if c == e => {}
                Some(_) => return Judged::Ready(JudgmentVerdict::Fail, "entry_mismatch"),
                None => unknown = true,
            }
        }
        if unknown {
            return Judged::Wait("unknown_request");
        }
        Judged::Ready(JudgmentVerdict::Success, "verified")
    }

    fn give_verdict(
        &mut self,
        to: NodeId,
        j: &Judgment,
        v: JudgmentVerdict,
        reason: &'static str,
        fx: &mut Effects,
    ) {
        let v = if self.faults.collude { v.inverted() } else { v };
        let num = j.block.block_num;
        let digest = j.block.hash();
        self.act(fx, BehaviorRole::Evaluator, Some(num), ActionSymbol::Verify);
        fx.note(Note::JudgmentGiven {
            block_num: num,
            digest,
            verdict: v,
            reason,
        });
        if let Some(ev) = self.eval.as_mut() {
            ev.given.insert((j.term, num), v);
        }
        fx.send(
            to,
            Message::JudgmentReply(JudgmentReply {
                term: self.term,
                evaluator: self.id,
                block_num: num,
                block_digest: digest,
                verdict: v,
            }),
        );
    }

    /// Re-examines deferred judgments; with `expire`, those past their
    /// deadline fail with the reason they were waiting on.
    fn recheck_deferred(&mut self, now: SimTime, expire: bool, fx: &mut Effects) {
        let pending = match self.eval.as_mut() {
            Some(ev) if !ev.deferred.is_empty() => core::mem::take(&mut ev.deferred),
            _ => return,
        };
        let mut keep = Vec::new();
        for d in pending {
            match self.judge(&d.msg.block) {
                Judged::Ready(v, reason) => self.give_verdict(d.from, &d.msg, v, reason, fx),
                Judged::Wait(reason) if expire && now >= d.deadline => {
                    self.give_verdict(d.from, &d.msg, JudgmentVerdict::Fail, reason, fx)
                }
                Judged::Wait(_) => keep.push(d),
            }
        }
        if let Some(ev) = self.eval.as_mut() {
            ev.deferred.extend(keep);
        }
    }

    fn on_risk_compute(&mut self, now: SimTime, from: NodeId, rc: RiskCompute, fx: &mut Effects) {
        let n = self.cluster.size();
        let collect = self.cfg().collect_timeout;
        let Some(ev) = self.eval.as_mut() else {
            return;
        };
        if rc.node_id != from || rc.system_call.node != from || ev.assessed.contains(&rc.term) {
            return;
        }
        let set = ev.traces.entry(rc.term).or_default();
        if set.is_empty() {
            fx.timer(now + collect, Timer::Collect(rc.term));
        }
        set.entry(from).or_insert(rc.system_call);
        if set.len() >= n {
            self.start_assessment(now, rc.term, fx);
        }
    }

    /// Phase two: score the collected traces; the result goes out after a
    /// compute delay proportional to the number of traces.
    fn start_assessment(&mut self, now: SimTime, term: Term, fx: &mut Effects) {
        let mut cfg = self.cfg().risk.clone();
        cfg.seed = seed::derive(self.cluster.seed, &[seed::tag::RISK, term.0]);
        let (base, per) = (self.cfg().risk_delay_base, self.cfg().risk_delay_per_trace);
        let Some(ev) = self.eval.as_mut() else {
            return;
        };
        if !ev.assessed.insert(term) {
            return;
        }
        let traces: Vec<SyscallTrace> = ev
            .traces
            .remove(&term)
            .unwrap_or_default()
            .into_values()
            .collect();
        let count = traces.len() as u64;
        let result = risk::assess(&traces, &cfg).ok();
        fx.note(Note::Assessment {
            term,
            scored: result.as_ref().map_or(0, |r| r.scores.len()),
            flagged: result
                .as_ref()
                .map_or_else(Vec::new, |r| r.flagged.iter().copied().collect()),
            skipped: result.is_none(),
        });
        ev.results.insert(term, result.map(|r| r.flagged));
        fx.timer(now + base + SimTime(per.0 * count), Timer::RiskDone(term));
    }

    fn finish_assessment(&mut self, term: Term, fx: &mut Effects) {
        let Some(flagged) = self.eval.as_mut().and_then(|ev| ev.results.remove(&term)) else {
            return;
        };
        // a skipped assessment keeps the previous list
        if let Some(flagged) = flagged {
            self.expire_assessed(&flagged, fx);
            for node in flagged {
                if self.rnl.insert(node, term) {
                    self.assessed.insert(node);
                    fx.note(Note::RnlAdded {
                        node,
                        reason: RnlReason::Assessment,
                    });
                }
            }
        }
        let reply = Message::RiskComputeReply(RiskComputeReply {
            term,
            rnl: self.rnl.clone(),
        });
        for n in self.cluster.nodes.iter() {
            fx.send(*n, reply.clone());
        }
    }

    fn on_risk_reply(&mut self, now: SimTime, from: NodeId, r: RiskComputeReply, fx: &mut Effects) {
        if !self.cluster.is_evaluator(&from) {
            return;
        }
        if self.round.as_ref().is_none_or(|rd| rd.term < r.term) {
            self.round = Some(RnlRound {
                term: r.term,
                replies: BTreeMap::new(),
                settled: false,
            });
            fx.timer(now + self.cfg().rnl_timeout, Timer::RnlSettle(r.term));
        }
        let group = self.group_size();
        let need = majority(group);
        let Some(round) = self.round.as_mut() else {
            return;
        };
        if round.term != r.term {
            return;
        }
        round.replies.insert(from, r.rnl);
        let mut counts: BTreeMap<NodeId, (usize, Term)> = BTreeMap::new();
        for list in round.replies.values() {
            for (n, t) in list.iter() {
                let c = counts.entry(*n).or_insert((0, *t));
                c.0 += 1;
                c.1 = c.1.min(*t);
            }
        }
        let done = round.replies.len() >= group;
        for (n, (c, t)) in counts {
            if c >= need && self.rnl.insert(n, t) {
                self.assessed.insert(n);
                fx.note(Note::RnlAdded {
                    node: n,
                    reason: RnlReason::Assessment,
                });
            }
        }
        if done {
            self.settle(now, fx);
        }
    }

    fn on_timer(&mut self, now: SimTime, t: Timer, fx: &mut Effects) {
        match t {
            Timer::Election(g) if g == self.election_gen => self.on_election_timeout(now, fx),
            Timer::Election(_) => {}
            Timer::Heartbeat(term) if term == self.term && self.role == Role::Accountant => {
                self.broadcast_heartbeat(now, fx);
                fx.timer(now + self.cfg().heartbeat_interval, Timer::Heartbeat(term));
            }
            Timer::Batch(term) if term == self.term && self.role == Role::Accountant => {
                self.try_package(now, fx);
                fx.timer(now + self.cfg().batch_interval, Timer::Batch(term));
            }
            Timer::Judgment { term, block_num } if term == self.term => {
                let current = self
                    .acct
                    .as_ref()
                    .and_then(|a| a.judging.as_ref())
                    .is_some_and(|j| j.block.block_num == block_num);
                if current {
                    self.decide(now, fx);
                }
            }
            Timer::Collect(term) => {
                let waiting = self.eval.as_ref().is_some_and(|ev| {
                    !ev.assessed.contains(&term) && ev.traces.contains_key(&term)
                });
                if waiting {
                    self.start_assessment(now, term, fx);
                }
            }
            Timer::RiskDone(term) => self.finish_assessment(term, fx),
            Timer::RnlSettle(term) => {
                if self.round_pending(term) {
                    self.settle(now, fx);
                }
            }
            Timer::Grace => self.recheck_deferred(now, true, fx),
            _ => {}
        }
    }
}

impl Replica for RacNode {
    fn id(&self) -> NodeId {
        self.id
    }

    fn role_name(&self) -> &'static str {
        self.role.name()
    }

    fn is_leader(&self) -> bool {
        self.role == Role::Accountant
    }

    fn term(&self) -> Term {
        self.term
    }

    fn log(&self) -> &BlockLog {
        &self.log
    }

    fn rnl(&self) -> Option<&RiskNodeList> {
        Some(&self.rnl)
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
                self.deferred_votes.clear();
                if self.round.as_ref().is_some_and(|r| !r.settled) {
                    self.settle(now, fx);
                }
                self.arm_election(now, fx);
            }
            Input::Deliver {
                from: Addr::Client(c),
                msg: Message::ClientRequest(r),
            } => self.on_client_request(now, Addr::Client(c), r, fx),
            Input::Deliver {
                from: Addr::Client(_),
                ..
            } => {}
            Input::Deliver {
                from: Addr::Node(from),
                msg,
            } => match msg {
                Message::RiskCompute(m) => self.on_risk_compute(now, from, m, fx),
                Message::RiskComputeReply(m) => self.on_risk_reply(now, from, m, fx),
                Message::RequestVote(m) => self.on_request_vote(now, from, m, fx),
                Message::VoteReply(m) => self.on_vote_reply(now, from, m, fx),
                Message::Judgment(m) => self.on_judgment(now, from, m, fx),
                Message::JudgmentReply(m) => self.on_judgment_reply(now, from, m, fx),
                Message::AppendEntries(m) => self.on_append_entries(now, from, m, fx),
                Message::AppendEntriesReply(m) => self.on_append_entries_reply(now, from, m, fx),
                Message::ClientRequest(m) => self.on_client_request(now, Addr::Node(from), m, fx),
                Message::ClientReply(_) | Message::Redirect(_) => {}
            },
        }
    }

    fn faults_mut(&mut self) -> &mut NodeFaults {
        &mut self.faults
    }
}

/// Nodes listed by at least `need` of the replies.
fn backed_by(replies: &BTreeMap<NodeId, RiskNodeList>, need: usize) -> BTreeSet<NodeId> {
    let mut counts: BTreeMap<NodeId, usize> = BTreeMap::new();
    for n in replies.values().flat_map(|l| l.nodes()) {
        *counts.entry(n).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .filter(|&(_, c)| c >= need)
        .map(|(n, _)| n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::OrgId;
    use alloc::vec;

    struct Blank;

    impl TraceSource for Blank {
        fn trace(&self, node: NodeId, term: Term) -> SyscallTrace {
            SyscallTrace::new(node, term, Vec::new())
        }
    }

    fn id(v: u32) -> NodeId {
        NodeId::new(v, OrgId((v % 2) as u16))
    }

    fn cluster(n: u32, evals: &[u32]) -> Arc<Cluster> {
        Arc::new(Cluster {
            nodes: (0..n).map(id).collect(),
            evaluators: evals.iter().map(|&v| id(v)).collect(),
            config: ProtocolConfig::default(),
            seed: 7,
        })
    }

    fn node(c: &Arc<Cluster>, v: u32) -> RacNode {
        RacNode::new(id(v), c.clone(), NodeFaults::default(), Arc::new(Blank))
    }

    fn deliver(n: &mut RacNode, from: u32, msg: Message) -> Effects {
        let mut fx = Effects::default();
        n.step(
            SimTime::from_ms(1),
            Input::Deliver {
                from: Addr::Node(id(from)),
                msg,
            },
            &mut fx,
        );
        fx
    }

    fn rv(term: u64, cand: u32) -> Message {
        Message::RequestVote(RequestVote {
            term: Term(term),
            candidate_id: id(cand),
            last_block_num: 0,
            last_block_term: Term(0),
        })
    }

    fn rnl_reply(term: u64, listed: &[u32]) -> Message {
        let mut rnl = RiskNodeList::new();
        for &v in listed {
            rnl.insert(id(v), Term(term));
        }
        Message::RiskComputeReply(RiskComputeReply {
            term: Term(term),
            rnl,
        })
    }

    fn votes_sent(fx: &Effects) -> Vec<(NodeId, bool)> {
        fx.sends
            .iter()
            .filter_map(|(to, m)| match (to, m) {
                (Addr::Node(to), Message::VoteReply(v)) => Some((*to, v.vote_granted)),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn vote_waits_for_risk_lists_then_grants_once_per_term() {
        let c = cluster(5, &[2, 3, 4]);
        let mut f = node(&c, 1);
        let fx = deliver(&mut f, 0, rv(1, 0));
        assert!(votes_sent(&fx).is_empty());
        let risk = fx
            .sends
            .iter()
            .filter(|(_, m)| matches!(m, Message::RiskCompute(_)))
            .count();
        assert_eq!(risk, 3);
        assert!(votes_sent(&deliver(&mut f, 2, rnl_reply(1, &[]))).is_empty());
        assert!(votes_sent(&deliver(&mut f, 3, rnl_reply(1, &[]))).is_empty());
        assert_eq!(
            votes_sent(&deliver(&mut f, 4, rnl_reply(1, &[]))),
            vec![(id(0), true)]
        );
        assert_eq!(f.voted_for(), Some(id(0)));
        // a second candidate in the same term is refused
        assert_eq!(
            votes_sent(&deliver(&mut f, 3, rv(1, 3))),
            vec![(id(3), false)]
        );
        // the first one may ask again
        assert_eq!(
            votes_sent(&deliver(&mut f, 0, rv(1, 0))),
            vec![(id(0), true)]
        );
    }

    #[test]
    fn listed_candidate_is_refused() {
        let c = cluster(5, &[2, 3, 4]);
        let mut f = node(&c, 1);
        deliver(&mut f, 0, rv(1, 0));
        deliver(&mut f, 2, rnl_reply(1, &[0]));
        deliver(&mut f, 3, rnl_reply(1, &[0]));
        let fx = deliver(&mut f, 4, rnl_reply(1, &[]));
        assert_eq!(votes_sent(&fx), vec![(id(0), false)]);
        assert!(f.risk_list().contains(&id(0)));
        assert!(fx.notes.iter().any(|n| matches!(
            n,
            Note::VoteDenied {
                reason: "risk_listed",
                ..
            }
        )));
    }

    #[test]
    fn single_evaluator_cannot_list_alone() {
        let c = cluster(5, &[2, 3, 4]);
        let mut f = node(&c, 1);
        deliver(&mut f, 0, rv(1, 0));
        deliver(&mut f, 2, rnl_reply(1, &[0]));
        deliver(&mut f, 3, rnl_reply(1, &[]));
        let fx = deliver(&mut f, 4, rnl_reply(1, &[]));
        assert_eq!(votes_sent(&fx), vec![(id(0), true)]);
    }

    #[test]
    fn assessment_listing_lasts_one_round() {
        let c = cluster(5, &[2, 3, 4]);
        let mut f = node(&c, 1);
        deliver(&mut f, 0, rv(1, 0));
        deliver(&mut f, 2, rnl_reply(1, &[0]));
        deliver(&mut f, 3, rnl_reply(1, &[0]));
        deliver(&mut f, 4, rnl_reply(1, &[]));
        assert!(f.risk_list().contains(&id(0)));
        deliver(&mut f, 0, rv(2, 0));
        deliver(&mut f, 2, rnl_reply(2, &[]));
        deliver(&mut f, 3, rnl_reply(2, &[0]));
        let fx = deliver(&mut f, 4, rnl_reply(2, &[]));
        assert!(!f.risk_list().contains(&id(0)));
        assert!(fx
            .notes
            .iter()
            .any(|n| matches!(n, Note::RnlRemoved { .. })));
        assert_eq!(votes_sent(&fx), vec![(id(0), true)]);
    }

    #[test]
    fn stale_term_is_refused_without_waiting() {
        let c = cluster(5, &[2, 3, 4]);
        let mut f = node(&c, 1);
        deliver(&mut f, 0, rv(3, 0));
        let fx = deliver(&mut f, 4, rv(2, 4));
        assert_eq!(votes_sent(&fx), vec![(id(4), false)]);
    }

    fn campaign(c: &Arc<Cluster>, v: u32) -> RacNode {
        let mut n = node(c, v);
        let mut fx = Effects::default();
        n.start(SimTime(0), &mut fx);
        let Some((at, t)) = fx.timers.pop() else {
            panic!("no election timer")
        };
        let mut fx = Effects::default();
        n.step(at, Input::Timer(t), &mut fx);
        assert_eq!(n.role(), Role::Candidate);
        n
    }

    fn grant(term: u64, voter: u32) -> Message {
        Message::VoteReply(VoteReply {
            term: Term(term),
            voter: id(voter),
            vote_granted: true,
        })
    }

    #[test]
    fn strict_majority_elects() {
        // five nodes: self plus two grants
        let c = cluster(5, &[2, 3, 4]);
        let mut n = campaign(&c, 0);
        for e in [2, 3, 4] {
            deliver(&mut n, e, rnl_reply(1, &[]));
        }
        deliver(&mut n, 1, grant(1, 1));
        assert_eq!(n.role(), Role::Candidate);
        let fx = deliver(&mut n, 2, grant(1, 2));
        assert_eq!(n.role(), Role::Accountant);
        assert!(fx
            .notes
            .iter()
            .any(|x| matches!(x, Note::Established { .. })));

        // four nodes: self plus one grant is only half
        let c = cluster(4, &[1, 2, 3]);
        let mut n = campaign(&c, 0);
        for e in [1, 2, 3] {
            deliver(&mut n, e, rnl_reply(1, &[]));
        }
        deliver(&mut n, 1, grant(1, 1));
        assert_eq!(n.role(), Role::Candidate);
        deliver(&mut n, 2, grant(1, 2));
        assert_eq!(n.role(), Role::Accountant);
    }

    #[test]
    fn forged_vote_is_ignored() {
        let c = cluster(5, &[2, 3, 4]);
        let mut n = campaign(&c, 0);
        for e in [2, 3, 4] {
            deliver(&mut n, e, rnl_reply(1, &[]));
        }
        deliver(&mut n, 1, grant(1, 1));
        let fx = deliver(&mut n, 1, grant(1, 3));
        assert_eq!(n.role(), Role::Candidate);
        assert!(fx
            .notes
            .iter()
            .any(|x| matches!(x, Note::ForgedVote { .. })));
    }

    #[test]
    fn listed_candidate_steps_down() {
        let c = cluster(5, &[2, 3, 4]);
        let mut n = campaign(&c, 0);
        for e in [2, 3, 4] {
            deliver(&mut n, e, rnl_reply(1, &[0]));
        }
        assert_eq!(n.role(), Role::Follower);
    }

    fn heartbeat(term: u64, from: u32) -> Message {
        Message::AppendEntries(AppendEntries {
            term: Term(term),
            accountant_id: id(from),
            block: None,
            block_term: Term(0),
            certificate: Certificate::new(),
            commit_num: 0,
            commit_hash: Block::genesis().hash(),
        })
    }

    #[test]
    fn candidate_yields_to_higher_term_heartbeat() {
        let c = cluster(5, &[2, 3, 4]);
        let mut n = campaign(&c, 0);
        deliver(&mut n, 1, heartbeat(2, 1));
        assert_eq!(n.role(), Role::Follower);
        assert_eq!(n.term(), Term(2));
        assert_eq!(n.leader(), Some(id(1)));
    }

    fn tx(req: u64) -> TransactionRequest {
        TransactionRequest {
            request_id: req,
            client_id: 1,
            payload: vec![1, 2, 3],
            submit_time: SimTime(0),
        }
    }

    fn block_ae(term: u64, from: u32, block: Block, cert: &[(u32, JudgmentVerdict)]) -> Message {
        Message::AppendEntries(AppendEntries {
            term: Term(term),
            accountant_id: id(from),
            block: Some(block),
            block_term: Term(term),
            certificate: cert.iter().map(|&(v, j)| (id(v), j)).collect(),
            commit_num: 0,
            commit_hash: Block::genesis().hash(),
        })
    }

    use JudgmentVerdict::{Fail, Success};

    #[test]
    fn empty_block_lists_the_accountant_and_moves_on() {
        let c = cluster(5, &[2, 3, 4]);
        let mut f = node(&c, 1);
        deliver(&mut f, 0, heartbeat(1, 0));
        let b = Block::new(1, Block::genesis().hash(), SimTime(5), vec![tx(1)]).emptied();
        deliver(
            &mut f,
            0,
            block_ae(1, 0, b, &[(2, Fail), (3, Fail), (4, Success)]),
        );
        assert!(f.risk_list().contains(&id(0)));
        assert_eq!(f.term(), Term(2));
        assert_eq!(f.log().last_num(), 1);
        // the minority evaluator earned a strike
        assert!(f.risk_list().contains(&id(4)));
        // a later heartbeat from the listed node is ignored
        let fx = deliver(&mut f, 0, heartbeat(3, 0));
        assert_eq!(f.leader(), None);
        assert!(fx
            .notes
            .iter()
            .any(|x| matches!(x, Note::IgnoredLeader { .. })));
        // a clean risk round does not lift a behaviour listing
        deliver(&mut f, 1, rv(4, 1));
        for e in [2, 3, 4] {
            deliver(&mut f, e, rnl_reply(4, &[]));
        }
        assert!(f.round_settled(Term(4)));
        assert!(f.risk_list().contains(&id(0)));
    }

    #[test]
    fn certificate_disagreeing_with_flag_is_caught() {
        let c = cluster(5, &[2, 3, 4]);
        let mut f = node(&c, 1);
        deliver(&mut f, 0, heartbeat(1, 0));
        let b = Block::new(1, Block::genesis().hash(), SimTime(5), vec![tx(1)]);
        let fx = deliver(&mut f, 0, block_ae(1, 0, b, &[(2, Fail), (3, Fail)]));
        assert!(fx
            .notes
            .iter()
            .any(|x| matches!(x, Note::CertificateMismatch { .. })));
        assert!(f.risk_list().contains(&id(0)));
        assert_eq!(f.log().last_num(), 0);
    }

    #[test]
    fn evaluator_spots_its_own_verdict_misreported() {
        let c = cluster(5, &[2, 3, 4]);
        let mut e = node(&c, 2);
        let b = Block::new(1, Block::genesis().hash(), SimTime(5), vec![tx(1)]);
        deliver(
            &mut e,
            0,
            Message::ClientRequest(ClientRequest {
                tx: tx(1),
                judgment_copy: true,
            }),
        );
        let fx = deliver(
            &mut e,
            0,
            Message::Judgment(Judgment {
                term: Term(1),
                accountant_id: id(0),
                block: b.clone(),
            }),
        );
        assert!(fx.sends.iter().any(|(_, m)| matches!(
            m,
            Message::JudgmentReply(JudgmentReply {
                verdict: Success,
                ..
            })
        )));
        let fx = deliver(
            &mut e,
            0,
            block_ae(1, 0, b.emptied(), &[(2, Fail), (3, Fail), (4, Fail)]),
        );
        assert!(fx
            .notes
            .iter()
            .any(|x| matches!(x, Note::CertificateMismatch { .. })));
    }

    fn judge(e: &mut RacNode, b: &Block) -> Effects {
        deliver(
            e,
            0,
            Message::Judgment(Judgment {
                term: Term(1),
                accountant_id: id(0),
                block: b.clone(),
            }),
        )
    }

    fn verdict(fx: &Effects) -> Option<JudgmentVerdict> {
        fx.sends.iter().find_map(|(_, m)| match m {
            Message::JudgmentReply(r) => Some(r.verdict),
            _ => None,
        })
    }

    #[test]
    fn judgment_outcomes() {
        let c = cluster(5, &[2, 3, 4]);
        let copy = |e: &mut RacNode, t: TransactionRequest| {
            deliver(
                e,
                9,
                Message::ClientRequest(ClientRequest {
                    tx: t,
                    judgment_copy: true,
                }),
            )
        };

        // tampered entry
        let mut e = node(&c, 2);
        copy(&mut e, tx(1));
        let mut bad = tx(1);
        bad.payload[0] ^= 0xff;
        let b = Block::new(1, Block::genesis().hash(), SimTime(5), vec![bad]);
        assert_eq!(verdict(&judge(&mut e, &b)), Some(Fail));

        // unknown entry waits, then passes once the copy arrives
        let mut e = node(&c, 2);
        let b = Block::new(1, Block::genesis().hash(), SimTime(5), vec![tx(1)]);
        assert_eq!(verdict(&judge(&mut e, &b)), None);
        assert_eq!(verdict(&copy(&mut e, tx(1))), Some(Success));

        // unknown entry that never shows up fails at the deadline
        let mut e = node(&c, 2);
        let fx = judge(&mut e, &b);
        let (at, t) = fx
            .timers
            .iter()
            .find(|(_, t)| *t == Timer::Grace)
            .cloned()
            .unwrap();
        let mut fx = Effects::default();
        e.step(at, Input::Timer(t), &mut fx);
        assert_eq!(verdict(&fx), Some(Fail));

        // wrong parent hash never matches
        let mut e = node(&c, 2);
        copy(&mut e, tx(1));
        let orphan = Block::new(1, Digest::ZERO, SimTime(5), vec![tx(1)]);
        assert_eq!(verdict(&judge(&mut e, &orphan)), None);

        // colluding evaluator inverts
        let mut e = node(&c, 2);
        e.faults_mut().collude = true;
        copy(&mut e, tx(1));
        assert_eq!(verdict(&judge(&mut e, &b)), Some(Fail));
    }

    #[test]
    fn every_node_reports_to_every_evaluator() {
        let c = cluster(10, &[1, 2, 3]);
        let mut total = 0;
        for v in 0..10 {
            let mut n = node(&c, v);
            let fx = deliver(&mut n, (v + 1) % 10, rv(1, (v + 1) % 10));
            total += fx
                .sends
                .iter()
                .filter(|(_, m)| matches!(m, Message::RiskCompute(_)))
                .count();
        }
        assert_eq!(total, 30);
    }

    /// Fixed one-millisecond links, no loss.
    struct Bench {
        nodes: Vec<RacNode>,
        queue: BTreeMap<(SimTime, u64), (usize, Input)>,
        seq: u64,
        now: SimTime,
        notes: Vec<(NodeId, Note)>,
        replies: Vec<Message>,
    }

    impl Bench {
        fn new(c: &Arc<Cluster>, faults: &[(u32, NodeFaults)]) -> Self {
            let mut b = Self {
                nodes: c
                    .nodes
                    .iter()
                    .map(|n| {
                        let f = faults
                            .iter()
                            .find(|(v, _)| *v == n.value)
                            .map_or_else(NodeFaults::default, |x| x.1);
                        RacNode::new(*n, c.clone(), f, Arc::new(Blank))
                    })
                    .collect(),
                queue: BTreeMap::new(),
                seq: 0,
                now: SimTime(0),
                notes: Vec::new(),
                replies: Vec::new(),
            };
            for i in 0..b.nodes.len() {
                let mut fx = Effects::default();
                b.nodes[i].start(SimTime(0), &mut fx);
                b.absorb(i, fx);
            }
            b
        }

        fn push(&mut self, at: SimTime, to: usize, input: Input) {
            self.seq += 1;
            self.queue.insert((at, self.seq), (to, input));
        }

        fn absorb(&mut self, i: usize, fx: Effects) {
            let me = Addr::Node(self.nodes[i].id());
            for n in fx.notes {
                self.notes.push((self.nodes[i].id(), n));
            }
            for (at, t) in fx.timers {
                self.push(at, i, Input::Timer(t));
            }
            for (to, msg) in fx.sends {
                match to {
                    Addr::Node(n) => {
                        let j = self.nodes.iter().position(|x| x.id() == n).unwrap();
                        self.push(
                            self.now + SimTime::from_ms(1),
                            j,
                            Input::Deliver { from: me, msg },
                        );
                    }
                    Addr::Client(_) => self.replies.push(msg),
                }
            }
        }

        fn submit(&mut self, t: TransactionRequest) {
            for i in 0..self.nodes.len() {
                let msg = Message::ClientRequest(ClientRequest {
                    tx: t.clone(),
                    judgment_copy: !self.nodes[i].is_leader(),
                });
                let from = Addr::Client(t.client_id);
                self.push(
                    self.now + SimTime::from_ms(1),
                    i,
                    Input::Deliver { from, msg },
                );
            }
        }

        fn run_until(&mut self, end: SimTime) {
            while let Some(entry) = self.queue.first_entry() {
                if entry.key().0 > end {
                    break;
                }
                let ((at, _), (i, input)) = entry.remove_entry();
                self.now = at;
                let mut fx = Effects::default();
                self.nodes[i].step(at, input, &mut fx);
                self.absorb(i, fx);
            }
            self.now = end;
        }

        fn leader(&self) -> Option<usize> {
            self.nodes.iter().position(|n| n.is_leader())
        }
    }

    #[test]
    fn five_nodes_elect_and_commit() {
        let c = cluster(5, &[2, 3, 4]);
        let mut b = Bench::new(&c, &[]);
        b.run_until(SimTime::from_ms(600));
        let l = b.leader().expect("a leader");
        assert!(!c.is_evaluator(&b.nodes[l].id()));
        b.submit(tx(1));
        b.submit(tx(2));
        b.run_until(SimTime::from_ms(900));
        assert_eq!(
            b.replies
                .iter()
                .filter(|m| matches!(m, Message::ClientReply(_)))
                .count(),
            2
        );
        for n in &b.nodes {
            assert_eq!(n.log().commit_num(), 1, "{}", n.id());
            assert_eq!(n.log().get(1).unwrap().entries.len(), 2);
        }
    }

    #[test]
    fn tampering_accountant_is_replaced() {
        let c = cluster(5, &[2, 3, 4]);
        let tamper = NodeFaults {
            tamper: true,
            ..NodeFaults::default()
        };
        let mut b = Bench::new(&c, &[(0, tamper), (1, tamper)]);
        b.run_until(SimTime::from_ms(600));
        let l = b.leader().expect("a leader");
        b.submit(tx(1));
        b.run_until(SimTime::from_ms(2000));
        // both tamperers got their turn and were voided; nobody honest is left
        // to lead, but nothing tampered was committed
        assert!(b
            .nodes
            .iter()
            .all(|n| n.risk_list().contains(&b.nodes[l].id())));
        for n in &b.nodes {
            for blk in n.log().chain().blocks().iter().skip(1) {
                assert!(blk.empty_flag || blk.entries.iter().all(|e| e.payload == tx(1).payload));
            }
        }
        assert!(b
            .notes
            .iter()
            .any(|(_, x)| matches!(x, Note::Decided { empty: true, .. })));
    }
}
