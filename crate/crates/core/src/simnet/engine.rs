//! The discrete-event loop.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};

use super::monitor::{Monitor, VerdictRecord};
use super::record::{DropReason, Event, Record, Violation};
use super::scenario::{Algorithm, Distribution, Scenario, ScenarioError};
use super::traces::SynthTraces;
use crate::behavior::{Stake, StakeLedger};
use crate::codec::Encode;
use crate::ledger::{Chain, NodeId, OrgId, RiskNodeList, SimTime, Term, TransactionRequest};
use crate::protocol::{
    majority, Addr, ClientRequest, Cluster, Effects, Input, Message, NodeFaults, Note, RacNode,
    Replica, Timer, TraceSource,
};
use crate::raft::RaftNode;
use crate::seed;

/// Final state of one replica.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeReport {
    pub id: NodeId,
    pub evaluator: bool,
    pub faults: NodeFaults,
    pub up: bool,
    pub role: &'static str,
    pub term: Term,
    pub chain: Chain,
    pub commit_num: u64,
    pub rnl: Option<RiskNodeList>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub evaluators: BTreeSet<NodeId>,
    pub records: Vec<Record>,
    pub nodes: Vec<NodeReport>,
    /// What the clients sent, indexed by `request_id - 1`.
    pub submitted: Vec<TransactionRequest>,
    pub verdicts: Vec<VerdictRecord>,
    pub stake: StakeLedger,
    pub violations: Vec<Violation>,
    /// Distinct tampered entries found in committed blocks.
    pub committed_tampered: usize,
    pub end: SimTime,
}

impl RunOutput {
    pub fn node(&self, id: NodeId) -> Option<&NodeReport> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn render_log(&self) -> alloc::string::String {
        use core::fmt::Write;
        let mut s = alloc::string::String::new();
        for r in &self.records {
            let _ = writeln!(s, "{r}");
        }
        s
    }
}

enum Pending {
    Deliver {
        id: u64,
        from: Addr,
        to: Addr,
        msg: Message,
    },
    Timer {
        idx: usize,
        epoch: u64,
        timer: Timer,
    },
    Crash(usize),
    Restart(usize),
    Submit(usize),
    Retry {
        req: usize,
    },
}

struct ClientReq {
    tx: TransactionRequest,
    target: NodeId,
    attempts: u32,
    done: bool,
}

struct Sim<'a> {
    sc: &'a Scenario,
    ids: Vec<NodeId>,
    index: BTreeMap<NodeId, usize>,
    evaluators: BTreeSet<NodeId>,
    replicas: Vec<Box<dyn Replica>>,
    up: Vec<bool>,
    epoch: Vec<u64>,
    queue: BTreeMap<(SimTime, u64), Pending>,
    seq: u64,
    next_msg: u64,
    now: SimTime,
    end: SimTime,
    net: ChaCha8Rng,
    normal: Option<Normal<f64>>,
    client_rng: ChaCha8Rng,
    records: Vec<Record>,
    requests: Vec<ClientReq>,
    hints: Vec<Option<NodeId>>,
    entry_points: Vec<NodeId>,
    done: usize,
    last_done: SimTime,
    monitor: Monitor,
    verdicts: Vec<VerdictRecord>,
    stake: StakeLedger,
    office: BTreeMap<Term, NodeId>,
    violations: Vec<Violation>,
    established: u64,
    first_tamper_pending: bool,
    stop: bool,
}

/// Runs `sc` with synthesized syscall traces.
pub fn run_scenario(sc: &Scenario) -> Result<RunOutput, ScenarioError> {
    run_scenario_with(sc, None)
}

/// Runs `sc`; `traces` replaces the synthesized syscall traces when given.
pub fn run_scenario_with(
    sc: &Scenario,
    traces: Option<Arc<dyn TraceSource + Send + Sync>>,
) -> Result<RunOutput, ScenarioError> {
    sc.validate()?;
    let mut sim = Sim::new(sc, traces)?;
    sim.run();
    Ok(sim.finish())
}

impl<'a> Sim<'a> {
    fn new(
        sc: &'a Scenario,
        traces: Option<Arc<dyn TraceSource + Send + Sync>>,
    ) -> Result<Self, ScenarioError> {
        let ids = sc.nodes();
        let evaluators = sc.evaluator_group()?;
        let cluster = Arc::new(Cluster {
            nodes: ids.clone(),
            evaluators: evaluators.clone(),
            config: sc.protocol_config(),
            seed: sc.seed,
        });
        let traces = traces.unwrap_or_else(|| {
            let attackers = sc
                .faults
                .attackers()
                .into_iter()
                .filter_map(|v| sc.node(v))
                .collect();
            Arc::new(SynthTraces::new(sc.traces.clone(), attackers, sc.seed))
        });
        let replicas: Vec<Box<dyn Replica>> = ids
            .iter()
            .map(|&id| -> Box<dyn Replica> {
                let f = sc.faults.faults_of(id.value);
                match sc.algorithm {
                    Algorithm::Rac => {
                        Box::new(RacNode::new(id, cluster.clone(), f, traces.clone()))
                    }
                    Algorithm::Raft => Box::new(RaftNode::new(id, cluster.clone(), f)),
                }
            })
            .collect();
        let l = &sc.latency;
        let normal = match l.distribution {
            Distribution::TruncatedNormal => Some(Normal::new(l.mean_ms, l.jitter_ms).map_err(
                |e| ScenarioError {
                    field: "latency".into(),
                    problem: format!("{e}"),
                },
            )?),
            _ => None,
        };
        let orgs: BTreeMap<OrgId, Stake> = ids
            .iter()
            .map(|n| (n.org, Stake::units(sc.stake.initial_units)))
            .collect();
        let entry_points: Vec<NodeId> = ids
            .iter()
            .copied()
            .filter(|n| !evaluators.contains(n))
            .collect();
        let n = ids.len();
        Ok(Self {
            sc,
            index: ids.iter().enumerate().map(|(i, n)| (*n, i)).collect(),
            ids,
            evaluators,
            replicas,
            up: alloc::vec![true; n],
            epoch: alloc::vec![0; n],
            queue: BTreeMap::new(),
            seq: 0,
            next_msg: 0,
            now: SimTime::ZERO,
            end: SimTime::from_ms(sc.duration_ms),
            net: ChaCha8Rng::seed_from_u64(seed::derive(sc.seed, &[seed::tag::NETWORK])),
            normal,
            client_rng: ChaCha8Rng::seed_from_u64(seed::derive(sc.seed, &[seed::tag::CLIENT])),
            records: Vec::new(),
            requests: Vec::new(),
            hints: alloc::vec![None; sc.workload.clients as usize],
            entry_points,
            done: 0,
            last_done: SimTime::ZERO,
            monitor: Monitor::new(),
            verdicts: Vec::new(),
            stake: StakeLedger::new(orgs, sc.stake.penalty_fraction),
            office: BTreeMap::new(),
            violations: Vec::new(),
            established: 0,
            first_tamper_pending: sc.faults.tamper_first_accountant,
            stop: false,
        })
    }

    fn push(&mut self, at: SimTime, p: Pending) {
        self.seq += 1;
        self.queue.insert((at, self.seq), p);
    }

    fn log(&mut self, node: Option<NodeId>, event: Event) {
        self.records.push(Record {
            time: self.now,
            node,
            event,
        });
    }

    fn latency(&mut self) -> SimTime {
        let l = &self.sc.latency;
        let ms = match (l.distribution, &self.normal) {
            (Distribution::TruncatedNormal, Some(d)) => {
                let mut x = d.sample(&mut self.net);
                let mut tries = 0;
                while x < l.floor_ms && tries < 16 {
                    x = d.sample(&mut self.net);
                    tries += 1;
                }
                x.max(l.floor_ms)
            }
            (Distribution::Uniform, _) if l.jitter_ms > 0.0 => self
                .net
                .gen_range(l.mean_ms - l.jitter_ms..=l.mean_ms + l.jitter_ms)
                .max(l.floor_ms),
            _ => l.mean_ms.max(l.floor_ms),
        };
        SimTime(libm::round(ms * 1_000.0) as u64)
    }

    fn cut(&self, a: Addr, b: Addr) -> bool {
        let (Addr::Node(a), Addr::Node(b)) = (a, b) else {
            return false;
        };
        let t = self.now;
        self.sc.partitions.iter().any(|p| {
            SimTime::from_ms(p.start_ms) <= t
                && t < SimTime::from_ms(p.end_ms)
                && p.isolate.contains(&a.value) != p.isolate.contains(&b.value)
        })
    }

    fn send(&mut self, from: Addr, to: Addr, msg: Message) {
        self.next_msg += 1;
        let id = self.next_msg;
        let node = match from {
            Addr::Node(n) => Some(n),
            Addr::Client(_) => None,
        };
        self.log(
            node,
            Event::Send {
                id,
                from,
                to,
                kind: msg.kind(),
                phase: msg.phase(),
                round: msg.round().map(|r| r.0),
                acked: msg.acked(),
                term: msg.term(),
                bytes: msg.encode().len(),
            },
        );
        if self.cut(from, to) {
            self.log(
                None,
                Event::Drop {
                    id,
                    reason: DropReason::Partition,
                },
            );
            return;
        }
        if self.sc.drop_probability > 0.0 && self.net.gen::<f64>() < self.sc.drop_probability {
            self.log(
                None,
                Event::Drop {
                    id,
                    reason: DropReason::Loss,
                },
            );
            return;
        }
        let at = self.now + self.latency();
        self.push(at, Pending::Deliver { id, from, to, msg });
    }

    fn step(&mut self, idx: usize, input: Input) {
        let before = (self.replicas[idx].role_name(), self.replicas[idx].term());
        let mut fx = Effects::default();
        self.replicas[idx].step(self.now, input, &mut fx);
        self.absorb(idx, fx);
        let after = (self.replicas[idx].role_name(), self.replicas[idx].term());
        if after.0 != before.0 {
            self.log(
                Some(self.ids[idx]),
                Event::Role {
                    role: after.0,
                    term: after.1,
                },
            );
        }
    }

    fn absorb(&mut self, idx: usize, fx: Effects) {
        let id = self.ids[idx];
        for a in fx.actions {
            self.log(Some(id), Event::Action(a));
            if let Some(v) = self.monitor.feed(self.now, id, &a) {
                self.on_verdict(v);
            }
        }
        for n in fx.notes {
            if let Note::Established { term } = n {
                self.on_established(idx, term);
            }
            self.log(Some(id), Event::Note(n));
        }
        for (to, msg) in fx.sends {
            self.send(Addr::Node(id), to, msg);
        }
        let epoch = self.epoch[idx];
        for (at, timer) in fx.timers {
            self.push(at, Pending::Timer { idx, epoch, timer });
        }
    }

    fn on_verdict(&mut self, v: VerdictRecord) {
        self.log(
            Some(v.node),
            Event::Verdict {
                role: v.role,
                term: v.term,
                block_num: v.block_num,
                verdict: v.verdict,
            },
        );
        if v.verdict.is_byzantine() {
            let honest: BTreeSet<OrgId> = self
                .stake
                .balances()
                .keys()
                .copied()
                .filter(|o| *o != v.node.org)
                .collect();
            match self.stake.apply_penalty(v.term, v.node, &honest) {
                Ok(e) => {
                    let e = e.clone();
                    self.log(Some(v.node), Event::Stake(e));
                }
                Err(e) => self.log(
                    Some(v.node),
                    Event::StakeSkipped {
                        offender: v.node,
                        reason: format!("{e}"),
                    },
                ),
            }
        }
        self.verdicts.push(v);
    }

    fn on_established(&mut self, idx: usize, term: Term) {
        let id = self.ids[idx];
        match self.office.get(&term) {
            Some(&first) if first != id => {
                let v = Violation::ElectionSafety {
                    term,
                    first,
                    second: id,
                };
                self.log(Some(id), Event::Violation(v.clone()));
                self.violations.push(v);
            }
            _ => {
                self.office.insert(term, id);
            }
        }
        if self.sc.algorithm == Algorithm::Rac && !self.sc.faults.sybil.contains(&id.value) {
            let honest: Vec<usize> = (0..self.ids.len())
                .filter(|&i| self.up[i] && !self.sc.faults.faults_of(self.ids[i].value).any())
                .collect();
            let listing = honest
                .iter()
                .filter(|&&i| self.replicas[i].rnl().is_some_and(|r| r.contains(&id)))
                .count();
            if !honest.is_empty() && listing >= majority(honest.len()) {
                let v = Violation::ListedAccountant { node: id, term };
                self.log(Some(id), Event::Violation(v.clone()));
                self.violations.push(v);
            }
        }
        self.established += 1;
        if self.first_tamper_pending {
            self.first_tamper_pending = false;
            self.replicas[idx].faults_mut().tamper = true;
            self.log(Some(id), Event::Fault { what: "tamper" });
        }
        let dos = &self.sc.faults.targeted_dos;
        if dos.enabled {
            let crash = self.now + SimTime::from_ms(dos.delay_ms);
            let back = crash + SimTime::from_ms(dos.downtime_ms);
            self.push(crash, Pending::Crash(idx));
            self.push(back, Pending::Restart(idx));
            if dos.terms.is_some_and(|t| self.established >= t) {
                self.stop = true;
            }
        }
    }

    fn transmit(&mut self, req: usize, copies: bool) {
        let r = &self.requests[req];
        let (tx, target, attempt) = (r.tx.clone(), r.target, r.attempts);
        let client = tx.client_id;
        self.log(
            None,
            Event::Submit {
                request_id: tx.request_id,
                client,
                to: target,
                attempt,
            },
        );
        let from = Addr::Client(client);
        if copies {
            let evaluators: Vec<NodeId> = self.evaluators.iter().copied().collect();
            for e in evaluators {
                self.send(
                    from,
                    Addr::Node(e),
                    Message::ClientRequest(ClientRequest {
                        tx: tx.clone(),
                        judgment_copy: true,
                    }),
                );
            }
        }
        self.send(
            from,
            Addr::Node(target),
            Message::ClientRequest(ClientRequest {
                tx,
                judgment_copy: false,
            }),
        );
    }

    fn submit(&mut self, i: usize) {
        let w = &self.sc.workload;
        let client = (i as u32) % w.clients;
        let mut payload = alloc::vec![0u8; w.payload_bytes];
        self.client_rng.fill_bytes(&mut payload);
        let tx = TransactionRequest {
            request_id: i as u64 + 1,
            client_id: client,
            payload,
            submit_time: self.now,
        };
        let target =
            self.hints[client as usize].unwrap_or(self.entry_points[i % self.entry_points.len()]);
        self.requests.push(ClientReq {
            tx,
            target,
            attempts: 1,
            done: false,
        });
        self.transmit(i, true);
        let retry = self.now + SimTime::from_ms(w.retry_ms);
        self.push(retry, Pending::Retry { req: i });
    }

    fn retry(&mut self, req: usize) {
        if self.requests[req].done {
            return;
        }
        let eps = &self.entry_points;
        let cur = self.requests[req].target;
        let next = eps[(eps.iter().position(|n| *n == cur).map_or(0, |p| p + 1)) % eps.len()];
        let client = self.requests[req].tx.client_id as usize;
        self.hints[client] = Some(next);
        let r = &mut self.requests[req];
        r.target = next;
        r.attempts += 1;
        self.transmit(req, true);
        let retry = self.now + SimTime::from_ms(self.sc.workload.retry_ms);
        self.push(retry, Pending::Retry { req });
    }

    fn client_receive(&mut self, msg: Message) {
        match msg {
            Message::ClientReply(r) => {
                let Some(req) = (r.request_id as usize)
                    .checked_sub(1)
                    .filter(|&i| i < self.requests.len())
                else {
                    return;
                };
                if self.requests[req].done {
                    return;
                }
                self.requests[req].done = true;
                self.done += 1;
                self.last_done = self.now;
                let client = self.requests[req].tx.client_id;
                self.log(
                    None,
                    Event::Reply {
                        request_id: r.request_id,
                        client,
                        block_num: r.block_num,
                    },
                );
            }
            Message::Redirect(r) => {
                let Some(req) = (r.request_id as usize)
                    .checked_sub(1)
                    .filter(|&i| i < self.requests.len())
                else {
                    return;
                };
                let Some(leader) = r.leader else {
                    return;
                };
                let client = self.requests[req].tx.client_id as usize;
                self.hints[client] = Some(leader);
                if !self.requests[req].done && self.requests[req].target != leader {
                    self.requests[req].target = leader;
                    self.transmit(req, false);
                }
            }
            _ => {}
        }
    }

    fn run(&mut self) {
        for c in &self.sc.faults.crash {
            let idx = c.node as usize;
            self.push(SimTime::from_ms(c.at_ms), Pending::Crash(idx));
            if let Some(r) = c.restart_ms {
                self.push(SimTime::from_ms(r), Pending::Restart(idx));
            }
        }
        let w = &self.sc.workload;
        for i in 0..w.total {
            let offset = libm::floor(i as f64 * 1_000.0 / w.rate_per_ms) as u64;
            self.push(
                SimTime::from_ms(w.start_ms) + SimTime(offset),
                Pending::Submit(i),
            );
        }
        for idx in 0..self.replicas.len() {
            let mut fx = Effects::default();
            self.replicas[idx].start(SimTime::ZERO, &mut fx);
            self.absorb(idx, fx);
        }
        let settle = SimTime::from_ms(w.settle_ms);
        let total = w.total;
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > self.end {
                break;
            }
            if total > 0 && self.done == total && entry.key().0 > self.last_done + settle {
                break;
            }
            let ((at, _), p) = entry.remove_entry();
            self.now = at;
            self.dispatch(p);
            if self.stop {
                break;
            }
        }
    }

    fn dispatch(&mut self, p: Pending) {
        match p {
            Pending::Deliver { id, from, to, msg } => match to {
                Addr::Node(n) => {
                    let idx = self.index[&n];
                    if !self.up[idx] {
                        self.log(
                            None,
                            Event::Drop {
                                id,
                                reason: DropReason::Crashed,
                            },
                        );
                        return;
                    }
                    self.log(Some(n), Event::Deliver { id, to });
                    self.step(idx, Input::Deliver { from, msg });
                }
                Addr::Client(_) => {
                    self.log(None, Event::Deliver { id, to });
                    self.client_receive(msg);
                }
            },
            Pending::Timer { idx, epoch, timer } => {
                if self.up[idx] && self.epoch[idx] == epoch {
                    self.step(idx, Input::Timer(timer));
                }
            }
            Pending::Crash(idx) => {
                if self.up[idx] {
                    self.up[idx] = false;
                    self.epoch[idx] += 1;
                    self.log(Some(self.ids[idx]), Event::Crash);
                }
            }
            Pending::Restart(idx) => {
                if !self.up[idx] {
                    self.up[idx] = true;
                    self.log(Some(self.ids[idx]), Event::Restart);
                    self.step(idx, Input::Restart);
                }
            }
            Pending::Submit(i) => self.submit(i),
            Pending::Retry { req } => self.retry(req),
        }
    }

    fn finish(mut self) -> RunOutput {
        let pending: Vec<u64> = self
            .queue
            .values()
            .filter_map(|p| match p {
                Pending::Deliver { id, .. } => Some(*id),
                _ => None,
            })
            .collect();
        for id in pending {
            self.log(
                None,
                Event::Drop {
                    id,
                    reason: DropReason::EndOfRun,
                },
            );
        }
        self.check_logs();
        let committed_tampered = self.check_tampering();
        let nodes = (0..self.ids.len())
            .map(|i| {
                let r = &self.replicas[i];
                NodeReport {
                    id: self.ids[i],
                    evaluator: self.evaluators.contains(&self.ids[i]),
                    faults: self.sc.faults.faults_of(self.ids[i].value),
                    up: self.up[i],
                    role: r.role_name(),
                    term: r.term(),
                    chain: r.log().chain().clone(),
                    commit_num: r.log().commit_num(),
                    rnl: r.rnl().cloned(),
                }
            })
            .collect();
        RunOutput {
            algorithm: self.sc.algorithm,
            seed: self.sc.seed,
            evaluators: self.evaluators,
            records: self.records,
            nodes,
            submitted: self.requests.into_iter().map(|r| r.tx).collect(),
            verdicts: self.verdicts,
            stake: self.stake,
            violations: self.violations,
            committed_tampered,
            end: self.now,
        }
    }

    /// Committed prefixes must agree pairwise.
    fn check_logs(&mut self) {
        let n = self.replicas.len();
        for a in 0..n {
            for b in a + 1..n {
                let (la, lb) = (self.replicas[a].log(), self.replicas[b].log());
                let upto = la.commit_num().min(lb.commit_num());
                if let Some(k) = (1..=upto).find(|&k| la.hash_at(k) != lb.hash_at(k)) {
                    let v = Violation::LogSafety {
                        block_num: k,
                        a: self.ids[a],
                        b: self.ids[b],
                    };
                    self.log(None, Event::Violation(v.clone()));
                    self.violations.push(v);
                }
            }
        }
    }

    /// Counts committed entries that differ from the client's original.
    /// Under RAC with an honest evaluator majority each one is a violation.
    fn check_tampering(&mut self) -> usize {
        let colluders = self.sc.faults.collude_evaluator.len();
        let protected =
            self.sc.algorithm == Algorithm::Rac && colluders < majority(self.evaluators.len());
        let mut seen = BTreeSet::new();
        let mut found = Vec::new();
        for (i, r) in self.replicas.iter().enumerate() {
            let log = r.log();
            for k in 1..=log.commit_num() {
                let block = log.get(k).expect("committed");
                for e in &block.entries {
                    let original = (e.request_id as usize)
                        .checked_sub(1)
                        .and_then(|j| self.requests.get(j));
                    if original.is_some_and(|o| o.tx == *e) {
                        continue;
                    }
                    if seen.insert((log.hash_at(k), e.request_id)) && protected {
                        found.push(Violation::TamperedCommit {
                            node: self.ids[i],
                            block_num: k,
                            request_id: e.request_id,
                        });
                    }
                }
            }
        }
        for v in found {
            self.log(None, Event::Violation(v.clone()));
            self.violations.push(v);
        }
        seen.len()
    }
}
