//! Measurements over a run log: latency, throughput, election cost and
//! message counts. Everything here is a pure function of the records.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::ledger::{NodeId, SimTime, Term};
use crate::protocol::{Addr, Note, Phase};
use crate::simnet::{Event, Record};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("request {0} never committed")]
    NotCommitted(u64),
    #[error("only {have} of {want} transactions committed")]
    InsufficientCommits { have: usize, want: usize },
    #[error("no accountant took office in term {0}")]
    NoElection(Term),
}

/// Message counts per phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PhaseCounts {
    pub selection: usize,
    pub block_addition: usize,
    pub confirmation: usize,
    pub maintenance: usize,
    pub client: usize,
}

impl PhaseCounts {
    pub fn add(&mut self, p: Phase) {
        *self.slot(p) += 1;
    }

    fn slot(&mut self, p: Phase) -> &mut usize {
        match p {
            Phase::Selection => &mut self.selection,
            Phase::BlockAddition => &mut self.block_addition,
            Phase::Confirmation => &mut self.confirmation,
            Phase::Maintenance => &mut self.maintenance,
            Phase::Client => &mut self.client,
        }
    }

    pub fn get(&self, p: Phase) -> usize {
        match p {
            Phase::Selection => self.selection,
            Phase::BlockAddition => self.block_addition,
            Phase::Confirmation => self.confirmation,
            Phase::Maintenance => self.maintenance,
            Phase::Client => self.client,
        }
    }

    pub fn total(&self) -> usize {
        Phase::ALL.iter().map(|p| self.get(*p)).sum()
    }
}

/// Messages of one block round.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RoundMessages {
    pub block_num: u64,
    /// Every send tagged with the block, dropped ones included.
    pub by_phase: PhaseCounts,
    /// Judgment calls plus block-carrying append-entries.
    pub fan_out: usize,
    /// Followers whose acknowledgements covered the block when the leader
    /// committed it. A later block's ack covers every earlier one.
    pub acks_to_commit: usize,
    pub leader: Option<NodeId>,
    /// Proposed and committed by the same leader with no election in between.
    pub steady: bool,
}

impl RoundMessages {
    /// Messages on the commit path: fan-out plus the acks the commit needed.
    pub fn round_count(&self) -> usize {
        self.fan_out + self.acks_to_commit
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Election {
    pub term: Term,
    pub accountant: NodeId,
    /// First candidacy since the previous accountant took office. Failed
    /// campaigns in earlier terms count toward this election.
    pub start: SimTime,
    /// First candidacy of `term` itself.
    pub term_start: SimTime,
    pub established: SimTime,
}

impl Election {
    /// Time without an accountant, from the first campaign to the winner's
    /// first heartbeat.
    pub fn cost_ms(&self) -> f64 {
        self.established.saturating_sub(self.start).as_ms()
    }

    /// The winning term alone.
    pub fn term_cost_ms(&self) -> f64 {
        self.established.saturating_sub(self.term_start).as_ms()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub submitted: usize,
    pub committed: usize,
    pub empty_blocks: usize,
    /// `(request_id, ms)` in commit order.
    pub latencies: Vec<(u64, f64)>,
    /// Over every committed transaction; `None` when nothing committed.
    pub throughput: Option<f64>,
    pub elections: Vec<Election>,
    pub rounds: Vec<RoundMessages>,
    pub totals: PhaseCounts,
    pub delivered: usize,
    pub dropped: usize,
}

impl MetricsReport {
    pub fn latency_p50(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.latencies.iter().map(|l| l.1).collect();
        median(&mut v)
    }

    pub fn mean_election_cost(&self) -> Option<f64> {
        (!self.elections.is_empty()).then(|| {
            self.elections.iter().map(Election::cost_ms).sum::<f64>() / self.elections.len() as f64
        })
    }

    /// Median commit-path count over steady rounds.
    pub fn msgs_per_round(&self) -> Option<f64> {
        let mut v: Vec<f64> = self
            .rounds
            .iter()
            .filter(|r| r.steady)
            .map(|r| r.round_count() as f64)
            .collect();
        median(&mut v)
    }
}

/// Upper median for even lengths is avoided: the two middle values are averaged.
pub fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

/// First commit of each request at its leader: `(time, request_id, submit_time)`.
fn commits(log: &[Record]) -> Vec<(SimTime, u64, SimTime)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in log {
        if let Event::Note(Note::Committed {
            by_leader: true,
            fresh,
            ..
        }) = &r.event
        {
            for &(id, _, submit) in fresh {
                if seen.insert(id) {
                    out.push((r.time, id, submit));
                }
            }
        }
    }
    out
}

/// Milliseconds from submission to the leader's commit of the block holding it.
pub fn latency(log: &[Record], request_id: u64) -> Result<f64, MetricsError> {
    commits(log)
        .into_iter()
        .find(|c| c.1 == request_id)
        .map(|(at, _, submit)| at.saturating_sub(submit).as_ms())
        .ok_or(MetricsError::NotCommitted(request_id))
}

fn first_submit(log: &[Record]) -> Option<SimTime> {
    log.iter()
        .find(|r| matches!(r.event, Event::Submit { .. }))
        .map(|r| r.time)
}

/// Transactions per second over the first `t` commits, timed from the
/// first submission.
pub fn throughput(log: &[Record], t: usize) -> Result<f64, MetricsError> {
    let c = commits(log);
    let short = MetricsError::InsufficientCommits {
        have: c.len(),
        want: t,
    };
    if t == 0 || c.len() < t {
        return Err(short);
    }
    let start = first_submit(log).ok_or(short)?;
    let secs = c[t - 1].0.saturating_sub(start).as_ms() / 1_000.0;
    Ok(if secs > 0.0 {
        t as f64 / secs
    } else {
        f64::INFINITY
    })
}

fn elections(log: &[Record]) -> Vec<Election> {
    let mut start: BTreeMap<Term, SimTime> = BTreeMap::new();
    let mut campaign: Option<SimTime> = None;
    let mut out: Vec<Election> = Vec::new();
    for r in log {
        match (&r.event, r.node) {
            (Event::Note(Note::Candidacy { term }), _) => {
                start.entry(*term).or_insert(r.time);
                campaign.get_or_insert(r.time);
            }
            (Event::Note(Note::Established { term }), Some(n))
                if !out.iter().any(|e| e.term == *term) =>
            {
                let term_start = start.get(term).copied().unwrap_or(r.time);
                out.push(Election {
                    term: *term,
                    accountant: n,
                    start: campaign.take().unwrap_or(term_start).min(term_start),
                    term_start,
                    established: r.time,
                });
            }
            _ => {}
        }
    }
    out
}

/// From the first candidacy of `term` to its accountant's first heartbeat.
pub fn election_cost(log: &[Record], term: Term) -> Result<f64, MetricsError> {
    elections(log)
        .into_iter()
        .find(|e| e.term == term)
        .map(|e| e.term_cost_ms())
        .ok_or(MetricsError::NoElection(term))
}

struct SendInfo {
    from: Addr,
    acked: Option<u64>,
}

/// Counts for the block round `block_num`.
pub fn message_complexity(log: &[Record], block_num: u64) -> RoundMessages {
    all_rounds(log).remove(&block_num).unwrap_or(RoundMessages {
        block_num,
        ..RoundMessages::default()
    })
}

fn all_rounds(log: &[Record]) -> BTreeMap<u64, RoundMessages> {
    let mut rounds: BTreeMap<u64, RoundMessages> = BTreeMap::new();
    let mut sends: BTreeMap<u64, SendInfo> = BTreeMap::new();
    // highest block each follower has acked to each leader so far
    let mut acked: BTreeMap<(NodeId, Addr), u64> = BTreeMap::new();
    let mut proposed: BTreeMap<u64, (NodeId, usize)> = BTreeMap::new();
    let mut candidacies: Vec<usize> = Vec::new();
    for (i, r) in log.iter().enumerate() {
        match &r.event {
            Event::Send {
                id,
                from,
                kind,
                phase,
                round,
                acked,
                ..
            } => {
                sends.insert(
                    *id,
                    SendInfo {
                        from: *from,
                        acked: *acked,
                    },
                );
                if let Some(k) = round {
                    let rm = rounds.entry(*k).or_insert_with(|| RoundMessages {
                        block_num: *k,
                        ..RoundMessages::default()
                    });
                    rm.by_phase.add(*phase);
                    if matches!(*kind, "judgment" | "append_entries") {
                        rm.fan_out += 1;
                    }
                }
            }
            Event::Deliver {
                id,
                to: Addr::Node(n),
            } => {
                if let Some(SendInfo {
                    from,
                    acked: Some(k),
                }) = sends.get(id)
                {
                    let top = acked.entry((*n, *from)).or_default();
                    *top = (*top).max(*k);
                }
            }
            Event::Note(Note::Candidacy { .. }) => candidacies.push(i),
            Event::Note(Note::Proposed { block_num, .. }) => {
                if let Some(n) = r.node {
                    proposed.insert(*block_num, (n, i));
                }
            }
            Event::Note(Note::Committed {
                block_num,
                empty,
                by_leader: true,
                ..
            }) => {
                let Some(n) = r.node else { continue };
                let rm = rounds.entry(*block_num).or_insert_with(|| RoundMessages {
                    block_num: *block_num,
                    ..RoundMessages::default()
                });
                if rm.leader.is_some() {
                    continue;
                }
                rm.leader = Some(n);
                rm.acks_to_commit = acked
                    .iter()
                    .filter(|((l, _), &top)| *l == n && top >= *block_num)
                    .count();
                rm.steady = !*empty
                    && proposed.get(block_num).is_some_and(|&(p, at)| {
                        p == n && !candidacies.iter().any(|&c| c > at && c < i)
                    });
            }
            _ => {}
        }
    }
    rounds
}

/// Everything measurable from one run log.
pub fn report(log: &[Record]) -> MetricsReport {
    let c = commits(log);
    let mut totals = PhaseCounts::default();
    let (mut delivered, mut dropped, mut submitted, mut empty_blocks) = (0, 0, BTreeSet::new(), 0);
    for r in log {
        match &r.event {
            Event::Send { phase, .. } => totals.add(*phase),
            Event::Deliver { .. } => delivered += 1,
            Event::Drop { .. } => dropped += 1,
            Event::Submit { request_id, .. } => {
                submitted.insert(*request_id);
            }
            Event::Note(Note::Committed {
                empty: true,
                by_leader: true,
                ..
            }) => empty_blocks += 1,
            _ => {}
        }
    }
    MetricsReport {
        submitted: submitted.len(),
        committed: c.len(),
        empty_blocks,
        latencies: c
            .iter()
            .map(|&(at, id, submit)| (id, at.saturating_sub(submit).as_ms()))
            .collect(),
        throughput: throughput(log, c.len()).ok(),
        elections: elections(log),
        rounds: all_rounds(log).into_values().collect(),
        totals,
        delivered,
        dropped,
    }
}
