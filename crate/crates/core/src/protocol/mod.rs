//! The RAC replica state machine and the pieces it shares with the Raft
//! baseline: messages, the block log, replication tracking and the
//! effect/notes interface the simulator drives.

pub mod log;
pub mod message;
mod node;
pub mod replicate;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::behavior::{ActionSymbol, BehaviorRole};
use crate::ledger::{Digest, NodeId, OrgId, RiskNodeList, SimTime, Term};
use crate::risk::{RiskConfig, SyscallTrace};

pub use log::{BlockLog, CommittedBlock, Offer};
pub use message::{
    certificate_fails, certificate_voids, AppendEntries, AppendEntriesReply, Certificate,
    ClientReply, ClientRequest, Judgment, JudgmentReply, JudgmentVerdict, Message, Phase, Redirect,
    RequestVote, RiskCompute, RiskComputeReply, VoteReply,
};
pub use node::RacNode;
pub use replicate::Replicator;

/// `floor(n/2) + 1`.
pub const fn majority(n: usize) -> usize {
    n / 2 + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Role {
    Follower,
    Candidate,
    Accountant,
    Evaluator,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Follower => "follower",
            Role::Candidate => "candidate",
            Role::Accountant => "accountant",
            Role::Evaluator => "evaluator",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a message comes from or goes to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Addr {
    Node(NodeId),
    Client(u32),
}

impl fmt::Display for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Addr::Node(n) => write!(f, "{n}"),
            Addr::Client(c) => write!(f, "c{c}"),
        }
    }
}

/// Timers a replica can arm. Each carries enough context for the replica to
/// recognise a stale firing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Timer {
    Election(u64),
    Heartbeat(Term),
    Batch(Term),
    Judgment { term: Term, block_num: u64 },
    Collect(Term),
    RiskDone(Term),
    RnlSettle(Term),
    Grace,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Input {
    Deliver {
        from: Addr,
        msg: Message,
    },
    Timer(Timer),
    /// The node comes back after a crash with its chain, term and vote.
    Restart,
}

/// One behavior action, tagged with the role the node acted in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BehaviorEvent {
    pub role: BehaviorRole,
    pub term: Term,
    pub block_num: Option<u64>,
    pub action: ActionSymbol,
}

/// Why a node entered the risk-node list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RnlReason {
    Assessment,
    EmptyBlock,
    CertificateMismatch,
    EvaluatorMinority,
}

impl RnlReason {
    pub fn name(self) -> &'static str {
        match self {
            RnlReason::Assessment => "assessment",
            RnlReason::EmptyBlock => "empty_block",
            RnlReason::CertificateMismatch => "certificate_mismatch",
            RnlReason::EvaluatorMinority => "evaluator_minority",
        }
    }
}

/// Observable events, written to the run log and read back by the
/// metrics.
#[derive(Clone, Debug, PartialEq)]
pub enum Note {
    Candidacy {
        term: Term,
    },
    Elected {
        term: Term,
        votes: usize,
    },
    /// First heartbeat of a new leader went out.
    Established {
        term: Term,
    },
    SteppedDown {
        term: Term,
    },
    VoteGranted {
        candidate: NodeId,
        term: Term,
    },
    VoteDenied {
        candidate: NodeId,
        term: Term,
        reason: &'static str,
    },
    ForgedVote {
        claimed: NodeId,
        sender: NodeId,
    },
    TraceSubmitted {
        term: Term,
        len: usize,
    },
    Assessment {
        term: Term,
        scored: usize,
        flagged: Vec<NodeId>,
        skipped: bool,
    },
    RnlSettled {
        term: Term,
        replies: usize,
        listed: usize,
    },
    RnlAdded {
        node: NodeId,
        reason: RnlReason,
    },
    /// An assessment listing the latest round no longer backs.
    RnlRemoved {
        node: NodeId,
    },
    Proposed {
        block_num: u64,
        digest: Digest,
        entries: usize,
        tampered: bool,
    },
    JudgmentGiven {
        block_num: u64,
        digest: Digest,
        verdict: JudgmentVerdict,
        reason: &'static str,
    },
    Decided {
        block_num: u64,
        digest: Digest,
        empty: bool,
        fails: usize,
        missing: usize,
    },
    Appended {
        block_num: u64,
        digest: Digest,
        empty: bool,
        block_term: Term,
    },
    Committed {
        block_num: u64,
        digest: Digest,
        empty: bool,
        by_leader: bool,
        /// `(request_id, client_id, submit_time)` of entries committed for
        /// the first time.
        fresh: Vec<(u64, u32, SimTime)>,
    },
    CertificateMismatch {
        accountant: NodeId,
    },
    IgnoredLeader {
        leader: NodeId,
        reason: &'static str,
    },
}

impl Note {
    pub fn name(&self) -> &'static str {
        match self {
            Note::Candidacy { .. } => "candidacy",
            Note::Elected { .. } => "elected",
            Note::Established { .. } => "established",
            Note::SteppedDown { .. } => "stepped_down",
            Note::VoteGranted { .. } => "vote_granted",
            Note::VoteDenied { .. } => "vote_denied",
            Note::ForgedVote { .. } => "forged_vote",
            Note::TraceSubmitted { .. } => "trace_submitted",
            Note::Assessment { .. } => "assessment",
            Note::RnlSettled { .. } => "rnl_settled",
            Note::RnlAdded { .. } => "rnl_added",
            Note::RnlRemoved { .. } => "rnl_removed",
            Note::Proposed { .. } => "proposed",
            Note::JudgmentGiven { .. } => "judgment_given",
            Note::Decided { .. } => "decided",
            Note::Appended { .. } => "appended",
            Note::Committed { .. } => "committed",
            Note::CertificateMismatch { .. } => "certificate_mismatch",
            Note::IgnoredLeader { .. } => "ignored_leader",
        }
    }
}

fn join<T: fmt::Display>(
    f: &mut fmt::Formatter<'_>,
    items: impl IntoIterator<Item = T>,
) -> fmt::Result {
    let mut first = true;
    for it in items {
        if !first {
            f.write_str(",")?;
        }
        first = false;
        write!(f, "{it}")?;
    }
    Ok(())
}

impl fmt::Display for Note {
    /// `name key=value ...`, one line, no spaces inside values.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())?;
        match self {
            Note::Candidacy { term } | Note::Established { term } | Note::SteppedDown { term } => {
                write!(f, " term={term}")
            }
            Note::Elected { term, votes } => write!(f, " term={term} votes={votes}"),
            Note::VoteGranted { candidate, term } => {
                write!(f, " candidate={candidate} term={term}")
            }
            Note::VoteDenied {
                candidate,
                term,
                reason,
            } => write!(f, " candidate={candidate} term={term} reason={reason}"),
            Note::ForgedVote { claimed, sender } => write!(f, " claimed={claimed} sender={sender}"),
            Note::TraceSubmitted { term, len } => write!(f, " term={term} len={len}"),
            Note::Assessment {
                term,
                scored,
                flagged,
                skipped,
            } => {
                write!(f, " term={term} scored={scored} skipped={skipped} flagged=")?;
                join(f, flagged)
            }
            Note::RnlSettled {
                term,
                replies,
                listed,
            } => write!(f, " term={term} replies={replies} listed={listed}"),
            Note::RnlAdded { node, reason } => write!(f, " node={node} reason={}", reason.name()),
            Note::RnlRemoved { node } => write!(f, " node={node}"),
            Note::Proposed {
                block_num,
                digest,
                entries,
                tampered,
            } => write!(
                f,
                " block={block_num} digest={digest} entries={entries} tampered={tampered}"
            ),
            Note::JudgmentGiven {
                block_num,
                digest,
                verdict,
                reason,
            } => write!(
                f,
                " block={block_num} digest={digest} verdict={} reason={reason}",
                verdict.name()
            ),
            Note::Decided {
                block_num,
                digest,
                empty,
                fails,
                missing,
            } => write!(
                f,
                " block={block_num} digest={digest} empty={empty} fails={fails} missing={missing}"
            ),
            Note::Appended {
                block_num,
                digest,
                empty,
                block_term,
            } => write!(
                f,
                " block={block_num} digest={digest} empty={empty} block_term={block_term}"
            ),
            Note::Committed {
                block_num,
                digest,
                empty,
                by_leader,
                fresh,
            } => {
                write!(
                    f,
                    " block={block_num} digest={digest} empty={empty} by_leader={by_leader} requests="
                )?;
                join(f, fresh.iter().map(|(r, _, _)| r))
            }
            Note::CertificateMismatch { accountant } => write!(f, " accountant={accountant}"),
            Note::IgnoredLeader { leader, reason } => write!(f, " leader={leader} reason={reason}"),
        }
    }
}

/// Everything a step produced. The simulator drains it after each call.
#[derive(Clone, Debug, Default)]
pub struct Effects {
    pub sends: Vec<(Addr, Message)>,
    pub timers: Vec<(SimTime, Timer)>,
    pub actions: Vec<BehaviorEvent>,
    pub notes: Vec<Note>,
}

impl Effects {
    pub fn send(&mut self, to: NodeId, msg: Message) {
        self.sends.push((Addr::Node(to), msg));
    }

    pub fn reply_client(&mut self, client: u32, msg: Message) {
        self.sends.push((Addr::Client(client), msg));
    }

    pub fn timer(&mut self, at: SimTime, t: Timer) {
        self.timers.push((at, t));
    }

    pub fn note(&mut self, n: Note) {
        self.notes.push(n);
    }

    pub fn clear(&mut self) {
        self.sends.clear();
        self.timers.clear();
        self.actions.clear();
        self.notes.clear();
    }
}

/// Timing and policy knobs shared by every replica of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub election_timeout_min: SimTime,
    pub election_timeout_max: SimTime,
    pub heartbeat_interval: SimTime,
    pub batch_interval: SimTime,
    pub max_batch: usize,
    /// Missing verdicts count as fail once this has passed.
    pub judgment_timeout: SimTime,
    /// How long an evaluator waits for a missing parent block or client copy
    /// before failing a judgment.
    pub judgment_grace: SimTime,
    /// Evaluators assess with whatever traces arrived by then.
    pub collect_timeout: SimTime,
    /// A node stops waiting for further risk lists after this.
    pub rnl_timeout: SimTime,
    pub risk_delay_base: SimTime,
    pub risk_delay_per_trace: SimTime,
    /// An unanswered block is sent again after this.
    pub retransmit: SimTime,
    /// Minority verdicts an evaluator may give before it is listed.
    pub evaluator_strikes: u32,
    /// Fake identities a sybil candidate votes with.
    pub forged_votes: usize,
    /// Deliberately unsafe: voters skip the one-vote-per-term check. Only
    /// useful for exercising the invariant checks.
    pub grant_every_vote: bool,
    pub risk: RiskConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            election_timeout_min: SimTime::from_ms(150),
            election_timeout_max: SimTime::from_ms(300),
            heartbeat_interval: SimTime::from_ms(50),
            batch_interval: SimTime::from_ms(10),
            max_batch: 256,
            judgment_timeout: SimTime::from_ms(36),
            judgment_grace: SimTime::from_ms(20),
            collect_timeout: SimTime::from_ms(30),
            rnl_timeout: SimTime::from_ms(80),
            risk_delay_base: SimTime::from_ms(1),
            risk_delay_per_trace: SimTime(100),
            retransmit: SimTime::from_ms(100),
            evaluator_strikes: 1,
            forged_votes: 0,
            grant_every_vote: false,
            risk: RiskConfig::default(),
        }
    }
}

/// Membership and configuration, identical at every replica.
#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub nodes: Vec<NodeId>,
    pub evaluators: BTreeSet<NodeId>,
    pub config: ProtocolConfig,
    /// Master seed of the run; per-node and per-term streams derive from it.
    pub seed: u64,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    pub fn quorum(&self) -> usize {
        majority(self.nodes.len())
    }

    pub fn is_evaluator(&self, n: &NodeId) -> bool {
        self.evaluators.contains(n)
    }
}

/// Byzantine behaviour switched on for one node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NodeFaults {
    /// Flip a payload byte of the first entry of every proposed block.
    pub tamper: bool,
    /// Invert every judgment verdict.
    pub collude: bool,
    /// Ignore the risk-list bar and vote for itself under forged identities.
    pub sybil: bool,
}

impl NodeFaults {
    pub fn any(&self) -> bool {
        self.tamper || self.collude || self.sybil
    }
}

/// Supplies the syscall trace a node submits at the start of an election.
pub trait TraceSource {
    /// The trace `node` submits in `term`; it covers the previous term.
    fn trace(&self, node: NodeId, term: Term) -> SyscallTrace;
}

/// A replica the simulator can drive.
pub trait Replica {
    fn id(&self) -> NodeId;
    fn role_name(&self) -> &'static str;
    fn is_leader(&self) -> bool;
    fn term(&self) -> Term;
    fn log(&self) -> &BlockLog;
    fn rnl(&self) -> Option<&RiskNodeList> {
        None
    }
    fn start(&mut self, now: SimTime, fx: &mut Effects);
    fn step(&mut self, now: SimTime, input: Input, fx: &mut Effects);
    fn faults_mut(&mut self) -> &mut NodeFaults;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroupError {
    #[error("the evaluator group needs nodes from at least two organizations")]
    SingleOrg,
    #[error("organization {org} has {have} eligible nodes, {need} required")]
    NotEnoughNodes { org: u16, have: usize, need: usize },
    #[error("evaluators per organization must be at least 1")]
    ZeroPerOrg,
}

/// Picks the `per_org` highest-asset nodes of every organization, skipping
/// listed nodes. Equal assets go to the lower node id.
pub fn init_evaluator_group(
    orgs: &BTreeMap<OrgId, Vec<(NodeId, u64)>>,
    per_org: usize,
    rnl: &RiskNodeList,
) -> Result<BTreeSet<NodeId>, GroupError> {
    if per_org == 0 {
        return Err(GroupError::ZeroPerOrg);
    }
    if orgs.values().filter(|v| !v.is_empty()).count() < 2 {
        return Err(GroupError::SingleOrg);
    }
    let mut out = BTreeSet::new();
    for (org, members) in orgs {
        let mut eligible: Vec<(NodeId, u64)> = members
            .iter()
            .copied()
            .filter(|(n, _)| !rnl.contains(n))
            .collect();
        if eligible.len() < per_org {
            return Err(GroupError::NotEnoughNodes {
                org: org.0,
                have: eligible.len(),
                need: per_org,
            });
        }
        eligible.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        out.extend(eligible.into_iter().take(per_org).map(|(n, _)| n));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn orgs(layout: &[(u16, &[(u32, u64)])]) -> BTreeMap<OrgId, Vec<(NodeId, u64)>> {
        layout
            .iter()
            .map(|(o, ms)| {
                (
                    OrgId(*o),
                    ms.iter()
                        .map(|(v, a)| (NodeId::new(*v, OrgId(*o)), *a))
                        .collect(),
                )
            })
            .collect()
    }

    #[test]
    fn majority_arithmetic() {
        assert_eq!(majority(5), 3);
        assert_eq!(majority(4), 3);
        assert_eq!(majority(10), 6);
        assert_eq!(majority(1), 1);
        assert_eq!(majority(0), 1);
    }

    #[test]
    fn one_evaluator_per_org() {
        let o = orgs(&[
            (0, &[(0, 5), (1, 9), (2, 1)]),
            (1, &[(3, 2), (4, 2), (5, 3)]),
            (2, &[(6, 7), (7, 1), (8, 1)]),
        ]);
        let g = init_evaluator_group(&o, 1, &RiskNodeList::new()).unwrap();
        let ids: Vec<u32> = g.iter().map(|n| n.value).collect();
        assert_eq!(ids, vec![1, 5, 6]);
    }

    #[test]
    fn single_org_is_rejected() {
        let o = orgs(&[(0, &[(0, 1), (1, 1)])]);
        assert_eq!(
            init_evaluator_group(&o, 1, &RiskNodeList::new()),
            Err(GroupError::SingleOrg)
        );
    }

    #[test]
    fn ties_go_to_the_lower_id() {
        let o = orgs(&[(0, &[(4, 3), (2, 3), (3, 3)]), (1, &[(9, 0), (8, 0)])]);
        let g = init_evaluator_group(&o, 1, &RiskNodeList::new()).unwrap();
        let ids: Vec<u32> = g.iter().map(|n| n.value).collect();
        assert_eq!(ids, vec![2, 8]);
    }

    #[test]
    fn listed_nodes_are_skipped() {
        let o = orgs(&[(0, &[(0, 9), (1, 1)]), (1, &[(2, 1)])]);
        let mut rnl = RiskNodeList::new();
        rnl.insert(NodeId::new(0, OrgId(0)), Term(1));
        let g = init_evaluator_group(&o, 1, &rnl).unwrap();
        assert!(g.contains(&NodeId::new(1, OrgId(0))));
        rnl.insert(NodeId::new(1, OrgId(0)), Term(1));
        assert_eq!(
            init_evaluator_group(&o, 1, &rnl),
            Err(GroupError::NotEnoughNodes {
                org: 0,
                have: 0,
                need: 1
            })
        );
    }
}
