//! Run log entries. One record per line when rendered, `key=value` fields.

use alloc::string::String;
use core::fmt;

use crate::behavior::{BehaviorRole, StakeEvent, Verdict};
use crate::ledger::{NodeId, SimTime, Term};
use crate::protocol::{Addr, BehaviorEvent, Note, Phase};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum DropReason {
    /// Lost at random.
    Loss,
    Partition,
    /// The receiver was down at delivery time.
    Crashed,
    /// Still in flight when the run stopped.
    EndOfRun,
}

impl DropReason {
    pub fn name(self) -> &'static str {
        match self {
            Self::Loss => "loss",
            Self::Partition => "partition",
            Self::Crashed => "crashed",
            Self::EndOfRun => "end_of_run",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    /// Two nodes took office in the same term.
    ElectionSafety {
        term: Term,
        first: NodeId,
        second: NodeId,
    },
    /// Two nodes committed different blocks at the same height.
    LogSafety {
        block_num: u64,
        a: NodeId,
        b: NodeId,
    },
    /// A committed block holds an entry that differs from what the client
    /// sent.
    TamperedCommit {
        node: NodeId,
        block_num: u64,
        request_id: u64,
    },
    /// A node listed by a majority of honest replicas took office.
    ListedAccountant { node: NodeId, term: Term },
}

impl Violation {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ElectionSafety { .. } => "election_safety",
            Self::LogSafety { .. } => "log_safety",
            Self::TamperedCommit { .. } => "tampered_commit",
            Self::ListedAccountant { .. } => "listed_accountant",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())?;
        match self {
            Self::ElectionSafety {
                term,
                first,
                second,
            } => {
                write!(f, " term={term} first={first} second={second}")
            }
            Self::LogSafety { block_num, a, b } => write!(f, " block={block_num} a={a} b={b}"),
            Self::TamperedCommit {
                node,
                block_num,
                request_id,
            } => write!(f, " at={node} block={block_num} request={request_id}"),
            Self::ListedAccountant { node, term } => write!(f, " accountant={node} term={term}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Send {
        id: u64,
        from: Addr,
        to: Addr,
        kind: &'static str,
        phase: Phase,
        round: Option<u64>,
        /// Height confirmed by a successful append-entries reply.
        acked: Option<u64>,
        term: Option<Term>,
        bytes: usize,
    },
    Deliver {
        id: u64,
        to: Addr,
    },
    Drop {
        id: u64,
        reason: DropReason,
    },
    Note(Note),
    Action(BehaviorEvent),
    Role {
        role: &'static str,
        term: Term,
    },
    Crash,
    Restart,
    /// A fault switched on during the run.
    Fault {
        what: &'static str,
    },
    Submit {
        request_id: u64,
        client: u32,
        to: NodeId,
        attempt: u32,
    },
    Reply {
        request_id: u64,
        client: u32,
        block_num: u64,
    },
    Verdict {
        role: BehaviorRole,
        term: Term,
        block_num: Option<u64>,
        verdict: Verdict,
    },
    Stake(StakeEvent),
    StakeSkipped {
        offender: NodeId,
        reason: String,
    },
    Violation(Violation),
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::Send { .. } => "send",
            Event::Deliver { .. } => "deliver",
            Event::Drop { .. } => "drop",
            Event::Note(_) => "note",
            Event::Action(_) => "action",
            Event::Role { .. } => "role",
            Event::Crash => "crash",
            Event::Restart => "restart",
            Event::Fault { .. } => "fault",
            Event::Submit { .. } => "submit",
            Event::Reply { .. } => "reply",
            Event::Verdict { .. } => "verdict",
            Event::Stake(_) => "stake",
            Event::StakeSkipped { .. } => "stake_skipped",
            Event::Violation(_) => "violation",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub time: SimTime,
    /// The node the record is about; `None` for client and network events.
    pub node: Option<NodeId>,
    pub event: Event,
}

fn opt<T: fmt::Display>(v: &Option<T>) -> impl fmt::Display + '_ {
    struct D<'a, T>(&'a Option<T>);
    impl<T: fmt::Display> fmt::Display for D<'_, T> {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match self.0 {
                Some(v) => write!(f, "{v}"),
                None => f.write_str("-"),
            }
        }
    }
    D(v)
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} node={} event={}",
            self.time,
            opt(&self.node),
            self.event.name()
        )?;
        match &self.event {
            Event::Send {
                id,
                from,
                to,
                kind,
                phase,
                round,
                acked,
                term,
                bytes,
            } => write!(
                f,
                " id={id} from={from} to={to} kind={kind} phase={} round={} acked={} term={} bytes={bytes}",
                phase.name(),
                opt(round),
                opt(acked),
                opt(term)
            ),
            Event::Deliver { id, to } => write!(f, " id={id} to={to}"),
            Event::Drop { id, reason } => write!(f, " id={id} reason={}", reason.name()),
            Event::Note(n) => write!(f, " note={n}"),
            Event::Action(a) => write!(
                f,
                " role={} term={} block={} action={}",
                a.role,
                a.term,
                opt(&a.block_num),
                a.action
            ),
            Event::Role { role, term } => write!(f, " role={role} term={term}"),
            Event::Crash | Event::Restart => Ok(()),
            Event::Fault { what } => write!(f, " fault={what}"),
            Event::Submit {
                request_id,
                client,
                to,
                attempt,
            } => write!(f, " request={request_id} client=c{client} to={to} attempt={attempt}"),
            Event::Reply {
                request_id,
                client,
                block_num,
            } => write!(f, " request={request_id} client=c{client} block={block_num}"),
            Event::Verdict {
                role,
                term,
                block_num,
                verdict,
            } => {
                write!(
                    f,
                    " role={role} term={term} block={} verdict={}",
                    opt(block_num),
                    verdict.name()
                )?;
                match verdict {
                    Verdict::Byzantine(k) => write!(f, " kind={}", k.name()),
                    Verdict::Incomplete { violation: Some(v) } => {
                        write!(f, " at={} action={}", v.position, v.action)
                    }
                    _ => Ok(()),
                }
            }
            Event::Stake(s) => {
                write!(
                    f,
                    " kind={} term={} offender={} amount={}",
                    s.kind.name(),
                    s.term,
                    s.offender,
                    s.amount
                )
            }
            Event::StakeSkipped { offender, reason } => {
                write!(f, " offender={offender} reason={reason:?}")
            }
            Event::Violation(v) => write!(f, " violation={v}"),
        }
    }
}
