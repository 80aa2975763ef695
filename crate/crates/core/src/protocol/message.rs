//! Wire messages shared by the RAC node and the Raft baseline.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};
use crate::ledger::{Block, Digest, NodeId, RiskNodeList, Term, TransactionRequest};
use crate::risk::SyscallTrace;

/// An evaluator's answer to a Judgment call.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum JudgmentVerdict {
    Success,
    Fail,
}

impl JudgmentVerdict {
    pub fn inverted(self) -> Self {
        match self {
            Self::Success => Self::Fail,
            Self::Fail => Self::Success,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Success => "success",
            Self::Fail => "fail",
        }
    }
}

/// Verdicts the accountant collected for one block, by evaluator.
pub type Certificate = BTreeMap<NodeId, JudgmentVerdict>;

/// Fail count after treating every evaluator absent from `cert` as a fail.
pub fn certificate_fails(cert: &Certificate, group: usize) -> usize {
    let fails = cert
        .values()
        .filter(|v| **v == JudgmentVerdict::Fail)
        .count();
    fails + group.saturating_sub(cert.len())
}

/// True when the certificate voids the block: fails reach a strict majority
/// of the evaluator group.
pub fn certificate_voids(cert: &Certificate, group: usize) -> bool {
    certificate_fails(cert, group) >= super::majority(group)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RiskCompute {
    pub term: Term,
    pub node_id: NodeId,
    pub system_call: SyscallTrace,
}

/// An evaluator's risk-node list after the assessment for `term`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RiskComputeReply {
    pub term: Term,
    pub rnl: RiskNodeList,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RequestVote {
    pub term: Term,
    pub candidate_id: NodeId,
    pub last_block_num: u64,
    pub last_block_term: Term,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoteReply {
    pub term: Term,
    /// Claimed voter. Receivers compare it with the authenticated sender.
    pub voter: NodeId,
    pub vote_granted: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Judgment {
    pub term: Term,
    pub accountant_id: NodeId,
    pub block: Block,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JudgmentReply {
    pub term: Term,
    pub evaluator: NodeId,
    pub block_num: u64,
    pub block_digest: Digest,
    pub verdict: JudgmentVerdict,
}

/// Replication of one block, or a heartbeat when `block` is `None`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AppendEntries {
    pub term: Term,
    pub accountant_id: NodeId,
    pub block: Option<Block>,
    /// Term in which `block` was proposed.
    pub block_term: Term,
    pub certificate: Certificate,
    /// The sender's commit point, named by number and hash so a receiver
    /// only adopts it when its own chain holds the same block.
    pub commit_num: u64,
    pub commit_hash: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AppendEntriesReply {
    pub term: Term,
    pub success: bool,
    /// Number of the block this answers; `None` for a heartbeat.
    pub for_block: Option<u64>,
    /// Replier's head, or on failure the highest block it may share with
    /// the sender.
    pub last_num: u64,
    pub last_hash: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientRequest {
    pub tx: TransactionRequest,
    /// Set on the copy a client sends to each evaluator; such copies are
    /// kept for judgment and never forwarded.
    pub judgment_copy: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientReply {
    pub request_id: u64,
    pub block_num: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Redirect {
    pub request_id: u64,
    pub leader: Option<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    RiskCompute(RiskCompute),
    RiskComputeReply(RiskComputeReply),
    RequestVote(RequestVote),
    VoteReply(VoteReply),
    Judgment(Judgment),
    JudgmentReply(JudgmentReply),
    AppendEntries(AppendEntries),
    AppendEntriesReply(AppendEntriesReply),
    ClientRequest(ClientRequest),
    ClientReply(ClientReply),
    Redirect(Redirect),
}

/// Accounting bucket of a message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Phase {
    /// Trace submission, risk lists and voting.
    Selection,
    /// Judgment calls and block replication.
    BlockAddition,
    /// Acknowledgements of replicated blocks.
    Confirmation,
    /// Heartbeats and their replies.
    Maintenance,
    /// Client traffic.
    Client,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::Selection,
        Phase::BlockAddition,
        Phase::Confirmation,
        Phase::Maintenance,
        Phase::Client,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Selection => "selection",
            Phase::BlockAddition => "block_addition",
            Phase::Confirmation => "confirmation",
            Phase::Maintenance => "maintenance",
            Phase::Client => "client",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::RiskCompute(_) => "risk_compute",
            Message::RiskComputeReply(_) => "risk_compute_reply",
            Message::RequestVote(_) => "request_vote",
            Message::VoteReply(_) => "vote_reply",
            Message::Judgment(_) => "judgment",
            Message::JudgmentReply(_) => "judgment_reply",
            Message::AppendEntries(m) if m.block.is_none() => "heartbeat",
            Message::AppendEntries(_) => "append_entries",
            Message::AppendEntriesReply(m) if m.for_block.is_none() => "heartbeat_reply",
            Message::AppendEntriesReply(_) => "append_entries_reply",
            Message::ClientRequest(_) => "client_request",
            Message::ClientReply(_) => "client_reply",
            Message::Redirect(_) => "redirect",
        }
    }

    pub fn phase(&self) -> Phase {
        match self {
            Message::RiskCompute(_)
            | Message::RiskComputeReply(_)
            | Message::RequestVote(_)
            | Message::VoteReply(_) => Phase::Selection,
            Message::Judgment(_) | Message::JudgmentReply(_) => Phase::BlockAddition,
            Message::AppendEntries(m) if m.block.is_some() => Phase::BlockAddition,
            Message::AppendEntriesReply(m) if m.for_block.is_some() => Phase::Confirmation,
            Message::AppendEntries(_) | Message::AppendEntriesReply(_) => Phase::Maintenance,
            Message::ClientRequest(_) | Message::ClientReply(_) | Message::Redirect(_) => {
                Phase::Client
            }
        }
    }

    /// Block a block-round message belongs to, as `(block_num, proposer term)`.
    /// Replies carry the replier's term, so they are keyed by number only
    /// and the term slot is `None`.
    pub fn round(&self) -> Option<(u64, Option<Term>)> {
        match self {
            Message::Judgment(m) => Some((m.block.block_num, Some(m.term))),
            Message::JudgmentReply(m) => Some((m.block_num, Some(m.term))),
            Message::AppendEntries(m) => {
                m.block.as_ref().map(|b| (b.block_num, Some(m.block_term)))
            }
            Message::AppendEntriesReply(m) => m.for_block.map(|n| (n, None)),
            _ => None,
        }
    }

    /// Height a successful append-entries reply confirms, heartbeat replies
    /// included.
    pub fn acked(&self) -> Option<u64> {
        match self {
            Message::AppendEntriesReply(m) if m.success => Some(m.last_num),
            _ => None,
        }
    }

    pub fn term(&self) -> Option<Term> {
        match self {
            Message::RiskCompute(m) => Some(m.term),
            Message::RiskComputeReply(m) => Some(m.term),
            Message::RequestVote(m) => Some(m.term),
            Message::VoteReply(m) => Some(m.term),
            Message::Judgment(m) => Some(m.term),
            Message::JudgmentReply(m) => Some(m.term),
            Message::AppendEntries(m) => Some(m.term),
            Message::AppendEntriesReply(m) => Some(m.term),
            _ => None,
        }
    }
}

mod tag {
    pub const RISK_COMPUTE: u8 = 1;
    pub const RISK_COMPUTE_REPLY: u8 = 2;
    pub const REQUEST_VOTE: u8 = 3;
    pub const VOTE_REPLY: u8 = 4;
    pub const JUDGMENT: u8 = 5;
    pub const JUDGMENT_REPLY: u8 = 6;
    pub const APPEND_ENTRIES: u8 = 7;
    pub const APPEND_ENTRIES_REPLY: u8 = 8;
    pub const CLIENT_REQUEST: u8 = 9;
    pub const CLIENT_REPLY: u8 = 10;
    pub const REDIRECT: u8 = 11;
}

impl Encode for SyscallTrace {
    fn encode_to(&self, w: &mut Writer) {
        self.node.encode_to(w);
        w.u64(self.term.0);
        w.u32(u32::try_from(self.calls.len()).expect("trace longer than u32::MAX"));
        for &c in &self.calls {
            w.u16(c);
        }
    }
}

impl Decode for SyscallTrace {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let node = NodeId::decode_from(r)?;
        let term = Term(r.u64()?);
        let n = r.u32()? as usize;
        if n > r.remaining() / 2 {
            return Err(DecodeError::Invalid {
                offset: r.offset(),
                what: "trace length exceeds input",
            });
        }
        let calls = (0..n).map(|_| r.u16()).collect::<Result<Vec<_>, _>>()?;
        Ok(SyscallTrace { node, term, calls })
    }
}

fn verdict_byte(v: JudgmentVerdict) -> u8 {
    match v {
        JudgmentVerdict::Success => 1,
        JudgmentVerdict::Fail => 0,
    }
}

fn read_verdict(r: &mut Reader<'_>) -> Result<JudgmentVerdict, DecodeError> {
    let at = r.offset();
    match r.u8()? {
        1 => Ok(JudgmentVerdict::Success),
        0 => Ok(JudgmentVerdict::Fail),
        _ => Err(DecodeError::Invalid {
            offset: at,
            what: "verdict must be 0 or 1",
        }),
    }
}

fn write_digest(w: &mut Writer, d: &Digest) {
    w.raw(&d.0);
}

fn read_digest(r: &mut Reader<'_>) -> Result<Digest, DecodeError> {
    Ok(Digest(r.array()?))
}

impl Encode for Message {
    fn encode_to(&self, w: &mut Writer) {
        match self {
            Message::RiskCompute(m) => {
                w.u8(tag::RISK_COMPUTE);
                w.u64(m.term.0);
                m.node_id.encode_to(w);
                w.nested(&m.system_call);
            }
            Message::RiskComputeReply(m) => {
                w.u8(tag::RISK_COMPUTE_REPLY);
                w.u64(m.term.0);
                m.rnl.encode_to(w);
            }
            Message::RequestVote(m) => {
                w.u8(tag::REQUEST_VOTE);
                w.u64(m.term.0);
                m.candidate_id.encode_to(w);
                w.u64(m.last_block_num);
                w.u64(m.last_block_term.0);
            }
            Message::VoteReply(m) => {
                w.u8(tag::VOTE_REPLY);
                w.u64(m.term.0);
                m.voter.encode_to(w);
                w.bool(m.vote_granted);
            }
            Message::Judgment(m) => {
                w.u8(tag::JUDGMENT);
                w.u64(m.term.0);
                m.accountant_id.encode_to(w);
                w.nested(&m.block);
            }
            Message::JudgmentReply(m) => {
                w.u8(tag::JUDGMENT_REPLY);
                w.u64(m.term.0);
                m.evaluator.encode_to(w);
                w.u64(m.block_num);
                write_digest(w, &m.block_digest);
                w.u8(verdict_byte(m.verdict));
            }
            Message::AppendEntries(m) => {
                w.u8(tag::APPEND_ENTRIES);
                w.u64(m.term.0);
                m.accountant_id.encode_to(w);
                match &m.block {
                    None => w.bool(false),
                    Some(b) => {
                        w.bool(true);
                        w.nested(b);
                    }
                }
                w.u64(m.block_term.0);
                w.u32(m.certificate.len() as u32);
                for (n, v) in &m.certificate {
                    n.encode_to(w);
                    w.u8(verdict_byte(*v));
                }
                w.u64(m.commit_num);
                write_digest(w, &m.commit_hash);
            }
            Message::AppendEntriesReply(m) => {
                w.u8(tag::APPEND_ENTRIES_REPLY);
                w.u64(m.term.0);
                w.bool(m.success);
                match m.for_block {
                    None => w.bool(false),
                    Some(n) => {
                        w.bool(true);
                        w.u64(n);
                    }
                }
                w.u64(m.last_num);
                write_digest(w, &m.last_hash);
            }
            Message::ClientRequest(m) => {
                w.u8(tag::CLIENT_REQUEST);
                w.nested(&m.tx);
                w.bool(m.judgment_copy);
            }
            Message::ClientReply(m) => {
                w.u8(tag::CLIENT_REPLY);
                w.u64(m.request_id);
                w.u64(m.block_num);
            }
            Message::Redirect(m) => {
                w.u8(tag::REDIRECT);
                w.u64(m.request_id);
                match m.leader {
                    None => w.bool(false),
                    Some(n) => {
                        w.bool(true);
                        n.encode_to(w);
                    }
                }
            }
        }
    }
}

impl Decode for Message {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let at = r.offset();
        let msg = match r.u8()? {
            tag::RISK_COMPUTE => Message::RiskCompute(RiskCompute {
                term: Term(r.u64()?),
                node_id: NodeId::decode_from(r)?,
                system_call: r.nested()?,
            }),
            tag::RISK_COMPUTE_REPLY => Message::RiskComputeReply(RiskComputeReply {
                term: Term(r.u64()?),
                rnl: RiskNodeList::decode_from(r)?,
            }),
            tag::REQUEST_VOTE => Message::RequestVote(RequestVote {
                term: Term(r.u64()?),
                candidate_id: NodeId::decode_from(r)?,
                last_block_num: r.u64()?,
                last_block_term: Term(r.u64()?),
            }),
            tag::VOTE_REPLY => Message::VoteReply(VoteReply {
                term: Term(r.u64()?),
                voter: NodeId::decode_from(r)?,
                vote_granted: r.bool()?,
            }),
            tag::JUDGMENT => Message::Judgment(Judgment {
                term: Term(r.u64()?),
                accountant_id: NodeId::decode_from(r)?,
                block: r.nested()?,
            }),
            tag::JUDGMENT_REPLY => Message::JudgmentReply(JudgmentReply {
                term: Term(r.u64()?),
                evaluator: NodeId::decode_from(r)?,
                block_num: r.u64()?,
                block_digest: read_digest(r)?,
                verdict: read_verdict(r)?,
            }),
            tag::APPEND_ENTRIES => {
                let term = Term(r.u64()?);
                let accountant_id = NodeId::decode_from(r)?;
                let block = if r.bool()? { Some(r.nested()?) } else { None };
                let block_term = Term(r.u64()?);
                let n = r.u32()? as usize;
                let mut certificate = Certificate::new();
                for _ in 0..n {
                    let at = r.offset();
                    let node = NodeId::decode_from(r)?;
                    let v = read_verdict(r)?;
                    if certificate.insert(node, v).is_some() {
                        return Err(DecodeError::Invalid {
                            offset: at,
                            what: "duplicate evaluator in certificate",
                        });
                    }
                }
                Message::AppendEntries(AppendEntries {
                    term,
                    accountant_id,
                    block,
                    block_term,
                    certificate,
                    commit_num: r.u64()?,
                    commit_hash: read_digest(r)?,
                })
            }
            tag::APPEND_ENTRIES_REPLY => Message::AppendEntriesReply(AppendEntriesReply {
                term: Term(r.u64()?),
                success: r.bool()?,
                for_block: if r.bool()? { Some(r.u64()?) } else { None },
                last_num: r.u64()?,
                last_hash: read_digest(r)?,
            }),
            tag::CLIENT_REQUEST => Message::ClientRequest(ClientRequest {
                tx: r.nested()?,
                judgment_copy: r.bool()?,
            }),
            tag::CLIENT_REPLY => Message::ClientReply(ClientReply {
                request_id: r.u64()?,
                block_num: r.u64()?,
            }),
            tag::REDIRECT => Message::Redirect(Redirect {
                request_id: r.u64()?,
                leader: if r.bool()? {
                    Some(NodeId::decode_from(r)?)
                } else {
                    None
                },
            }),
            _ => {
                return Err(DecodeError::Invalid {
                    offset: at,
                    what: "unknown message tag",
                })
            }
        };
        Ok(msg)
    }
}
