//! Cuts each node's action stream into per-role records and classifies them.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::behavior::{classify, ActionSymbol, BehaviorRecord, BehaviorRole, Verdict};
use crate::ledger::{NodeId, SimTime, Term};
use crate::protocol::BehaviorEvent;

/// One classified record.
#[derive(Clone, Debug, PartialEq)]
pub struct VerdictRecord {
    pub time: SimTime,
    pub node: NodeId,
    pub role: BehaviorRole,
    pub term: Term,
    pub block_num: Option<u64>,
    pub trace: Vec<ActionSymbol>,
    pub verdict: Verdict,
}

#[derive(Debug, Default)]
struct FollowerTrack {
    /// Block of the latest `receive`, waiting for its addition.
    receiving: Option<u64>,
    /// A receive/addition pair was seen.
    added: bool,
    open: Option<(Term, Vec<ActionSymbol>)>,
}

/// Accountant records run from `receive` to the validity decision, evaluator
/// records from `receive` to the success/fail outcome of the same block, and
/// follower records pair the latest block addition with the syscall
/// submission and its assessment.
#[derive(Debug, Default)]
pub struct Monitor {
    open: BTreeMap<(NodeId, BehaviorRole, Term, u64), Vec<ActionSymbol>>,
    followers: BTreeMap<NodeId, FollowerTrack>,
}

impl Monitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(
        &mut self,
        time: SimTime,
        node: NodeId,
        ev: &BehaviorEvent,
    ) -> Option<VerdictRecord> {
        use ActionSymbol::*;
        match ev.role {
            BehaviorRole::Follower => {
                let t = self.followers.entry(node).or_default();
                match ev.action {
                    Receive => t.receiving = ev.block_num,
                    AdditionNewBlock => {
                        if t.receiving.is_some() && t.receiving == ev.block_num {
                            t.added = true;
                        }
                        t.receiving = None;
                    }
                    SendSystemcall => {
                        // without a block yet the record cannot be complete
                        t.open = t
                            .added
                            .then(|| (ev.term, vec![Receive, AdditionNewBlock, SendSystemcall]));
                    }
                    Abnormal | Normal => {
                        let (term, mut trace) = t.open.take()?;
                        trace.push(ev.action);
                        return Some(Self::close(
                            time,
                            node,
                            BehaviorRole::Follower,
                            term,
                            None,
                            trace,
                        ));
                    }
                    _ => {}
                }
                None
            }
            role => {
                let num = ev.block_num?;
                let key = (node, role, ev.term, num);
                if ev.action == Receive {
                    self.open.insert(key, Vec::new());
                }
                let trace = self.open.get_mut(&key)?;
                trace.push(ev.action);
                let last = matches!(ev.action, ValidBlock | EmptyBlock | Success | Fail);
                if !last {
                    return None;
                }
                let trace = self.open.remove(&key)?;
                Some(Self::close(time, node, role, ev.term, Some(num), trace))
            }
        }
    }

    fn close(
        time: SimTime,
        node: NodeId,
        role: BehaviorRole,
        term: Term,
        block_num: Option<u64>,
        trace: Vec<ActionSymbol>,
    ) -> VerdictRecord {
        let verdict = classify(&BehaviorRecord {
            node,
            trace: trace.clone(),
            role,
        })
        .unwrap_or(Verdict::Incomplete { violation: None });
        VerdictRecord {
            time,
            node,
            role,
            term,
            block_num,
            trace,
            verdict,
        }
    }
}
