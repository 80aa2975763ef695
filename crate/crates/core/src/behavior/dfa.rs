//! Role automata over node actions and the classification built on them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::ledger::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ActionSymbol {
    Receive,
    GenerateNewBlock,
    Broadcast,
    ValidBlock,
    EmptyBlock,
    Verify,
    Success,
    Fail,
    AdditionNewBlock,
    SendSystemcall,
    Abnormal,
    Normal,
}

impl ActionSymbol {
    pub const ALL: [ActionSymbol; 12] = [
        Self::Receive,
        Self::GenerateNewBlock,
        Self::Broadcast,
        Self::ValidBlock,
        Self::EmptyBlock,
        Self::Verify,
        Self::Success,
        Self::Fail,
        Self::AdditionNewBlock,
        Self::SendSystemcall,
        Self::Abnormal,
        Self::Normal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Receive => "receive",
            Self::GenerateNewBlock => "generate_new_block",
            Self::Broadcast => "broadcast",
            Self::ValidBlock => "valid_block",
            Self::EmptyBlock => "empty_block",
            Self::Verify => "verify",
            Self::Success => "success",
            Self::Fail => "fail",
            Self::AdditionNewBlock => "addition_new_block",
            Self::SendSystemcall => "send_systemcall",
            Self::Abnormal => "abnormal",
            Self::Normal => "normal",
        }
    }
}

impl fmt::Display for ActionSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown action {0:?}")]
pub struct ParseActionError(pub alloc::string::String);

impl FromStr for ActionSymbol {
    type Err = ParseActionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| ParseActionError(s.into()))
    }
}

/// Roles that have an automaton. Candidates are transient and have none.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BehaviorRole {
    Accountant,
    Evaluator,
    Follower,
}

impl BehaviorRole {
    pub const ALL: [BehaviorRole; 3] = [Self::Accountant, Self::Evaluator, Self::Follower];

    pub fn name(self) -> &'static str {
        match self {
            Self::Accountant => "accountant",
            Self::Evaluator => "evaluator",
            Self::Follower => "follower",
        }
    }
}

impl fmt::Display for BehaviorRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub type State = u8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoleDfa {
    pub role: BehaviorRole,
    pub states: BTreeSet<State>,
    pub alphabet: BTreeSet<ActionSymbol>,
    pub delta: BTreeMap<(State, ActionSymbol), State>,
    pub start: State,
    pub accepting: BTreeSet<State>,
    pub byzantine: BTreeSet<State>,
}

impl RoleDfa {
    /// Chain of transitions from 0 followed by a two-way fork at the last
    /// state.
    fn chain_then_fork(
        role: BehaviorRole,
        chain: &[ActionSymbol],
        fork: [(ActionSymbol, bool); 2],
    ) -> Self {
        let mut delta = BTreeMap::new();
        let mut alphabet = BTreeSet::new();
        for (i, &a) in chain.iter().enumerate() {
            delta.insert((i as State, a), i as State + 1);
            alphabet.insert(a);
        }
        let tip = chain.len() as State;
        let mut accepting = BTreeSet::new();
        let mut byzantine = BTreeSet::new();
        for (k, (a, bad)) in fork.into_iter().enumerate() {
            let to = tip + 1 + k as State;
            delta.insert((tip, a), to);
            alphabet.insert(a);
            accepting.insert(to);
            if bad {
                byzantine.insert(to);
            }
        }
        RoleDfa {
            role,
            states: (0..=tip + 2).collect(),
            alphabet,
            delta,
            start: 0,
            accepting,
            byzantine,
        }
    }

    pub fn step(&self, from: State, a: ActionSymbol) -> Option<State> {
        self.delta.get(&(from, a)).copied()
    }
}

/// The automaton for `role`.
///
/// Accountant: 0 receive 1 generate_new_block 2 broadcast 3, then
/// valid_block to 4 or empty_block to 5 (Byzantine). Evaluator: 0 receive 1
/// verify 2, then success to 3 or fail to 4 (Byzantine). Follower: 0 receive
/// 1 addition_new_block 2 send_systemcall 3, then abnormal to 4 (Byzantine)
/// or normal to 5.
pub fn role_dfa(role: BehaviorRole) -> RoleDfa {
    use ActionSymbol::*;
    match role {
        BehaviorRole::Accountant => RoleDfa::chain_then_fork(
            role,
            &[Receive, GenerateNewBlock, Broadcast],
            [(ValidBlock, false), (EmptyBlock, true)],
        ),
        BehaviorRole::Evaluator => {
            RoleDfa::chain_then_fork(role, &[Receive, Verify], [(Success, false), (Fail, true)])
        }
        BehaviorRole::Follower => RoleDfa::chain_then_fork(
            role,
            &[Receive, AdditionNewBlock, SendSystemcall],
            [(Abnormal, true), (Normal, false)],
        ),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BehaviorRecord {
    pub node: NodeId,
    pub trace: Vec<ActionSymbol>,
    pub role: BehaviorRole,
}

/// Which misbehaviour a Byzantine verdict stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ByzantineKind {
    /// Accountant whose block the evaluators voided.
    VoidedBlock,
    /// Evaluator that judged against the majority.
    MinorityJudgment,
    /// Follower whose syscalls the assessment flagged.
    AbnormalSyscalls,
}

impl ByzantineKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::VoidedBlock => "voided_block",
            Self::MinorityJudgment => "minority_judgment",
            Self::AbnormalSyscalls => "abnormal_syscalls",
        }
    }

    pub fn of(role: BehaviorRole) -> Self {
        match role {
            BehaviorRole::Accountant => Self::VoidedBlock,
            BehaviorRole::Evaluator => Self::MinorityJudgment,
            BehaviorRole::Follower => Self::AbnormalSyscalls,
        }
    }
}

/// An action with no transition from the state reached so far.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProtocolViolation {
    pub position: usize,
    pub state: State,
    pub action: ActionSymbol,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Verdict {
    Honest,
    Byzantine(ByzantineKind),
    /// Ran out of actions before an accepting state, or hit an out-of-order
    /// action.
    Incomplete {
        violation: Option<ProtocolViolation>,
    },
}

impl Verdict {
    pub fn is_byzantine(&self) -> bool {
        matches!(self, Verdict::Byzantine(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Honest => "honest",
            Verdict::Byzantine(_) => "byzantine",
            Verdict::Incomplete { .. } => "incomplete",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassifyError {
    #[error("action {action} at position {position} is not in the {role} alphabet")]
    UnknownSymbol {
        role: BehaviorRole,
        position: usize,
        action: ActionSymbol,
    },
    #[error("empty behavior trace")]
    EmptyTrace,
}

pub fn classify(record: &BehaviorRecord) -> Result<Verdict, ClassifyError> {
    classify_with(&role_dfa(record.role), &record.trace)
}

pub fn classify_with(dfa: &RoleDfa, trace: &[ActionSymbol]) -> Result<Verdict, ClassifyError> {
    if trace.is_empty() {
        return Err(ClassifyError::EmptyTrace);
    }
    if let Some((position, &action)) = trace
        .iter()
        .enumerate()
        .find(|(_, a)| !dfa.alphabet.contains(a))
    {
        return Err(ClassifyError::UnknownSymbol {
            role: dfa.role,
            position,
            action,
        });
    }
    let mut at = dfa.start;
    for (position, &action) in trace.iter().enumerate() {
        match dfa.step(at, action) {
            Some(next) => at = next,
            None => {
                return Ok(Verdict::Incomplete {
                    violation: Some(ProtocolViolation {
                        position,
                        state: at,
                        action,
                    }),
                })
            }
        }
    }
    Ok(if dfa.byzantine.contains(&at) {
        Verdict::Byzantine(ByzantineKind::of(dfa.role))
    } else if dfa.accepting.contains(&at) {
        Verdict::Honest
    } else {
        Verdict::Incomplete { violation: None }
    })
}
