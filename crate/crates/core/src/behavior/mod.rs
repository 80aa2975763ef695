//! Byzantine classification by role automata, and the stake ledger that
//! punishes it.

pub mod dfa;
pub mod stake;

pub use dfa::{
    classify, classify_with, role_dfa, ActionSymbol, BehaviorRecord, BehaviorRole, ByzantineKind,
    ClassifyError, ProtocolViolation, RoleDfa, State, Verdict,
};
pub use stake::{Stake, StakeError, StakeEvent, StakeEventKind, StakeLedger};
