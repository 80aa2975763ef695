//! Organisation stake: penalties for Byzantine nodes and paid removal from
//! the risk-node list.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, Sub};

use thiserror::Error;

use crate::ledger::{NodeId, OrgId, RiskNodeList, Term};

/// Stake in micro-units, so splits stay exact integers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Stake(pub u64);

impl Stake {
    pub const ZERO: Stake = Stake(0);
    pub const UNIT: u64 = 1_000_000;

    pub fn units(u: u64) -> Self {
        Stake(u * Self::UNIT)
    }

    pub fn as_units(self) -> f64 {
        self.0 as f64 / Self::UNIT as f64
    }
}

impl Add for Stake {
    type Output = Stake;
    fn add(self, o: Stake) -> Stake {
        Stake(self.0 + o.0)
    }
}

impl Sub for Stake {
    type Output = Stake;
    fn sub(self, o: Stake) -> Stake {
        Stake(self.0 - o.0)
    }
}

impl fmt::Display for Stake {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / Self::UNIT, self.0 % Self::UNIT)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StakeEventKind {
    Penalty,
    Compensation,
}

impl StakeEventKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Penalty => "penalty",
            Self::Compensation => "compensation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StakeEvent {
    pub kind: StakeEventKind,
    pub term: Term,
    pub offender: NodeId,
    pub amount: Stake,
    pub credits: Vec<(OrgId, Stake)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StakeError {
    #[error("org {org:?} holds {balance}, below the smallest penalty")]
    InsufficientStake { org: OrgId, balance: Stake },
    #[error("no honest organisation to credit")]
    NoHonestOrgs,
    #[error("{0} is not on the risk-node list")]
    NotListed(NodeId),
    #[error("payment {paid} is below the removal price {price}")]
    Underpayment { paid: Stake, price: Stake },
    #[error("unknown organisation {0:?}")]
    UnknownOrg(OrgId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StakeLedger {
    balances: BTreeMap<OrgId, Stake>,
    penalty_fraction: f64,
    /// Fixed removal price; `None` charges the node's last penalty.
    removal_price: Option<Stake>,
    last_penalty: BTreeMap<NodeId, Stake>,
    history: Vec<StakeEvent>,
}

impl StakeLedger {
    pub fn new(balances: BTreeMap<OrgId, Stake>, penalty_fraction: f64) -> Self {
        assert!(
            (0.0..1.0).contains(&penalty_fraction),
            "penalty fraction outside [0, 1)"
        );
        Self {
            balances,
            penalty_fraction,
            removal_price: None,
            last_penalty: BTreeMap::new(),
            history: Vec::new(),
        }
    }

    pub fn with_removal_price(mut self, price: Stake) -> Self {
        self.removal_price = Some(price);
        self
    }

    pub fn balance(&self, org: OrgId) -> Stake {
        self.balances.get(&org).copied().unwrap_or_default()
    }

    pub fn balances(&self) -> &BTreeMap<OrgId, Stake> {
        &self.balances
    }

    pub fn total(&self) -> Stake {
        Stake(self.balances.values().map(|s| s.0).sum())
    }

    pub fn history(&self) -> &[StakeEvent] {
        &self.history
    }

    pub fn penalty_fraction(&self) -> f64 {
        self.penalty_fraction
    }

    pub fn removal_price(&self, node: NodeId) -> Stake {
        self.removal_price
            .or_else(|| self.last_penalty.get(&node).copied())
            .unwrap_or_default()
    }

    /// Moves `penalty_fraction` of the offender's organisation balance to the
    /// honest organisations.
    pub fn apply_penalty(
        &mut self,
        term: Term,
        offender: NodeId,
        honest_orgs: &BTreeSet<OrgId>,
    ) -> Result<&StakeEvent, StakeError> {
        let org = offender.org;
        let balance = *self.balances.get(&org).ok_or(StakeError::UnknownOrg(org))?;
        let amount = Stake(libm::floor(balance.0 as f64 * self.penalty_fraction) as u64);
        if self.penalty_fraction > 0.0 && amount == Stake::ZERO {
            return Err(StakeError::InsufficientStake { org, balance });
        }
        let credits = self.split(org, amount, honest_orgs)?;
        self.transfer(org, amount, &credits);
        self.last_penalty.insert(offender, amount);
        self.history.push(StakeEvent {
            kind: StakeEventKind::Penalty,
            term,
            offender,
            amount,
            credits,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    /// Pays `payment` from the node's organisation to the honest ones and
    /// takes the node off `rnl`. Nothing changes on error.
    pub fn settle_compensation(
        &mut self,
        term: Term,
        rnl: &mut RiskNodeList,
        node: NodeId,
        payment: Stake,
        honest_orgs: &BTreeSet<OrgId>,
    ) -> Result<&StakeEvent, StakeError> {
        if !rnl.contains(&node) {
            return Err(StakeError::NotListed(node));
        }
        let price = self.removal_price(node);
        if payment < price {
            return Err(StakeError::Underpayment {
                paid: payment,
                price,
            });
        }
        let org = node.org;
        let balance = *self.balances.get(&org).ok_or(StakeError::UnknownOrg(org))?;
        if balance < payment {
            return Err(StakeError::InsufficientStake { org, balance });
        }
        let credits = self.split(org, payment, honest_orgs)?;
        self.transfer(org, payment, &credits);
        rnl.remove(&node);
        self.history.push(StakeEvent {
            kind: StakeEventKind::Compensation,
            term,
            offender: node,
            amount: payment,
            credits,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    /// Equal shares with the remainder going to the smallest org id.
    fn split(
        &self,
        payer: OrgId,
        amount: Stake,
        honest_orgs: &BTreeSet<OrgId>,
    ) -> Result<Vec<(OrgId, Stake)>, StakeError> {
        let orgs: Vec<OrgId> = honest_orgs
            .iter()
            .copied()
            .filter(|&o| o != payer)
            .collect();
        if orgs.is_empty() {
            return Err(StakeError::NoHonestOrgs);
        }
        if let Some(&o) = orgs.iter().find(|o| !self.balances.contains_key(o)) {
            return Err(StakeError::UnknownOrg(o));
        }
        let n = orgs.len() as u64;
        let share = amount.0 / n;
        let rem = amount.0 % n;
        Ok(orgs
            .into_iter()
            .enumerate()
            .map(|(i, o)| (o, Stake(share + if i == 0 { rem } else { 0 })))
            .collect())
    }

    fn transfer(&mut self, payer: OrgId, amount: Stake, credits: &[(OrgId, Stake)]) {
        let b = self.balances.get_mut(&payer).expect("payer checked");
        *b = *b - amount;
        for &(o, s) in credits {
            let b = self.balances.get_mut(&o).expect("payee checked");
            *b = *b + s;
        }
    }
}
