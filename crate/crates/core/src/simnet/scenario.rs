//! Experiment description: topology, network, faults, workload and knobs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::ledger::{NodeId, OrgId, RiskNodeList, SimTime};
use crate::protocol::{init_evaluator_group, GroupError, NodeFaults, ProtocolConfig};
use crate::risk::RiskConfig;
use crate::seed;
use crate::simnet::traces::TraceConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Algorithm {
    #[default]
    Rac,
    Raft,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Rac => "rac",
            Self::Raft => "raft",
        }
    }
}

impl core::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Distribution {
    /// Normal around the mean, redrawn below the floor.
    #[default]
    TruncatedNormal,
    /// Uniform on `mean ± jitter`, clipped at the floor.
    Uniform,
    /// Always the mean.
    Constant,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LatencyModel {
    pub mean_ms: f64,
    pub jitter_ms: f64,
    pub floor_ms: f64,
    pub distribution: Distribution,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            mean_ms: 5.0,
            jitter_ms: 2.0,
            floor_ms: 0.1,
            distribution: Distribution::TruncatedNormal,
        }
    }
}

/// For `[start_ms, end_ms)` the listed nodes cannot talk to anyone outside
/// the list.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Partition {
    pub start_ms: u64,
    pub end_ms: u64,
    pub isolate: Vec<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Crash {
    pub node: u32,
    pub at_ms: u64,
    /// Stays down for good when absent.
    pub restart_ms: Option<u64>,
}

/// Crashes whoever becomes accountant shortly after it takes office.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TargetedDos {
    pub enabled: bool,
    /// Recorded only; the attack comes from outside the cluster.
    pub attacker: Option<u32>,
    pub delay_ms: u64,
    pub downtime_ms: u64,
    /// Stop the run after this many accountants took office.
    pub terms: Option<u64>,
}

impl Default for TargetedDos {
    fn default() -> Self {
        Self {
            enabled: false,
            attacker: None,
            delay_ms: 20,
            downtime_ms: 1_000,
            terms: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FaultPlan {
    pub crash: Vec<Crash>,
    pub tamper_accountant: Vec<u32>,
    /// Turn whichever node first takes office into a tamperer.
    pub tamper_first_accountant: bool,
    pub collude_evaluator: Vec<u32>,
    pub sybil: Vec<u32>,
    pub targeted_dos: TargetedDos,
    /// Faulty nodes report honest syscall traces.
    pub stealthy: bool,
}

impl FaultPlan {
    pub fn faults_of(&self, node: u32) -> NodeFaults {
        NodeFaults {
            tamper: self.tamper_accountant.contains(&node),
            collude: self.collude_evaluator.contains(&node),
            sybil: self.sybil.contains(&node),
        }
    }

    /// Nodes whose syscall traces carry the kill chain.
    pub fn attackers(&self) -> BTreeSet<u32> {
        if self.stealthy {
            return BTreeSet::new();
        }
        self.tamper_accountant
            .iter()
            .chain(&self.collude_evaluator)
            .chain(&self.sybil)
            .copied()
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Workload {
    /// Requests per millisecond, spread evenly.
    pub rate_per_ms: f64,
    pub total: usize,
    pub payload_bytes: usize,
    pub clients: u32,
    pub start_ms: u64,
    /// A request without a reply is sent again after this.
    pub retry_ms: u64,
    /// Keep running this long after the last reply so followers learn the
    /// final commit point.
    pub settle_ms: u64,
}

impl Default for Workload {
    fn default() -> Self {
        Self {
            rate_per_ms: 1.0,
            total: 1_000,
            payload_bytes: 64,
            clients: 4,
            start_ms: 1_000,
            retry_ms: 1_000,
            settle_ms: 200,
        }
    }
}

/// Protocol timing in milliseconds; see [`ProtocolConfig`].
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Timing {
    pub election_min_ms: u64,
    pub election_max_ms: u64,
    pub heartbeat_ms: u64,
    pub batch_ms: u64,
    pub max_batch: usize,
    pub judgment_timeout_ms: u64,
    pub judgment_grace_ms: u64,
    pub collect_timeout_ms: u64,
    pub rnl_timeout_ms: u64,
    pub risk_delay_base_us: u64,
    pub risk_delay_per_trace_us: u64,
    pub retransmit_ms: u64,
    pub evaluator_strikes: u32,
    pub forged_votes: usize,
    pub grant_every_vote: bool,
}

impl Default for Timing {
    fn default() -> Self {
        let p = ProtocolConfig::default();
        Self {
            election_min_ms: p.election_timeout_min.0 / 1_000,
            election_max_ms: p.election_timeout_max.0 / 1_000,
            heartbeat_ms: p.heartbeat_interval.0 / 1_000,
            batch_ms: p.batch_interval.0 / 1_000,
            max_batch: p.max_batch,
            judgment_timeout_ms: p.judgment_timeout.0 / 1_000,
            judgment_grace_ms: p.judgment_grace.0 / 1_000,
            collect_timeout_ms: p.collect_timeout.0 / 1_000,
            rnl_timeout_ms: p.rnl_timeout.0 / 1_000,
            risk_delay_base_us: p.risk_delay_base.0,
            risk_delay_per_trace_us: p.risk_delay_per_trace.0,
            retransmit_ms: p.retransmit.0 / 1_000,
            evaluator_strikes: p.evaluator_strikes,
            forged_votes: p.forged_votes,
            grant_every_vote: p.grant_every_vote,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct StakeConfig {
    /// Opening balance of every organisation, in whole units.
    pub initial_units: u64,
    pub penalty_fraction: f64,
}

impl Default for StakeConfig {
    fn default() -> Self {
        Self {
            initial_units: 100,
            penalty_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct OrgSpec {
    pub nodes: u32,
    /// One per node; derived from the seed when empty.
    pub assets: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Scenario {
    pub seed: u64,
    pub algorithm: Algorithm,
    /// Node ids are handed out in order: org 0 first.
    pub orgs: Vec<OrgSpec>,
    pub evaluators_per_org: usize,
    pub latency: LatencyModel,
    pub drop_probability: f64,
    pub partitions: Vec<Partition>,
    pub faults: FaultPlan,
    pub workload: Workload,
    pub duration_ms: u64,
    pub timing: Timing,
    pub risk: RiskConfig,
    pub traces: TraceConfig,
    pub stake: StakeConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 1,
            algorithm: Algorithm::Rac,
            orgs: alloc::vec![
                OrgSpec {
                    nodes: 2,
                    assets: Vec::new()
                },
                OrgSpec {
                    nodes: 2,
                    assets: Vec::new()
                },
                OrgSpec {
                    nodes: 1,
                    assets: Vec::new()
                },
            ],
            evaluators_per_org: 1,
            latency: LatencyModel::default(),
            drop_probability: 0.0,
            partitions: Vec::new(),
            faults: FaultPlan::default(),
            workload: Workload::default(),
            duration_ms: 60_000,
            timing: Timing::default(),
            risk: RiskConfig::default(),
            traces: TraceConfig::default(),
            stake: StakeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {problem}")]
pub struct ScenarioError {
    pub field: String,
    pub problem: String,
}

fn bad(field: impl Into<String>, problem: impl Into<String>) -> ScenarioError {
    ScenarioError {
        field: field.into(),
        problem: problem.into(),
    }
}

impl Scenario {
    /// `n` nodes spread round-robin over `orgs` organisations.
    pub fn spread(n: u32, orgs: u32) -> Vec<OrgSpec> {
        (0..orgs)
            .map(|o| OrgSpec {
                nodes: n / orgs + u32::from(o < n % orgs),
                assets: Vec::new(),
            })
            .filter(|o| o.nodes > 0)
            .collect()
    }

    pub fn node_count(&self) -> u32 {
        self.orgs.iter().map(|o| o.nodes).sum()
    }

    pub fn nodes(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut v = 0;
        for (o, spec) in self.orgs.iter().enumerate() {
            for _ in 0..spec.nodes {
                out.push(NodeId::new(v, OrgId(o as u16)));
                v += 1;
            }
        }
        out
    }

    pub fn node(&self, value: u32) -> Option<NodeId> {
        self.nodes().into_iter().find(|n| n.value == value)
    }

    fn assets(&self) -> BTreeMap<OrgId, Vec<(NodeId, u64)>> {
        let nodes = self.nodes();
        let mut out: BTreeMap<OrgId, Vec<(NodeId, u64)>> = BTreeMap::new();
        let mut it = nodes.iter();
        for (o, spec) in self.orgs.iter().enumerate() {
            for k in 0..spec.nodes as usize {
                let n = *it.next().expect("counted");
                let asset = spec.assets.get(k).copied().unwrap_or_else(|| {
                    seed::derive(self.seed, &[seed::tag::ASSET, u64::from(n.value)]) % 1_000_000
                });
                out.entry(OrgId(o as u16)).or_default().push((n, asset));
            }
        }
        out
    }

    /// The evaluator group: empty under Raft.
    pub fn evaluator_group(&self) -> Result<BTreeSet<NodeId>, ScenarioError> {
        if self.algorithm == Algorithm::Raft {
            return Ok(BTreeSet::new());
        }
        init_evaluator_group(
            &self.assets(),
            self.evaluators_per_org,
            &RiskNodeList::new(),
        )
        .map_err(|e: GroupError| bad("evaluators_per_org", format!("{e}")))
    }

    pub fn protocol_config(&self) -> ProtocolConfig {
        let t = &self.timing;
        ProtocolConfig {
            election_timeout_min: SimTime::from_ms(t.election_min_ms),
            election_timeout_max: SimTime::from_ms(t.election_max_ms),
            heartbeat_interval: SimTime::from_ms(t.heartbeat_ms),
            batch_interval: SimTime::from_ms(t.batch_ms),
            max_batch: t.max_batch,
            judgment_timeout: SimTime::from_ms(t.judgment_timeout_ms),
            judgment_grace: SimTime::from_ms(t.judgment_grace_ms),
            collect_timeout: SimTime::from_ms(t.collect_timeout_ms),
            rnl_timeout: SimTime::from_ms(t.rnl_timeout_ms),
            risk_delay_base: SimTime(t.risk_delay_base_us),
            risk_delay_per_trace: SimTime(t.risk_delay_per_trace_us),
            retransmit: SimTime::from_ms(t.retransmit_ms),
            evaluator_strikes: t.evaluator_strikes,
            forged_votes: t.forged_votes,
            grant_every_vote: t.grant_every_vote,
            risk: self.risk.clone(),
        }
    }

    /// Checks every field; the first problem found is reported.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.orgs.is_empty() {
            return Err(bad("orgs", "at least one organisation is required"));
        }
        for (i, o) in self.orgs.iter().enumerate() {
            if o.nodes == 0 {
                return Err(bad(format!("orgs[{i}].nodes"), "must be at least 1"));
            }
            if !o.assets.is_empty() && o.assets.len() != o.nodes as usize {
                return Err(bad(
                    format!("orgs[{i}].assets"),
                    format!("expected {} values, got {}", o.nodes, o.assets.len()),
                ));
            }
        }
        let n = self.node_count();
        if n < 2 {
            return Err(bad("orgs", "at least two nodes are required"));
        }
        if u16::try_from(self.orgs.len()).is_err() {
            return Err(bad("orgs", "too many organisations"));
        }
        let evaluators = self.evaluator_group()?;
        if self.algorithm == Algorithm::Rac && evaluators.len() as u32 >= n {
            return Err(bad(
                "evaluators_per_org",
                "no node is left to stand for accountant",
            ));
        }
        let l = &self.latency;
        for (name, v) in [
            ("latency.mean_ms", l.mean_ms),
            ("latency.jitter_ms", l.jitter_ms),
            ("latency.floor_ms", l.floor_ms),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(bad(name, "must be a finite non-negative number"));
            }
        }
        if l.floor_ms > l.mean_ms + l.jitter_ms {
            return Err(bad("latency.floor_ms", "above mean + jitter"));
        }
        if !(0.0..1.0).contains(&self.drop_probability) {
            return Err(bad("drop_probability", "must lie in [0, 1)"));
        }
        let known = |field: String, v: u32| -> Result<(), ScenarioError> {
            if v < n {
                Ok(())
            } else {
                Err(bad(field, format!("node {v} does not exist (n = {n})")))
            }
        };
        for (i, p) in self.partitions.iter().enumerate() {
            if p.end_ms <= p.start_ms {
                return Err(bad(
                    format!("partitions[{i}]"),
                    "end_ms must be after start_ms",
                ));
            }
            for &v in &p.isolate {
                known(format!("partitions[{i}].isolate"), v)?;
            }
        }
        let f = &self.faults;
        for (i, c) in f.crash.iter().enumerate() {
            known(format!("faults.crash[{i}].node"), c.node)?;
            if c.restart_ms.is_some_and(|r| r <= c.at_ms) {
                return Err(bad(
                    format!("faults.crash[{i}].restart_ms"),
                    "must be after at_ms",
                ));
            }
        }
        for &v in &f.tamper_accountant {
            known("faults.tamper_accountant".into(), v)?;
        }
        for &v in &f.sybil {
            known("faults.sybil".into(), v)?;
        }
        for &v in &f.collude_evaluator {
            known("faults.collude_evaluator".into(), v)?;
            if !evaluators.iter().any(|e| e.value == v) {
                return Err(bad(
                    "faults.collude_evaluator",
                    format!("node {v} is not an evaluator"),
                ));
            }
        }
        if let Some(a) = f.targeted_dos.attacker {
            known("faults.targeted_dos.attacker".into(), a)?;
        }
        if f.targeted_dos.enabled && f.targeted_dos.downtime_ms == 0 {
            return Err(bad("faults.targeted_dos.downtime_ms", "must be positive"));
        }
        let w = &self.workload;
        if w.total > 0 && !(w.rate_per_ms.is_finite() && w.rate_per_ms > 0.0) {
            return Err(bad("workload.rate_per_ms", "must be positive"));
        }
        if w.clients == 0 {
            return Err(bad("workload.clients", "must be at least 1"));
        }
        if w.payload_bytes == 0 {
            return Err(bad("workload.payload_bytes", "must be at least 1"));
        }
        if w.retry_ms == 0 {
            return Err(bad("workload.retry_ms", "must be positive"));
        }
        if self.duration_ms == 0 {
            return Err(bad("duration_ms", "must be positive"));
        }
        let t = &self.timing;
        if t.election_min_ms == 0 || t.election_max_ms < t.election_min_ms {
            return Err(bad(
                "timing.election_max_ms",
                "need 0 < election_min_ms <= election_max_ms",
            ));
        }
        for (name, v) in [
            ("timing.heartbeat_ms", t.heartbeat_ms),
            ("timing.batch_ms", t.batch_ms),
            ("timing.judgment_timeout_ms", t.judgment_timeout_ms),
            ("timing.rnl_timeout_ms", t.rnl_timeout_ms),
            ("timing.retransmit_ms", t.retransmit_ms),
        ] {
            if v == 0 {
                return Err(bad(name, "must be positive"));
            }
        }
        if t.max_batch == 0 {
            return Err(bad("timing.max_batch", "must be at least 1"));
        }
        if self.risk.window == 0 {
            return Err(bad("risk.window", "must be at least 1"));
        }
        if self.risk.trees == 0 || self.risk.subsample < 2 {
            return Err(bad("risk.trees", "need trees >= 1 and subsample >= 2"));
        }
        if !(self.risk.kappa.is_finite() && self.risk.kappa >= 0.0) {
            return Err(bad("risk.kappa", "must be a finite non-negative number"));
        }
        let tr = &self.traces;
        if tr.alphabet < 8 || usize::from(tr.alphabet) > usize::from(u16::MAX) {
            return Err(bad("traces.alphabet", "must be at least 8"));
        }
        if tr.fanout == 0 || tr.fanout > usize::from(tr.honest_symbols()) {
            return Err(bad("traces.fanout", "must lie in 1..=alphabet - 6"));
        }
        if !(0.0..1.0).contains(&tr.noise) {
            return Err(bad("traces.noise", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&tr.attack_fraction) {
            return Err(bad("traces.attack_fraction", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.stake.penalty_fraction) {
            return Err(bad("stake.penalty_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }
}
