//! Synthetic syscall traces: a shared Markov profile for honest nodes and
//! kill-chain splices for compromised ones.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ledger::{NodeId, Term};
use crate::protocol::TraceSource;
use crate::risk::{Symbol, SyscallTrace};
use crate::seed::{self, tag};

/// Reconnaissance, weaponization, delivery, exploitation, installation,
/// command and control.
pub const KILL_CHAIN_STAGES: usize = 6;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TraceConfig {
    /// Total alphabet; the top six symbols are reserved for the kill chain.
    pub alphabet: u16,
    pub length: usize,
    /// Successors per symbol in the honest profile.
    pub fanout: usize,
    /// Relative per-node perturbation of the transition weights.
    pub noise: f64,
    /// Share of an attacker's trace overwritten by kill-chain runs.
    pub attack_fraction: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            alphabet: 30,
            length: 2000,
            fanout: 2,
            noise: 0.05,
            attack_fraction: 0.05,
        }
    }
}

impl TraceConfig {
    pub fn honest_symbols(&self) -> u16 {
        self.alphabet - KILL_CHAIN_STAGES as u16
    }

    pub fn kill_chain(&self) -> [Symbol; KILL_CHAIN_STAGES] {
        let base = self.honest_symbols();
        core::array::from_fn(|i| base + i as Symbol)
    }
}

/// First-order transition table over the honest symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovProfile {
    rows: Vec<Vec<(Symbol, f64)>>,
}

impl MarkovProfile {
    /// The cluster-wide profile. Depends only on the run seed.
    ///
    /// Every symbol's first successor is the next symbol round the ring, so
    /// the chain is irreducible and every honest walk settles on the same
    /// n-gram mix whatever its start.
    pub fn shared(cfg: &TraceConfig, run_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(run_seed, &[tag::PROFILE]));
        let h = usize::from(cfg.honest_symbols());
        let fanout = cfg.fanout.clamp(1, h);
        let rows = (0..h)
            .map(|s| {
                let ring = (s + 1) % h;
                let others = rand::seq::index::sample(&mut rng, h - 1, fanout - 1)
                    .into_iter()
                    .map(|k| if k >= ring { k + 1 } else { k });
                core::iter::once(ring)
                    .chain(others)
                    .map(|t| (t as Symbol, rng.gen_range(0.5..1.5)))
                    .collect()
            })
            .collect();
        Self { rows }
    }

    /// Same successors, weights scaled by `1 + noise * U(-1, 1)`.
    pub fn perturbed(&self, noise: f64, rng: &mut impl Rng) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&(s, w)| (s, w * (1.0 + noise * rng.gen_range(-1.0..=1.0))))
                    .collect()
            })
            .collect();
        Self { rows }
    }

    pub fn successors(&self, s: Symbol) -> &[(Symbol, f64)] {
        &self.rows[usize::from(s)]
    }

    fn next(&self, s: Symbol, rng: &mut impl Rng) -> Symbol {
        let row = self.successors(s);
        let total: f64 = row.iter().map(|&(_, w)| w).sum();
        let mut x = rng.gen_range(0.0..total);
        for &(t, w) in row {
            if x < w {
                return t;
            }
            x -= w;
        }
        row[row.len() - 1].0
    }

    pub fn walk(&self, len: usize, rng: &mut impl Rng) -> Vec<Symbol> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        let mut s = rng.gen_range(0..self.rows.len()) as Symbol;
        out.push(s);
        while out.len() < len {
            s = self.next(s, rng);
            out.push(s);
        }
        out
    }
}

/// Overwrites runs of the kill chain at random offsets so that roughly
/// `attack_fraction` of the trace is covered. Always at least one run when
/// the trace is long enough.
pub fn splice_kill_chain(calls: &mut [Symbol], cfg: &TraceConfig, rng: &mut impl Rng) {
    let chain = cfg.kill_chain();
    if calls.len() < KILL_CHAIN_STAGES {
        return;
    }
    let runs = libm::round(cfg.attack_fraction * calls.len() as f64 / KILL_CHAIN_STAGES as f64)
        .max(1.0) as usize;
    for _ in 0..runs {
        let at = rng.gen_range(0..=calls.len() - KILL_CHAIN_STAGES);
        calls[at..at + KILL_CHAIN_STAGES].copy_from_slice(&chain);
    }
}

/// The trace `node` reports for `term`.
pub fn synthesize_trace(
    cfg: &TraceConfig,
    profile: &MarkovProfile,
    node: NodeId,
    term: Term,
    attacker: bool,
    run_seed: u64,
) -> SyscallTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(
        run_seed,
        &[tag::TRACE, u64::from(node.value), term.0],
    ));
    let mut calls = profile
        .perturbed(cfg.noise, &mut rng)
        .walk(cfg.length, &mut rng);
    if attacker {
        splice_kill_chain(&mut calls, cfg, &mut rng);
    }
    SyscallTrace::new(node, term, calls)
}

/// One trace per node, attackers spliced.
pub fn synthesize_with_attackers(
    cfg: &TraceConfig,
    nodes: &[NodeId],
    term: Term,
    attackers: &BTreeSet<NodeId>,
    run_seed: u64,
) -> Vec<SyscallTrace> {
    let profile = MarkovProfile::shared(cfg, run_seed);
    nodes
        .iter()
        .map(|&n| synthesize_trace(cfg, &profile, n, term, attackers.contains(&n), run_seed))
        .collect()
}

/// Synthesized traces for a run: honest nodes walk the shared profile,
/// `attackers` also carry the kill chain.
#[derive(Clone, Debug)]
pub struct SynthTraces {
    cfg: TraceConfig,
    profile: MarkovProfile,
    attackers: BTreeSet<NodeId>,
    seed: u64,
}

impl SynthTraces {
    pub fn new(cfg: TraceConfig, attackers: BTreeSet<NodeId>, seed: u64) -> Self {
        let profile = MarkovProfile::shared(&cfg, seed);
        Self {
            cfg,
            profile,
            attackers,
            seed,
        }
    }
}

impl TraceSource for SynthTraces {
    fn trace(&self, node: NodeId, term: Term) -> SyscallTrace {
        synthesize_trace(
            &self.cfg,
            &self.profile,
            node,
            term,
            self.attackers.contains(&node),
            self.seed,
        )
    }
}

/// The same recorded trace for a node in every term. Nodes without one
/// report an empty trace.
#[derive(Clone, Debug, Default)]
pub struct FixedTraces(pub BTreeMap<u32, Vec<Symbol>>);

impl TraceSource for FixedTraces {
    fn trace(&self, node: NodeId, term: Term) -> SyscallTrace {
        let calls = self.0.get(&node.value).cloned().unwrap_or_default();
        SyscallTrace::new(node, term, calls)
    }
}

/// True if `calls` contains the full kill chain as a contiguous run.
pub fn contains_kill_chain(calls: &[Symbol], cfg: &TraceConfig) -> bool {
    let chain = cfg.kill_chain();
    calls.windows(KILL_CHAIN_STAGES).any(|w| w == chain)
}
