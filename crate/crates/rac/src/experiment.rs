//! Grid cells: one seeded run per (algorithm, size, Byzantine share, seed).

use rac_core::metrics::{self, MetricsReport};
use rac_core::simnet::{run_scenario, Algorithm, RunOutput, Scenario, ScenarioError};
use rayon::prelude::*;
use serde::Serialize;

/// Organisations a grid cell spreads its nodes over, one evaluator each.
pub const GRID_ORGS: u32 = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub algorithm: Algorithm,
    pub n: u32,
    pub byz_fraction: f64,
    pub seed: u64,
}

/// Nodes made Byzantine for `byz_fraction` of `sc`'s cluster: the
/// highest-numbered nodes outside the evaluator group it would have under
/// RAC, so paired RAC and Raft runs fault the same ids.
pub fn byzantine_nodes(sc: &Scenario, byz_fraction: f64) -> Result<Vec<u32>, ScenarioError> {
    let n = sc.node_count();
    let want = (byz_fraction * f64::from(n)).round() as usize;
    let mut rac = sc.clone();
    rac.algorithm = Algorithm::Rac;
    let evaluators = rac.evaluator_group()?;
    let mut out: Vec<u32> = (0..n)
        .rev()
        .filter(|v| !evaluators.iter().any(|e| e.value == *v))
        .take(want)
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// `base` resized and faulted for `cell`. Byzantine nodes tamper with the
/// blocks they package and carry attack syscalls.
pub fn cell_scenario(base: &Scenario, cell: Cell) -> Result<Scenario, ScenarioError> {
    let mut sc = base.clone();
    sc.algorithm = cell.algorithm;
    sc.seed = cell.seed;
    sc.orgs = Scenario::spread(cell.n, GRID_ORGS.min(cell.n));
    sc.evaluators_per_org = 1;
    sc.faults.tamper_accountant = byzantine_nodes(&sc, cell.byz_fraction)?;
    sc.validate()?;
    Ok(sc)
}

/// One line of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub algorithm: String,
    pub n: u32,
    pub byz_fraction: f64,
    pub seed: u64,
    pub latency_p50: Option<f64>,
    pub throughput: Option<f64>,
    pub election_cost: Option<f64>,
    pub msgs_per_round: Option<f64>,
    pub committed: usize,
    pub committed_tampered: usize,
    pub violations: usize,
}

pub fn summarize(cell: Cell, out: &RunOutput, m: &MetricsReport) -> CellSummary {
    CellSummary {
        algorithm: cell.algorithm.name().to_owned(),
        n: cell.n,
        byz_fraction: cell.byz_fraction,
        seed: cell.seed,
        latency_p50: m.latency_p50(),
        throughput: m.throughput,
        election_cost: m.mean_election_cost(),
        msgs_per_round: m.msgs_per_round(),
        committed: m.committed,
        committed_tampered: out.committed_tampered,
        violations: out.violations.len(),
    }
}

pub struct CellRun {
    pub cell: Cell,
    pub output: RunOutput,
    pub metrics: MetricsReport,
}

pub fn run_cell(base: &Scenario, cell: Cell) -> Result<CellRun, ScenarioError> {
    let output = run_scenario(&cell_scenario(base, cell)?)?;
    let metrics = metrics::report(&output.records);
    Ok(CellRun {
        cell,
        output,
        metrics,
    })
}

/// Every combination, algorithms outermost and seeds innermost.
pub fn grid(algos: &[Algorithm], nodes: &[u32], byz: &[f64], seeds: &[u64]) -> Vec<Cell> {
    let mut out = Vec::new();
    for &algorithm in algos {
        for &n in nodes {
            for &byz_fraction in byz {
                for &seed in seeds {
                    out.push(Cell {
                        algorithm,
                        n,
                        byz_fraction,
                        seed,
                    });
                }
            }
        }
    }
    out
}

/// Runs the cells in parallel; results keep the order of `cells`.
pub fn run_grid(base: &Scenario, cells: &[Cell]) -> Result<Vec<CellSummary>, ScenarioError> {
    cells
        .par_iter()
        .map(|&c| run_cell(base, c).map(|r| summarize(c, &r.output, &r.metrics)))
        .collect()
}
