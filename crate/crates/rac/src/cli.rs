//! The `rac` command line.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rac_core::evalmodel::{evaluate, reference_matrix, Normalization};
use rac_core::ledger::{NodeId, OrgId, Term};
use rac_core::metrics;
use rac_core::protocol::TraceSource;
use rac_core::risk::{assess, RiskConfig, RiskError, SyscallTrace};
use rac_core::simnet::{
    run_scenario_with, Algorithm, FixedTraces, Scenario, SynthTraces, TraceConfig,
};

use crate::experiment::{grid, run_grid};
use crate::matrix_file::load_matrix;
use crate::output::{self, Manifest};
use crate::scenario_file::{load_scenario, MAX_SEED};
use crate::trace_files::load_traces;

pub const OUT_DIR_ENV: &str = "RAC_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "rac",
    version,
    about = "Deterministic RAC and Raft consensus simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write its event log, metrics, verdicts and chains.
    Run(RunArgs),
    /// Run a grid of paired RAC and Raft experiments.
    Compare(CompareArgs),
    /// Score an indicator matrix with TOPSIS.
    EvalTopsis(TopsisArgs),
    /// Score syscall traces and list the flagged nodes.
    RiskDemo(RiskArgs),
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
    pub seed: Option<u64>,
    /// Overrides the scenario's algorithm.
    #[arg(long)]
    pub algo: Option<Algo>,
    /// Directory of `node_<id>.txt` syscall traces to use instead of
    /// synthesized ones.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Base scenario; the grid overrides size, faults, algorithm and seed.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "rac,raft")]
    pub algo: Vec<Algo>,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,30")]
    pub nodes: Vec<u32>,
    /// Byzantine shares of the cluster.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub byz: Vec<f64>,
    /// `A..B` (inclusive), a single seed, or a comma list.
    #[arg(long, default_value = "1..5", value_parser = parse_seeds)]
    pub seeds: Seeds,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct TopsisArgs {
    /// Matrix CSV; the built-in reference matrix when absent.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "raw")]
    pub normalize: Norm,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct RiskArgs {
    /// Directory of `node_<id>.txt` traces. Without it traces are synthesized.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Synthesized nodes.
    #[arg(long, default_value_t = 11)]
    pub nodes: u32,
    /// How many of the synthesized nodes, counted from the last, attack.
    #[arg(long, default_value_t = 1)]
    pub attackers: u32,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Rac,
    Raft,
}

impl From<Algo> for Algorithm {
    fn from(a: Algo) -> Self {
        match a {
            Algo::Rac => Algorithm::Rac,
            Algo::Raft => Algorithm::Raft,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Norm {
    Raw,
    Vector,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Seeds(pub Vec<u64>);

pub fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let num = |t: &str| match t.trim().parse::<u64>() {
        Ok(v) if v > MAX_SEED => Err(format!("{t:?}: seeds stop at {MAX_SEED}")),
        Ok(v) => Ok(v),
        Err(e) => Err(format!("{t:?}: {e}")),
    };
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b)?);
        if a > b {
            return Err(format!("empty range {s}"));
        }
        return Ok(Seeds((a..=b).collect()));
    }
    let v = s.split(',').map(num).collect::<Result<Vec<_>, _>>()?;
    Ok(Seeds(v))
}

/// Why a command failed, and its exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad input: exit 2.
    Invalid(String),
    /// The run broke a safety property: exit 3.
    Violation(Vec<String>),
    /// Anything else: exit 1.
    Io(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 2,
            Failure::Violation(_) => 3,
            Failure::Io(_) => 1,
        }
    }
}

fn invalid(e: impl Display) -> Failure {
    Failure::Invalid(e.to_string())
}

fn io(e: impl Display) -> Failure {
    Failure::Io(e.to_string())
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Invalid(m) => eprintln!("error: {m}"),
                Failure::Io(m) => eprintln!("error: {m}"),
                Failure::Violation(v) => {
                    for line in v {
                        eprintln!("violation: {line}");
                    }
                }
            }
            ExitCode::from(f.code())
        }
    }
}

pub fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run(a) => cmd_run(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::EvalTopsis(a) => cmd_eval_topsis(&a),
        Command::RiskDemo(a) => cmd_risk_demo(&a),
    }
}

pub fn cmd_run(a: &RunArgs) -> Result<(), Failure> {
    let mut sc = load_scenario(&a.scenario).map_err(invalid)?;
    if let Some(s) = a.seed {
        sc.seed = s;
    }
    if let Some(al) = a.algo {
        sc.algorithm = al.into();
    }
    let traces: Option<Arc<dyn TraceSource + Send + Sync>> = match &a.traces {
        Some(dir) => Some(Arc::new(FixedTraces(load_traces(dir).map_err(invalid)?))),
        None => None,
    };
    let out = run_scenario_with(&sc, traces).map_err(invalid)?;
    let m = metrics::report(&out.records);
    let dir = &a.out.out;
    let mut files = output::write_run(dir, &out, &m).map_err(io)?;
    let mut manifest = Manifest::new("run", Some(&a.scenario), vec![sc.seed], dir);
    files.push(output::MANIFEST.into());
    manifest.files = files;
    manifest.write(dir).map_err(io)?;
    println!(
        "{} seed={} committed={}/{} elections={} violations={} -> {}",
        sc.algorithm,
        sc.seed,
        m.committed,
        m.submitted,
        m.elections.len(),
        out.violations.len(),
        dir.display()
    );
    if out.violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Violation(
            out.violations.iter().map(ToString::to_string).collect(),
        ))
    }
}

pub const COMPARE_CSV: &str = "compare.csv";

pub fn cmd_compare(a: &CompareArgs) -> Result<(), Failure> {
    if a.algo.is_empty() || a.nodes.is_empty() || a.byz.is_empty() || a.seeds.0.is_empty() {
        return Err(invalid("every grid axis needs at least one value"));
    }
    if let Some(b) = a.byz.iter().find(|b| !(0.0..1.0).contains(*b)) {
        return Err(invalid(format!("byz: {b} is not in [0, 1)")));
    }
    let base = match &a.scenario {
        Some(p) => load_scenario(p).map_err(invalid)?,
        None => Scenario::default(),
    };
    let algos: Vec<Algorithm> = a.algo.iter().map(|&x| x.into()).collect();
    let cells = grid(&algos, &a.nodes, &a.byz, &a.seeds.0);
    let rows = run_grid(&base, &cells).map_err(invalid)?;
    let dir = &a.out.out;
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut w = csv::Writer::from_path(dir.join(COMPARE_CSV)).map_err(io)?;
    for r in &rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(io)?;
    let mut manifest = Manifest::new("compare", a.scenario.as_deref(), a.seeds.0.clone(), dir);
    manifest.files = vec![COMPARE_CSV.into(), output::MANIFEST.into()];
    manifest.write(dir).map_err(io)?;
    println!(
        "{} cells -> {}",
        rows.len(),
        dir.join(COMPARE_CSV).display()
    );
    let bad: Vec<String> = rows
        .iter()
        .filter(|r| r.violations > 0)
        .map(|r| {
            format!(
                "{} n={} byz={} seed={}: {} violations",
                r.algorithm, r.n, r.byz_fraction, r.seed, r.violations
            )
        })
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Failure::Violation(bad))
    }
}

pub const TOPSIS_CSV: &str = "topsis.csv";

pub fn cmd_eval_topsis(a: &TopsisArgs) -> Result<(), Failure> {
    let m = match &a.matrix {
        Some(p) => load_matrix(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?,
        None => reference_matrix(),
    };
    let mode = match a.normalize {
        Norm::Raw => Normalization::Raw,
        Norm::Vector => Normalization::Vector,
    };
    let scores = evaluate(&m, mode);
    println!("{:<16} {:>10} {:>10} {:>10}", "algorithm", "s+", "s-", "f");
    for c in &scores.rows {
        println!(
            "{:<16} {:>10.6} {:>10.6} {:>10.6}",
            c.algorithm, c.s_plus, c.s_minus, c.f
        );
    }
    let ranking: Vec<&str> = scores
        .ranking()
        .iter()
        .map(|c| c.algorithm.as_str())
        .collect();
    println!("ranking: {}", ranking.join(" > "));
    if scores.degenerate_ideals {
        println!("degenerate ideals: positive and negative ideals coincide, every f is 0.5");
    }
    let dir = &a.out.out;
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut w = csv::Writer::from_path(dir.join(TOPSIS_CSV)).map_err(io)?;
    w.write_record([
        "algorithm",
        "s_plus",
        "s_minus",
        "f",
        "rank",
        "degenerate_ideals",
    ])
    .map_err(io)?;
    for c in &scores.rows {
        let rank = ranking
            .iter()
            .position(|r| *r == c.algorithm)
            .map_or(0, |p| p + 1);
        w.write_record([
            c.algorithm.clone(),
            c.s_plus.to_string(),
            c.s_minus.to_string(),
            c.f.to_string(),
            rank.to_string(),
            scores.degenerate_ideals.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(io)?;
    let mut manifest = Manifest::new("eval-topsis", a.matrix.as_deref(), Vec::new(), dir);
    manifest.files = vec![TOPSIS_CSV.into(), output::MANIFEST.into()];
    manifest.write(dir).map_err(io)
}

pub const RISK_CSV: &str = "risk_scores.csv";

fn synth_traces(nodes: u32, attackers: u32, seed: u64) -> Vec<SyscallTrace> {
    let ids: Vec<NodeId> = (0..nodes).map(|v| NodeId::new(v, OrgId(0))).collect();
    let bad: BTreeSet<NodeId> = ids.iter().rev().take(attackers as usize).copied().collect();
    let src = SynthTraces::new(TraceConfig::default(), bad, seed);
    ids.iter().map(|&n| src.trace(n, Term(1))).collect()
}

fn file_traces(dir: &Path) -> Result<Vec<SyscallTrace>, Failure> {
    Ok(load_traces(dir)
        .map_err(invalid)?
        .into_iter()
        .map(|(v, calls)| SyscallTrace::new(NodeId::new(v, OrgId(0)), Term(1), calls))
        .collect())
}

pub fn cmd_risk_demo(a: &RiskArgs) -> Result<(), Failure> {
    let traces = match &a.traces {
        Some(dir) => file_traces(dir)?,
        None => {
            if a.attackers > a.nodes {
                return Err(invalid("attackers: more than nodes"));
            }
            synth_traces(a.nodes, a.attackers, a.seed)
        }
    };
    let cfg = RiskConfig {
        seed: a.seed,
        ..RiskConfig::default()
    };
    let dir = &a.out.out;
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut w = csv::Writer::from_path(dir.join(RISK_CSV)).map_err(io)?;
    w.write_record(["node", "score", "flagged"]).map_err(io)?;
    match assess(&traces, &cfg) {
        Ok(report) => {
            for (n, s) in &report.scores {
                let flagged = report.flagged.contains(n);
                println!("{n} score={s:.6}{}", if flagged { " flagged" } else { "" });
                w.write_record([n.value.to_string(), s.to_string(), flagged.to_string()])
                    .map_err(io)?;
            }
            let flagged: Vec<String> = report.flagged.iter().map(ToString::to_string).collect();
            println!(
                "threshold={:.6} flagged=[{}]",
                report.threshold,
                flagged.join(",")
            );
            if report.assumption_violated {
                println!("warning: half or more of the nodes were flagged");
            }
        }
        Err(RiskError::DegenerateInput(k)) => {
            println!(
                "assessment skipped: {k} usable traces, need at least {}",
                rac_core::risk::MIN_TRACES
            );
        }
        Err(e) => return Err(invalid(e)),
    }
    w.flush().map_err(io)?;
    let mut manifest = Manifest::new("risk-demo", a.traces.as_deref(), vec![a.seed], dir);
    manifest.files = vec![RISK_CSV.into(), output::MANIFEST.into()];
    manifest.write(dir).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds() {
        assert_eq!(parse_seeds("1..3"), Ok(Seeds(vec![1, 2, 3])));
        assert_eq!(parse_seeds("7"), Ok(Seeds(vec![7])));
        assert_eq!(parse_seeds("4,2"), Ok(Seeds(vec![4, 2])));
        assert!(parse_seeds("3..1").is_err());
        assert!(parse_seeds("a").is_err());
        assert!(parse_seeds("1,9223372036854775808").is_err());
    }

    #[test]
    fn parses_flags() {
        let c = Cli::try_parse_from([
            "rac", "compare", "--nodes", "5,10", "--byz", "0,0.1", "--seeds", "1..20", "--out", "x",
        ])
        .unwrap();
        let Command::Compare(a) = c.command else {
            panic!()
        };
        assert_eq!(a.nodes, vec![5, 10]);
        assert_eq!(a.seeds.0.len(), 20);
        assert_eq!(a.algo, vec![Algo::Rac, Algo::Raft]);
    }
}
