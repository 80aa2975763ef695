//! Files written for a run. Metric files are long format: every row starts
//! with `algorithm,n,byz_fraction,seed` and ends with `value`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rac_core::behavior::Verdict;
use rac_core::metrics::MetricsReport;
use rac_core::simnet::RunOutput;
use serde::Serialize;

pub const EVENTS: &str = "events.log";
pub const METRICS: &str = "metrics.csv";
pub const LATENCY: &str = "latency.csv";
pub const ELECTIONS: &str = "elections.csv";
pub const ROUNDS: &str = "rounds.csv";
pub const VERDICTS: &str = "verdicts.csv";
pub const CHAINS: &str = "chains.csv";
pub const MANIFEST: &str = "manifest.toml";

/// The columns every metric row starts with.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunKey {
    pub algorithm: String,
    pub n: u32,
    pub byz_fraction: f64,
    pub seed: u64,
}

impl RunKey {
    /// Byzantine share is the fraction of nodes carrying any fault.
    pub fn of(out: &RunOutput) -> Self {
        let n = out.nodes.len() as u32;
        let byz = out
            .nodes
            .iter()
            .filter(|r| r.faults.tamper || r.faults.collude || r.faults.sybil)
            .count();
        Self {
            algorithm: out.algorithm.name().to_owned(),
            n,
            byz_fraction: if n == 0 {
                0.0
            } else {
                byz as f64 / f64::from(n)
            },
            seed: out.seed,
        }
    }
}

#[derive(Serialize)]
struct MetricRow<'a> {
    algorithm: &'a str,
    n: u32,
    byz_fraction: f64,
    seed: u64,
    metric: &'static str,
    value: Option<f64>,
}

#[derive(Serialize)]
struct LatencyRow<'a> {
    algorithm: &'a str,
    n: u32,
    byz_fraction: f64,
    seed: u64,
    request_id: u64,
    value: f64,
}

#[derive(Serialize)]
struct ElectionRow<'a> {
    algorithm: &'a str,
    n: u32,
    byz_fraction: f64,
    seed: u64,
    term: u64,
    accountant: u32,
    start_ms: f64,
    term_start_ms: f64,
    established_ms: f64,
    term_cost_ms: f64,
    value: f64,
}

#[derive(Serialize)]
struct RoundRow<'a> {
    algorithm: &'a str,
    n: u32,
    byz_fraction: f64,
    seed: u64,
    block_num: u64,
    selection: usize,
    block_addition: usize,
    confirmation: usize,
    maintenance: usize,
    client: usize,
    fan_out: usize,
    acks_to_commit: usize,
    steady: bool,
    value: usize,
}

#[derive(Serialize)]
struct VerdictRow {
    time_ms: f64,
    node: u32,
    role: String,
    term: u64,
    block_num: Option<u64>,
    verdict: &'static str,
    kind: &'static str,
    trace: String,
}

#[derive(Serialize)]
struct ChainRow {
    node: u32,
    block_num: u64,
    digest: String,
    prehash: String,
    entries: usize,
    empty: bool,
    committed: bool,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}

/// Headers are written through serde; an empty table still gets its header
/// line so the file format never depends on the data.
fn write_table<T: Serialize>(path: &Path, header: &[&str], rows: Vec<T>) -> io::Result<()> {
    if rows.is_empty() {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(header)?;
        return w.flush();
    }
    write_csv(path, rows)
}

const KEY: [&str; 4] = ["algorithm", "n", "byz_fraction", "seed"];

fn header(extra: &[&'static str]) -> Vec<&'static str> {
    KEY.iter().copied().chain(extra.iter().copied()).collect()
}

pub fn write_metrics(dir: &Path, key: &RunKey, m: &MetricsReport) -> io::Result<()> {
    let summary = [
        ("submitted", Some(m.submitted as f64)),
        ("committed", Some(m.committed as f64)),
        ("empty_blocks", Some(m.empty_blocks as f64)),
        ("latency_p50", m.latency_p50()),
        ("throughput", m.throughput),
        ("election_cost", m.mean_election_cost()),
        ("elections", Some(m.elections.len() as f64)),
        ("msgs_per_round", m.msgs_per_round()),
        ("messages", Some(m.totals.total() as f64)),
        ("delivered", Some(m.delivered as f64)),
        ("dropped", Some(m.dropped as f64)),
    ];
    write_csv(
        &dir.join(METRICS),
        summary.iter().map(|&(metric, value)| MetricRow {
            algorithm: &key.algorithm,
            n: key.n,
            byz_fraction: key.byz_fraction,
            seed: key.seed,
            metric,
            value,
        }),
    )?;
    write_table(
        &dir.join(LATENCY),
        &header(&["request_id", "value"]),
        m.latencies
            .iter()
            .map(|&(request_id, value)| LatencyRow {
                algorithm: &key.algorithm,
                n: key.n,
                byz_fraction: key.byz_fraction,
                seed: key.seed,
                request_id,
                value,
            })
            .collect(),
    )?;
    write_table(
        &dir.join(ELECTIONS),
        &header(&[
            "term",
            "accountant",
            "start_ms",
            "term_start_ms",
            "established_ms",
            "term_cost_ms",
            "value",
        ]),
        m.elections
            .iter()
            .map(|e| ElectionRow {
                algorithm: &key.algorithm,
                n: key.n,
                byz_fraction: key.byz_fraction,
                seed: key.seed,
                term: e.term.0,
                accountant: e.accountant.value,
                start_ms: e.start.as_ms(),
                term_start_ms: e.term_start.as_ms(),
                established_ms: e.established.as_ms(),
                term_cost_ms: e.term_cost_ms(),
                value: e.cost_ms(),
            })
            .collect(),
    )?;
    write_table(
        &dir.join(ROUNDS),
        &header(&[
            "block_num",
            "selection",
            "block_addition",
            "confirmation",
            "maintenance",
            "client",
            "fan_out",
            "acks_to_commit",
            "steady",
            "value",
        ]),
        m.rounds
            .iter()
            .map(|r| RoundRow {
                algorithm: &key.algorithm,
                n: key.n,
                byz_fraction: key.byz_fraction,
                seed: key.seed,
                block_num: r.block_num,
                selection: r.by_phase.selection,
                block_addition: r.by_phase.block_addition,
                confirmation: r.by_phase.confirmation,
                maintenance: r.by_phase.maintenance,
                client: r.by_phase.client,
                fan_out: r.fan_out,
                acks_to_commit: r.acks_to_commit,
                steady: r.steady,
                value: r.round_count(),
            })
            .collect(),
    )
}

pub fn write_verdicts(path: &Path, out: &RunOutput) -> io::Result<()> {
    write_table(
        path,
        &[
            "time_ms",
            "node",
            "role",
            "term",
            "block_num",
            "verdict",
            "kind",
            "trace",
        ],
        out.verdicts
            .iter()
            .map(|v| VerdictRow {
                time_ms: v.time.as_ms(),
                node: v.node.value,
                role: v.role.to_string(),
                term: v.term.0,
                block_num: v.block_num,
                verdict: v.verdict.name(),
                kind: match v.verdict {
                    Verdict::Byzantine(k) => k.name(),
                    _ => "",
                },
                trace: v
                    .trace
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(" "),
            })
            .collect(),
    )
}

pub fn write_chains(path: &Path, out: &RunOutput) -> io::Result<()> {
    let mut rows = Vec::new();
    for n in &out.nodes {
        for b in n.chain.blocks() {
            rows.push(ChainRow {
                node: n.id.value,
                block_num: b.block_num,
                digest: n
                    .chain
                    .hash_at(b.block_num)
                    .map(|d| d.to_string())
                    .unwrap_or_default(),
                prehash: b.prehash.to_string(),
                entries: b.entries.len(),
                empty: b.empty_flag,
                committed: b.block_num <= n.commit_num,
            });
        }
    }
    write_csv(path, rows)
}

/// Reproduction record written next to every output set.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub scenario: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub build: String,
    pub created_unix: u64,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, scenario: Option<&Path>, seeds: Vec<u64>, out_dir: &Path) -> Self {
        Self {
            command: command.to_owned(),
            scenario: scenario.map(Path::to_owned),
            seeds,
            out_dir: out_dir.to_owned(),
            build: build_id(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            files: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        let text = toml::to_string(self).map_err(io::Error::other)?;
        fs::write(dir.join(MANIFEST), text)
    }
}

pub fn build_id() -> String {
    match option_env!("RAC_GIT_REV") {
        Some(rev) if !rev.is_empty() => format!("rac {} ({rev})", env!("CARGO_PKG_VERSION")),
        _ => format!("rac {}", env!("CARGO_PKG_VERSION")),
    }
}

/// Writes the event log, metric tables, verdicts and chains of one run.
/// Returns the file names written.
pub fn write_run(dir: &Path, out: &RunOutput, m: &MetricsReport) -> io::Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(EVENTS), out.render_log())?;
    write_metrics(dir, &RunKey::of(out), m)?;
    write_verdicts(&dir.join(VERDICTS), out)?;
    write_chains(&dir.join(CHAINS), out)?;
    Ok([
        EVENTS, METRICS, LATENCY, ELECTIONS, ROUNDS, VERDICTS, CHAINS,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect())
}
