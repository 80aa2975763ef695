//! The acceptance suite. One line per criterion, non-zero exit on any
//! failure. Each criterion also has a wall-clock budget.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rac::experiment::{grid, run_grid, CellSummary};
use rac::output::{write_run, MANIFEST};
use rac_core::behavior::{
    classify, ActionSymbol, BehaviorRecord, BehaviorRole, ByzantineKind, ClassifyError,
    ProtocolViolation, Verdict,
};
use rac_core::evalmodel::{evaluate, ideal_solutions, reference_matrix, Normalization};
use rac_core::ledger::{NodeId, OrgId, SimTime, Term};
use rac_core::metrics::{report, MetricsReport};
use rac_core::protocol::Note;
use rac_core::risk::{
    assess, c_factor, extract_ngrams, score_from_mean_path, weight_matrix, CountMatrix, RiskConfig,
};
use rac_core::seed;
use rac_core::simnet::traces::synthesize_with_attackers;
use rac_core::simnet::{
    run_scenario, Algorithm, Crash, Event, OrgSpec, Partition, RunOutput, Scenario, TraceConfig,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(sc: &Scenario) -> Result<RunOutput, String> {
    run_scenario(sc).map_err(|e| format!("seed {}: {e}", sc.seed))
}

/// Every committed entry, on every node, is byte-equal to what its client
/// sent.
fn tampered_entries(out: &RunOutput) -> usize {
    let mut bad = BTreeSet::new();
    for n in &out.nodes {
        for b in n.chain.blocks().iter().skip(1).take(n.commit_num as usize) {
            for e in &b.entries {
                let sent = out.submitted.get((e.request_id - 1) as usize);
                if sent != Some(e) {
                    bad.insert(e.request_id);
                }
            }
        }
    }
    bad.len()
}

fn notes(out: &RunOutput) -> impl Iterator<Item = (SimTime, NodeId, &Note)> {
    out.records.iter().filter_map(|r| match (&r.event, r.node) {
        (Event::Note(n), Some(id)) => Some((r.time, id, n)),
        _ => None,
    })
}

fn byzantine_evaluators() -> Outcome {
    let mut tampered = 0;
    let mut violations = 0;
    let mut empty = 0;
    for s in 1..=200 {
        let mut sc = Scenario {
            seed: s,
            orgs: vec![
                OrgSpec {
                    nodes: 2,
                    assets: vec![]
                };
                5
            ],
            evaluators_per_org: 1,
            ..Scenario::default()
        };
        let group = sc.evaluator_group().map_err(|e| e.to_string())?;
        sc.faults.collude_evaluator = group.iter().take(2).map(|n| n.value).collect();
        sc.faults.tamper_first_accountant = true;
        sc.workload.total = 40;
        let out = run(&sc)?;
        ensure(group.len() == 5, || {
            format!("seed {s}: {} evaluators", group.len())
        })?;
        tampered += tampered_entries(&out).max(out.committed_tampered);
        violations += out.violations.len();
        empty += report(&out.records).empty_blocks;
    }
    ensure(tampered == 0 && violations == 0, || {
        format!("{tampered} tampered entries committed, {violations} violations")
    })?;
    Ok(format!(
        "200 runs, 0 tampered commits, {empty} empty blocks"
    ))
}

fn agreement_under_crashes() -> Outcome {
    let mut runs = 0;
    for s in 1..=3 {
        let mut sc = Scenario {
            seed: s,
            orgs: Scenario::spread(10, 3),
            ..Scenario::default()
        };
        let group = sc.evaluator_group().map_err(|e| e.to_string())?;
        let evaluator = group.iter().next().expect("non-empty group").value;
        let others: Vec<u32> = (0..10)
            .filter(|v| !group.iter().any(|n| n.value == *v))
            .collect();
        let doomed = [evaluator, others[0], others[2], others[4]];
        sc.faults.crash = doomed
            .iter()
            .zip([0, 1_200, 1_400, 1_600])
            .map(|(&node, at_ms)| Crash {
                node,
                at_ms,
                restart_ms: None,
            })
            .collect();
        let out = run(&sc)?;
        ensure(out.violations.is_empty(), || {
            format!("seed {s}: {:?}", out.violations)
        })?;
        let survivors: Vec<_> = out
            .nodes
            .iter()
            .filter(|n| !doomed.contains(&n.id.value))
            .collect();
        let reference = &survivors[0].chain;
        for n in &survivors {
            let ids: BTreeSet<u64> = n
                .chain
                .blocks()
                .iter()
                .take(n.commit_num as usize + 1)
                .flat_map(|b| b.entries.iter().map(|e| e.request_id))
                .collect();
            ensure(ids.len() == 1_000, || {
                format!("seed {s}: {} committed {} of 1000", n.id, ids.len())
            })?;
            ensure(n.chain.blocks() == reference.blocks(), || {
                format!("seed {s}: {} diverges from {}", n.id, survivors[0].id)
            })?;
        }
        runs += 1;
    }
    Ok(format!(
        "{runs} runs, 1000/1000 committed on 6 survivors, chains identical"
    ))
}

fn accountant_recovery() -> Outcome {
    let mut gaps = BTreeMap::new();
    for s in 1..=100 {
        let mut sc = Scenario {
            seed: s,
            orgs: Scenario::spread(10, 3),
            ..Scenario::default()
        };
        sc.faults.tamper_first_accountant = true;
        sc.workload.total = 40;
        let out = run(&sc)?;
        ensure(out.violations.is_empty(), || {
            format!("seed {s}: {:?}", out.violations)
        })?;
        let (t0, bad, term) = notes(&out)
            .find_map(|(t, id, n)| match n {
                Note::Established { term } => Some((t, id, *term)),
                _ => None,
            })
            .ok_or(format!("seed {s}: nobody took office"))?;
        let voided = notes(&out).find_map(|(t, id, n)| match n {
            Note::Decided { empty: true, .. } if id == bad && t >= t0 => Some(t),
            _ => None,
        });
        let voided = voided.ok_or(format!("seed {s}: {bad} never produced an empty block"))?;
        for n in out.nodes.iter().filter(|n| n.id != bad && !n.faults.any()) {
            let listed = n.rnl.as_ref().is_some_and(|l| l.contains(&bad));
            ensure(listed, || format!("seed {s}: {} does not list {bad}", n.id))?;
        }
        let again = notes(&out)
            .find(|(t, id, n)| *id == bad && *t > voided && matches!(n, Note::Established { .. }));
        ensure(again.is_none(), || {
            format!("seed {s}: {bad} took office again")
        })?;
        // the first honest accountant after the void, and its first real block
        let (t1, good, term1) = notes(&out)
            .find_map(|(t, id, n)| match n {
                Note::Established { term } if t > voided && id != bad => Some((t, id, *term)),
                _ => None,
            })
            .ok_or(format!("seed {s}: no accountant after {bad}"))?;
        let committed = notes(&out).any(|(t, id, n)| {
            id == good
                && t > t1
                && matches!(
                    n,
                    Note::Committed {
                        by_leader: true,
                        empty: false,
                        ..
                    }
                )
        });
        ensure(committed, || format!("seed {s}: {good} committed nothing"))?;
        let gap = term1.0 - term.0;
        ensure(gap <= 2, || format!("seed {s}: recovery took {gap} terms"))?;
        *gaps.entry(gap).or_insert(0) += 1;
    }
    Ok(format!("100 runs, terms to recover: {gaps:?}"))
}

fn node(v: u32) -> NodeId {
    NodeId::new(v, OrgId((v % 3) as u16))
}

/// Counts, frequency weighting and inverse frequency straight from the
/// definitions.
fn weighting_oracle(traces: &[Vec<u16>], w: usize) -> (Vec<Vec<u16>>, Vec<Vec<f64>>) {
    let counts: Vec<BTreeMap<Vec<u16>, u32>> = traces
        .iter()
        .map(|t| {
            let mut m = BTreeMap::new();
            for g in t.windows(w) {
                *m.entry(g.to_vec()).or_insert(0) += 1;
            }
            m
        })
        .collect();
    let vocab: Vec<Vec<u16>> = counts
        .iter()
        .flat_map(|m| m.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let num = traces.len() as f64;
    let s = |i: usize, g: &Vec<u16>| f64::from(counts[i].get(g).copied().unwrap_or(0));
    let weights = (0..traces.len())
        .map(|i| {
            vocab
                .iter()
                .map(|g| {
                    let col: f64 = (0..traces.len()).map(|m| s(m, g)).sum();
                    let d = (0..traces.len()).filter(|&m| s(m, g) > 0.0).count() as f64;
                    let f = s(i, g) / col;
                    s(i, g) * f * (num / (d + 1.0)).ln()
                })
                .collect()
        })
        .collect();
    (vocab, weights)
}

fn risk_accuracy() -> Outcome {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    let mut worst_dev = 0.0f64;
    for s in 0..100u64 {
        let n = 10 + (s % 21) as u32;
        let k = 1 + (s % 5) as usize;
        let nodes: Vec<NodeId> = (0..n).map(node).collect();
        let mut attackers = BTreeSet::new();
        let mut i = 0;
        while attackers.len() < k {
            let pick = seed::derive(s, &[seed::tag::RISK, i]) % u64::from(n);
            attackers.insert(node(pick as u32));
            i += 1;
        }
        let traces =
            synthesize_with_attackers(&TraceConfig::default(), &nodes, Term(1), &attackers, s);
        let cfg = RiskConfig {
            seed: s,
            ..RiskConfig::default()
        };
        let r = assess(&traces, &cfg).map_err(|e| format!("seed {s}: {e}"))?;
        tp += r.flagged.intersection(&attackers).count();
        fp += r.flagged.difference(&attackers).count();
        fn_ += attackers.difference(&r.flagged).count();

        if s % 10 == 0 {
            let (vocab, counts) = CountMatrix::from_traces(&traces, cfg.window);
            let got = weight_matrix(&counts);
            let raw: Vec<Vec<u16>> = traces.iter().map(|t| t.calls.clone()).collect();
            let (words, want) = weighting_oracle(&raw, cfg.window);
            ensure(words.len() == vocab.len(), || {
                format!("seed {s}: vocabulary sizes differ")
            })?;
            for (j, g) in words.iter().enumerate() {
                let col = vocab
                    .column(g)
                    .ok_or(format!("seed {s}: n-gram {g:?} missing"))?;
                for (i, row) in want.iter().enumerate() {
                    worst_dev = worst_dev.max((got.values.get(i, col) - row[j]).abs());
                }
            }
            let direct = extract_ngrams(&traces[0].calls, cfg.window);
            ensure(
                direct.values().sum::<u32>() as usize == traces[0].calls.len() + 1 - cfg.window,
                || format!("seed {s}: n-gram count"),
            )?;
        }
    }
    ensure(worst_dev <= 1e-12, || {
        format!("weighting deviates by {worst_dev:e}")
    })?;
    let c2 = c_factor(2);
    ensure((c2 - 0.15443).abs() <= 1e-5, || format!("c(2) = {c2}"))?;
    for n in [2, 3, 10, 256, 1_000] {
        let s = score_from_mean_path(c_factor(n), n);
        ensure((s - 0.5).abs() <= 1e-15, || format!("s(c({n})) = {s}"))?;
    }
    let precision = tp as f64 / (tp + fp).max(1) as f64;
    let recall = tp as f64 / (tp + fn_).max(1) as f64;
    ensure(precision >= 0.9 && recall >= 0.9, || {
        format!("precision {precision:.3}, recall {recall:.3} (tp {tp}, fp {fp}, fn {fn_})")
    })?;
    Ok(format!(
        "precision {precision:.3}, recall {recall:.3}, weighting within {worst_dev:.1e}, c(2) = {c2:.5}"
    ))
}

fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

fn message_complexity() -> Outcome {
    let sizes = [5u32, 10, 20, 40];
    let mut means = Vec::new();
    for &n in &sizes {
        let sc = Scenario {
            orgs: Scenario::spread(n, 3),
            ..Scenario::default()
        };
        let n_e = sc.evaluator_group().map_err(|e| e.to_string())?.len();
        let mut sc = sc;
        sc.workload.total = 300;
        let out = run(&sc)?;
        let m = report(&out.records);
        let want = n_e + (n as usize - 1) + n as usize / 2;
        let steady: Vec<_> = m.rounds.iter().filter(|r| r.steady).collect();
        ensure(steady.len() >= 10, || {
            format!("n={n}: only {} steady rounds", steady.len())
        })?;
        for r in &steady {
            ensure(r.round_count() == want, || {
                format!(
                    "n={n} block {}: {} messages (fan-out {}, acks {}), expected {want}",
                    r.block_num,
                    r.round_count(),
                    r.fan_out,
                    r.acks_to_commit
                )
            })?;
        }
        let total: usize = steady.iter().map(|r| r.by_phase.total()).sum();
        means.push(total as f64 / steady.len() as f64);
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| f64::from(n)).collect();
    let r2 = r_squared(&xs, &means);
    ensure(r2 >= 0.99, || {
        format!("R^2 = {r2:.4} over per-round totals {means:?}")
    })?;
    let counts: Vec<String> = means.iter().map(|m| format!("{m:.1}")).collect();
    Ok(format!(
        "steady rounds exact at n = {sizes:?}, per-round totals [{}], R^2 = {r2:.4}",
        counts.join(", ")
    ))
}

fn pairs(rows: &[CellSummary]) -> BTreeMap<(u32, u64, String), (&CellSummary, &CellSummary)> {
    let key = |r: &CellSummary| (r.n, r.seed, format!("{}", r.byz_fraction));
    let raft: BTreeMap<_, _> = rows
        .iter()
        .filter(|r| r.algorithm == "raft")
        .map(|r| (key(r), r))
        .collect();
    rows.iter()
        .filter(|r| r.algorithm == "rac")
        .filter_map(|r| raft.get(&key(r)).map(|f| (key(r), (r, *f))))
        .collect()
}

fn relative_performance() -> Outcome {
    let cells = grid(
        &[Algorithm::Rac, Algorithm::Raft],
        &[5, 10, 20, 30],
        &[0.0],
        &[1, 2, 3],
    );
    let rows = run_grid(&Scenario::default(), &cells).map_err(|e| e.to_string())?;
    let mut worst_tp = f64::INFINITY;
    let mut worst_lat = 0.0f64;
    for ((n, s, _), (rac, raft)) in pairs(&rows) {
        let (Some(a), Some(b)) = (rac.throughput, raft.throughput) else {
            return Err(format!("n={n} seed {s}: no throughput"));
        };
        let (Some(la), Some(lb)) = (rac.latency_p50, raft.latency_p50) else {
            return Err(format!("n={n} seed {s}: no latency"));
        };
        worst_tp = worst_tp.min(a / b);
        worst_lat = worst_lat.max(la / lb);
        ensure(a >= 0.7 * b, || {
            format!("n={n} seed {s}: throughput {a:.1} vs {b:.1}")
        })?;
        ensure(la <= 3.0 * lb, || {
            format!("n={n} seed {s}: latency {la:.2} vs {lb:.2} ms")
        })?;
    }
    Ok(format!(
        "worst throughput ratio {worst_tp:.3}, worst latency ratio {worst_lat:.3}"
    ))
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            out[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    out
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn election_cost_ordering() -> Outcome {
    let byz = [0.0, 0.1, 0.2];
    let seeds: Vec<u64> = (1..=30).collect();
    let cells = grid(
        &[Algorithm::Rac, Algorithm::Raft],
        &[10, 20, 30],
        &byz,
        &seeds,
    );
    let mut base = Scenario::default();
    base.workload.total = 100;
    let rows = run_grid(&base, &cells).map_err(|e| e.to_string())?;
    let mut sums: BTreeMap<(u32, String), [(f64, usize); 2]> = BTreeMap::new();
    for r in &rows {
        let Some(c) = r.election_cost else { continue };
        let slot = &mut sums
            .entry((r.n, format!("{}", r.byz_fraction)))
            .or_default()[usize::from(r.algorithm == "raft")];
        slot.0 += c;
        slot.1 += 1;
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut lines = Vec::new();
    for ((n, b), [rac, raft]) in &sums {
        let (a, f) = (rac.0 / rac.1 as f64, raft.0 / raft.1 as f64);
        ensure(a > f, || {
            format!("n={n} byz={b}: RAC {a:.2} ms <= Raft {f:.2} ms")
        })?;
        xs.push(b.parse::<f64>().expect("formatted f64"));
        ys.push(a);
        lines.push(format!("{n}/{b}: {a:.1}>{f:.1}"));
    }
    ensure(sums.len() == 9, || format!("{} cells", sums.len()))?;
    let rho = spearman(&xs, &ys);
    ensure(rho > 0.0, || format!("Spearman rho {rho:.3}"))?;
    Ok(format!("rho {rho:.3}; {}", lines.join(" ")))
}

fn targeted_attack() -> Outcome {
    let mut sc = Scenario {
        seed: 8,
        orgs: Scenario::spread(10, 3),
        duration_ms: 10_000_000,
        ..Scenario::default()
    };
    sc.workload.total = 0;
    sc.faults.targeted_dos.enabled = true;
    sc.faults.targeted_dos.terms = Some(500);
    sc.faults.targeted_dos.downtime_ms = 500;
    let group = sc.evaluator_group().map_err(|e| e.to_string())?;
    let out = run(&sc)?;
    let mut counts: BTreeMap<NodeId, u64> = sc
        .nodes()
        .into_iter()
        .filter(|n| !group.contains(n))
        .map(|n| (n, 0))
        .collect();
    for (_, id, n) in notes(&out) {
        if matches!(n, Note::Established { .. }) {
            *counts.get_mut(&id).ok_or(format!("{id} is not eligible"))? += 1;
        }
    }
    let total: u64 = counts.values().sum();
    ensure(total >= 500, || format!("only {total} terms"))?;
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .values()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).map_err(|e| e.to_string())?;
    let p = 1.0 - dist.cdf(stat);
    let tally: Vec<u64> = counts.values().copied().collect();
    ensure(p > 0.01, || {
        format!("chi-square {stat:.2}, p = {p:.4}, counts {tally:?}")
    })?;
    Ok(format!(
        "{total} terms over {} candidates {tally:?}, p = {p:.3}",
        counts.len()
    ))
}

fn topsis_reproduction() -> Outcome {
    let m = reference_matrix();
    let ideals = ideal_solutions(&m);
    let c_plus = [1.0, 1.0, 1.0, 0.7, 1.0, 1.0, 0.7];
    let c_minus = [0.0, 0.5, 0.0, 0.3, 0.0, 0.3, 0.3];
    ensure(ideals.positive == c_plus, || {
        format!("C+ = {:?}", ideals.positive)
    })?;
    ensure(ideals.negative == c_minus, || {
        format!("C- = {:?}", ideals.negative)
    })?;
    let got = evaluate(&m, Normalization::Raw);
    let expected = [
        ("Beh-Raft", 0.4334),
        ("HHRAFT", 0.5160),
        ("CRAFT", 0.4097),
        ("Tendermint BFT", 0.6035),
        ("RAC", 0.5666),
    ];
    for (row, values) in got.rows.iter().zip(m.rows()) {
        let sp: f64 = values
            .iter()
            .zip(&c_plus)
            .map(|(v, c)| (v - c).powi(2))
            .sum::<f64>()
            .sqrt();
        let sm: f64 = values
            .iter()
            .zip(&c_minus)
            .map(|(v, c)| (v - c).powi(2))
            .sum::<f64>()
            .sqrt();
        let f = sm / (sm + sp);
        ensure((row.f - f).abs() <= 1e-9, || {
            format!("{}: {} vs oracle {f}", row.algorithm, row.f)
        })?;
        let (_, want) = expected
            .iter()
            .find(|(name, _)| *name == row.algorithm)
            .ok_or(format!("unexpected row {}", row.algorithm))?;
        ensure((row.f - want).abs() < 5e-5, || {
            format!("{}: f = {:.5}", row.algorithm, row.f)
        })?;
    }
    let ranking = got.ranking();
    // known issue: the literal computation puts Tendermint ahead of RAC
    ensure(ranking[0].algorithm != "RAC", || "RAC ranked first".into())?;
    let order: Vec<&str> = ranking.iter().map(|c| c.algorithm.as_str()).collect();
    Ok(format!(
        "ideals exact, closeness within 1e-9, ranking {order:?} (RAC not first, known issue)"
    ))
}

fn replay_scenarios() -> Vec<Scenario> {
    let mut out = Vec::new();
    out.push(Scenario {
        workload: small(),
        ..Scenario::default()
    });
    out.push(Scenario {
        algorithm: Algorithm::Raft,
        workload: small(),
        ..Scenario::default()
    });
    let mut sc = Scenario {
        seed: 7,
        workload: small(),
        ..Scenario::default()
    };
    sc.faults.tamper_first_accountant = true;
    out.push(sc);
    let mut sc = Scenario {
        seed: 11,
        orgs: Scenario::spread(10, 3),
        drop_probability: 0.05,
        partitions: vec![Partition {
            start_ms: 1_100,
            end_ms: 1_300,
            isolate: vec![1, 2],
        }],
        workload: small(),
        ..Scenario::default()
    };
    sc.faults.crash = vec![Crash {
        node: 4,
        at_ms: 1_050,
        restart_ms: Some(1_500),
    }];
    out.push(sc);
    out
}

fn small() -> rac_core::simnet::Workload {
    rac_core::simnet::Workload {
        total: 200,
        ..Default::default()
    }
}

fn snapshot(sc: &Scenario, dir: &std::path::Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let out = run(sc)?;
    let m: MetricsReport = report(&out.records);
    let files = write_run(dir, &out, &m).map_err(|e| e.to_string())?;
    let mut snap = BTreeMap::new();
    for f in files.into_iter().filter(|f| f != MANIFEST) {
        let bytes = std::fs::read(dir.join(&f)).map_err(|e| e.to_string())?;
        snap.insert(f, bytes);
    }
    snap.insert("<log>".into(), out.render_log().into_bytes());
    Ok(snap)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut bytes = 0;
    for (i, sc) in replay_scenarios().iter().enumerate() {
        let first = snapshot(sc, &tmp.path().join(format!("{i}-0")))?;
        for k in 1..3 {
            let again = snapshot(sc, &tmp.path().join(format!("{i}-{k}")))?;
            for (name, b) in &first {
                ensure(again.get(name) == Some(b), || {
                    format!("scenario {i}: {name} differs on run {k}")
                })?;
            }
        }
        bytes += first.values().map(Vec::len).sum::<usize>();
    }
    Ok(format!(
        "4 scenarios x 3 runs byte-identical ({bytes} bytes per pass)"
    ))
}

fn paths(role: BehaviorRole) -> Vec<(Vec<ActionSymbol>, Verdict)> {
    use ActionSymbol::*;
    let byz = Verdict::Byzantine(ByzantineKind::of(role));
    let (good, bad) = match role {
        BehaviorRole::Accountant => (
            vec![Receive, GenerateNewBlock, Broadcast, ValidBlock],
            vec![Receive, GenerateNewBlock, Broadcast, EmptyBlock],
        ),
        BehaviorRole::Evaluator => (vec![Receive, Verify, Success], vec![Receive, Verify, Fail]),
        BehaviorRole::Follower => (
            vec![Receive, AdditionNewBlock, SendSystemcall, Normal],
            vec![Receive, AdditionNewBlock, SendSystemcall, Abnormal],
        ),
    };
    vec![(good, Verdict::Honest), (bad, byz)]
}

/// The criteria read directly: a complete path decides, a strict prefix is
/// incomplete, anything else breaks at the first step no path allows.
fn criteria(role: BehaviorRole, trace: &[ActionSymbol]) -> Result<Verdict, ClassifyError> {
    let ps = paths(role);
    let alphabet: BTreeSet<ActionSymbol> = ps.iter().flat_map(|(p, _)| p.iter().copied()).collect();
    if let Some(position) = trace.iter().position(|a| !alphabet.contains(a)) {
        return Err(ClassifyError::UnknownSymbol {
            role,
            position,
            action: trace[position],
        });
    }
    if let Some((_, v)) = ps.iter().find(|(p, _)| p == trace) {
        return Ok(*v);
    }
    let ok = (0..=trace.len())
        .rev()
        .find(|&k| ps.iter().any(|(p, _)| p.len() >= k && p[..k] == trace[..k]))
        .unwrap_or(0);
    Ok(Verdict::Incomplete {
        violation: (ok < trace.len()).then(|| ProtocolViolation {
            position: ok,
            state: 0,
            action: trace[ok],
        }),
    })
}

fn dfa_equivalence() -> Outcome {
    let mut layer: Vec<Vec<ActionSymbol>> = vec![vec![]];
    let mut checked = 0usize;
    for _ in 0..5 {
        layer = layer
            .iter()
            .flat_map(|t| {
                ActionSymbol::ALL.iter().map(move |&a| {
                    let mut n = t.clone();
                    n.push(a);
                    n
                })
            })
            .collect();
        for t in &layer {
            for role in BehaviorRole::ALL {
                let got = classify(&BehaviorRecord {
                    node: node(0),
                    trace: t.clone(),
                    role,
                })
                .map(|v| match v {
                    Verdict::Incomplete {
                        violation: Some(pv),
                    } => Verdict::Incomplete {
                        violation: Some(ProtocolViolation { state: 0, ..pv }),
                    },
                    other => other,
                });
                let want = criteria(role, t);
                ensure(got == want, || format!("{role} {t:?}: {got:?} vs {want:?}"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} role/trace pairs agree"))
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let criteria: [Criterion; 11] = [
        (
            "1 safety under Byzantine evaluators",
            byzantine_evaluators,
            secs(60),
        ),
        (
            "2 agreement under crashes",
            agreement_under_crashes,
            secs(10),
        ),
        (
            "3 Byzantine accountant recovery",
            accountant_recovery,
            secs(30),
        ),
        ("4 risk assessment accuracy", risk_accuracy, secs(60)),
        ("5 message complexity", message_complexity, secs(30)),
        (
            "6 relative performance vs Raft",
            relative_performance,
            secs(120),
        ),
        (
            "7 election cost ordering",
            election_cost_ordering,
            secs(120),
        ),
        ("8 targeted-attack resistance", targeted_attack, secs(60)),
        ("9 TOPSIS reproduction", topsis_reproduction, secs(1)),
        ("10 determinism", determinism, secs(30)),
        ("11 DFA equivalence", dfa_equivalence, secs(5)),
    ];
    let only: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .map(|a| a.to_lowercase())
        .collect();
    let mut failed = 0;
    for (name, check, budget) in criteria {
        if !only.is_empty()
            && !only
                .iter()
                .any(|o| name.to_lowercase().contains(o.as_str()))
        {
            continue;
        }
        let t = Instant::now();
        let result = check();
        let took = t.elapsed();
        let result = result.and_then(|detail| {
            if took <= budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {took:.1?}, budget {budget:?}"))
            }
        });
        match result {
            Ok(detail) => println!("PASS criterion {name} ({took:.1?}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name} ({took:.1?}): {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
