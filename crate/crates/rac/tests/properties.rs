//! Invariants over randomly drawn scenarios.

use proptest::prelude::*;
use rac::scenario_file::{parse_scenario, to_toml, MAX_SEED};
use rac_core::metrics::report;
use rac_core::simnet::{
    run_scenario, Algorithm, Crash, Event, OrgSpec, Partition, Scenario, Violation,
};

fn scenario() -> impl Strategy<Value = Scenario> {
    (
        0..=MAX_SEED,
        prop_oneof![Just(Algorithm::Rac), Just(Algorithm::Raft)],
        proptest::collection::vec(2u32..4, 2..5),
        0.0f64..0.1,
        proptest::option::of((0u32..5, 900u64..2_000)),
        any::<bool>(),
        20usize..80,
    )
        .prop_map(|(seed, algorithm, sizes, drop, crash, tamper, total)| {
            let mut sc = Scenario {
                seed,
                algorithm,
                orgs: sizes
                    .into_iter()
                    .map(|nodes| OrgSpec {
                        nodes,
                        assets: vec![],
                    })
                    .collect(),
                drop_probability: drop,
                duration_ms: 15_000,
                ..Scenario::default()
            };
            if let Some((node, at_ms)) = crash {
                sc.faults.crash.push(Crash {
                    node: node % sc.node_count(),
                    at_ms,
                    restart_ms: Some(at_ms + 700),
                });
            }
            sc.faults.tamper_first_accountant = tamper;
            sc.workload.total = total;
            sc
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn scenario_survives_toml(mut sc in scenario(), cut in proptest::option::of(1_000u64..3_000)) {
        if let Some(start_ms) = cut {
            sc.partitions.push(Partition { start_ms, end_ms: start_ms + 250, isolate: vec![0] });
        }
        let back = parse_scenario(&to_toml(&sc).unwrap()).unwrap();
        prop_assert_eq!(back, sc);
    }

    #[test]
    fn every_send_is_delivered_or_dropped(sc in scenario()) {
        let out = run_scenario(&sc).unwrap();
        let m = report(&out.records);
        let sends = out.records.iter().filter(|r| matches!(r.event, Event::Send { .. })).count();
        prop_assert_eq!(m.totals.total(), sends);
        prop_assert_eq!(m.delivered + m.dropped, sends);
    }

    #[test]
    fn safety_holds_under_random_faults(sc in scenario()) {
        let out = run_scenario(&sc).unwrap();
        for v in &out.violations {
            // Raft has no defence against a tampering leader; that is the point
            let expected = sc.algorithm == Algorithm::Raft && matches!(v, Violation::TamperedCommit { .. });
            prop_assert!(expected, "{}", v);
        }
        if sc.algorithm == Algorithm::Rac {
            prop_assert_eq!(out.committed_tampered, 0);
        }
    }
}
