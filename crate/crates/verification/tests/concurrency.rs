use chromatic::{ChromaticMap, Config, ScxLog};
use chromatic_verify::explorer::{explore, ExploreConfig};
use chromatic_verify::linearizability::check_linearizable_from;
use chromatic_verify::stress::{run_sampled, run_stress, run_with_parked, Mix, StressConfig};
use chromatic_verify::{apply_op, audit_quiescent, structure_of, Op, OpResult, OracleMap, ScxTally, SharedBuffer};
use std::time::Duration;

type Map = ChromaticMap<u64, u64>;

fn exec(m: &Map, op: &Op<u64, u64>) -> OpResult<u64, u64> {
    apply_op(m, op)
}

fn prefilled(keys: &[u64]) -> (Map, OracleMap<u64, u64>) {
    let map = Map::new();
    let mut oracle = OracleMap::new();
    for &k in keys {
        map.insert(k, k);
        oracle.apply(&Op::Insert(k, k));
    }
    (map, oracle)
}

#[test]
fn every_schedule_of_two_ops_on_two_keys_is_linearizable() {
    let ops = [
        Op::Insert(1, 10),
        Op::Insert(2, 20),
        Op::Delete(1),
        Op::Delete(2),
        Op::Get(1),
        Op::Get(2),
    ];
    let mut schedules = 0;
    for prefill in [&[][..], &[1]] {
        let (_, initial) = prefilled(prefill);
        for i in 0..ops.len() {
            for j in i..ops.len() {
                let script = vec![vec![ops[i]], vec![ops[j]]];
                let r = explore(
                    &script,
                    ExploreConfig {
                        preemption_bound: 2,
                        ..Default::default()
                    },
                    &|| prefilled(prefill).0,
                    &exec,
                    &mut |run| {
                        let witness = check_linearizable_from(&run.history, &initial).map_err(|e| format!("{e:?}"))?;
                        let mut o = initial.clone();
                        for &e in &witness {
                            o.apply(&run.history.events[e].op);
                        }
                        if run.state.to_vec() != o.entries().collect::<Vec<_>>() {
                            return Err("final contents differ from the witness".into());
                        }
                        Ok(())
                    },
                )
                .unwrap_or_else(|e| panic!("{script:?} from {prefill:?}: {e}"));
                assert!(r.complete);
                schedules += r.schedules;
            }
        }
    }
    assert!(schedules > 1000, "{schedules}");
}

#[test]
fn gets_racing_a_rebalancing_insert_are_linearizable() {
    let (_, initial) = prefilled(&[1, 2, 3]);
    let script = vec![vec![Op::Insert(4, 4)], vec![Op::Get(3), Op::Get(1)]];
    let mut rebalanced = 0;
    let r = explore(
        &script,
        ExploreConfig {
            preemption_bound: 2,
            ..Default::default()
        },
        &|| prefilled(&[1, 2, 3]).0,
        &exec,
        &mut |run| {
            rebalanced += u64::from(run.state.stats().total_steps() > prefilled(&[1, 2, 3]).0.stats().total_steps());
            check_linearizable_from(&run.history, &initial).map(|_| ()).map_err(|e| format!("{e:?}"))
        },
    )
    .unwrap();
    assert!(r.complete);
    assert!(rebalanced > 0, "the insert never rebalanced");
}

#[test]
fn logged_stress_replays_and_audits_clean() {
    let buf = SharedBuffer::new();
    let map = Map::with_config(Config {
        validate: true,
        log: Some(ScxLog::new(Box::new(buf.clone()))),
        ..Config::default()
    });
    let initial = structure_of(&map.snapshot());
    let report = run_stress(
        &map,
        &StressConfig {
            threads: 4,
            ops_per_thread: 5000,
            key_range: 128,
            mix: Mix {
                insert: 40,
                delete: 40,
                successor: 5,
                predecessor: 5,
            },
            seed: 3,
            chaos: Some(16),
        },
    );
    map.log().unwrap().flush().unwrap();
    assert_eq!(map.len() as i64, report.net_size_change());
    let mut tally = ScxTally::default();
    tally.audit("stress", &initial, &buf.take_text(), &structure_of(&map.snapshot()));
    assert!(tally.clean(), "{tally:?}");
    assert!(tally.records > 1000);
    let audit = audit_quiescent(&map.snapshot().to_text(u64::to_string), 0, None).unwrap();
    assert!(audit.passed(), "{}", audit.to_lines());
}

#[test]
fn sampled_violations_never_exceed_in_flight_updates() {
    let map = Map::new();
    let (report, samples) = run_sampled(
        &map,
        &StressConfig {
            threads: 4,
            ops_per_thread: 20_000,
            key_range: 256,
            mix: Mix::updates(50, 50),
            seed: 8,
            chaos: Some(32),
        },
        Duration::from_millis(2),
    );
    assert_eq!(report.total_ops(), 80_000);
    assert!(!samples.is_empty());
    for s in &samples {
        assert!(s.violations <= s.in_flight, "{s:?}");
    }
}

#[test]
fn others_finish_while_one_thread_is_parked() {
    for point in [1, 17, 250] {
        let map = Map::new();
        let run = run_with_parked(&map, 3, 2000, 128, Mix::updates(50, 50), point, point, Duration::from_secs(30));
        assert!(run.parked_at.is_some());
        assert!(run.finish_times.iter().all(Option::is_some), "{run:?}");
    }
}
