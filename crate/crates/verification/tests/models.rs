//! The map against independent models: the sequential simulator, the
//! per-step transforms, the auditor and the oracle.

use chromatic::{ChromaticMap, Config, RebalanceStepKind};
use chromatic_verify::configs::{layout_violations, legal_configuration, path_sums};
use chromatic_verify::{apply_op, audit_quiescent, expected_leaves, Op, OracleMap, SimOp, SimTree};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Map = ChromaticMap<u64, u64>;

fn sim_op() -> impl Strategy<Value = SimOp> {
    prop_oneof![
        3 => (0u64..48, any::<u64>()).prop_map(|(k, v)| SimOp::Insert(k, v)),
        2 => (0u64..48).prop_map(SimOp::Delete),
    ]
}

fn leaf_keys(l: &chromatic::Layout<u64>) -> Vec<u64> {
    match l {
        chromatic::Layout::Leaf { key, .. } => vec![*key],
        chromatic::Layout::Internal { left, right, .. } => {
            let mut v = leaf_keys(left);
            v.extend(leaf_keys(right));
            v
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn simulator_and_map_build_identical_trees(script in prop::collection::vec(sim_op(), 1..400), k in 0usize..4) {
        let map = Map::with_k(k);
        let mut sim = SimTree::new(k);
        for &op in &script {
            let (a, b) = match op {
                SimOp::Insert(key, v) => (map.insert(key, v), sim.insert(key, v)),
                SimOp::Delete(key) => (map.delete(key), sim.delete(key)),
            };
            prop_assert_eq!(a, b);
        }
        prop_assert_eq!(map.to_layout(), sim.to_layout());
        prop_assert_eq!(map.stats().steps, sim.stats.steps);
        prop_assert_eq!(sim.stats.viol_failures, 0);
    }

    #[test]
    fn map_agrees_with_the_oracle(ops in prop::collection::vec((0u8..5, 0u64..32, any::<u64>()), 1..400)) {
        let map = Map::new();
        let mut oracle = OracleMap::new();
        for (kind, key, v) in ops {
            let op = match kind {
                0 => Op::Insert(key, v),
                1 => Op::Delete(key),
                2 => Op::Get(key),
                3 => Op::Successor(key),
                _ => Op::Predecessor(key),
            };
            prop_assert_eq!(apply_op(&map, &op), oracle.apply(&op), "{}", op);
        }
        prop_assert_eq!(map.to_vec(), oracle.entries().collect::<Vec<_>>());
    }
}

#[test]
fn every_step_matches_the_hand_written_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for kind in RebalanceStepKind::all() {
        for _ in 0..60 {
            let c = legal_configuration(kind, &mut rng);
            let map = Map::from_layout(Some(&c.root), |k| k, Config::default());
            map.apply_step_at(kind, &c.ux)
                .unwrap_or_else(|_| panic!("{kind:?} did not apply to {:?}", c.root));
            let mut sim = SimTree::from_layout(Some(&c.root), &|k| k, 0);
            sim.apply_step(kind, &c.ux);
            let after = map.to_layout().unwrap();
            assert_eq!(Some(&after), sim.to_layout().as_ref(), "{kind:?}");
            assert_eq!(leaf_keys(&after), leaf_keys(&c.root), "{kind:?}");
            let sums = path_sums(&after);
            assert!(sums.windows(2).all(|w| w[0] == w[1]), "{kind:?}: {sums:?}");
            assert!(layout_violations(&after) <= layout_violations(&c.root), "{kind:?}");
        }
    }
}

#[test]
fn ascending_keys_stay_within_the_red_black_height() {
    let map = Map::new();
    for k in 1..=64 {
        map.insert(k, k);
    }
    let expected = expected_leaves(map.to_vec());
    let report = audit_quiescent(&map.snapshot().to_text(u64::to_string), 0, Some(&expected)).unwrap();
    assert!(report.passed(), "{}", report.to_lines());
    assert_eq!(report.violations, 0);
    let edges = report.height - 1;
    assert!(edges as f64 <= 2.0 * 65f64.log2() + 2.0, "height {edges}");
}

#[test]
fn audit_of_one_to_sixty_three() {
    let map = Map::new();
    let mut oracle = OracleMap::new();
    for k in 1..=63u64 {
        map.insert(k, k * 10);
        oracle.apply(&Op::Insert(k, k * 10));
    }
    let report = audit_quiescent(&map.snapshot().to_text(u64::to_string), 0, Some(&expected_leaves(oracle.entries()))).unwrap();
    assert!(report.passed(), "{}", report.to_lines());
    assert!(report.height as u64 - 1 <= 2 * report.weighted_height, "{}", report.to_lines());
}
