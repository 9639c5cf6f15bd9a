use chromatic::{ChromaticMap, ChromaticMapI64, Config, Layout};
use proptest::prelude::*;
use std::collections::BTreeMap;

#[derive(Clone, Debug)]
enum Op {
    Insert(i64, u32),
    Delete(i64),
    Get(i64),
    Successor(i64),
    Predecessor(i64),
}

fn op() -> impl Strategy<Value = Op> {
    let key = -40i64..40;
    prop_oneof![
        3 => (key.clone(), any::<u32>()).prop_map(|(k, v)| Op::Insert(k, v)),
        2 => key.clone().prop_map(Op::Delete),
        1 => key.clone().prop_map(Op::Get),
        1 => key.clone().prop_map(Op::Successor),
        1 => key.prop_map(Op::Predecessor),
    ]
}

/// Sum of weights on every root-to-leaf path, if they agree.
fn path_sum(l: &Layout<i64>) -> Option<u32> {
    match l {
        Layout::Leaf { weight, .. } => Some(*weight),
        Layout::Internal { weight, left, right, .. } => {
            let (a, b) = (path_sum(left)?, path_sum(right)?);
            (a == b).then_some(a + weight)
        }
    }
}

proptest! {
    #[test]
    fn agrees_with_btreemap(ops in prop::collection::vec(op(), 1..300), k in 0usize..4) {
        let map: ChromaticMapI64<u32> = ChromaticMap::with_k(k);
        let mut model = BTreeMap::new();
        for op in &ops {
            match *op {
                Op::Insert(key, v) => prop_assert_eq!(map.insert(key, v), model.insert(key, v)),
                Op::Delete(key) => prop_assert_eq!(map.delete(key), model.remove(&key)),
                Op::Get(key) => prop_assert_eq!(map.get(key), model.get(&key).copied()),
                Op::Successor(key) => prop_assert_eq!(
                    map.successor(key),
                    model.range(key + 1..).next().map(|(a, b)| (*a, *b))
                ),
                Op::Predecessor(key) => prop_assert_eq!(
                    map.predecessor(key),
                    model.range(..key).next_back().map(|(a, b)| (*a, *b))
                ),
            }
        }
        prop_assert_eq!(map.to_vec(), model.into_iter().collect::<Vec<_>>());
        if let Some(l) = map.to_layout() {
            prop_assert!(path_sum(&l).is_some());
            prop_assert_eq!(l.weight(), 1);
        }
        if k == 0 {
            prop_assert_eq!(map.violation_count(), 0);
        }
    }

    #[test]
    fn layouts_round_trip_through_from_layout(keys in prop::collection::btree_set(-500i64..500, 1..120)) {
        let map: ChromaticMapI64<i64> = ChromaticMap::new();
        for &k in &keys {
            map.insert(k, -k);
        }
        let layout = map.to_layout().unwrap();
        let copy = ChromaticMap::from_layout(Some(&layout), |k| -k, Config::default());
        prop_assert_eq!(copy.to_layout(), Some(layout));
        prop_assert_eq!(copy.to_vec(), map.to_vec());
    }
}

#[test]
fn extreme_keys_below_the_reserved_maximum() {
    let map: ChromaticMap<u8, ()> = ChromaticMap::new();
    for k in 0..u8::MAX {
        assert_eq!(map.insert(k, ()), None);
    }
    assert_eq!(map.len(), 255);
    assert_eq!(map.successor(253), Some((254, ())));
    assert_eq!(map.successor(254), None);
    assert_eq!(map.violation_count(), 0);
}

#[test]
#[should_panic(expected = "reserved")]
fn maximum_key_is_rejected() {
    ChromaticMap::<u32, ()>::new().insert(u32::MAX, ());
}
