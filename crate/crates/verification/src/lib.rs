//! Oracles, checkers and concurrency harnesses for the chromatic tree.

pub mod audit;
pub mod configs;
#[cfg(feature = "harness")]
pub mod explorer;
pub mod history;
pub mod linearizability;
pub mod oracle;
pub mod scx_audit;
pub mod simulator;
#[cfg(feature = "harness")]
pub mod stress;

pub use audit::{audit_quiescent, AuditReport, CheckResult};
pub use history::{History, HistoryEvent, Recorder};
pub use linearizability::{check_linearizable, CheckError};
pub use oracle::{oracle_apply, Op, OpResult, OracleMap};
pub use scx_audit::{structure_of, ScxTally, SharedBuffer};
pub use simulator::{simulate_sequential, SimOp, SimTree};

use chromatic::tree::{Key, Value};
use chromatic::ChromaticMap;

/// Runs `op` on `map`.
pub fn apply_op<K: Key, V: Value>(map: &ChromaticMap<K, V>, op: &Op<K, V>) -> OpResult<K, V> {
    match op {
        Op::Insert(k, v) => OpResult::Value(map.insert(*k, v.clone())),
        Op::Delete(k) => OpResult::Value(map.delete(*k)),
        Op::Get(k) => OpResult::Value(map.get(*k)),
        Op::Successor(k) => OpResult::Entry(map.successor(*k)),
        Op::Predecessor(k) => OpResult::Entry(map.predecessor(*k)),
    }
}

/// The map's entries as the auditor's oracle content.
pub fn expected_leaves<K: Copy + Into<i128>, V: ToString>(entries: impl IntoIterator<Item = (K, V)>) -> std::collections::BTreeMap<i128, String> {
    entries.into_iter().map(|(k, v)| (k.into(), v.to_string())).collect()
}
