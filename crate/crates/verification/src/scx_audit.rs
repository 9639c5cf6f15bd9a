//! Capturing a map's committed-SCX log and replaying it.

use chromatic::template::audit::{audit_committed_scx, ReplayReport, Structure};
use chromatic::tree::{Key, TreeSnapshot};
use chromatic::ScxRecord;
use std::io::{self, Write};
use std::sync::{Arc, Mutex};

/// An in-memory sink that can be read while a log still writes to it.
#[derive(Clone, Debug, Default)]
pub struct SharedBuffer(Arc<Mutex<Vec<u8>>>);

impl SharedBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Removes and returns everything written so far.
    pub fn take_text(&self) -> String {
        String::from_utf8(std::mem::take(&mut *self.0.lock().unwrap())).expect("log lines are UTF-8")
    }
}

impl Write for SharedBuffer {
    fn write(&mut self, b: &[u8]) -> io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(b);
        Ok(b.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// The child links of every record in a snapshot.
pub fn structure_of<K: Key, V>(s: &TreeSnapshot<K, V>) -> Structure {
    let mut st = Structure::new(s.entry);
    for n in &s.nodes {
        st.insert(n.id, n.left, n.right);
    }
    st
}

/// Totals over audited logs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ScxTally {
    pub logs: u64,
    pub records: u64,
    /// Records whose validator verdict listed violated conditions.
    pub pc_violations: u64,
    pub unvalidated: u64,
    pub replay_errors: u64,
    /// Logs whose replayed shadow differs from the map's final structure.
    pub final_mismatches: u64,
    pub first_problem: Option<String>,
}

impl ScxTally {
    pub fn clean(&self) -> bool {
        self.pc_violations + self.unvalidated + self.replay_errors + self.final_mismatches == 0
    }

    fn problem(&mut self, what: String) {
        self.first_problem.get_or_insert(what);
    }

    /// Replays `log` over `initial` and compares the result with `last`,
    /// the structure after the logged run.
    pub fn audit(&mut self, label: &str, initial: &Structure, log: &str, last: &Structure) {
        self.logs += 1;
        let mut recs = Vec::new();
        for line in log.lines() {
            match line.parse::<ScxRecord>() {
                Ok(r) => recs.push(r),
                Err(e) => {
                    self.replay_errors += 1;
                    self.problem(format!("{label}: unparsable record {line:?}: {e:?}"));
                    return;
                }
            }
        }
        self.records += recs.len() as u64;
        match audit_committed_scx(initial, &recs) {
            Ok(ReplayReport {
                pc_violations,
                unvalidated,
                shadow,
                ..
            }) => {
                self.unvalidated += unvalidated;
                if unvalidated > 0 {
                    self.problem(format!("{label}: {unvalidated} records without a validator verdict"));
                }
                if let Some((seq, pcs)) = pc_violations.first() {
                    self.problem(format!("{label}: scx {seq} violated {pcs:?}"));
                }
                self.pc_violations += pc_violations.len() as u64;
                if shadow != last.pruned() {
                    self.final_mismatches += 1;
                    self.problem(format!("{label}: replayed structure differs from the final tree"));
                }
            }
            Err(e) => {
                self.replay_errors += 1;
                self.problem(format!("{label}: {e}"));
            }
        }
    }

    pub fn merge(&mut self, o: &ScxTally) {
        self.logs += o.logs;
        self.records += o.records;
        self.pc_violations += o.pc_violations;
        self.unvalidated += o.unvalidated;
        self.replay_errors += o.replay_errors;
        self.final_mismatches += o.final_mismatches;
        if let Some(p) = &o.first_problem {
            self.problem(p.clone());
        }
    }
}
