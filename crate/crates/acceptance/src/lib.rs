//! Shared plumbing for the acceptance suite: logged maps and criterion
//! reporting.

use chromatic::template::audit::Structure;
use chromatic::{ChromaticMap, Config, ScxLog};
use chromatic_verify::{structure_of, ScxTally, SharedBuffer};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

pub type Map = ChromaticMap<u64, u64>;

/// A validating map whose committed SCXs are captured in memory, with the
/// structure the capture starts from.
pub struct LoggedMap {
    pub map: Map,
    pub log: SharedBuffer,
    pub initial: Structure,
}

impl LoggedMap {
    /// A map with threshold `k` holding `prefill`; the capture starts after
    /// the prefill.
    pub fn new(k: usize, prefill: &[u64]) -> Self {
        let log = SharedBuffer::new();
        let map = Map::with_config(Config {
            k,
            validate: true,
            log: Some(ScxLog::new(Box::new(log.clone()))),
            ..Config::default()
        });
        for &key in prefill {
            map.insert(key, key);
        }
        log.take_text();
        let initial = structure_of(&map.snapshot());
        LoggedMap { map, log, initial }
    }

    /// Replays everything captured since the last call into `tally`, then
    /// restarts the capture from the current structure.
    pub fn audit_into(&mut self, tally: &mut ScxTally, label: &str) {
        self.map.log().expect("logging map").flush().expect("in-memory log");
        let last = structure_of(&self.map.snapshot());
        tally.audit(label, &self.initial, &self.log.take_text(), &last);
        self.initial = last;
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

/// Runs one criterion, turning a panic into a failure.
pub fn run_criterion(f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".to_string());
        Outcome::new(false, format!("panicked: {msg}"))
    });
    (out, start.elapsed())
}

/// The single report line of a criterion.
pub fn line(id: &str, title: &str, out: &Outcome, took: Duration) -> String {
    let verdict = if out.pass { "PASS" } else { "FAIL" };
    format!("{id} {verdict} {title}: {} [{:.1}s]", out.detail, took.as_secs_f64())
}
