//! Workload driver: operation mixes over uniform keys, prefilling to the
//! steady-state size, timed or fixed-budget trials, and CSV reporting.

use chromatic::{ChromaticMap, Config};
use chromatic_verify::audit_quiescent;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering::Relaxed};
use std::sync::Barrier;
use std::time::{Duration, Instant};

pub type Map = ChromaticMap<u64, u64>;

/// Insert and delete percentages; gets take the remainder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mix {
    pub insert: u32,
    pub delete: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Insert,
    Delete,
    Get,
}

impl Mix {
    pub fn get(&self) -> u32 {
        100 - self.insert - self.delete
    }

    /// Fraction of the key range present in steady state. A mix without
    /// updates is treated as balanced.
    pub fn steady_fraction(&self) -> f64 {
        match self.insert + self.delete {
            0 => 0.5,
            s => f64::from(self.insert) / f64::from(s),
        }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> OpKind {
        let x = rng.gen_range(0..100);
        if x < self.insert {
            OpKind::Insert
        } else if x < self.insert + self.delete {
            OpKind::Delete
        } else {
            OpKind::Get
        }
    }
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}i-{}d", self.insert, self.delete)
    }
}

impl FromStr for Mix {
    type Err = ConfigError;

    /// `i,d`, for example `20,10`.
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let bad = || ConfigError(format!("mix {s:?}: expected two percentages `i,d`"));
        let (i, d) = s.split_once(',').ok_or_else(bad)?;
        let mix = Mix {
            insert: i.trim().parse().map_err(|_| bad())?,
            delete: d.trim().parse().map_err(|_| bad())?,
        };
        if mix.insert + mix.delete > 100 {
            return Err(ConfigError(format!("mix {s:?}: percentages exceed 100")));
        }
        Ok(mix)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrialLength {
    /// Wall-clock trial.
    Seconds(f64),
    /// Exactly this many operations in total, split evenly across threads.
    OpsBudget(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadConfig {
    pub mix: Mix,
    /// Keys are drawn uniformly from `[0, key_range)`.
    pub key_range: u64,
    pub threads: usize,
    pub length: TrialLength,
    pub trials: usize,
    /// Trials run first and discarded.
    pub warmup: usize,
    pub k: usize,
    pub seed: u64,
    /// Audit the quiescent tree after each trial.
    pub audit: bool,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            mix: Mix { insert: 50, delete: 50 },
            key_range: 10_000,
            threads: 1,
            length: TrialLength::Seconds(5.0),
            trials: 5,
            warmup: 0,
            k: 0,
            seed: 1,
            audit: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq)]
pub enum BenchError {
    Config(ConfigError),
    /// The size band around the expected size was not reached.
    PrefillTimeout { size: usize, expected: f64, ops: u64 },
}

impl fmt::Display for BenchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchError::Config(e) => e.fmt(f),
            BenchError::PrefillTimeout { size, expected, ops } => write!(
                f,
                "prefill stopped at size {size} after {ops} operations; expected {expected} +-5%"
            ),
        }
    }
}

impl std::error::Error for BenchError {}

impl From<ConfigError> for BenchError {
    fn from(e: ConfigError) -> Self {
        BenchError::Config(e)
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: &str| Err(ConfigError(m.to_string()));
        if self.mix.insert + self.mix.delete > 100 {
            return err("insert and delete percentages exceed 100");
        }
        if self.key_range == 0 {
            return err("key range is empty");
        }
        if self.threads == 0 {
            return err("at least one thread is required");
        }
        match self.length {
            TrialLength::Seconds(s) if !(s > 0.0 && s.is_finite()) => err("trial length must be positive"),
            TrialLength::OpsBudget(0) => err("operation budget must be positive"),
            _ => Ok(()),
        }
    }

    pub fn expected_size(&self) -> f64 {
        self.key_range as f64 * self.mix.steady_fraction()
    }

    /// `Chromatic` for k = 0, otherwise `Chromatic` followed by k.
    pub fn variant(&self) -> String {
        match self.k {
            0 => "Chromatic".to_string(),
            k => format!("Chromatic{k}"),
        }
    }

    fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add((trial as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }
}

/// Independent stream for `thread`, derived from the seed and the index.
pub fn thread_rng(seed: u64, thread: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(thread as u64))
}

/// Per-kind operation counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub inserts: u64,
    /// Inserts whose key was absent.
    pub inserted: u64,
    pub deletes: u64,
    /// Deletes that removed a key.
    pub deleted: u64,
    pub gets: u64,
}

impl OpCounts {
    pub fn total(&self) -> u64 {
        self.inserts + self.deletes + self.gets
    }

    pub fn net_size_change(&self) -> i64 {
        self.inserted as i64 - self.deleted as i64
    }

    fn add(&mut self, o: &OpCounts) {
        self.inserts += o.inserts;
        self.inserted += o.inserted;
        self.deletes += o.deletes;
        self.deleted += o.deleted;
        self.gets += o.gets;
    }
}

/// The next operation of a worker: a kind by the mix and a uniform key.
pub fn draw_op<R: Rng>(mix: Mix, key_range: u64, rng: &mut R) -> (OpKind, u64) {
    (mix.draw(rng), rng.gen_range(0..key_range))
}

fn run_one<R: Rng>(map: &Map, mix: Mix, key_range: u64, rng: &mut R, c: &mut OpCounts) {
    let (kind, key) = draw_op(mix, key_range, rng);
    match kind {
        OpKind::Insert => {
            c.inserts += 1;
            if map.insert(key, key).is_none() {
                c.inserted += 1;
            }
        }
        OpKind::Delete => {
            c.deletes += 1;
            if map.delete(key).is_some() {
                c.deleted += 1;
            }
        }
        OpKind::Get => {
            c.gets += 1;
            std::hint::black_box(map.get(key));
        }
    }
}

/// Fills a fresh `map` with random inserts and deletes in the mix's ratio
/// until its size is within 5% of the steady-state size.
pub fn prefill(map: &Map, config: &WorkloadConfig, seed: u64) -> Result<usize, BenchError> {
    config.validate()?;
    let expected = config.expected_size();
    let within = |size: usize| (size as f64 - expected).abs() <= 0.05 * expected;
    let ratio = match config.mix.insert + config.mix.delete {
        0 => Mix { insert: 50, delete: 50 },
        _ => config.mix,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f111);
    let mut size = map.len();
    // Far beyond the mixing time of the size's random walk.
    let cap = 64 * config.key_range + 100_000;
    let mut ops = 0;
    while !within(size) {
        if ops == cap {
            return Err(BenchError::PrefillTimeout { size, expected, ops });
        }
        ops += 1;
        let key = rng.gen_range(0..config.key_range);
        let insert = rng.gen_range(0..ratio.insert + ratio.delete) < ratio.insert;
        if insert {
            if map.insert(key, key).is_none() {
                size += 1;
            }
        } else if map.delete(key).is_some() {
            size -= 1;
        }
    }
    Ok(size)
}

/// Outcome of the quiescent audit after a trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuditSummary {
    pub passed: bool,
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub variant: String,
    pub mix: Mix,
    pub key_range: u64,
    pub threads: usize,
    pub k: usize,
    pub trial: usize,
    pub total_ops: u64,
    pub ops_per_second: f64,
    pub per_op: OpCounts,
    pub prefill_size: usize,
    pub expected_size: f64,
    pub duration: Duration,
    pub final_size: usize,
    /// Resident memory after the trial, where the platform reports it.
    pub rss_kib: Option<u64>,
    pub audit: Option<AuditSummary>,
}

fn resident_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

/// One trial on a fresh, prefilled map. `trial` selects the seed.
pub fn run_trial(config: &WorkloadConfig, trial: usize) -> Result<TrialResult, BenchError> {
    config.validate()?;
    let map = Map::with_config(Config {
        k: config.k,
        validate: false,
        ..Config::default()
    });
    let seed = config.trial_seed(trial);
    let prefill_size = prefill(&map, config, seed)?;
    let stop = AtomicBool::new(false);
    let barrier = Barrier::new(config.threads + 1);
    let (counts, duration) = std::thread::scope(|s| {
        let handles: Vec<_> = (0..config.threads)
            .map(|t| {
                let (map, stop, barrier) = (&map, &stop, &barrier);
                let budget = match config.length {
                    TrialLength::OpsBudget(b) => {
                        let n = config.threads as u64;
                        Some(b / n + u64::from((t as u64) < b % n))
                    }
                    TrialLength::Seconds(_) => None,
                };
                s.spawn(move || {
                    let mut rng = thread_rng(seed, t);
                    let mut c = OpCounts::default();
                    barrier.wait();
                    match budget {
                        Some(b) => (0..b).for_each(|_| run_one(map, config.mix, config.key_range, &mut rng, &mut c)),
                        None => {
                            while !stop.load(Relaxed) {
                                run_one(map, config.mix, config.key_range, &mut rng, &mut c);
                            }
                        }
                    }
                    c
                })
            })
            .collect();
        barrier.wait();
        let start = Instant::now();
        if let TrialLength::Seconds(secs) = config.length {
            std::thread::sleep(Duration::from_secs_f64(secs));
            stop.store(true, Relaxed);
        }
        let mut total = OpCounts::default();
        for h in handles {
            total.add(&h.join().expect("worker panicked"));
        }
        (total, start.elapsed())
    });
    let audit = config.audit.then(|| {
        let report = audit_quiescent(&map.snapshot().to_text(u64::to_string), 0, None).expect("snapshot text parses");
        AuditSummary {
            passed: report.passed(),
            violations: report.violations,
        }
    });
    let total_ops = counts.total();
    Ok(TrialResult {
        variant: config.variant(),
        mix: config.mix,
        key_range: config.key_range,
        threads: config.threads,
        k: config.k,
        trial,
        total_ops,
        ops_per_second: total_ops as f64 / duration.as_secs_f64(),
        per_op: counts,
        prefill_size,
        expected_size: config.expected_size(),
        duration,
        final_size: map.len(),
        rss_kib: resident_kib(),
        audit,
    })
}

/// Warmup trials followed by measured trials; only the latter are returned.
pub fn run_trials(config: &WorkloadConfig) -> Result<Vec<TrialResult>, BenchError> {
    for w in 0..config.warmup {
        run_trial(config, config.trials + w)?;
    }
    (0..config.trials).map(|t| run_trial(config, t)).collect()
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_stddev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

pub const CSV_HEADER: &str = "variant,mix,key_range,threads,trial,total_ops,duration_s,ops_per_sec,\
stddev_ops_per_sec,inserts,deletes,gets,prefill_size,expected_size,final_size,rss_kib,audit";

/// One row per trial. The stddev column is over the trials sharing the
/// row's variant, mix, key range and thread count.
pub fn emit_report(results: &[TrialResult]) -> String {
    let group = |r: &TrialResult| (r.variant.clone(), r.mix, r.key_range, r.threads);
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in results {
        let same: Vec<f64> = results
            .iter()
            .filter(|o| group(o) == group(r))
            .map(|o| o.ops_per_second)
            .collect();
        let audit = match r.audit {
            None => String::new(),
            Some(a) if a.passed => "pass".to_string(),
            Some(a) => format!("fail:{}", a.violations),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{:.1},{:.1},{},{},{},{},{:.1},{},{},{}",
            r.variant,
            r.mix,
            r.key_range,
            r.threads,
            r.trial,
            r.total_ops,
            r.duration.as_secs_f64(),
            r.ops_per_second,
            sample_stddev(&same),
            r.per_op.inserts,
            r.per_op.deletes,
            r.per_op.gets,
            r.prefill_size,
            r.expected_size,
            r.final_size,
            r.rss_kib.map(|k| k.to_string()).unwrap_or_default(),
            audit,
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_parsing_and_labels() {
        let m: Mix = "20,10".parse().unwrap();
        assert_eq!(m, Mix { insert: 20, delete: 10 });
        assert_eq!(m.get(), 70);
        assert_eq!(m.to_string(), "20i-10d");
        assert!("60,50".parse::<Mix>().is_err());
        assert!("50".parse::<Mix>().is_err());
    }

    #[test]
    fn steady_sizes() {
        let cfg = |insert, delete, key_range| WorkloadConfig {
            mix: Mix { insert, delete },
            key_range,
            ..WorkloadConfig::default()
        };
        assert_eq!(cfg(50, 50, 10_000).expected_size(), 5000.0);
        assert_eq!(cfg(0, 0, 100).expected_size(), 50.0);
        assert!((cfg(20, 10, 300).expected_size() - 200.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = WorkloadConfig::default();
        for bad in [
            WorkloadConfig { key_range: 0, ..base.clone() },
            WorkloadConfig { threads: 0, ..base.clone() },
            WorkloadConfig {
                length: TrialLength::Seconds(0.0),
                ..base.clone()
            },
            WorkloadConfig {
                mix: Mix { insert: 70, delete: 40 },
                ..base.clone()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn unreachable_band_times_out() {
        // Expected size 0.5 leaves no integer within 5%.
        let cfg = WorkloadConfig {
            key_range: 1,
            ..WorkloadConfig::default()
        };
        assert!(matches!(prefill(&Map::new(), &cfg, 1), Err(BenchError::PrefillTimeout { .. })));
    }

    #[test]
    fn stddev_of_known_values() {
        assert_eq!(sample_stddev(&[3.0]), 0.0);
        assert!((sample_stddev(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]) - 2.138089935).abs() < 1e-6);
    }
}
