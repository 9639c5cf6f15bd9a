//! Multi-threaded workloads over a shared map, with optional interference
//! through the instrumentation hook: random yields, stop-the-world sampling,
//! and parking a thread indefinitely.

use crate::oracle::{Op, OpResult};
use crate::apply_op;
use chromatic::hook::{self, Step};
use chromatic::ChromaticMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering::SeqCst};
use std::sync::{Arc, Barrier, Condvar, Mutex};
use std::time::{Duration, Instant};

pub type Map = ChromaticMap<u64, u64>;

/// Percentages of each operation; the remainder are gets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mix {
    pub insert: u32,
    pub delete: u32,
    pub successor: u32,
    pub predecessor: u32,
}

impl Mix {
    pub const fn updates(insert: u32, delete: u32) -> Self {
        Mix {
            insert,
            delete,
            successor: 0,
            predecessor: 0,
        }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R, key_range: u64) -> Op<u64, u64> {
        let k = rng.gen_range(0..key_range);
        let mut x = rng.gen_range(0..100);
        for (p, op) in [
            (self.insert, Op::Insert(k, rng.gen())),
            (self.delete, Op::Delete(k)),
            (self.successor, Op::Successor(k)),
            (self.predecessor, Op::Predecessor(k)),
        ] {
            if x < p {
                return op;
            }
            x -= p;
        }
        Op::Get(k)
    }
}

#[derive(Clone, Debug)]
pub struct StressConfig {
    pub threads: usize,
    pub ops_per_thread: u64,
    pub key_range: u64,
    pub mix: Mix,
    pub seed: u64,
    /// Yield at roughly one in this many instrumentation points.
    pub chaos: Option<u32>,
}

/// Per-thread counters.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WorkerStats {
    pub ops: u64,
    /// Inserts of a key that was absent.
    pub inserted: u64,
    /// Deletes that removed a key.
    pub deleted: u64,
}

#[derive(Clone, Debug, Default)]
pub struct StressReport {
    pub workers: Vec<WorkerStats>,
    pub elapsed: Duration,
}

impl StressReport {
    /// Change in the number of keys implied by the operations' results.
    pub fn net_size_change(&self) -> i64 {
        self.workers.iter().map(|w| w.inserted as i64 - w.deleted as i64).sum()
    }

    pub fn total_ops(&self) -> u64 {
        self.workers.iter().map(|w| w.ops).sum()
    }
}

pub fn thread_rng(seed: u64, thread: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(thread as u64))
}

fn run_op(map: &Map, op: &Op<u64, u64>, stats: &mut WorkerStats) {
    let r = apply_op(map, op);
    stats.ops += 1;
    match (op, r) {
        (Op::Insert(..), OpResult::Value(None)) => stats.inserted += 1,
        (Op::Delete(_), OpResult::Value(Some(_))) => stats.deleted += 1,
        _ => {}
    }
}

/// Cheap per-thread generator for hook decisions.
struct XorShift(u64);

impl XorShift {
    fn next(&mut self) -> u64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        self.0
    }
}

fn chaos_hook(seed: u64, one_in: u32) -> hook::HookGuard {
    let mut x = XorShift(seed | 1);
    hook::install(move |_| {
        if x.next().is_multiple_of(u64::from(one_in)) {
            std::thread::yield_now();
        }
    })
}

/// Runs `config.threads` workers to completion.
pub fn run_stress(map: &Map, config: &StressConfig) -> StressReport {
    let start = Instant::now();
    let barrier = Barrier::new(config.threads);
    let workers = std::thread::scope(|s| {
        let handles: Vec<_> = (0..config.threads)
            .map(|t| {
                let barrier = &barrier;
                s.spawn(move || {
                    let mut rng = thread_rng(config.seed, t);
                    let _chaos = config.chaos.map(|n| chaos_hook(config.seed ^ (t as u64 + 1) << 32, n));
                    let mut stats = WorkerStats::default();
                    barrier.wait();
                    for _ in 0..config.ops_per_thread {
                        let op = config.mix.draw(&mut rng, config.key_range);
                        run_op(map, &op, &mut stats);
                    }
                    stats
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    StressReport {
        workers,
        elapsed: start.elapsed(),
    }
}

/// Coordination for pausing every worker at an instrumentation point.
#[derive(Default)]
struct World {
    stop: AtomicBool,
    parked: AtomicUsize,
    /// Workers that have not finished.
    alive: AtomicUsize,
    /// Insert and Delete calls that have started and not returned.
    in_flight: AtomicUsize,
    gate: Mutex<()>,
    resume: Condvar,
}

impl World {
    fn park_if_stopped(&self) {
        if !self.stop.load(SeqCst) {
            return;
        }
        let mut g = self.gate.lock().unwrap();
        self.parked.fetch_add(1, SeqCst);
        while self.stop.load(SeqCst) {
            g = self.resume.wait(g).unwrap();
        }
        self.parked.fetch_sub(1, SeqCst);
    }
}

/// One stop-the-world observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sample {
    pub violations: usize,
    pub in_flight: usize,
}

/// Runs the workload while another thread repeatedly stops every worker at
/// an instrumentation point, counts violations with a plain walk, and
/// records them against the number of in-flight updates.
pub fn run_sampled(map: &Map, config: &StressConfig, every: Duration) -> (StressReport, Vec<Sample>) {
    let world = Arc::new(World::default());
    world.alive.store(config.threads, SeqCst);
    let start = Instant::now();
    let barrier = Barrier::new(config.threads + 1);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..config.threads)
            .map(|t| {
                let (world, barrier) = (Arc::clone(&world), &barrier);
                s.spawn(move || {
                    let mut rng = thread_rng(config.seed, t);
                    let w = Arc::clone(&world);
                    let mut x = XorShift(config.seed ^ (t as u64 + 1) << 32 | 1);
                    let chaos = config.chaos;
                    let _hook = hook::install(move |_| {
                        w.park_if_stopped();
                        if chaos.is_some_and(|n| x.next().is_multiple_of(u64::from(n))) {
                            std::thread::yield_now();
                        }
                    });
                    let mut stats = WorkerStats::default();
                    barrier.wait();
                    for _ in 0..config.ops_per_thread {
                        world.park_if_stopped();
                        let op = config.mix.draw(&mut rng, config.key_range);
                        let update = op.is_update();
                        if update {
                            world.in_flight.fetch_add(1, SeqCst);
                        }
                        run_op(map, &op, &mut stats);
                        if update {
                            world.in_flight.fetch_sub(1, SeqCst);
                        }
                    }
                    // Never counted as parked again.
                    let _g = world.gate.lock().unwrap();
                    world.alive.fetch_sub(1, SeqCst);
                    stats
                })
            })
            .collect();
        barrier.wait();
        let mut samples = Vec::new();
        loop {
            std::thread::sleep(every);
            if world.alive.load(SeqCst) == 0 {
                break;
            }
            world.stop.store(true, SeqCst);
            loop {
                let g = world.gate.lock().unwrap();
                if world.parked.load(SeqCst) == world.alive.load(SeqCst) {
                    break;
                }
                drop(g);
                std::thread::yield_now();
            }
            samples.push(Sample {
                violations: map.violation_count(),
                in_flight: world.in_flight.load(SeqCst),
            });
            {
                let _g = world.gate.lock().unwrap();
                world.stop.store(false, SeqCst);
                world.resume.notify_all();
            }
        }
        let workers = handles.into_iter().map(|h| h.join().unwrap()).collect();
        (
            StressReport {
                workers,
                elapsed: start.elapsed(),
            },
            samples,
        )
    })
}

/// Result of a run with one thread parked for good.
#[derive(Clone, Debug)]
pub struct ParkedRun {
    /// The victim's instrumentation point count and step kind where it stopped.
    pub parked_at: Option<(u64, Step)>,
    /// Time each other worker took for its budget; `None` if it missed the
    /// deadline.
    pub finish_times: Vec<Option<Duration>>,
}

/// Thread 0 parks at its `point`-th instrumentation point and stays there
/// while `others` threads each run `budget` operations. Parked threads are
/// released after the others finish or give up at `deadline`.
#[allow(clippy::too_many_arguments)]
pub fn run_with_parked(
    map: &Map,
    others: usize,
    budget: u64,
    key_range: u64,
    mix: Mix,
    seed: u64,
    point: u64,
    deadline: Duration,
) -> ParkedRun {
    let release = Arc::new((Mutex::new(false), Condvar::new()));
    let parked_at = Arc::new(Mutex::new(None));
    let reached = Arc::new((Mutex::new(false), Condvar::new()));
    std::thread::scope(|s| {
        {
            let (release, parked_at, reached) = (Arc::clone(&release), Arc::clone(&parked_at), Arc::clone(&reached));
            s.spawn(move || {
                let mut seen = 0u64;
                let (rel, at, hit) = (Arc::clone(&release), Arc::clone(&parked_at), Arc::clone(&reached));
                let _hook = hook::install(move |step| {
                    seen += 1;
                    if seen == point {
                        *at.lock().unwrap() = Some((seen, step));
                        *hit.0.lock().unwrap() = true;
                        hit.1.notify_all();
                        let mut g = rel.0.lock().unwrap();
                        while !*g {
                            g = rel.1.wait(g).unwrap();
                        }
                    }
                });
                let mut rng = thread_rng(seed, 0);
                let mut stats = WorkerStats::default();
                // Every operation passes instrumentation points, so the
                // victim parks eventually; it resumes once released.
                while !*release.0.lock().unwrap() {
                    let op = mix.draw(&mut rng, key_range);
                    run_op(map, &op, &mut stats);
                }
            });
        }
        {
            let mut g = reached.0.lock().unwrap();
            while !*g {
                g = reached.1.wait(g).unwrap();
            }
        }
        let start = Instant::now();
        let handles: Vec<_> = (1..=others)
            .map(|t| {
                s.spawn(move || {
                    let mut rng = thread_rng(seed, t);
                    let mut stats = WorkerStats::default();
                    for _ in 0..budget {
                        if start.elapsed() > deadline {
                            return None;
                        }
                        let op = mix.draw(&mut rng, key_range);
                        run_op(map, &op, &mut stats);
                    }
                    Some(start.elapsed())
                })
            })
            .collect();
        let finish_times = handles.into_iter().map(|h| h.join().unwrap()).collect();
        *release.0.lock().unwrap() = true;
        release.1.notify_all();
        ParkedRun {
            parked_at: *parked_at.lock().unwrap(),
            finish_times,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_frequencies_follow_percentages() {
        let mix = Mix {
            insert: 30,
            delete: 20,
            successor: 10,
            predecessor: 5,
        };
        let mut rng = thread_rng(1, 0);
        let mut counts = [0u32; 5];
        for _ in 0..100_000 {
            let i = match mix.draw(&mut rng, 100) {
                Op::Insert(..) => 0,
                Op::Delete(_) => 1,
                Op::Successor(_) => 2,
                Op::Predecessor(_) => 3,
                Op::Get(_) => 4,
            };
            counts[i] += 1;
        }
        for (c, p) in counts.iter().zip([30, 20, 10, 5, 35]) {
            assert!((*c as f64 / 1000.0 - p as f64).abs() < 1.0, "{counts:?}");
        }
    }
}
