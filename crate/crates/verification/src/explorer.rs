//! Depth-first enumeration of thread interleavings.
//!
//! Worker threads run one at a time. Before every shared-memory step the
//! running thread reaches a decision point, where the scheduler either lets
//! it continue or hands the baton to another runnable thread. A run replays a
//! prefix of decisions and then always continues the current thread. After
//! each run the deepest decision with an untried alternative is flipped.
//! Switching away from a thread that could have continued is a preemption;
//! schedules with more than the bound are skipped.

use crate::history::{History, HistoryEvent};
use crate::oracle::{Op, OpResult};
use chromatic::hook;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};

/// One decision point of a run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decision {
    /// The thread that reached the point, if it can continue.
    pub current: Option<usize>,
    /// Runnable threads, ascending.
    pub runnable: Vec<usize>,
    pub chosen: usize,
    pub preemptions_before: usize,
}

impl Decision {
    /// Choices in exploration order: continuing first.
    fn order(&self) -> Vec<usize> {
        let mut o: Vec<usize> = self.current.into_iter().collect();
        o.extend(
            self.runnable
                .iter()
                .copied()
                .filter(|&t| Some(t) != self.current),
        );
        o
    }

    fn cost(&self, choice: usize) -> usize {
        self.preemptions_before + usize::from(self.current.is_some_and(|c| c != choice))
    }
}

#[derive(Debug, Default)]
struct State {
    running: Option<usize>,
    done: Vec<bool>,
    prefix: Vec<usize>,
    trace: Vec<Decision>,
    preemptions: usize,
    clock: u64,
    divergence: Option<String>,
    /// Bumped to start a run.
    generation: u64,
    finished: usize,
    shutdown: bool,
}

impl State {
    /// Picks the next thread to run; records the decision when there is a
    /// choice.
    fn decide(&mut self, current: Option<usize>) -> Option<usize> {
        let runnable: Vec<usize> = (0..self.done.len()).filter(|&t| !self.done[t]).collect();
        match runnable.len() {
            0 => return None,
            1 => return Some(runnable[0]),
            _ => {}
        }
        let mut d = Decision {
            current,
            runnable,
            chosen: 0,
            preemptions_before: self.preemptions,
        };
        let i = self.trace.len();
        d.chosen = match self.prefix.get(i) {
            Some(&c) if d.runnable.contains(&c) => c,
            Some(&c) => {
                self.divergence.get_or_insert(format!(
                    "decision {i}: prefix picks {c}, runnable {:?}",
                    d.runnable
                ));
                d.order()[0]
            }
            None => d.order()[0],
        };
        self.preemptions = d.cost(d.chosen);
        let chosen = d.chosen;
        self.trace.push(d);
        Some(chosen)
    }
}

/// One condition variable per worker, plus one for the coordinator, so a
/// handoff wakes exactly the thread that receives the baton.
struct Baton {
    state: Mutex<State>,
    turn: Vec<Condvar>,
    coordinator: Condvar,
}

impl Baton {
    fn new(threads: usize) -> Self {
        Baton {
            state: Mutex::new(State::default()),
            turn: (0..threads).map(|_| Condvar::new()).collect(),
            coordinator: Condvar::new(),
        }
    }

    fn hand_to(&self, next: Option<usize>) {
        if let Some(n) = next {
            self.turn[n].notify_one();
        }
    }

    fn wait_turn<'a>(&'a self, me: usize, mut g: MutexGuard<'a, State>) -> MutexGuard<'a, State> {
        while g.running != Some(me) {
            g = self.turn[me].wait(g).unwrap();
        }
        g
    }

    /// Decision point reached by running thread `me`.
    fn step(&self, me: usize) {
        let mut g = self.state.lock().unwrap();
        let next = g.decide(Some(me));
        if next != Some(me) {
            g.running = next;
            self.hand_to(next);
            drop(self.wait_turn(me, g));
        }
    }

    fn finish(&self, me: usize) {
        let mut g = self.state.lock().unwrap();
        g.done[me] = true;
        g.finished += 1;
        g.running = g.decide(None);
        self.hand_to(g.running);
        if g.finished == g.done.len() {
            self.coordinator.notify_one();
        }
    }

    fn tick(&self) -> u64 {
        let mut g = self.state.lock().unwrap();
        g.clock += 1;
        g.clock
    }
}

/// Logical clock shared by the threads of one run.
pub struct Clock<'a>(&'a Baton);

impl Clock<'_> {
    /// The next instant; strictly increasing across all threads.
    pub fn tick(&self) -> u64 {
        self.0.tick()
    }
}

/// Outcome of one run of per-thread bodies.
#[derive(Debug)]
pub struct ThreadRun<S, R> {
    /// The choice made at each decision point.
    pub schedule: Vec<usize>,
    pub trace: Vec<Decision>,
    /// What each thread's body returned, by thread.
    pub results: Vec<R>,
    /// The shared state after every thread finished.
    pub state: S,
}

/// Outcome of one run of an operation script.
#[derive(Debug)]
pub struct Run<S, K, V> {
    pub schedule: Vec<usize>,
    pub trace: Vec<Decision>,
    pub history: History<K, V>,
    pub state: S,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExploreReport {
    pub schedules: u64,
    /// Most decision points in one run.
    pub max_decisions: usize,
    /// Every schedule within the bound was run.
    pub complete: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct ExploreConfig {
    pub preemption_bound: usize,
    /// Stop after this many schedules.
    pub max_schedules: u64,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            preemption_bound: 4,
            max_schedules: u64::MAX,
        }
    }
}

/// Body of thread `t`, run against the shared state.
pub type Body<'a, S, R> = &'a (dyn Fn(&S, usize, &Clock<'_>) -> R + Sync);
pub type Exec<'a, S, K, V> = &'a (dyn Fn(&S, &Op<K, V>) -> OpResult<K, V> + Sync);

/// Judges one finished run; an error stops the exploration.
pub type Check<'a, S, K, V> = &'a mut dyn FnMut(&Run<S, K, V>) -> Result<(), String>;

type Slots<R> = Arc<Mutex<Vec<Option<R>>>>;

/// Worker threads that persist across runs.
struct Pool<'a, S, R> {
    baton: Arc<Baton>,
    job: Arc<Mutex<Option<Arc<S>>>>,
    results: Slots<R>,
    threads: usize,
    setup: &'a dyn Fn() -> S,
}

impl<S: Send + Sync, R: Send> Pool<'_, S, R> {
    fn run(&self, prefix: &[usize]) -> Result<ThreadRun<S, R>, String> {
        let shared = Arc::new((self.setup)());
        *self.job.lock().unwrap() = Some(Arc::clone(&shared));
        let mut g = self.baton.state.lock().unwrap();
        let generation = g.generation + 1;
        *g = State {
            done: vec![false; self.threads],
            prefix: prefix.to_vec(),
            generation,
            ..State::default()
        };
        g.running = g.decide(None);
        self.baton.hand_to(g.running);
        while g.finished < self.threads {
            g = self.baton.coordinator.wait(g).unwrap();
        }
        let trace = std::mem::take(&mut g.trace);
        let divergence = g.divergence.take();
        drop(g);
        self.job.lock().unwrap().take();
        let results = std::mem::take(&mut *self.results.lock().unwrap());
        if let Some(d) = divergence {
            return Err(format!("nondeterministic replay: {d}"));
        }
        let state = Arc::into_inner(shared).expect("workers released the state");
        Ok(ThreadRun {
            schedule: trace.iter().map(|d| d.chosen).collect(),
            trace,
            results: results.into_iter().map(|r| r.expect("every thread finished")).collect(),
            state,
        })
    }
}

fn worker<S, R>(t: usize, baton: Arc<Baton>, job: Arc<Mutex<Option<Arc<S>>>>, results: Slots<R>, body: Body<'_, S, R>) {
    let b = Arc::clone(&baton);
    let _hook = hook::install(move |_| b.step(t));
    let mut seen = 0;
    loop {
        // A run starts for this thread when it first receives the baton.
        let mut g = baton.state.lock().unwrap();
        while !g.shutdown && (g.generation == seen || g.running != Some(t)) {
            g = baton.turn[t].wait(g).unwrap();
        }
        if g.shutdown {
            return;
        }
        seen = g.generation;
        let threads = g.done.len();
        drop(g);
        let shared = job
            .lock()
            .unwrap()
            .clone()
            .expect("job posted before the run starts");
        let r = body(&shared, t, &Clock(&baton));
        drop(shared);
        {
            let mut slots = results.lock().unwrap();
            slots.resize_with(threads, || None);
            slots[t] = Some(r);
        }
        baton.finish(t);
    }
}

fn with_pool<S, R, T>(threads: usize, setup: &dyn Fn() -> S, body: Body<'_, S, R>, f: impl FnOnce(&Pool<'_, S, R>) -> T) -> T
where
    S: Send + Sync,
    R: Send,
{
    let pool = Pool {
        baton: Arc::new(Baton::new(threads)),
        job: Arc::new(Mutex::new(None)),
        results: Arc::new(Mutex::new(Vec::new())),
        threads,
        setup,
    };
    std::thread::scope(|s| {
        for t in 0..threads {
            let (baton, job, results) = (Arc::clone(&pool.baton), Arc::clone(&pool.job), Arc::clone(&pool.results));
            s.spawn(move || worker(t, baton, job, results, body));
        }
        let out = f(&pool);
        pool.baton.state.lock().unwrap().shutdown = true;
        pool.baton.turn.iter().for_each(Condvar::notify_one);
        out
    })
}

/// Runs `threads` bodies under the schedule whose first decisions are
/// `prefix`, continuing the current thread after the prefix runs out.
/// `setup` builds fresh shared state.
pub fn run_threads<S: Send + Sync, R: Send>(
    threads: usize,
    prefix: &[usize],
    setup: &dyn Fn() -> S,
    body: Body<'_, S, R>,
) -> Result<ThreadRun<S, R>, String> {
    with_pool(threads, setup, body, |p| p.run(prefix))
}

/// Enumerates every schedule of `threads` bodies with at most the
/// configured number of preemptions, calling `check` on each run. Stops at
/// the first error.
pub fn explore_threads<S: Send + Sync, R: Send>(
    threads: usize,
    config: ExploreConfig,
    setup: &dyn Fn() -> S,
    body: Body<'_, S, R>,
    check: &mut dyn FnMut(ThreadRun<S, R>) -> Result<(), String>,
) -> Result<ExploreReport, String> {
    with_pool(threads, setup, body, |pool| {
        let mut report = ExploreReport::default();
        let mut prefix: Vec<usize> = Vec::new();
        loop {
            let run = pool.run(&prefix)?;
            let trace = run.trace.clone();
            let schedule = run.schedule.clone();
            check(run).map_err(|e| format!("schedule {schedule:?}: {e}"))?;
            report.schedules += 1;
            report.max_decisions = report.max_decisions.max(trace.len());
            if report.schedules >= config.max_schedules {
                return Ok(report);
            }
            let flip = (0..trace.len()).rev().find_map(|i| {
                let d = &trace[i];
                let order = d.order();
                let pos = order.iter().position(|&c| c == d.chosen).unwrap();
                order[pos + 1..]
                    .iter()
                    .find(|&&c| d.cost(c) <= config.preemption_bound)
                    .map(|&c| (i, c))
            });
            match flip {
                None => {
                    report.complete = true;
                    return Ok(report);
                }
                Some((i, c)) => {
                    prefix = trace[..i].iter().map(|d| d.chosen).collect();
                    prefix.push(c);
                }
            }
        }
    })
}

fn script_body<'a, S, K, V>(
    script: &'a [Vec<Op<K, V>>],
    exec: Exec<'a, S, K, V>,
) -> impl Fn(&S, usize, &Clock<'_>) -> Vec<HistoryEvent<K, V>> + Sync + 'a
where
    S: Sync,
    K: Copy + Sync,
    V: Clone + Sync,
{
    move |s, t, clock| {
        script[t]
            .iter()
            .map(|op| {
                let invoke = clock.tick();
                let result = exec(s, op);
                HistoryEvent {
                    thread: t,
                    op: op.clone(),
                    result,
                    invoke,
                    response: clock.tick(),
                }
            })
            .collect()
    }
}

fn into_run<S, K: Copy, V: Clone>(r: ThreadRun<S, Vec<HistoryEvent<K, V>>>) -> Run<S, K, V> {
    let mut events: Vec<_> = r.results.into_iter().flatten().collect();
    events.sort_by_key(|e| e.invoke);
    Run {
        schedule: r.schedule,
        trace: r.trace,
        history: History::new(events),
        state: r.state,
    }
}

/// [`run_threads`] for an operation script, one thread per entry.
pub fn run_schedule<S, K, V>(
    script: &[Vec<Op<K, V>>],
    prefix: &[usize],
    setup: &dyn Fn() -> S,
    exec: Exec<'_, S, K, V>,
) -> Result<Run<S, K, V>, String>
where
    S: Send + Sync,
    K: Copy + Send + Sync,
    V: Clone + Send + Sync,
{
    let body = script_body(script, exec);
    run_threads(script.len(), prefix, setup, &body).map(into_run)
}

/// [`explore_threads`] for an operation script, checking the history of
/// each run.
pub fn explore<S, K, V>(
    script: &[Vec<Op<K, V>>],
    config: ExploreConfig,
    setup: &dyn Fn() -> S,
    exec: Exec<'_, S, K, V>,
    check: Check<'_, S, K, V>,
) -> Result<ExploreReport, String>
where
    S: Send + Sync,
    K: Copy + Send + Sync,
    V: Clone + Send + Sync,
{
    let body = script_body(script, exec);
    explore_threads(script.len(), config, setup, &body, &mut |r| check(&into_run(r)))
}
