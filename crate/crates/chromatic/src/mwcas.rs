//! LLX, SCX and VLX built from single-word compare-and-swap.
//!
//! A [`Record`] has two mutable child links, an immutable payload, a pointer to
//! the descriptor that last froze it, and a monotone finalized flag. An SCX
//! freezes every record of `V` in order by swinging its descriptor pointer from
//! the value seen by the linked LLX to its own descriptor, then marks the
//! records of `R`, swings the target slot, and commits. Any thread that meets an
//! in-progress descriptor helps it to completion, so a stalled thread never
//! blocks others.
//!
//! Memory is reclaimed through epochs. Records removed by a committed SCX and
//! descriptors no longer referenced by any record are freed only after two
//! grace periods: the first lets every operation that could still be helping
//! an SCX naming them finish its current attempt, the second covers helpers
//! that picked up such an SCX before it was decided. Between the two, work
//! waits on a per-thread list that the next [`pin`] hands back to the
//! collector, so reclamation never pins from inside a deferred function.

use crate::hook::{self, Step};
use crossbeam_epoch as epoch;
pub use crossbeam_epoch::Guard;
use smallvec::SmallVec;
use std::cell::{Cell, RefCell};
use std::fmt;
use std::io::{self, Write};
use std::ptr;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicU64, AtomicU8, AtomicUsize, Ordering::SeqCst};
use std::sync::Mutex;

/// Largest `V` an SCX accepts.
pub const MAX_V: usize = 8;

/// A child link of a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Slot {
    Left,
    Right,
}

impl Slot {
    pub const BOTH: [Slot; 2] = [Slot::Left, Slot::Right];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Slot::Left => 0,
            Slot::Right => 1,
        }
    }

    #[inline]
    pub fn flip(self) -> Slot {
        match self {
            Slot::Left => Slot::Right,
            Slot::Right => Slot::Left,
        }
    }
}

/// Whether retired records and descriptors are ever freed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Reclamation {
    #[default]
    Epoch,
    /// Never free anything retired during the structure's lifetime.
    Leak,
}

static NEXT_ID_BLOCK: AtomicU64 = AtomicU64::new(1);
const ID_BLOCK: u64 = 1024;

thread_local! {
    static IDS: Cell<(u64, u64)> = const { Cell::new((0, 0)) };
}

fn next_id() -> u64 {
    IDS.with(|c| {
        let (next, end) = c.get();
        if next < end {
            c.set((next + 1, end));
            next
        } else {
            let start = NEXT_ID_BLOCK.fetch_add(ID_BLOCK, SeqCst);
            c.set((start + 1, start + ID_BLOCK));
            start
        }
    })
}

/// A record with two mutable child links and an immutable payload.
pub struct Record<T> {
    id: u64,
    payload: T,
    children: [AtomicPtr<Record<T>>; 2],
    info: AtomicPtr<Descriptor<T>>,
    marked: AtomicBool,
}

unsafe impl<T: Send + Sync> Send for Record<T> {}
unsafe impl<T: Send + Sync> Sync for Record<T> {}

impl<T> Record<T> {
    pub(crate) fn alloc(payload: T, children: [*mut Record<T>; 2]) -> *mut Record<T> {
        Box::into_raw(Box::new(Record {
            id: next_id(),
            payload,
            children: [AtomicPtr::new(children[0]), AtomicPtr::new(children[1])],
            info: AtomicPtr::new(ptr::null_mut()),
            marked: AtomicBool::new(false),
        }))
    }

    /// Process-unique identifier, stable for the record's lifetime.
    #[inline]
    pub fn id(&self) -> u64 {
        self.id
    }

    #[inline]
    pub fn payload(&self) -> &T {
        &self.payload
    }

    /// Reads one child link directly.
    #[inline]
    pub fn read_field<'g>(&'g self, slot: Slot, _guard: &'g Guard) -> Option<&'g Record<T>> {
        hook::step(Step::ReadChild);
        unsafe { self.children[slot.index()].load(SeqCst).as_ref() }
    }

    /// True once a committed SCX has removed this record.
    pub fn is_finalized(&self) -> bool {
        self.marked.load(SeqCst)
    }

    pub(crate) fn child_ptr(&self, slot: Slot) -> *mut Record<T> {
        self.children[slot.index()].load(SeqCst)
    }
}

impl<T> PartialEq for Record<T> {
    fn eq(&self, other: &Self) -> bool {
        ptr::eq(self, other)
    }
}

impl<T: fmt::Debug> fmt::Debug for Record<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Record")
            .field("id", &self.id)
            .field("payload", &self.payload)
            .finish()
    }
}

/// Lifecycle of an SCX.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScxState {
    InProgress,
    Committed,
    Aborted,
}

const IN_PROGRESS: u8 = 0;
const COMMITTED: u8 = 1;
const ABORTED: u8 = 2;

fn decode(s: u8) -> ScxState {
    match s {
        IN_PROGRESS => ScxState::InProgress,
        COMMITTED => ScxState::Committed,
        _ => ScxState::Aborted,
    }
}

/// An SCX in flight. Immutable after publication apart from the atomics.
pub struct Descriptor<T> {
    state: AtomicU8,
    all_frozen: AtomicBool,
    /// Records whose `info` points here, plus one held by the owner until its
    /// SCX returns.
    refs: AtomicUsize,
    len: usize,
    nodes: [*mut Record<T>; MAX_V],
    expected: [*mut Descriptor<T>; MAX_V],
    finalize: u32,
    target: *mut Record<T>,
    slot: Slot,
    old: *mut Record<T>,
    new: *mut Record<T>,
    fresh: SmallVec<[*mut Record<T>; 8]>,
    pc: Option<u16>,
}

impl<T> Descriptor<T> {
    fn state(&self) -> ScxState {
        hook::step(Step::ReadState);
        decode(self.state.load(SeqCst))
    }

    fn try_acquire(&self) -> bool {
        let mut c = self.refs.load(SeqCst);
        loop {
            if c == 0 {
                return false;
            }
            match self.refs.compare_exchange_weak(c, c + 1, SeqCst, SeqCst) {
                Ok(_) => return true,
                Err(now) => c = now,
            }
        }
    }
}

struct SendPtr<P>(P);
unsafe impl<P> Send for SendPtr<P> {}

type Job = Box<dyn FnOnce() + Send>;

/// Work that has waited out part of its grace periods and must be handed to
/// the collector again. Deferred functions only ever push here; they never
/// pin, because pinning may run further deferred functions.
struct Staged(RefCell<Vec<Job>>);

impl Drop for Staged {
    fn drop(&mut self) {
        let jobs = std::mem::take(self.0.get_mut());
        if !jobs.is_empty() {
            let guard = epoch::pin();
            defer_all(&guard, jobs);
        }
    }
}

thread_local! {
    static STAGED: Staged = const { Staged(RefCell::new(Vec::new())) };
}

/// Jobs staged by threads whose local list was already gone.
static ORPHANS: Mutex<Vec<Job>> = Mutex::new(Vec::new());
static HAS_ORPHANS: AtomicBool = AtomicBool::new(false);

fn stage(job: Job) {
    let mut job = Some(job);
    let _ = STAGED.try_with(|s| {
        if let Ok(mut v) = s.0.try_borrow_mut() {
            v.push(job.take().unwrap());
        }
    });
    if let Some(j) = job {
        ORPHANS.lock().unwrap_or_else(|e| e.into_inner()).push(j);
        HAS_ORPHANS.store(true, SeqCst);
    }
}

fn defer_all(guard: &Guard, jobs: Vec<Job>) {
    for j in jobs {
        guard.defer(j);
    }
}

/// Pins the current thread and hands its staged jobs to the collector.
pub fn pin() -> Guard {
    let guard = epoch::pin();
    let jobs = STAGED
        .try_with(|s| s.0.try_borrow_mut().map(|mut v| std::mem::take(&mut *v)).unwrap_or_default())
        .unwrap_or_default();
    defer_all(&guard, jobs);
    if HAS_ORPHANS.load(SeqCst) && HAS_ORPHANS.swap(false, SeqCst) {
        let orphans = std::mem::take(&mut *ORPHANS.lock().unwrap_or_else(|e| e.into_inner()));
        defer_all(&guard, orphans);
    }
    guard
}

/// Runs `f` after two grace periods, counted from the next [`pin`] on this
/// thread.
fn defer_twice(f: impl FnOnce() + Send + 'static) {
    stage(Box::new(move || stage(Box::new(f))));
}

unsafe fn release<T: Send + Sync + 'static>(d: *mut Descriptor<T>, policy: Reclamation) {
    if (*d).refs.fetch_sub(1, SeqCst) == 1 && policy == Reclamation::Epoch {
        let p = SendPtr(d);
        defer_twice(move || {
            let p = p;
            drop(Box::from_raw(p.0));
        });
    }
}

unsafe fn free_record<T: Send + Sync + 'static>(r: *mut Record<T>, policy: Reclamation) {
    let rec = Box::from_raw(r);
    let info = rec.info.load(SeqCst);
    drop(rec);
    if !info.is_null() {
        release(info, policy);
    }
}

fn retire_record<T: Send + Sync + 'static>(r: *mut Record<T>, policy: Reclamation) {
    if policy == Reclamation::Leak {
        return;
    }
    let p = SendPtr(r);
    defer_twice(move || {
        let p = p;
        unsafe { free_record(p.0, Reclamation::Epoch) }
    });
}

/// Frees every record reachable from `root`. The caller must own the whole
/// structure exclusively.
pub(crate) unsafe fn free_reachable<T: Send + Sync + 'static>(root: *mut Record<T>, policy: Reclamation) {
    let mut stack = vec![root];
    while let Some(r) = stack.pop() {
        if r.is_null() {
            continue;
        }
        for s in Slot::BOTH {
            stack.push((*r).child_ptr(s));
        }
        free_record(r, policy);
    }
}

/// One committed SCX as written to the descriptor-history dump.
///
/// Line format, whitespace separated:
/// `scx <seq> <target> <L|R> <old|-> <new> R=<id,..|-> N=<id>:<left|->:<right|->,.. pc=<ok|-|n,..>`
/// where `N` lists the fresh records with their children at commit time and
/// `pc` carries the template validator's verdict when one was computed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScxRecord {
    pub seq: u64,
    pub target: u64,
    pub slot: Slot,
    pub old: Option<u64>,
    pub new: u64,
    pub removed: Vec<u64>,
    pub fresh: Vec<(u64, Option<u64>, Option<u64>)>,
    /// `None` when not validated; otherwise the violated postcondition numbers.
    pub pc: Option<Vec<u8>>,
}

fn opt_id(f: &mut fmt::Formatter<'_>, v: Option<u64>) -> fmt::Result {
    match v {
        Some(id) => write!(f, "{id}"),
        None => f.write_str("-"),
    }
}

impl fmt::Display for ScxRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let slot = match self.slot {
            Slot::Left => "L",
            Slot::Right => "R",
        };
        write!(f, "scx {} {} {} ", self.seq, self.target, slot)?;
        opt_id(f, self.old)?;
        write!(f, " {} R=", self.new)?;
        if self.removed.is_empty() {
            f.write_str("-")?;
        }
        for (i, id) in self.removed.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{id}")?;
        }
        f.write_str(" N=")?;
        for (i, (id, l, r)) in self.fresh.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{id}:")?;
            opt_id(f, *l)?;
            f.write_str(":")?;
            opt_id(f, *r)?;
        }
        f.write_str(" pc=")?;
        match &self.pc {
            None => f.write_str("-"),
            Some(v) if v.is_empty() => f.write_str("ok"),
            Some(v) => {
                for (i, n) in v.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{n}")?;
                }
                Ok(())
            }
        }
    }
}

/// Malformed descriptor-history line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseRecordError(pub String);

impl fmt::Display for ParseRecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "malformed scx record: {}", self.0)
    }
}

impl std::error::Error for ParseRecordError {}

fn parse_opt(s: &str) -> Result<Option<u64>, ParseRecordError> {
    if s == "-" {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| ParseRecordError(s.to_string()))
    }
}

fn parse_id(s: &str) -> Result<u64, ParseRecordError> {
    s.parse().map_err(|_| ParseRecordError(s.to_string()))
}

impl FromStr for ScxRecord {
    type Err = ParseRecordError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let bad = || ParseRecordError(line.to_string());
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 9 || t[0] != "scx" {
            return Err(bad());
        }
        let slot = match t[3] {
            "L" => Slot::Left,
            "R" => Slot::Right,
            _ => return Err(bad()),
        };
        let removed_s = t[6].strip_prefix("R=").ok_or_else(bad)?;
        let removed = if removed_s == "-" {
            Vec::new()
        } else {
            removed_s.split(',').map(parse_id).collect::<Result<_, _>>()?
        };
        let fresh_s = t[7].strip_prefix("N=").ok_or_else(bad)?;
        let mut fresh = Vec::new();
        for part in fresh_s.split(',').filter(|p| !p.is_empty()) {
            let f: Vec<&str> = part.split(':').collect();
            if f.len() != 3 {
                return Err(bad());
            }
            fresh.push((parse_id(f[0])?, parse_opt(f[1])?, parse_opt(f[2])?));
        }
        let pc_s = t[8].strip_prefix("pc=").ok_or_else(bad)?;
        let pc = match pc_s {
            "-" => None,
            "ok" => Some(Vec::new()),
            s => Some(
                s.split(',')
                    .map(|n| n.parse::<u8>().map_err(|_| bad()))
                    .collect::<Result<_, _>>()?,
            ),
        };
        Ok(ScxRecord {
            seq: parse_id(t[1])?,
            target: parse_id(t[2])?,
            slot,
            old: parse_opt(t[4])?,
            new: parse_id(t[5])?,
            removed,
            fresh,
            pc,
        })
    }
}

/// Sink for the descriptor-history dump. Slot swings are serialized through its
/// lock so that line order is commit order.
pub struct ScxLog {
    inner: Mutex<LogInner>,
}

struct LogInner {
    seq: u64,
    out: Box<dyn Write + Send>,
    error: Option<io::Error>,
}

impl ScxLog {
    pub fn new(out: Box<dyn Write + Send>) -> Self {
        ScxLog {
            inner: Mutex::new(LogInner {
                seq: 0,
                out,
                error: None,
            }),
        }
    }

    /// Number of records written so far.
    pub fn len(&self) -> u64 {
        self.inner.lock().unwrap().seq
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flushes the sink and reports the first write error, if any.
    pub fn flush(&self) -> io::Result<()> {
        let mut g = self.inner.lock().unwrap();
        if let Some(e) = g.error.take() {
            return Err(e);
        }
        g.out.flush()
    }
}

/// Shared configuration for one structure: reclamation policy and optional
/// history dump.
pub struct Domain<T> {
    policy: Reclamation,
    log: Option<ScxLog>,
    _marker: std::marker::PhantomData<fn() -> T>,
}

impl<T: Send + Sync + 'static> Domain<T> {
    pub fn new(policy: Reclamation, log: Option<ScxLog>) -> Self {
        Domain {
            policy,
            log,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn policy(&self) -> Reclamation {
        self.policy
    }

    pub fn log(&self) -> Option<&ScxLog> {
        self.log.as_ref()
    }

    unsafe fn swing(&self, d: &Descriptor<T>) {
        let target = &*d.target;
        let cell = &target.children[d.slot.index()];
        hook::step(Step::SlotCas);
        match &self.log {
            None => {
                let _ = cell.compare_exchange(d.old, d.new, SeqCst, SeqCst);
            }
            Some(log) => {
                let mut g = log.inner.lock().unwrap();
                if cell.compare_exchange(d.old, d.new, SeqCst, SeqCst).is_ok() {
                    g.seq += 1;
                    let rec = record_of(d, g.seq);
                    if let Err(e) = writeln!(g.out, "{rec}") {
                        g.error.get_or_insert(e);
                    }
                }
            }
        }
    }

    /// Drives `dp` to a decision. Returns true iff it committed.
    unsafe fn help(&self, dp: *mut Descriptor<T>) -> bool {
        let d = &*dp;
        for i in 0..d.len {
            let r = &*d.nodes[i];
            let exp = d.expected[i];
            if !d.try_acquire() {
                // Nobody references it any more, so it was decided long ago.
                return d.state() == ScxState::Committed;
            }
            hook::step(Step::FreezeCas);
            match r.info.compare_exchange(exp, dp, SeqCst, SeqCst) {
                Ok(_) => {
                    if !exp.is_null() {
                        release(exp, self.policy);
                    }
                }
                Err(cur) => {
                    release(dp, self.policy);
                    if cur != dp {
                        hook::step(Step::ReadAllFrozen);
                        if d.all_frozen.load(SeqCst) {
                            return true;
                        }
                        hook::step(Step::SetState);
                        let _ = d.state.compare_exchange(IN_PROGRESS, ABORTED, SeqCst, SeqCst);
                        return d.state() == ScxState::Committed;
                    }
                }
            }
        }
        hook::step(Step::SetAllFrozen);
        d.all_frozen.store(true, SeqCst);
        for i in 0..d.len {
            if d.finalize & (1 << i) != 0 {
                hook::step(Step::Mark);
                (*d.nodes[i]).marked.store(true, SeqCst);
            }
        }
        self.swing(d);
        hook::step(Step::SetState);
        let _ = d.state.compare_exchange(IN_PROGRESS, COMMITTED, SeqCst, SeqCst);
        true
    }
}

unsafe fn record_of<T>(d: &Descriptor<T>, seq: u64) -> ScxRecord {
    let id_of = |p: *mut Record<T>| p.as_ref().map(|r| r.id);
    ScxRecord {
        seq,
        target: (*d.target).id,
        slot: d.slot,
        old: id_of(d.old),
        new: (*d.new).id,
        removed: (0..d.len)
            .filter(|i| d.finalize & (1 << i) != 0)
            .map(|i| (*d.nodes[i]).id)
            .collect(),
        fresh: d
            .fresh
            .iter()
            .map(|&p| {
                let r = &*p;
                (r.id, id_of(r.child_ptr(Slot::Left)), id_of(r.child_ptr(Slot::Right)))
            })
            .collect(),
        pc: d.pc.map(|mask| (1..=15u8).filter(|n| mask & (1 << n) != 0).collect()),
    }
}

/// Result of an LLX.
pub enum Llx<'g, T> {
    Snapshot([Option<&'g Record<T>>; 2]),
    Fail,
    Finalized,
}

impl<'g, T> Llx<'g, T> {
    pub fn snapshot(self) -> Option<[Option<&'g Record<T>>; 2]> {
        match self {
            Llx::Snapshot(s) => Some(s),
            _ => None,
        }
    }
}

impl<T> fmt::Debug for Llx<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Llx::Snapshot(s) => write!(
                f,
                "Snapshot({:?}, {:?})",
                s[0].map(Record::id),
                s[1].map(Record::id)
            ),
            Llx::Fail => f.write_str("Fail"),
            Llx::Finalized => f.write_str("Finalized"),
        }
    }
}

/// A child reference used when building fresh records.
#[derive(Clone, Copy)]
pub enum Child<'g, T> {
    Nil,
    Old(&'g Record<T>),
    /// Index of an earlier record in the same [`Fresh`] set.
    New(usize),
}

/// Records allocated for one SCX. The last record added is the new subtree's
/// root. Records are freed on drop unless an SCX published them.
pub struct Fresh<T: Send + Sync + 'static> {
    nodes: SmallVec<[*mut Record<T>; 8]>,
}

impl<T: Send + Sync + 'static> Default for Fresh<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Send + Sync + 'static> Fresh<T> {
    pub fn new() -> Self {
        Fresh {
            nodes: SmallVec::new(),
        }
    }

    pub fn add(&mut self, payload: T, left: Child<'_, T>, right: Child<'_, T>) -> usize {
        let resolve = |c: Child<'_, T>| match c {
            Child::Nil => ptr::null_mut(),
            Child::Old(r) => r as *const Record<T> as *mut Record<T>,
            Child::New(i) => self.nodes[i],
        };
        let p = Record::alloc(payload, [resolve(left), resolve(right)]);
        self.nodes.push(p);
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The record at `i`, valid while `self` is alive.
    pub fn get(&self, i: usize) -> &Record<T> {
        unsafe { &*self.nodes[i] }
    }

    pub fn root(&self) -> Option<&Record<T>> {
        self.nodes.last().map(|&p| unsafe { &*p })
    }

    fn publish(mut self) {
        self.nodes.clear();
    }
}

impl<T: Send + Sync + 'static> Drop for Fresh<T> {
    fn drop(&mut self) {
        for &p in &self.nodes {
            unsafe { drop(Box::from_raw(p)) };
        }
    }
}

/// Records built outside any map from a [`Fresh`] set, whose last record is
/// the root. Everything reachable from the root is freed on drop; records an
/// SCX removed are reclaimed by that SCX.
pub struct Arena<T: Send + Sync + 'static> {
    root: *mut Record<T>,
}

unsafe impl<T: Send + Sync + 'static> Send for Arena<T> {}
unsafe impl<T: Send + Sync + 'static> Sync for Arena<T> {}

impl<T: Send + Sync + 'static> Arena<T> {
    pub fn new(fresh: Fresh<T>) -> Self {
        let root = *fresh.nodes.last().expect("an arena needs a root");
        fresh.publish();
        Arena { root }
    }

    pub fn root<'g>(&'g self, _guard: &'g Guard) -> &'g Record<T> {
        unsafe { &*self.root }
    }
}

impl<T: Send + Sync + 'static> Drop for Arena<T> {
    fn drop(&mut self) {
        unsafe { free_reachable(self.root, Reclamation::Epoch) }
    }
}

struct Link<T> {
    rec: *const Record<T>,
    info: *mut Descriptor<T>,
    snap: [*mut Record<T>; 2],
}

/// Caller-local LLX link table for one operation attempt, bound to a pinned
/// epoch guard.
pub struct Session<'g, T: Send + Sync + 'static> {
    domain: &'g Domain<T>,
    guard: &'g Guard,
    links: SmallVec<[Link<T>; 8]>,
}

impl<'g, T: Send + Sync + 'static> Session<'g, T> {
    pub fn new(domain: &'g Domain<T>, guard: &'g Guard) -> Self {
        Session {
            domain,
            guard,
            links: SmallVec::new(),
        }
    }

    pub fn guard(&self) -> &'g Guard {
        self.guard
    }

    pub fn domain(&self) -> &'g Domain<T> {
        self.domain
    }

    fn find_link(&self, r: &Record<T>) -> Option<&Link<T>> {
        self.links.iter().rev().find(|l| ptr::eq(l.rec, r))
    }

    fn unlink(&mut self, v: &[&Record<T>]) {
        self.links.retain(|l| !v.iter().any(|r| ptr::eq(l.rec, *r)));
    }

    /// The snapshot recorded by the live linked LLX of `r`, if any.
    pub fn linked(&self, r: &Record<T>) -> Option<[Option<&'g Record<T>>; 2]> {
        self.find_link(r)
            .map(|l| unsafe { [l.snap[0].as_ref(), l.snap[1].as_ref()] })
    }

    fn state_of(d: *mut Descriptor<T>) -> ScxState {
        if d.is_null() {
            ScxState::Aborted
        } else {
            unsafe { (*d).state() }
        }
    }

    /// Attempts a snapshot of `r`'s child links and links it for a later SCX or VLX.
    pub fn llx(&mut self, r: &'g Record<T>) -> Llx<'g, T> {
        hook::step(Step::ReadMarked);
        let marked1 = r.marked.load(SeqCst);
        hook::step(Step::ReadInfo);
        let rinfo = r.info.load(SeqCst);
        let state = Self::state_of(rinfo);
        hook::step(Step::ReadMarked);
        let marked2 = r.marked.load(SeqCst);
        if state == ScxState::Aborted || (state == ScxState::Committed && !marked2) {
            hook::step(Step::ReadChild);
            let left = r.children[0].load(SeqCst);
            hook::step(Step::ReadChild);
            let right = r.children[1].load(SeqCst);
            hook::step(Step::ReadInfo);
            if r.info.load(SeqCst) == rinfo {
                self.links.retain(|l| !ptr::eq(l.rec, r));
                self.links.push(Link {
                    rec: r,
                    info: rinfo,
                    snap: [left, right],
                });
                return unsafe { Llx::Snapshot([left.as_ref(), right.as_ref()]) };
            }
        }
        if marked1 {
            let st = Self::state_of(rinfo);
            if st == ScxState::Committed
                || (st == ScxState::InProgress && unsafe { self.domain.help(rinfo) })
            {
                return Llx::Finalized;
            }
        }
        hook::step(Step::ReadInfo);
        let cur = r.info.load(SeqCst);
        if Self::state_of(cur) == ScxState::InProgress {
            unsafe { self.domain.help(cur) };
        }
        Llx::Fail
    }

    /// Atomically swings `fld` to the root of `fresh` and finalizes `r`,
    /// provided no member of `v` changed since its linked LLX.
    pub fn scx(
        &mut self,
        v: &[&'g Record<T>],
        r: &[&'g Record<T>],
        fld: (&'g Record<T>, Slot),
        fresh: Fresh<T>,
    ) -> bool {
        self.scx_annotated(v, r, fld, fresh, None)
    }

    /// [`Session::scx`] carrying a validator verdict for the history dump,
    /// encoded as a bit mask of violated postcondition numbers.
    pub fn scx_annotated(
        &mut self,
        v: &[&'g Record<T>],
        r: &[&'g Record<T>],
        fld: (&'g Record<T>, Slot),
        fresh: Fresh<T>,
        pc: Option<u16>,
    ) -> bool {
        assert!(!v.is_empty() && v.len() <= MAX_V, "|V| must be in 1..={MAX_V}");
        let Some(&new) = fresh.nodes.last() else {
            panic!("scx needs at least one fresh record");
        };
        let mut nodes = [ptr::null_mut(); MAX_V];
        let mut expected = [ptr::null_mut(); MAX_V];
        for (i, node) in v.iter().enumerate() {
            match self.find_link(node) {
                Some(l) => {
                    nodes[i] = *node as *const Record<T> as *mut Record<T>;
                    expected[i] = l.info;
                }
                None => {
                    debug_assert!(false, "scx over a record without a linked llx");
                    return false;
                }
            }
        }
        let mut finalize = 0u32;
        let mut from = 0;
        for x in r {
            match (from..v.len()).find(|&i| ptr::eq(v[i], *x)) {
                Some(i) => {
                    finalize |= 1 << i;
                    from = i + 1;
                }
                None => {
                    debug_assert!(false, "R must be a subsequence of V");
                    return false;
                }
            }
        }
        let (target, slot) = fld;
        debug_assert!(v.iter().any(|x| ptr::eq(*x, target)), "target must be in V");
        let old = self.find_link(target).map(|l| l.snap[slot.index()]).unwrap_or(ptr::null_mut());
        let d = Descriptor {
            state: AtomicU8::new(IN_PROGRESS),
            all_frozen: AtomicBool::new(false),
            refs: AtomicUsize::new(1),
            len: v.len(),
            nodes,
            expected,
            finalize,
            target: target as *const Record<T> as *mut Record<T>,
            slot,
            old,
            new,
            fresh: fresh.nodes.clone(),
            pc,
        };
        let dp = Box::into_raw(Box::new(d));
        let ok = unsafe { self.domain.help(dp) };
        self.unlink(v);
        if ok {
            fresh.publish();
            for x in r {
                retire_record(*x as *const Record<T> as *mut Record<T>, self.domain.policy);
            }
        } else {
            drop(fresh);
        }
        unsafe { release(dp, self.domain.policy) };
        ok
    }

    /// True iff no member of `v` changed since its linked LLX.
    pub fn vlx(&mut self, v: &[&'g Record<T>]) -> bool {
        let mut ok = true;
        for r in v {
            let Some(link) = self.find_link(r) else {
                debug_assert!(false, "vlx over a record without a linked llx");
                ok = false;
                break;
            };
            let info = link.info;
            hook::step(Step::ReadInfo);
            if r.info.load(SeqCst) != info {
                ok = false;
                break;
            }
        }
        self.unlink(v);
        ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(v: u32) -> *mut Record<u32> {
        Record::alloc(v, [ptr::null_mut(), ptr::null_mut()])
    }

    struct Tree {
        root: *mut Record<u32>,
    }

    impl Drop for Tree {
        fn drop(&mut self) {
            unsafe { free_reachable(self.root, Reclamation::Epoch) }
        }
    }

    fn small() -> Tree {
        let a = leaf(1);
        let b = leaf(2);
        Tree {
            root: Record::alloc(0, [a, b]),
        }
    }

    #[test]
    fn llx_on_quiescent_leaf_gives_null_children() {
        let dom = Domain::new(Reclamation::Epoch, None);
        let t = small();
        let g = epoch::pin();
        let mut s = Session::new(&dom, &g);
        let root = unsafe { &*t.root };
        let l = root.read_field(Slot::Left, &g).unwrap();
        match s.llx(l) {
            Llx::Snapshot([a, b]) => assert!(a.is_none() && b.is_none()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scx_swings_slot_and_finalizes_removed() {
        let dom = Domain::new(Reclamation::Epoch, None);
        let t = small();
        let g = epoch::pin();
        let mut s = Session::new(&dom, &g);
        let root = unsafe { &*t.root };
        let old = root.read_field(Slot::Left, &g).unwrap();
        s.llx(root).snapshot().unwrap();
        s.llx(old).snapshot().unwrap();
        let mut f = Fresh::new();
        f.add(7, Child::Nil, Child::Nil);
        assert!(s.scx(&[root, old], &[old], (root, Slot::Left), f));
        assert_eq!(*root.read_field(Slot::Left, &g).unwrap().payload(), 7);
        assert!(matches!(s.llx(old), Llx::Finalized));
        assert!(old.is_finalized());
    }

    #[test]
    fn scx_fails_after_interfering_commit() {
        let dom = Domain::new(Reclamation::Epoch, None);
        let t = small();
        let g = epoch::pin();
        let root = unsafe { &*t.root };
        let mut a = Session::new(&dom, &g);
        let mut b = Session::new(&dom, &g);
        let r = root.read_field(Slot::Right, &g).unwrap();
        a.llx(root).snapshot().unwrap();
        a.llx(r).snapshot().unwrap();
        b.llx(root).snapshot().unwrap();
        let mut f = Fresh::new();
        f.add(9, Child::Nil, Child::Nil);
        assert!(b.scx(&[root], &[], (root, Slot::Left), f));
        let left_before = root.read_field(Slot::Left, &g).unwrap().id();
        let right_before = root.read_field(Slot::Right, &g).unwrap().id();
        let mut f = Fresh::new();
        f.add(5, Child::Nil, Child::Nil);
        assert!(!a.scx(&[root, r], &[r], (root, Slot::Right), f));
        assert_eq!(root.read_field(Slot::Left, &g).unwrap().id(), left_before);
        assert_eq!(root.read_field(Slot::Right, &g).unwrap().id(), right_before);
        assert!(!r.is_finalized());
    }

    #[test]
    fn vlx_detects_change() {
        let dom = Domain::new(Reclamation::Epoch, None);
        let t = small();
        let g = epoch::pin();
        let root = unsafe { &*t.root };
        let mut a = Session::new(&dom, &g);
        a.llx(root).snapshot().unwrap();
        assert!(a.vlx(&[root]));
        a.llx(root).snapshot().unwrap();
        let mut b = Session::new(&dom, &g);
        b.llx(root).snapshot().unwrap();
        let mut f = Fresh::new();
        f.add(3, Child::Nil, Child::Nil);
        assert!(b.scx(&[root], &[], (root, Slot::Right), f));
        assert!(!a.vlx(&[root]));
    }

    #[test]
    fn finalized_stays_finalized() {
        let dom = Domain::new(Reclamation::Leak, None);
        let t = small();
        let g = epoch::pin();
        let root = unsafe { &*t.root };
        let l = root.read_field(Slot::Left, &g).unwrap();
        let mut s = Session::new(&dom, &g);
        s.llx(root).snapshot().unwrap();
        s.llx(l).snapshot().unwrap();
        let mut f = Fresh::new();
        f.add(4, Child::Nil, Child::Nil);
        assert!(s.scx(&[root, l], &[l], (root, Slot::Left), f));
        for _ in 0..3 {
            assert!(matches!(s.llx(l), Llx::Finalized));
        }
        // Leak policy: the removed leaf is never freed.
        assert_eq!(*l.payload(), 1);
    }

    #[test]
    fn fresh_subtree_links_old_records() {
        let dom = Domain::new(Reclamation::Epoch, None);
        let t = small();
        let g = epoch::pin();
        let root = unsafe { &*t.root };
        let l = root.read_field(Slot::Left, &g).unwrap();
        let mut s = Session::new(&dom, &g);
        s.llx(root).snapshot().unwrap();
        let mut f = Fresh::new();
        let n = f.add(8, Child::Nil, Child::Nil);
        f.add(10, Child::Old(l), Child::New(n));
        assert!(s.scx(&[root], &[], (root, Slot::Left), f));
        let top = root.read_field(Slot::Left, &g).unwrap();
        assert_eq!(*top.payload(), 10);
        assert!(ptr::eq(top.read_field(Slot::Left, &g).unwrap(), l));
        assert_eq!(*top.read_field(Slot::Right, &g).unwrap().payload(), 8);
    }

    #[test]
    fn history_dump_round_trips_and_orders_commits() {
        #[derive(Clone, Default)]
        struct Buf(std::sync::Arc<Mutex<Vec<u8>>>);
        impl Write for Buf {
            fn write(&mut self, b: &[u8]) -> io::Result<usize> {
                self.0.lock().unwrap().extend_from_slice(b);
                Ok(b.len())
            }
            fn flush(&mut self) -> io::Result<()> {
                Ok(())
            }
        }
        let buf = Buf::default();
        let dom = Domain::new(Reclamation::Epoch, Some(ScxLog::new(Box::new(buf.clone()))));
        let t = small();
        let g = epoch::pin();
        let root = unsafe { &*t.root };
        let l = root.read_field(Slot::Left, &g).unwrap();
        let r = root.read_field(Slot::Right, &g).unwrap().id();
        let mut s = Session::new(&dom, &g);
        s.llx(root).snapshot().unwrap();
        s.llx(l).snapshot().unwrap();
        let mut f = Fresh::new();
        f.add(4, Child::Nil, Child::Nil);
        assert!(s.scx_annotated(&[root, l], &[l], (root, Slot::Left), f, Some(0)));
        s.llx(root).snapshot().unwrap();
        let mut f = Fresh::new();
        f.add(5, Child::Nil, Child::Nil);
        assert!(s.scx_annotated(&[root], &[], (root, Slot::Right), f, Some(1 << 8)));
        dom.log().unwrap().flush().unwrap();
        let text = String::from_utf8(buf.0.lock().unwrap().clone()).unwrap();
        let recs: Vec<ScxRecord> = text.lines().map(|l| l.parse().unwrap()).collect();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].seq, 1);
        assert_eq!(recs[0].removed, vec![l.id()]);
        assert_eq!(recs[0].pc, Some(vec![]));
        assert_eq!(recs[1].pc, Some(vec![8]));
        assert_eq!(recs[1].old, Some(r));
        for r in &recs {
            assert_eq!(r.to_string().parse::<ScxRecord>().unwrap(), *r);
        }
    }
}
