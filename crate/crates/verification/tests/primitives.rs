//! Exhaustive small-scope interleavings of LLX, SCX, VLX, direct reads and
//! the update template.

use chromatic::mwcas::{pin, Arena, Child, Domain, Fresh, Llx, Reclamation, Record, Session, Slot};
use chromatic::template::{execute_template, ScxArgumentBundle, Sigma, TemplateSpec, Update};
use chromatic_verify::explorer::{explore_threads, Clock, ExploreConfig, ExploreReport, ThreadRun};

/// `root(a, b)`, with `a(a1, a2)` and `b(b1, b2)` when `deep`.
struct Inst {
    dom: Domain<u32>,
    arena: Arena<u32>,
}

impl Inst {
    fn new(deep: bool) -> Self {
        let mut f = Fresh::new();
        let (a, b) = if deep {
            let a1 = f.add(11, Child::Nil, Child::Nil);
            let a2 = f.add(12, Child::Nil, Child::Nil);
            let a = f.add(1, Child::New(a1), Child::New(a2));
            let b1 = f.add(21, Child::Nil, Child::Nil);
            let b2 = f.add(22, Child::Nil, Child::Nil);
            let b = f.add(2, Child::New(b1), Child::New(b2));
            (a, b)
        } else {
            (f.add(1, Child::Nil, Child::Nil), f.add(2, Child::Nil, Child::Nil))
        };
        f.add(0, Child::New(a), Child::New(b));
        Inst {
            dom: Domain::new(Reclamation::Epoch, None),
            arena: Arena::new(f),
        }
    }

    /// Payloads of the records reachable from the root, in preorder.
    fn shape(&self) -> Vec<u32> {
        let g = pin();
        let mut out = Vec::new();
        let mut stack = vec![self.arena.root(&g)];
        while let Some(r) = stack.pop() {
            out.push(*r.payload());
            for s in [Slot::Right, Slot::Left] {
                stack.extend(r.read_field(s, &g));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum L {
    Snap(Option<u32>, Option<u32>),
    Fail,
    Finalized,
}

fn llx<'g>(s: &mut Session<'g, u32>, r: &'g Record<u32>) -> L {
    match s.llx(r) {
        Llx::Snapshot([x, y]) => L::Snap(x.map(|n| *n.payload()), y.map(|n| *n.payload())),
        Llx::Fail => L::Fail,
        Llx::Finalized => L::Finalized,
    }
}

fn leaf(v: u32) -> Fresh<u32> {
    let mut f = Fresh::new();
    f.add(v, Child::Nil, Child::Nil);
    f
}

/// LLX `parent` and its `slot` child, then swing that slot to a fresh leaf
/// `v`, removing the child. Returns the linked child's payload, if both LLXs
/// gave snapshots, and whether the SCX committed.
fn replace_child(inst: &Inst, parent_path: &[Slot], slot: Slot, v: u32) -> (Option<u32>, bool) {
    let g = pin();
    let mut s = Session::new(&inst.dom, &g);
    let mut p = inst.arena.root(&g);
    for &step in parent_path {
        p = p.read_field(step, &g).unwrap();
    }
    let Llx::Snapshot(ps) = s.llx(p) else { return (None, false) };
    let c = ps[slot.index()].unwrap();
    if s.llx(c).snapshot().is_none() {
        return (None, false);
    }
    (Some(*c.payload()), s.scx(&[p, c], &[c], (p, slot), leaf(v)))
}

fn run<R: Send>(
    threads: usize,
    bound: usize,
    deep: bool,
    body: &(dyn Fn(&Inst, usize, &Clock<'_>) -> R + Sync),
    check: &mut dyn FnMut(ThreadRun<Inst, R>) -> Result<(), String>,
) -> ExploreReport {
    let r = explore_threads(
        threads,
        ExploreConfig {
            preemption_bound: bound,
            ..ExploreConfig::default()
        },
        &|| Inst::new(deep),
        body,
        check,
    )
    .unwrap_or_else(|e| panic!("{e}"));
    assert!(r.complete, "{r:?}");
    r
}

#[test]
fn llx_overlapping_scx_is_never_torn() {
    let r = run(
        2,
        4,
        false,
        &|inst, t, _| {
            if t == 0 {
                (replace_child(inst, &[], Slot::Left, 7).1, L::Fail)
            } else {
                let g = pin();
                let mut s = Session::new(&inst.dom, &g);
                (false, llx(&mut s, inst.arena.root(&g)))
            }
        },
        &mut |run| {
            let (committed, seen) = (run.results[0].0, run.results[1].1);
            assert!(committed);
            match seen {
                L::Fail | L::Snap(Some(1), Some(2)) | L::Snap(Some(7), Some(2)) => Ok(()),
                other => Err(format!("torn or impossible snapshot {other:?}")),
            }
        },
    );
    assert!(r.schedules > 20, "{r:?}");
}

#[test]
fn identical_scx_race_has_exactly_one_winner() {
    let mut contended = 0;
    run(
        2,
        4,
        false,
        &|inst, t, _| replace_child(inst, &[], Slot::Left, 7 + t as u32),
        &mut |run| {
            let shape = run.state.shape();
            match run.results[..] {
                // Same V from the same snapshots.
                [(Some(1), a), (Some(1), b)] if a != b => {
                    contended += 1;
                    let winner = if a { 7 } else { 8 };
                    (shape == vec![0, winner, 2]).then_some(()).ok_or(format!("shape {shape:?}"))
                }
                // The second SCX built its V after the first committed.
                [(Some(1), true), (Some(7), true)] if shape == vec![0, 8, 2] => Ok(()),
                [(Some(8), true), (Some(1), true)] if shape == vec![0, 7, 2] => Ok(()),
                // An LLX ran into the other SCX.
                [(None, false), (Some(1), true)] | [(Some(1), true), (None, false)] => Ok(()),
                _ => Err(format!("results {:?}, shape {shape:?}", run.results)),
            }
        },
    );
    assert!(contended > 0);
}

#[test]
fn vlx_disjoint_from_a_concurrent_scx_succeeds() {
    run(
        2,
        4,
        true,
        &|inst, t, _| {
            if t == 0 {
                replace_child(inst, &[Slot::Left], Slot::Left, 9).1
            } else {
                let g = pin();
                let mut s = Session::new(&inst.dom, &g);
                let b = inst.arena.root(&g).read_field(Slot::Right, &g).unwrap();
                let b1 = b.read_field(Slot::Left, &g).unwrap();
                let ok = s.llx(b).snapshot().is_some() && s.llx(b1).snapshot().is_some();
                ok && s.vlx(&[b, b1])
            }
        },
        &mut |run| match run.results.as_slice() {
            [true, true] => Ok(()),
            other => Err(format!("{other:?}")),
        },
    );
}

#[test]
fn reads_mid_scx_see_old_or_new() {
    run(
        2,
        4,
        false,
        &|inst, t, _| {
            if t == 0 {
                u32::from(replace_child(inst, &[], Slot::Left, 7).1)
            } else {
                let g = pin();
                let root = inst.arena.root(&g);
                let first = *root.read_field(Slot::Left, &g).unwrap().payload();
                let second = *root.read_field(Slot::Left, &g).unwrap().payload();
                first * 100 + second
            }
        },
        &mut |run| match run.results[1] {
            // Old then old, old then new, or new then new; never new then old.
            101 | 107 | 707 => Ok(()),
            other => Err(format!("reads {other}")),
        },
    );
}

#[test]
fn helpers_and_owner_agree_on_the_outcome() {
    // Thread 0 runs the SCX; the others LLX the records it freezes, helping
    // whenever they find it in progress.
    let r = run(
        3,
        2,
        false,
        &|inst, t, _| {
            if t == 0 {
                (replace_child(inst, &[], Slot::Left, 7).1, vec![])
            } else {
                let g = pin();
                let mut s = Session::new(&inst.dom, &g);
                let root = inst.arena.root(&g);
                let a = root.read_field(Slot::Left, &g).unwrap();
                (false, vec![llx(&mut s, a), llx(&mut s, root)])
            }
        },
        &mut |run| {
            if !run.results[0].0 {
                return Err("the uncontended owner failed".into());
            }
            if run.state.shape() != vec![0, 7, 2] {
                return Err(format!("final shape {:?}", run.state.shape()));
            }
            for (_, seen) in &run.results[1..] {
                if let [_, L::Snap(l, r)] = seen[..] {
                    if !matches!((l, r), (Some(1 | 7), Some(2))) {
                        return Err(format!("root snapshot {seen:?}"));
                    }
                }
                // Once the removed leaf reports Finalized the swing is visible.
                if seen[0] == L::Finalized && seen[1] == L::Snap(Some(1), Some(2)) {
                    return Err(format!("finalized before the swing: {seen:?}"));
                }
            }
            Ok(())
        },
    );
    assert!(r.schedules > 100, "{r:?}");
}

/// Replaces the root's left child with a fresh leaf through the template.
struct ReplaceLeft(u32);

impl<'g> TemplateSpec<'g, u32> for ReplaceLeft {
    type Output = u32;

    fn condition(&self, sigma: &Sigma<'g, u32>) -> bool {
        sigma.len() == 2
    }

    fn next_node(&self, sigma: &Sigma<'g, u32>) -> Option<&'g Record<u32>> {
        sigma.snapshot(0)[Slot::Left.index()]
    }

    fn scx_arguments(&self, sigma: &Sigma<'g, u32>) -> ScxArgumentBundle<'g, u32> {
        let (p, c) = (sigma.node(0), sigma.node(1));
        ScxArgumentBundle::new(&[p, c], &[c], (p, Slot::Left), leaf(self.0))
    }

    fn result(&self, sigma: &Sigma<'g, u32>) -> u32 {
        *sigma.node(1).payload()
    }
}

#[test]
fn racing_identical_templates_give_one_result_and_one_fail() {
    let mut contended = 0;
    run(
        2,
        4,
        false,
        &|inst, t, _| {
            let g = pin();
            let mut up = Update::new(&inst.dom, &g, true);
            let out = execute_template(&mut up, &ReplaceLeft(7 + t as u32), inst.arena.root(&g)).ok();
            assert!(up.last_violations().is_empty(), "{:?}", up.last_violations());
            // The child this execution linked, when it got that far.
            let linked = (up.sigma().len() == 2).then(|| *up.sigma().node(1).payload());
            (linked, out)
        },
        &mut |run| match run.results[..] {
            [(Some(1), a), (Some(1), b)] if a.is_some() != b.is_some() => {
                contended += 1;
                Ok(())
            }
            [(Some(1), Some(1)), (Some(7), Some(7))] | [(Some(8), Some(8)), (Some(1), Some(1))] => Ok(()),
            [(_, None), (_, Some(1))] | [(_, Some(1)), (_, None)] => Ok(()),
            ref other => Err(format!("{other:?}")),
        },
    );
    assert!(contended > 0);
}
