//! Choosing and applying one rebalancing step at a violation.
//!
//! LLXs are issued in breadth-first order of the records involved, re-LLXing
//! a record when the decision needs a shallower sibling first, so that every
//! SCX's V is a subsequence of σ. Any LLX failure, stale link or missing child
//! abandons the attempt; the cleanup loop re-traverses.

use super::steps::{apply_rebalance_step, RebalanceStepKind, Shape};
use super::{side_of, ChromaticMap, Key, Node, NodeData, Value};
use crate::mwcas::Slot;
use crate::template::{Fail, Update};
use crossbeam_epoch::Guard;
use std::sync::atomic::Ordering::Relaxed;

type Up<'g, K, V> = Update<'g, NodeData<K, V>>;

fn w<K, V>(n: &Node<K, V>) -> u32 {
    n.payload().weight
}

fn child<K, V>(snap: [Option<&Node<K, V>>; 2], s: Slot) -> Result<&Node<K, V>, Fail> {
    snap[s.index()].ok_or(Fail)
}

/// A planned step: the kind and the slot of `u` whose subtree it replaces.
struct Plan<'g, K, V> {
    kind: RebalanceStepKind,
    u: &'g Node<K, V>,
    slot: Slot,
}

impl<K: Key, V: Value> ChromaticMap<K, V> {
    /// One rebalancing attempt for a violation at `l`, where `ggp`, `gp`, `p`,
    /// `l` were consecutive on a recent traversal. Returns the step committed,
    /// if any.
    pub fn try_rebalance<'g>(
        &'g self,
        guard: &'g Guard,
        ggp: &'g Node<K, V>,
        gp: &'g Node<K, V>,
        p: &'g Node<K, V>,
        l: &'g Node<K, V>,
    ) -> Option<RebalanceStepKind> {
        self.stats.rebalance_calls.fetch_add(1, Relaxed);
        let mut up = self.update(guard);
        let plan = plan(&mut up, ggp, gp, p, l).ok()??;
        match apply_rebalance_step(&mut up, plan.kind, plan.u, plan.slot) {
            Ok(true) => {
                self.stats.steps[plan.kind.index()].fetch_add(1, Relaxed);
                Some(plan.kind)
            }
            _ => None,
        }
    }
}

/// Performs the LLXs the decision needs and picks a step; `Ok(None)` when the
/// configuration offers no applicable step.
fn plan<'g, K: Key, V: Value>(
    up: &mut Up<'g, K, V>,
    r: &'g Node<K, V>,
    x: &'g Node<K, V>,
    xx: &'g Node<K, V>,
    l: &'g Node<K, V>,
) -> Result<Option<Plan<'g, K, V>>, Fail> {
    let rs = up.llx(r)?;
    let xslot = side_of(rs, x).ok_or(Fail)?;
    let xs = up.llx(x)?;
    let xxslot = side_of(xs, xx).ok_or(Fail)?;
    let xxs = up.llx(xx)?;
    let d = side_of(xxs, l).ok_or(Fail)?;

    if w(l) <= 1 {
        return red_red(up, r, xslot, x, xs, xx, xxslot, xxs, l);
    }

    // Overweight at l, the d-side child of xx. Names below are for d = Left;
    // the mirrored kinds cover d = Right.
    let m = d == Slot::Right;
    let sib = child(xxs, d.flip())?;
    if w(sib) == 0 && w(xx) == 0 {
        // The red sibling under a red xx is itself a red-red violation.
        return red_red(up, r, xslot, x, xs, xx, xxslot, xxs, sib);
    }
    let lo = up.llx(child(xxs, Slot::Left)?)?;
    let hi = up.llx(child(xxs, Slot::Right)?)?;
    let ss = if m { lo } else { hi };
    let at = |shape, mirrored| {
        Ok(Some(Plan {
            kind: RebalanceStepKind::new(shape, mirrored),
            u: x,
            slot: xxslot,
        }))
    };
    let near = ss[d.index()];
    let far = ss[d.flip().index()];
    match w(sib) {
        0 => {
            let near = near.ok_or(Fail)?;
            let ns = up.llx(near)?;
            match w(near) {
                0 => at(Shape::Rb2, !m),
                1 => {
                    let Some(nf) = ns[d.flip().index()] else {
                        return Ok(None);
                    };
                    let nn = ns[d.index()].ok_or(Fail)?;
                    if w(nf) == 0 {
                        up.llx(nf)?;
                        at(Shape::W4, m)
                    } else if w(nn) == 0 {
                        up.llx(nn)?;
                        at(Shape::W3, m)
                    } else {
                        at(Shape::W2, m)
                    }
                }
                _ => at(Shape::W1, m),
            }
        }
        1 => {
            let Some(far) = far else {
                return Ok(None);
            };
            let near = near.ok_or(Fail)?;
            if w(far) == 0 {
                up.llx(far)?;
                at(Shape::W5, m)
            } else if w(near) == 0 {
                up.llx(near)?;
                at(Shape::W6, m)
            } else {
                at(Shape::Push, m)
            }
        }
        _ => at(Shape::W7, m),
    }
}

/// Red-red violation at `v`, a child of `xx`, which is the `xxslot` child of
/// `x`. Steps apply at `u = r`, replacing `x`.
#[allow(clippy::too_many_arguments)]
fn red_red<'g, K: Key, V: Value>(
    up: &mut Up<'g, K, V>,
    r: &'g Node<K, V>,
    xslot: Slot,
    x: &'g Node<K, V>,
    xs: [Option<&'g Node<K, V>>; 2],
    xx: &'g Node<K, V>,
    xxslot: Slot,
    xxs: [Option<&'g Node<K, V>>; 2],
    v: &'g Node<K, V>,
) -> Result<Option<Plan<'g, K, V>>, Fail> {
    let plan = |shape, mirrored| {
        Ok(Some(Plan {
            kind: RebalanceStepKind::new(shape, mirrored),
            u: r,
            slot: xslot,
        }))
    };
    let m = xxslot == Slot::Right;
    let other = child(xs, xxslot.flip())?;
    if w(other) == 0 {
        if w(x) == 0 {
            return Ok(None);
        }
        if m {
            // Breadth-first: x's left child before its right child xx.
            up.llx(other)?;
            up.llx(xx)?;
        } else {
            up.llx(other)?;
        }
        return plan(Shape::Blk, false);
    }
    let vslot = side_of(xxs, v).ok_or(Fail)?;
    if vslot == xxslot {
        plan(Shape::Rb1, m)
    } else {
        up.llx(v)?;
        plan(Shape::Rb2, m)
    }
}
