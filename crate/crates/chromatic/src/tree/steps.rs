//! The rebalancing transformations as data.
//!
//! Every step replaces the subtree under one child slot of `u`. Nodes are named
//! by paths from `ux`, the child being replaced: `""` is `ux`, `"l"` its left
//! child, `"rl"` the left child of its right child, and so on. A mirrored step
//! reads every `l` as `r` and vice versa. The replacement is listed top-down;
//! entry 0 becomes `new`.

use super::{Key, Node, NodeData, Value};
use crate::mwcas::{Child, Fresh, Record, Slot};
use crate::template::{Fail, ScxArgumentBundle, Update};
use smallvec::SmallVec;
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Shape {
    Blk,
    Rb1,
    Rb2,
    Push,
    W1,
    W2,
    W3,
    W4,
    W5,
    W6,
    W7,
}

impl Shape {
    pub const ALL: [Shape; 11] = [
        Shape::Blk,
        Shape::Rb1,
        Shape::Rb2,
        Shape::Push,
        Shape::W1,
        Shape::W2,
        Shape::W3,
        Shape::W4,
        Shape::W5,
        Shape::W6,
        Shape::W7,
    ];

    fn name(self) -> &'static str {
        match self {
            Shape::Blk => "BLK",
            Shape::Rb1 => "RB1",
            Shape::Rb2 => "RB2",
            Shape::Push => "PUSH",
            Shape::W1 => "W1",
            Shape::W2 => "W2",
            Shape::W3 => "W3",
            Shape::W4 => "W4",
            Shape::W5 => "W5",
            Shape::W6 => "W6",
            Shape::W7 => "W7",
        }
    }
}

/// One of the 21 rebalancing steps. BLK is its own mirror image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RebalanceStepKind {
    pub shape: Shape,
    pub mirrored: bool,
}

impl RebalanceStepKind {
    pub const COUNT: usize = 21;

    pub const fn new(shape: Shape, mirrored: bool) -> Self {
        // BLK is symmetric; keep a single representative.
        let mirrored = mirrored && !matches!(shape, Shape::Blk);
        RebalanceStepKind { shape, mirrored }
    }

    pub fn all() -> impl Iterator<Item = RebalanceStepKind> {
        Shape::ALL.into_iter().flat_map(|s| {
            let plain = RebalanceStepKind::new(s, false);
            let mirror = (s != Shape::Blk).then(|| RebalanceStepKind::new(s, true));
            std::iter::once(plain).chain(mirror)
        })
    }

    /// Dense index in `0..COUNT`.
    pub fn index(self) -> usize {
        let base = self.shape as usize;
        if base == 0 {
            0
        } else {
            2 * base - 1 + self.mirrored as usize
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        RebalanceStepKind::all().nth(i)
    }

    pub(crate) fn catalog(self) -> &'static StepShape {
        &CATALOG[self.shape as usize]
    }

    /// Paths from `ux` of the removed records in this kind's orientation,
    /// sorted breadth-first with left before right.
    pub fn removed_paths(self) -> Vec<Vec<Slot>> {
        let mut paths: Vec<Vec<Slot>> = self.catalog().r.iter().map(|p| orient(p, self.mirrored).collect()).collect();
        paths.sort_by_key(|p| (p.len(), p.iter().map(|s| s.index()).collect::<Vec<_>>()));
        paths
    }
}

impl fmt::Display for RebalanceStepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.shape.name())?;
        if self.mirrored {
            f.write_str("s")?;
        }
        Ok(())
    }
}

pub(crate) fn orient(path: &str, mirrored: bool) -> impl Iterator<Item = Slot> + '_ {
    path.bytes().map(move |c| {
        let s = if c == b'l' { Slot::Left } else { Slot::Right };
        if mirrored {
            s.flip()
        } else {
            s
        }
    })
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Weight {
    Zero,
    One,
    /// Weight of the named node plus a delta.
    Of(&'static str, i32),
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Src {
    Old(&'static str),
    New(usize),
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum NodeSpec {
    /// Same key, value, leafness and children as the named node.
    Copy { of: &'static str, w: Weight },
    Internal {
        key_of: &'static str,
        w: Weight,
        left: Src,
        right: Src,
    },
}

pub(crate) struct StepShape {
    /// Removed records, breadth-first. Always starts with `""`.
    pub r: &'static [&'static str],
    pub nodes: &'static [NodeSpec],
}

use NodeSpec::{Copy as Cp, Internal as In};
use Src::{New, Old};
use Weight::{Of, One, Zero};

const fn minus1(p: &'static str) -> Weight {
    Of(p, -1)
}

static CATALOG: [StepShape; 11] = [
    // BLK
    StepShape {
        r: &["", "l", "r"],
        nodes: &[
            In { key_of: "", w: Of("", -1), left: New(1), right: New(2) },
            Cp { of: "l", w: One },
            Cp { of: "r", w: One },
        ],
    },
    // RB1
    StepShape {
        r: &["", "l"],
        nodes: &[
            In { key_of: "l", w: Of("", 0), left: Old("ll"), right: New(1) },
            In { key_of: "", w: Zero, left: Old("lr"), right: Old("r") },
        ],
    },
    // RB2
    StepShape {
        r: &["", "l", "lr"],
        nodes: &[
            In { key_of: "lr", w: Of("", 0), left: New(1), right: New(2) },
            In { key_of: "l", w: Zero, left: Old("ll"), right: Old("lrl") },
            In { key_of: "", w: Zero, left: Old("lrr"), right: Old("r") },
        ],
    },
    // PUSH
    StepShape {
        r: &["", "l", "r"],
        nodes: &[
            In { key_of: "", w: Of("", 1), left: New(1), right: New(2) },
            Cp { of: "l", w: minus1("l") },
            Cp { of: "r", w: Zero },
        ],
    },
    // W1
    StepShape {
        r: &["", "l", "r", "rl"],
        nodes: &[
            In { key_of: "r", w: Of("", 0), left: New(1), right: Old("rr") },
            In { key_of: "", w: One, left: New(2), right: New(3) },
            Cp { of: "l", w: minus1("l") },
            Cp { of: "rl", w: minus1("rl") },
        ],
    },
    // W2
    StepShape {
        r: &["", "l", "r", "rl"],
        nodes: &[
            In { key_of: "r", w: Of("", 0), left: New(1), right: Old("rr") },
            In { key_of: "", w: One, left: New(2), right: New(3) },
            Cp { of: "l", w: minus1("l") },
            Cp { of: "rl", w: Zero },
        ],
    },
    // W3
    StepShape {
        r: &["", "l", "r", "rl", "rll"],
        nodes: &[
            In { key_of: "r", w: Of("", 0), left: New(1), right: Old("rr") },
            In { key_of: "rll", w: Zero, left: New(2), right: New(3) },
            In { key_of: "", w: One, left: New(4), right: Old("rlll") },
            In { key_of: "rl", w: One, left: Old("rllr"), right: Old("rlr") },
            Cp { of: "l", w: minus1("l") },
        ],
    },
    // W4
    StepShape {
        r: &["", "l", "r", "rl", "rlr"],
        nodes: &[
            In { key_of: "rl", w: Of("", 0), left: New(1), right: New(2) },
            In { key_of: "", w: One, left: New(3), right: Old("rll") },
            In { key_of: "r", w: Zero, left: New(4), right: Old("rr") },
            Cp { of: "l", w: minus1("l") },
            In { key_of: "rlr", w: One, left: Old("rlrl"), right: Old("rlrr") },
        ],
    },
    // W5
    StepShape {
        r: &["", "l", "r", "rr"],
        nodes: &[
            In { key_of: "r", w: Of("", 0), left: New(1), right: New(2) },
            In { key_of: "", w: One, left: New(3), right: Old("rl") },
            Cp { of: "rr", w: One },
            Cp { of: "l", w: minus1("l") },
        ],
    },
    // W6
    StepShape {
        r: &["", "l", "r", "rl"],
        nodes: &[
            In { key_of: "rl", w: Of("", 0), left: New(1), right: New(2) },
            In { key_of: "", w: One, left: New(3), right: Old("rll") },
            In { key_of: "r", w: One, left: Old("rlr"), right: Old("rr") },
            Cp { of: "l", w: minus1("l") },
        ],
    },
    // W7
    StepShape {
        r: &["", "l", "r"],
        nodes: &[
            In { key_of: "", w: Of("", 1), left: New(1), right: New(2) },
            Cp { of: "l", w: minus1("l") },
            Cp { of: "r", w: minus1("r") },
        ],
    },
];

/// Resolves paths from `ux` through the snapshots recorded in σ.
struct Resolver<'a, 'g, K: Key, V: Value> {
    up: &'a Update<'g, NodeData<K, V>>,
    ux: &'g Node<K, V>,
    mirrored: bool,
}

impl<'g, K: Key, V: Value> Resolver<'_, 'g, K, V> {
    fn node(&self, path: &str) -> Result<&'g Node<K, V>, Fail> {
        self.at(orient(path, self.mirrored))
    }

    fn at(&self, path: impl IntoIterator<Item = Slot>) -> Result<&'g Node<K, V>, Fail> {
        let mut n = self.ux;
        for s in path {
            let snap = self.up.sigma().snapshot_of(n).ok_or(Fail)?;
            n = snap[s.index()].ok_or(Fail)?;
        }
        Ok(n)
    }

    fn weight(&self, w: Weight) -> Result<u32, Fail> {
        match w {
            Zero => Ok(0),
            One => Ok(1),
            Of(p, d) => self.node(p)?.payload().weight.checked_add_signed(d).ok_or(Fail),
        }
    }
}

/// Builds and commits the SCX for `kind` replacing the child of `u` in `slot`.
///
/// `u` and every removed record must already be in σ, in breadth-first
/// order. Returns `Ok(false)` when the SCX fails; `Err` when the snapshots do
/// not match the kind's diagram.
pub fn apply_rebalance_step<'g, K: Key, V: Value>(
    up: &mut Update<'g, NodeData<K, V>>,
    kind: RebalanceStepKind,
    u: &'g Node<K, V>,
    slot: Slot,
) -> Result<bool, Fail> {
    let bundle = step_bundle(up, kind, u, slot)?;
    Ok(up.commit(bundle))
}

pub(crate) fn step_bundle<'g, K: Key, V: Value>(
    up: &Update<'g, NodeData<K, V>>,
    kind: RebalanceStepKind,
    u: &'g Node<K, V>,
    slot: Slot,
) -> Result<ScxArgumentBundle<'g, NodeData<K, V>>, Fail> {
    let ux = up.sigma().snapshot_of(u).ok_or(Fail)?[slot.index()].ok_or(Fail)?;
    let res = Resolver {
        up,
        ux,
        mirrored: kind.mirrored,
    };
    let mut v: SmallVec<[&'g Node<K, V>; 8]> = SmallVec::new();
    v.push(u);
    let mut r = SmallVec::new();
    for path in kind.removed_paths() {
        let n = res.at(path.iter().copied())?;
        if up.sigma().snapshot_of(n).is_none() {
            debug_assert!(false, "{kind}: removed record {path:?} was not LLXed");
            return Err(Fail);
        }
        v.push(n);
        r.push(n);
    }

    // Children are built before parents; index i of the listing maps to built[i].
    let mut fresh = Fresh::new();
    let mut built = [usize::MAX; 8];
    let sentinel_parent = u.payload().key == K::max_value();
    for (i, spec) in kind.catalog().nodes.iter().enumerate().rev() {
        let child = |s: Src| -> Result<Child<'g, NodeData<K, V>>, Fail> {
            Ok(match s {
                Old(p) => Child::Old(res.node(p)?),
                New(j) => Child::New(built[j]),
            })
        };
        let (data, left, right) = match *spec {
            Cp { of, w } => {
                let src = res.node(of)?;
                let snap = up.sigma().snapshot_of(src).ok_or(Fail)?;
                let d = src.payload();
                let data = NodeData {
                    key: d.key,
                    weight: res.weight(w)?,
                    leaf: d.leaf,
                    value: d.value.clone(),
                };
                let c = |o: Option<&'g Node<K, V>>| o.map_or(Child::Nil, Child::Old);
                (data, c(snap[0]), c(snap[1]))
            }
            In { key_of, w, left, right } => {
                let (left, right) = if kind.mirrored { (right, left) } else { (left, right) };
                let data = NodeData {
                    key: res.node(key_of)?.payload().key,
                    weight: res.weight(w)?,
                    leaf: false,
                    value: None,
                };
                (data, child(left)?, child(right)?)
            }
        };
        let data = if i == 0 && sentinel_parent {
            // The child of a sentinel is the chromatic root, which stays black.
            NodeData { weight: 1, ..data }
        } else {
            data
        };
        built[i] = fresh.add(data, left, right);
    }
    Ok(ScxArgumentBundle {
        v,
        r,
        fld: (u, slot),
        fresh,
    })
}

/// Records for `u`'s subtree that a step of `kind` at `(u, slot)` must LLX,
/// breadth-first, resolved by following current child links.
pub(crate) fn llx_for_step<'g, K: Key, V: Value>(
    up: &mut Update<'g, NodeData<K, V>>,
    kind: RebalanceStepKind,
    u: &'g Node<K, V>,
    slot: Slot,
) -> Result<(), Fail> {
    let snap = up.llx(u)?;
    let ux = snap[slot.index()].ok_or(Fail)?;
    for path in kind.removed_paths() {
        let mut n: &Record<NodeData<K, V>> = ux;
        for s in path {
            let snap = up.sigma().snapshot_of(n).ok_or(Fail)?;
            n = snap[s.index()].ok_or(Fail)?;
        }
        up.llx(n)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn twenty_one_kinds_with_dense_indices() {
        let all: Vec<_> = RebalanceStepKind::all().collect();
        assert_eq!(all.len(), RebalanceStepKind::COUNT);
        for (i, k) in all.iter().enumerate() {
            assert_eq!(k.index(), i);
            assert_eq!(RebalanceStepKind::from_index(i), Some(*k));
        }
        assert_eq!(RebalanceStepKind::new(Shape::Blk, true), RebalanceStepKind::new(Shape::Blk, false));
    }

    fn depth_then_lr(p: &str) -> (usize, String) {
        (p.len(), p.to_string())
    }

    #[test]
    fn catalog_is_well_formed() {
        for (shape, cat) in Shape::ALL.iter().zip(CATALOG.iter()) {
            assert_eq!(cat.r[0], "", "{shape:?}");
            let mut sorted = cat.r.to_vec();
            sorted.sort_by_key(|p| depth_then_lr(p));
            assert_eq!(sorted, cat.r, "{shape:?}: R not breadth-first");
            let rset: HashSet<&str> = cat.r.iter().copied().collect();
            // Every referenced record is removed or a child of a removed one.
            let ok = |p: &str| rset.contains(p) || rset.contains(&p[..p.len() - 1]);
            let mut refs = vec![0usize; cat.nodes.len()];
            for n in cat.nodes {
                match *n {
                    Cp { of, .. } => assert!(rset.contains(of), "{shape:?}"),
                    In { key_of, left, right, .. } => {
                        assert!(rset.contains(key_of), "{shape:?}");
                        for s in [left, right] {
                            match s {
                                Old(p) => assert!(ok(p) && !rset.contains(p), "{shape:?} {p}"),
                                New(j) => refs[j] += 1,
                            }
                        }
                    }
                }
            }
            assert_eq!(refs[0], 0, "{shape:?}");
            assert!(refs[1..].iter().all(|&c| c == 1), "{shape:?}: fresh nodes not a tree");
        }
    }
}
