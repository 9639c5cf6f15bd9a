//! Single-threaded chromatic tree over owned nodes.
//!
//! An independent rendition of the algorithm: same update and cleanup
//! protocol, but every rebalancing step is written out as a pattern match
//! rather than taken from the library's step table. Serves as the reference
//! for step outputs, step budgets and the VIOL property.

use chromatic::{Layout, RebalanceStepKind, Shape, Slot};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SimNode {
    Leaf {
        key: u64,
        w: u32,
        value: u64,
    },
    Internal {
        key: u64,
        w: u32,
        left: Box<SimNode>,
        right: Box<SimNode>,
    },
}

use SimNode::{Internal, Leaf};

impl SimNode {
    pub fn w(&self) -> u32 {
        match self {
            Leaf { w, .. } | Internal { w, .. } => *w,
        }
    }

    pub fn key(&self) -> u64 {
        match self {
            Leaf { key, .. } | Internal { key, .. } => *key,
        }
    }

    fn set_w(&mut self, nw: u32) {
        match self {
            Leaf { w, .. } | Internal { w, .. } => *w = nw,
        }
    }

    fn with_w(mut self, nw: u32) -> SimNode {
        self.set_w(nw);
        self
    }

    fn child(&self, s: Slot) -> Option<&SimNode> {
        match (self, s) {
            (Internal { left, .. }, Slot::Left) => Some(left),
            (Internal { right, .. }, Slot::Right) => Some(right),
            _ => None,
        }
    }

    fn child_mut(&mut self, s: Slot) -> Option<&mut SimNode> {
        match (self, s) {
            (Internal { left, .. }, Slot::Left) => Some(left),
            (Internal { right, .. }, Slot::Right) => Some(right),
            _ => None,
        }
    }

    pub fn from_layout(l: &Layout<u64>, value_of: &dyn Fn(u64) -> u64) -> SimNode {
        match l {
            Layout::Leaf { key, weight } => Leaf {
                key: *key,
                w: *weight,
                value: value_of(*key),
            },
            Layout::Internal {
                key,
                weight,
                left,
                right,
            } => Internal {
                key: *key,
                w: *weight,
                left: Box::new(SimNode::from_layout(left, value_of)),
                right: Box::new(SimNode::from_layout(right, value_of)),
            },
        }
    }

    pub fn to_layout(&self) -> Layout<u64> {
        match self {
            Leaf { key, w, .. } => Layout::leaf(*key, *w),
            Internal { key, w, left, right } => Layout::internal(*key, *w, left.to_layout(), right.to_layout()),
        }
    }

    /// Violations inside this subtree, not counting the edge above it.
    fn violations_within(&self) -> usize {
        let mut total = 0;
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            if let Internal { w, left, right, .. } = n {
                for c in [left, right] {
                    total += edge_violations(*w, c.w());
                    stack.push(c);
                }
            }
        }
        total
    }
}

/// Violations charged to a child of weight `w` under a parent of weight `pw`.
pub fn edge_violations(pw: u32, w: u32) -> usize {
    if w > 1 {
        (w - 1) as usize
    } else {
        usize::from(w == 0 && pw == 0)
    }
}

/// Splits an internal node into (key, weight, near, far), where near is the
/// left child, or the right child when `m`.
fn open(n: SimNode, m: bool) -> (u64, u32, SimNode, SimNode) {
    match n {
        Internal { key, w, left, right } => {
            if m {
                (key, w, *right, *left)
            } else {
                (key, w, *left, *right)
            }
        }
        Leaf { key, .. } => panic!("step needs an internal node at key {key}"),
    }
}

/// Inverse of [`open`].
fn node(key: u64, w: u32, near: SimNode, far: SimNode, m: bool) -> SimNode {
    let (left, right) = if m { (far, near) } else { (near, far) };
    Internal {
        key,
        w,
        left: Box::new(left),
        right: Box::new(right),
    }
}

/// Applies `kind` to the subtree `ux`. The caller forces the top weight when
/// the parent is a sentinel.
pub fn transform(kind: RebalanceStepKind, ux: SimNode) -> SimNode {
    let m = kind.mirrored;
    let (k, w, l, r) = open(ux, m);
    match kind.shape {
        Shape::Blk => {
            let (lw, rw) = (l.w(), r.w());
            debug_assert!(lw == 0 && rw == 0);
            node(k, w - 1, l.with_w(1), r.with_w(1), m)
        }
        Shape::Rb1 => {
            let (lk, _, ll, lr) = open(l, m);
            node(lk, w, ll, node(k, 0, lr, r, m), m)
        }
        Shape::Rb2 => {
            let (lk, _, ll, lr) = open(l, m);
            let (lrk, _, lrl, lrr) = open(lr, m);
            node(lrk, w, node(lk, 0, ll, lrl, m), node(k, 0, lrr, r, m), m)
        }
        Shape::Push => {
            let lw = l.w();
            node(k, w + 1, l.with_w(lw - 1), r.with_w(0), m)
        }
        Shape::W1 | Shape::W2 => {
            let lw = l.w();
            let (rk, _, rl, rr) = open(r, m);
            let rlw = if kind.shape == Shape::W1 { rl.w() - 1 } else { 0 };
            node(rk, w, node(k, 1, l.with_w(lw - 1), rl.with_w(rlw), m), rr, m)
        }
        Shape::W3 => {
            let lw = l.w();
            let (rk, _, rl, rr) = open(r, m);
            let (rlk, _, rll, rlr) = open(rl, m);
            let (rllk, _, rlll, rllr) = open(rll, m);
            let inner = node(rllk, 0, node(k, 1, l.with_w(lw - 1), rlll, m), node(rlk, 1, rllr, rlr, m), m);
            node(rk, w, inner, rr, m)
        }
        Shape::W4 => {
            let lw = l.w();
            let (rk, _, rl, rr) = open(r, m);
            let (rlk, _, rll, rlr) = open(rl, m);
            let rlr = rlr.with_w(1);
            node(rlk, w, node(k, 1, l.with_w(lw - 1), rll, m), node(rk, 0, rlr, rr, m), m)
        }
        Shape::W5 => {
            let lw = l.w();
            let (rk, _, rl, rr) = open(r, m);
            node(rk, w, node(k, 1, l.with_w(lw - 1), rl, m), rr.with_w(1), m)
        }
        Shape::W6 => {
            let lw = l.w();
            let (rk, _, rl, rr) = open(r, m);
            let (rlk, _, rll, rlr) = open(rl, m);
            node(rlk, w, node(k, 1, l.with_w(lw - 1), rll, m), node(rk, 1, rlr, rr, m), m)
        }
        Shape::W7 => {
            let (lw, rw) = (l.w(), r.w());
            node(k, w + 1, l.with_w(lw - 1), r.with_w(rw - 1), m)
        }
    }
}

/// Counters gathered by a simulation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SimStats {
    pub steps: [u64; RebalanceStepKind::COUNT],
    pub inserts: u64,
    pub deletes: u64,
    pub violations_created: u64,
    pub violations_eliminated: u64,
    /// Steps after which a violation on the cleanup path neither stayed on
    /// it nor was eliminated.
    pub viol_failures: u64,
}

impl SimStats {
    pub fn total_steps(&self) -> u64 {
        self.steps.iter().sum()
    }
}

/// A script entry for [`simulate_sequential`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimOp {
    Insert(u64, u64),
    Delete(u64),
}

/// The chromatic subtree below the sentinels; `None` when empty.
#[derive(Clone, Debug, Default)]
pub struct SimTree {
    pub root: Option<SimNode>,
    pub k: usize,
    pub stats: SimStats,
}

fn toward(key: u64, n: &SimNode) -> Slot {
    if key < n.key() {
        Slot::Left
    } else {
        Slot::Right
    }
}

impl SimTree {
    pub fn new(k: usize) -> Self {
        SimTree {
            root: None,
            k,
            stats: SimStats::default(),
        }
    }

    pub fn from_layout(root: Option<&Layout<u64>>, value_of: &dyn Fn(u64) -> u64, k: usize) -> Self {
        let root = root.map(|l| SimNode::from_layout(l, value_of).with_w(1));
        SimTree {
            root,
            k,
            stats: SimStats::default(),
        }
    }

    pub fn to_layout(&self) -> Option<Layout<u64>> {
        self.root.as_ref().map(SimNode::to_layout)
    }

    fn at(&self, path: &[Slot]) -> &SimNode {
        let mut n = self.root.as_ref().expect("nonempty");
        for &s in path {
            n = n.child(s).expect("path exists");
        }
        n
    }

    fn at_mut(&mut self, path: &[Slot]) -> &mut SimNode {
        let mut n = self.root.as_mut().expect("nonempty");
        for &s in path {
            n = n.child_mut(s).expect("path exists");
        }
        n
    }

    /// Slots from the root to the leaf reached by searching for `key`.
    fn search(&self, key: u64) -> Vec<Slot> {
        let mut path = Vec::new();
        let mut n = match &self.root {
            Some(r) => r,
            None => return path,
        };
        while let Internal { .. } = n {
            let s = toward(key, n);
            path.push(s);
            n = n.child(s).unwrap();
        }
        path
    }

    pub fn get(&self, key: u64) -> Option<u64> {
        self.root.as_ref()?;
        match self.at(&self.search(key)) {
            Leaf { key: k, value, .. } if *k == key => Some(*value),
            _ => None,
        }
    }

    pub fn insert(&mut self, key: u64, value: u64) -> Option<u64> {
        self.stats.inserts += 1;
        if self.root.is_none() {
            self.root = Some(Leaf { key, w: 1, value });
            return None;
        }
        let path = self.search(key);
        let parent_w = (!path.is_empty()).then(|| self.at(&path[..path.len() - 1]).w());
        let l = self.at_mut(&path);
        let (lkey, lw, lvalue) = match l {
            Leaf { key, w, value } => (*key, *w, *value),
            Internal { .. } => unreachable!(),
        };
        if lkey == key {
            *l = Leaf { key, w: lw, value };
            return Some(lvalue);
        }
        // Below a sentinel the new internal record takes weight 1.
        let nw = if parent_w.is_none() { 1 } else { lw - 1 };
        let new = Leaf { key, w: 1, value };
        let old = Leaf {
            key: lkey,
            w: 1,
            value: lvalue,
        };
        let (a, b) = if key < lkey { (new, old) } else { (old, new) };
        *l = node(key.max(lkey), nw, a, b, false);
        if nw == 0 && parent_w == Some(0) {
            self.stats.violations_created += 1;
            self.after_violation(key);
        }
        None
    }

    pub fn delete(&mut self, key: u64) -> Option<u64> {
        self.stats.deletes += 1;
        let path = self.search(key);
        match self.root.as_ref().map(|_| self.at(&path)) {
            Some(Leaf { key: k, value, .. }) if *k == key => {
                let value = *value;
                if path.is_empty() {
                    self.root = None;
                    return Some(value);
                }
                let pp = &path[..path.len() - 1];
                let side = path[path.len() - 1];
                let p = self.at_mut(pp);
                let pw = p.w();
                let Internal { left, right, .. } = std::mem::replace(p, Leaf { key: 0, w: 0, value: 0 }) else {
                    unreachable!()
                };
                let s = if side == Slot::Left { *right } else { *left };
                let sw = s.w();
                let nw = if pp.is_empty() { 1 } else { pw + sw };
                *p = s.with_w(nw);
                if nw > 1 {
                    self.stats.violations_created += u64::from(nw - 1);
                    self.after_violation(key);
                }
                Some(value)
            }
            _ => None,
        }
    }

    pub fn apply(&mut self, op: SimOp) -> Option<u64> {
        match op {
            SimOp::Insert(k, v) => self.insert(k, v),
            SimOp::Delete(k) => self.delete(k),
        }
    }

    fn after_violation(&mut self, key: u64) {
        if self.k == 0 || self.violations_on_path(key) > self.k {
            self.cleanup(key);
        }
    }

    pub fn violations_on_path(&self, key: u64) -> usize {
        if self.root.is_none() {
            return 0;
        }
        let path = self.search(key);
        (1..=path.len())
            .map(|i| edge_violations(self.at(&path[..i - 1]).w(), self.at(&path[..i]).w()))
            .sum()
    }

    /// Path of the shallowest violating record on `key`'s search path.
    fn first_violation(&self, key: u64) -> Option<Vec<Slot>> {
        self.root.as_ref()?;
        let path = self.search(key);
        (1..=path.len()).find_map(|i| {
            let (p, n) = (self.at(&path[..i - 1]), self.at(&path[..i]));
            (edge_violations(p.w(), n.w()) > 0).then(|| path[..i].to_vec())
        })
    }

    pub fn violation_count(&self) -> usize {
        self.root.as_ref().map_or(0, SimNode::violations_within)
    }

    /// Fixes the first violation on `key`'s search path until there is none.
    pub fn cleanup(&mut self, key: u64) {
        while let Some(at) = self.first_violation(key) {
            let on_path = self.violations_on_path(key);
            let (kind, ux) = self.choose(&at).expect("a step applies at every violation");
            let removed = self.apply_step(kind, &ux);
            let after = self.violations_on_path(key);
            if after + removed < on_path {
                self.stats.viol_failures += 1;
            }
        }
    }

    /// The step for the violation at `at`, and the path of the subtree it
    /// replaces.
    fn choose(&self, at: &[Slot]) -> Option<(RebalanceStepKind, Vec<Slot>)> {
        let n = at.len();
        let l = self.at(at);
        if l.w() <= 1 {
            return self.red_red(at);
        }
        let xx = &at[..n - 1];
        let d = at[n - 1];
        let m = d == Slot::Right;
        let xxn = self.at(xx);
        let sib = xxn.child(d.flip())?;
        if sib.w() == 0 && xxn.w() == 0 {
            let mut v = xx.to_vec();
            v.push(d.flip());
            return self.red_red(&v);
        }
        let near = sib.child(d);
        let far = sib.child(d.flip());
        let kind = match sib.w() {
            0 => {
                let near = near?;
                match near.w() {
                    0 => RebalanceStepKind::new(Shape::Rb2, !m),
                    1 => {
                        let (nn, nf) = (near.child(d)?, near.child(d.flip())?);
                        if nf.w() == 0 {
                            RebalanceStepKind::new(Shape::W4, m)
                        } else if nn.w() == 0 {
                            RebalanceStepKind::new(Shape::W3, m)
                        } else {
                            RebalanceStepKind::new(Shape::W2, m)
                        }
                    }
                    _ => RebalanceStepKind::new(Shape::W1, m),
                }
            }
            1 => {
                let (near, far) = (near?, far?);
                if far.w() == 0 {
                    RebalanceStepKind::new(Shape::W5, m)
                } else if near.w() == 0 {
                    RebalanceStepKind::new(Shape::W6, m)
                } else {
                    RebalanceStepKind::new(Shape::Push, m)
                }
            }
            _ => RebalanceStepKind::new(Shape::W7, m),
        };
        Some((kind, xx.to_vec()))
    }

    /// Red-red violation at `v`: its parent and grandparent decide.
    fn red_red(&self, v: &[Slot]) -> Option<(RebalanceStepKind, Vec<Slot>)> {
        let n = v.len();
        let x = &v[..n - 2];
        let xxslot = v[n - 2];
        let m = xxslot == Slot::Right;
        let xn = self.at(x);
        let other = xn.child(xxslot.flip())?;
        let kind = if other.w() == 0 {
            if xn.w() == 0 {
                return None;
            }
            RebalanceStepKind::new(Shape::Blk, false)
        } else if v[n - 1] == xxslot {
            RebalanceStepKind::new(Shape::Rb1, m)
        } else {
            RebalanceStepKind::new(Shape::Rb2, m)
        };
        Some((kind, x.to_vec()))
    }

    /// Replaces the subtree at `ux` by its image under `kind`. Returns the
    /// number of violations eliminated.
    pub fn apply_step(&mut self, kind: RebalanceStepKind, ux: &[Slot]) -> usize {
        let top_w = (!ux.is_empty()).then(|| self.at(&ux[..ux.len() - 1]).w());
        let slot = self.at_mut(ux);
        let old = std::mem::replace(slot, Leaf { key: 0, w: 0, value: 0 });
        let before = old.violations_within() + top_w.map_or(0, |pw| edge_violations(pw, old.w()));
        let mut new = transform(kind, old);
        if top_w.is_none() {
            new.set_w(1);
        }
        let after = new.violations_within() + top_w.map_or(0, |pw| edge_violations(pw, new.w()));
        *slot = new;
        self.stats.steps[kind.index()] += 1;
        assert!(after <= before, "{kind} increased violations from {before} to {after}");
        let removed = before - after;
        self.stats.violations_eliminated += removed as u64;
        removed
    }

    /// Entries in key order.
    pub fn entries(&self) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        let mut stack: Vec<&SimNode> = self.root.iter().collect();
        while let Some(n) = stack.pop() {
            match n {
                Leaf { key, value, .. } => out.push((*key, *value)),
                Internal { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }
}

/// Runs `script` single-threaded on an initially empty tree.
pub fn simulate_sequential(script: &[SimOp], k: usize) -> SimTree {
    let mut t = SimTree::new(k);
    for &op in script {
        t.apply(op);
    }
    t
}
