//! Random chromatic trees containing a configuration to which a chosen
//! rebalancing step applies.
//!
//! Each step's preconditions are weight bounds on nodes named by paths from
//! `ux`, the root of the subtree the step replaces. Everything else is random
//! subject to the chromatic invariants: equal weighted path sums, leaves of
//! weight at least 1, and a chromatic root of weight 1.

use chromatic::{Layout, RebalanceStepKind, Shape, Slot};
use rand::Rng;
use std::collections::HashMap;

/// A tree and the path from its root to `ux`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepConfig {
    pub root: Layout<u64>,
    pub ux: Vec<Slot>,
}

#[derive(Clone, Copy, Debug)]
struct Want {
    min: u32,
    max: u32,
    internal: bool,
}

const ANY: Want = Want {
    min: 0,
    max: u32::MAX,
    internal: false,
};

fn exactly(w: u32) -> Want {
    Want { min: w, max: w, internal: false }
}

fn at_least(w: u32) -> Want {
    Want {
        min: w,
        max: u32::MAX,
        internal: false,
    }
}

/// Preconditions in the plain orientation.
fn preconditions<R: Rng>(shape: Shape, rng: &mut R) -> Vec<(&'static str, Want)> {
    let over = ("l", at_least(2));
    match shape {
        Shape::Blk => {
            let red = ["ll", "lr", "rl", "rr"][rng.gen_range(0..4)];
            vec![("", at_least(1)), ("l", exactly(0)), ("r", exactly(0)), (red, exactly(0))]
        }
        Shape::Rb1 => vec![("", at_least(1)), ("l", exactly(0)), ("ll", exactly(0)), ("r", at_least(1))],
        Shape::Rb2 => vec![("", at_least(1)), ("l", exactly(0)), ("lr", exactly(0)), ("r", at_least(1))],
        Shape::Push => vec![over, ("r", exactly(1)), ("rl", at_least(1)), ("rr", at_least(1))],
        Shape::W1 => vec![("", at_least(1)), over, ("r", exactly(0)), ("rl", at_least(2))],
        Shape::W2 => vec![
            ("", at_least(1)),
            over,
            ("r", exactly(0)),
            ("rl", exactly(1)),
            ("rll", at_least(1)),
            ("rlr", at_least(1)),
        ],
        Shape::W3 => vec![
            ("", at_least(1)),
            over,
            ("r", exactly(0)),
            ("rl", exactly(1)),
            ("rll", exactly(0)),
            ("rlr", at_least(1)),
        ],
        Shape::W4 => vec![("", at_least(1)), over, ("r", exactly(0)), ("rl", exactly(1)), ("rlr", exactly(0))],
        Shape::W5 => vec![over, ("r", exactly(1)), ("rr", exactly(0))],
        Shape::W6 => vec![over, ("r", exactly(1)), ("rl", exactly(0)), ("rr", at_least(1))],
        Shape::W7 => vec![over, ("r", at_least(2))],
    }
}

fn oriented(path: &str, mirrored: bool) -> Vec<Slot> {
    path.bytes()
        .map(|c| match (c == b'l') != mirrored {
            true => Slot::Left,
            false => Slot::Right,
        })
        .collect()
}

struct Gen<'a, R> {
    rng: &'a mut R,
    wants: HashMap<Vec<Slot>, Want>,
}

impl<R: Rng> Gen<'_, R> {
    /// A subtree of weighted height `wh` for the node at `path` from `ux`.
    fn subtree(&mut self, path: &mut Vec<Slot>, wh: u32, depth: usize) -> Option<Layout<u64>> {
        let want = self.wants.get(path.as_slice()).copied().unwrap_or(ANY);
        let leaf_ok = !want.internal && wh >= 1 && (want.min..=want.max).contains(&wh);
        let (lo, hi) = (want.min, want.max.min(wh.saturating_sub(1)));
        let internal_ok = wh >= 1 && lo <= hi;
        let p_leaf = if depth >= 6 || wh == 1 { 1.0 } else if wh <= 2 { 0.35 } else { 0.15 };
        if leaf_ok && (!internal_ok || self.rng.gen_bool(p_leaf)) {
            return Some(Layout::leaf(0, wh));
        }
        if !internal_ok {
            return None;
        }
        let pick = match self.rng.gen_range(0..20) {
            0..=7 => 0,
            8..=16 => 1,
            _ => self.rng.gen_range(2..=hi.max(2)),
        };
        let w = if (lo..=hi).contains(&pick) { pick } else { self.rng.gen_range(lo..=hi) };
        let mut kid = |s: Slot, g: &mut Self| {
            path.push(s);
            let t = g.subtree(path, wh - w, depth + 1);
            path.pop();
            t
        };
        let left = kid(Slot::Left, self)?;
        let right = kid(Slot::Right, self)?;
        Some(Layout::internal(0, w, left, right))
    }

    /// A subtree of weighted height `wh` with no preconditions.
    fn free(&mut self, wh: u32) -> Layout<u64> {
        let saved = std::mem::take(&mut self.wants);
        let t = self.subtree(&mut Vec::new(), wh, 2).expect("unconstrained subtrees always exist");
        self.wants = saved;
        t
    }
}

/// Keys in order: leaves get 10, 20, ...; an internal node takes the least
/// leaf key of its right subtree. Returns the least leaf key of the subtree.
fn relabel(t: &mut Layout<u64>, next: &mut u64) -> u64 {
    match t {
        Layout::Leaf { key, .. } => {
            *next += 10;
            *key = *next;
            *key
        }
        Layout::Internal { key, left, right, .. } => {
            let least = relabel(left, next);
            *key = relabel(right, next);
            least
        }
    }
}

/// A random tree in which `kind` applies at the returned `ux`.
pub fn legal_configuration<R: Rng>(kind: RebalanceStepKind, rng: &mut R) -> StepConfig {
    loop {
        let depth = rng.gen_range(0..=2);
        let mut wants: HashMap<Vec<Slot>, Want> = HashMap::new();
        for (p, w) in preconditions(kind.shape, rng) {
            wants.insert(oriented(p, kind.mirrored), w);
        }
        let named: Vec<Vec<Slot>> = wants.keys().cloned().collect();
        for p in named {
            for i in 0..p.len() {
                wants.entry(p[..i].to_vec()).or_insert(ANY).internal = true;
            }
        }
        if depth == 0 {
            let top = wants.entry(Vec::new()).or_insert(ANY);
            if top.min > 1 || top.max < 1 {
                continue;
            }
            *top = Want { min: 1, max: 1, ..*top };
        }
        let wh = rng.gen_range(3..=6);
        let mut g = Gen { rng, wants };
        let Some(mut t) = g.subtree(&mut Vec::new(), wh, 0) else {
            continue;
        };
        let mut below = wh;
        let mut ux = Vec::new();
        for level in (0..depth).rev() {
            let w = if level == 0 { 1 } else { g.rng.gen_range(0..=1) };
            let other = g.free(below);
            let side = if g.rng.gen_bool(0.5) { Slot::Left } else { Slot::Right };
            t = match side {
                Slot::Left => Layout::internal(0, w, t, other),
                Slot::Right => Layout::internal(0, w, other, t),
            };
            ux.insert(0, side);
            below += w;
        }
        relabel(&mut t, &mut 0);
        return StepConfig { root: t, ux };
    }
}

/// Weighted path sums from the root to every leaf.
pub fn path_sums(t: &Layout<u64>) -> Vec<u32> {
    let mut out = Vec::new();
    let mut stack = vec![(t, 0)];
    while let Some((n, above)) = stack.pop() {
        let s = above + n.weight();
        match n {
            Layout::Leaf { .. } => out.push(s),
            Layout::Internal { left, right, .. } => {
                stack.push((right, s));
                stack.push((left, s));
            }
        }
    }
    out
}

/// Violations of a chromatic subtree whose root sits below a weight-1 sentinel.
pub fn layout_violations(t: &Layout<u64>) -> usize {
    let mut total = crate::simulator::edge_violations(1, t.weight());
    let mut stack = vec![t];
    while let Some(n) = stack.pop() {
        if let Layout::Internal { weight, left, right, .. } = n {
            for c in [left, right] {
                total += crate::simulator::edge_violations(*weight, c.weight());
                stack.push(c);
            }
        }
    }
    total
}
