//! Insert and delete as instances of the update template.

use super::{inf, leaf_data, side_of, ChromaticMap, Key, Node, NodeData, Value};
use crate::mwcas::{Child, Fresh};
use crate::template::{execute_template, Fail, ScxArgumentBundle, Sigma, TemplateSpec};
use crossbeam_epoch::Guard;
use smallvec::smallvec;

/// σ = ⟨p, l⟩. Replaces leaf `l` by a leaf for `key`, or by an internal node
/// over two leaves when the keys differ.
struct InsertSpec<'g, K, V> {
    p: &'g Node<K, V>,
    l: &'g Node<K, V>,
    key: K,
    value: V,
}

impl<K: Key, V: Value> InsertSpec<'_, K, V> {
    fn new_weight(&self) -> u32 {
        let (p, l) = (self.p.payload(), self.l.payload());
        if l.key == self.key {
            l.weight
        } else if l.key == inf() || p.key == inf() {
            1
        } else {
            l.weight - 1
        }
    }
}

impl<'g, K: Key, V: Value> TemplateSpec<'g, NodeData<K, V>> for InsertSpec<'g, K, V> {
    /// (created a red-red violation, previous value)
    type Output = (bool, Option<V>);

    fn condition(&self, sigma: &Sigma<'g, NodeData<K, V>>) -> bool {
        sigma.len() == 2
    }

    fn next_node(&self, sigma: &Sigma<'g, NodeData<K, V>>) -> Option<&'g Node<K, V>> {
        side_of(sigma.snapshot(0), self.l).map(|_| self.l)
    }

    fn scx_arguments(&self, sigma: &Sigma<'g, NodeData<K, V>>) -> ScxArgumentBundle<'g, NodeData<K, V>> {
        let slot = side_of(sigma.snapshot(0), self.l).expect("checked by next_node");
        let l = self.l.payload();
        let mut fresh = Fresh::new();
        if l.key == self.key {
            fresh.add(
                leaf_data(self.key, l.weight, Some(self.value.clone())),
                Child::Nil,
                Child::Nil,
            );
        } else {
            let a = fresh.add(leaf_data(self.key, 1, Some(self.value.clone())), Child::Nil, Child::Nil);
            let b = fresh.add(leaf_data(l.key, 1, l.value.clone()), Child::Nil, Child::Nil);
            let (lo, hi) = if self.key < l.key { (a, b) } else { (b, a) };
            let internal = NodeData {
                key: self.key.max(l.key),
                weight: self.new_weight(),
                leaf: false,
                value: None,
            };
            fresh.add(internal, Child::New(lo), Child::New(hi));
        }
        ScxArgumentBundle {
            v: smallvec![self.p, self.l],
            r: smallvec![self.l],
            fld: (self.p, slot),
            fresh,
        }
    }

    fn result(&self, _sigma: &Sigma<'g, NodeData<K, V>>) -> Self::Output {
        let l = self.l.payload();
        let created = self.new_weight() == 0 && self.p.payload().weight == 0;
        let old = if l.key == self.key { l.value.clone() } else { None };
        (created, old)
    }
}

/// σ = ⟨gp, p, p.left, p.right⟩, breadth-first. Replaces `p` by a copy of the
/// sibling `s` of leaf `l` carrying the combined weight.
struct DeleteSpec<'g, K, V> {
    gp: &'g Node<K, V>,
    p: &'g Node<K, V>,
    l: &'g Node<K, V>,
}

impl<'g, K: Key, V: Value> DeleteSpec<'g, K, V> {
    fn sibling(&self, sigma: &Sigma<'g, NodeData<K, V>>) -> &'g Node<K, V> {
        let (a, b) = (sigma.node(2), sigma.node(3));
        if std::ptr::eq(a, self.l) {
            b
        } else {
            a
        }
    }

    fn weight(&self, s: &Node<K, V>) -> u32 {
        let (gp, p) = (self.gp.payload(), self.p.payload());
        if p.key == inf() || gp.key == inf() {
            1
        } else {
            p.weight + s.payload().weight
        }
    }
}

impl<'g, K: Key, V: Value> TemplateSpec<'g, NodeData<K, V>> for DeleteSpec<'g, K, V> {
    /// (removed value, created an overweight violation)
    type Output = (Option<V>, bool);

    fn condition(&self, sigma: &Sigma<'g, NodeData<K, V>>) -> bool {
        sigma.len() == 4
    }

    fn next_node(&self, sigma: &Sigma<'g, NodeData<K, V>>) -> Option<&'g Node<K, V>> {
        match sigma.len() {
            1 => side_of(sigma.snapshot(0), self.p).map(|_| self.p),
            2 => {
                let s = sigma.snapshot(1);
                side_of(s, self.l)?;
                s[0]
            }
            _ => sigma.snapshot(1)[1],
        }
    }

    fn scx_arguments(&self, sigma: &Sigma<'g, NodeData<K, V>>) -> ScxArgumentBundle<'g, NodeData<K, V>> {
        let slot = side_of(sigma.snapshot(0), self.p).expect("checked by next_node");
        let s = self.sibling(sigma);
        let ss = sigma.snapshot_of(s).expect("sibling was LLXed");
        let d = s.payload();
        let mut fresh = Fresh::new();
        let c = |o: Option<&'g Node<K, V>>| o.map_or(Child::Nil, Child::Old);
        fresh.add(
            NodeData {
                key: d.key,
                weight: self.weight(s),
                leaf: d.leaf,
                value: d.value.clone(),
            },
            c(ss[0]),
            c(ss[1]),
        );
        let (a, b) = (sigma.node(2), sigma.node(3));
        ScxArgumentBundle {
            v: smallvec![self.gp, self.p, a, b],
            r: smallvec![self.p, a, b],
            fld: (self.gp, slot),
            fresh,
        }
    }

    fn result(&self, sigma: &Sigma<'g, NodeData<K, V>>) -> Self::Output {
        (self.l.payload().value.clone(), self.weight(self.sibling(sigma)) > 1)
    }
}

impl<K: Key, V: Value> ChromaticMap<K, V> {
    /// One insertion attempt below `p`, where `l` was its child on the search
    /// path. Returns whether a red-red violation was created and the previous
    /// value.
    pub fn try_insert<'g>(
        &'g self,
        guard: &'g Guard,
        p: &'g Node<K, V>,
        l: &'g Node<K, V>,
        key: K,
        value: V,
    ) -> Result<(bool, Option<V>), Fail> {
        let spec = InsertSpec { p, l, key, value };
        let mut up = self.update(guard);
        execute_template(&mut up, &spec, p)
    }

    /// One deletion attempt of leaf `l` with parent `p` and grandparent `gp`.
    /// Returns the removed value and whether an overweight violation was
    /// created.
    pub fn try_delete<'g>(
        &'g self,
        guard: &'g Guard,
        gp: &'g Node<K, V>,
        p: &'g Node<K, V>,
        l: &'g Node<K, V>,
    ) -> Result<(Option<V>, bool), Fail> {
        let spec = DeleteSpec { gp, p, l };
        let mut up = self.update(guard);
        execute_template(&mut up, &spec, gp)
    }
}
