//! Invariant audit of a quiescent snapshot in the walker's text format.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

/// A key as written in a snapshot; `None` is the reserved ∞.
pub type SnapKey = Option<i128>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedNode {
    pub id: u64,
    pub key: SnapKey,
    pub weight: u32,
    pub leaf: bool,
    pub left: Option<u64>,
    pub right: Option<u64>,
    pub value: Option<String>,
}

/// A parsed snapshot whose records form a down-tree under `entry`.
#[derive(Clone, Debug)]
pub struct ParsedSnapshot {
    pub entry: u64,
    pub nodes: HashMap<u64, ParsedNode>,
    /// Reachable ids, each after its parent.
    pub preorder: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "snapshot line {}: {}", self.line, self.reason)
    }
}

impl std::error::Error for ParseError {}

fn err(line: usize, reason: impl Into<String>) -> ParseError {
    ParseError {
        line,
        reason: reason.into(),
    }
}

pub fn parse_snapshot(text: &str) -> Result<ParsedSnapshot, ParseError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let (n, header) = lines.next().ok_or_else(|| err(1, "empty snapshot"))?;
    let entry = match header.split_whitespace().collect::<Vec<_>>()[..] {
        ["entry", id] => id.parse().map_err(|_| err(n, "bad entry id"))?,
        _ => return Err(err(n, "expected `entry <id>`")),
    };
    let mut nodes = HashMap::new();
    for (n, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        if !(6..=7).contains(&f.len()) {
            return Err(err(n, format!("expected 6 or 7 fields, found {}", f.len())));
        }
        let id: u64 = f[0].parse().map_err(|_| err(n, "bad id"))?;
        let key = match f[1] {
            "inf" => None,
            k => Some(k.parse().map_err(|_| err(n, "bad key"))?),
        };
        let weight = f[2].parse().map_err(|_| err(n, "bad weight"))?;
        let leaf = match f[3] {
            "leaf" => true,
            "internal" => false,
            _ => return Err(err(n, "expected leaf or internal")),
        };
        let child = |s: &str| match s {
            "-" => Ok(None),
            c => c.parse().map(Some).map_err(|_| err(n, "bad child id")),
        };
        let node = ParsedNode {
            id,
            key,
            weight,
            leaf,
            left: child(f[4])?,
            right: child(f[5])?,
            value: f.get(6).map(|s| s.to_string()),
        };
        if nodes.insert(id, node).is_some() {
            return Err(err(n, format!("duplicate id {id}")));
        }
    }
    if !nodes.contains_key(&entry) {
        return Err(err(1, format!("entry {entry} has no record")));
    }
    let mut preorder = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut stack = vec![entry];
    while let Some(id) = stack.pop() {
        if !seen.insert(id) {
            return Err(err(0, format!("record {id} is reachable twice; not a down-tree")));
        }
        preorder.push(id);
        let node = nodes.get(&id).ok_or_else(|| err(0, format!("dangling child id {id}")))?;
        stack.extend(node.right);
        stack.extend(node.left);
    }
    Ok(ParsedSnapshot { entry, nodes, preorder })
}

/// Outcome of one check, with the ids of offending records.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckResult {
    pub pass: bool,
    pub nodes: Vec<u64>,
    pub detail: String,
}

impl CheckResult {
    fn from_offenders(nodes: Vec<u64>, detail: String) -> Self {
        CheckResult {
            pass: nodes.is_empty(),
            nodes,
            detail,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditReport {
    pub bst_order: CheckResult,
    pub equal_weighted_paths: CheckResult,
    pub sentinel_shape: CheckResult,
    pub violation_count: CheckResult,
    pub height_vs_weighted_height: CheckResult,
    pub leaf_set_vs_oracle: CheckResult,
    pub violations: usize,
    /// Nodes on a longest path from the chromatic root; 0 when empty.
    pub height: usize,
    pub weighted_height: u64,
    pub c: usize,
}

impl AuditReport {
    pub fn checks(&self) -> [(&'static str, &CheckResult); 6] {
        [
            ("bstOrder", &self.bst_order),
            ("equalWeightedPaths", &self.equal_weighted_paths),
            ("sentinelShape", &self.sentinel_shape),
            ("violationCount", &self.violation_count),
            ("heightVsWeightedHeight", &self.height_vs_weighted_height),
            ("leafSetVsOracle", &self.leaf_set_vs_oracle),
        ]
    }

    pub fn passed(&self) -> bool {
        self.checks().iter().all(|(_, c)| c.pass)
    }

    /// One JSON object per check, one per line.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for (name, c) in self.checks() {
            let ids: Vec<String> = c.nodes.iter().map(u64::to_string).collect();
            out += &format!(
                "{{\"check\":\"{name}\",\"pass\":{},\"nodes\":[{}],\"detail\":\"{}\"}}\n",
                c.pass,
                ids.join(","),
                c.detail.replace('\\', "\\\\").replace('"', "\\\"")
            );
        }
        out
    }
}

/// Audits a snapshot of a quiescent tree. `c` is the number of violations
/// tolerated (the in-flight update count when sampled mid-run). `expected`
/// is the oracle's content, when one is available.
pub fn audit_quiescent(text: &str, c: usize, expected: Option<&BTreeMap<i128, String>>) -> Result<AuditReport, ParseError> {
    Ok(audit_parsed(&parse_snapshot(text)?, c, expected))
}

pub fn audit_parsed(s: &ParsedSnapshot, c: usize, expected: Option<&BTreeMap<i128, String>>) -> AuditReport {
    let node = |id: u64| &s.nodes[&id];
    let (sentinel_shape, root) = sentinel_check(s);

    // Bounds `[lo, hi)` for each chromatic record: left subtree below the
    // key, right subtree at or above it.
    let mut bst_bad = Vec::new();
    let mut arity_bad = Vec::new();
    let mut leaves = Vec::new();
    let mut sums = Vec::new();
    let mut order = Vec::new();
    if let Some(root) = root {
        let mut stack = vec![(root, None::<i128>, None::<i128>, 0u64)];
        while let Some((id, lo, hi, above)) = stack.pop() {
            order.push(id);
            let n = node(id);
            let sum = above + u64::from(n.weight);
            let in_range = n.key.is_some_and(|k| lo.is_none_or(|lo| lo <= k) && hi.is_none_or(|hi| k < hi));
            if !in_range {
                bst_bad.push(id);
            }
            match (n.leaf, n.left, n.right) {
                (true, None, None) => {
                    leaves.push(id);
                    sums.push((id, sum));
                }
                (false, Some(l), Some(r)) => {
                    let k = n.key;
                    stack.push((r, k.or(lo), hi, sum));
                    stack.push((l, lo, k.or(hi), sum));
                }
                _ => arity_bad.push(id),
            }
        }
    }
    bst_bad.extend(&arity_bad);
    let bst_order = CheckResult::from_offenders(
        bst_bad,
        format!("{} chromatic records, {} leaves", order.len(), leaves.len()),
    );

    let target = sums.first().map(|&(_, s)| s);
    let uneven: Vec<u64> = sums.iter().filter(|&&(_, s)| Some(s) != target).map(|&(id, _)| id).collect();
    let equal_weighted_paths = CheckResult::from_offenders(
        uneven,
        match target {
            Some(t) => format!("first leaf path sum {t}"),
            None => "no chromatic leaves".into(),
        },
    );

    let mut violations = 0;
    let mut violators = Vec::new();
    for &id in &s.preorder {
        let n = node(id);
        for ch in [n.left, n.right].into_iter().flatten() {
            let w = node(ch).weight;
            let v = if w > 1 {
                (w - 1) as usize
            } else {
                usize::from(w == 0 && n.weight == 0)
            };
            if v > 0 {
                violations += v;
                violators.push(ch);
            }
        }
    }
    let violation_count = CheckResult {
        pass: violations <= c,
        nodes: violators,
        detail: format!("{violations} violations, {c} tolerated"),
    };

    // Bottom-up h and wh over the chromatic subtree.
    let mut h: HashMap<u64, (usize, u64)> = HashMap::new();
    for &id in order.iter().rev() {
        let n = node(id);
        let below = [n.left, n.right]
            .into_iter()
            .flatten()
            .filter_map(|ch| h.get(&ch).copied())
            .fold((0, 0), |(a, b), (x, y)| (a.max(x), b.max(y)));
        h.insert(id, (below.0 + 1, below.1 + u64::from(n.weight)));
    }
    let (height, weighted_height) = root.and_then(|r| h.get(&r).copied()).unwrap_or((0, 0));
    let bound = 2 * weighted_height + c as u64;
    let height_vs_weighted_height = CheckResult {
        pass: height as u64 <= bound,
        nodes: if height as u64 <= bound { vec![] } else { root.into_iter().collect() },
        detail: format!("h {height}, wh {weighted_height}, bound 2wh+c = {bound}"),
    };

    let leaf_set_vs_oracle = match expected {
        None => CheckResult {
            pass: true,
            nodes: vec![],
            detail: format!("{} leaves; no oracle supplied", leaves.len()),
        },
        Some(exp) => {
            let mut bad = Vec::new();
            let mut found = BTreeMap::new();
            for &id in &leaves {
                let n = node(id);
                match (n.key, &n.value) {
                    (Some(k), Some(v)) if exp.get(&k) == Some(v) && found.insert(k, ()).is_none() => {}
                    _ => bad.push(id),
                }
            }
            let missing = exp.keys().filter(|k| !found.contains_key(k)).count();
            CheckResult {
                pass: bad.is_empty() && missing == 0,
                nodes: bad,
                detail: format!("{} leaves, {} expected, {missing} missing", leaves.len(), exp.len()),
            }
        }
    };

    AuditReport {
        bst_order,
        equal_weighted_paths,
        sentinel_shape,
        violation_count,
        height_vs_weighted_height,
        leaf_set_vs_oracle,
        violations,
        height,
        weighted_height,
        c,
    }
}

/// The entry has key ∞, weight 1 and only a left child. That child is
/// either the ∞ leaf (empty map) or an ∞ internal record over the chromatic
/// root and the ∞ leaf; the chromatic root has weight 1.
fn sentinel_check(s: &ParsedSnapshot) -> (CheckResult, Option<u64>) {
    let node = |id: u64| &s.nodes[&id];
    let inf_w1 = |n: &ParsedNode| n.key.is_none() && n.weight == 1;
    let mut bad = Vec::new();
    let e = node(s.entry);
    if !inf_w1(e) || e.leaf || e.right.is_some() {
        bad.push(e.id);
    }
    let mut root = None;
    let mut shape = "malformed";
    if let Some(t) = e.left.map(node) {
        if t.leaf {
            shape = "empty";
            if !inf_w1(t) {
                bad.push(t.id);
            }
        } else {
            shape = "nonempty";
            if !inf_w1(t) {
                bad.push(t.id);
            }
            match t.right.map(node) {
                Some(r) if r.leaf && inf_w1(r) => {}
                Some(r) => bad.push(r.id),
                None => bad.push(t.id),
            }
            if let Some(c) = t.left.map(node) {
                if c.key.is_none() || c.weight != 1 {
                    bad.push(c.id);
                }
                root = Some(c.id);
            }
        }
    }
    (CheckResult::from_offenders(bad, format!("{shape} top")), root)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EMPTY: &str = "entry 1\n1 inf 1 internal 2 -\n2 inf 1 leaf - -\n";

    // Chromatic root 4 over leaves 5 and 6.
    const TWO: &str = "entry 1\n\
        1 inf 1 internal 2 -\n\
        2 inf 1 internal 4 3\n\
        4 20 1 internal 5 6\n\
        5 10 1 leaf - - a\n\
        6 20 1 leaf - - b\n\
        3 inf 1 leaf - -\n";

    fn failing(r: &AuditReport) -> Vec<&'static str> {
        r.checks().iter().filter(|(_, c)| !c.pass).map(|(n, _)| *n).collect()
    }

    #[test]
    fn empty_snapshot_passes() {
        let r = audit_quiescent(EMPTY, 0, None).unwrap();
        assert!(r.passed(), "{}", r.to_lines());
        assert_eq!((r.violations, r.height, r.weighted_height), (0, 0, 0));
    }

    #[test]
    fn small_tree_passes_with_oracle() {
        let exp: BTreeMap<i128, String> = [(10, "a".to_string()), (20, "b".to_string())].into();
        let r = audit_quiescent(TWO, 0, Some(&exp)).unwrap();
        assert!(r.passed(), "{}", r.to_lines());
        assert_eq!((r.height, r.weighted_height), (2, 2));
        assert_eq!(r.to_lines().lines().count(), 6);
    }

    #[test]
    fn swapped_children_break_order() {
        let text = TWO.replace("4 20 1 internal 5 6", "4 20 1 internal 6 5");
        let r = audit_quiescent(&text, 0, None).unwrap();
        assert_eq!(failing(&r), vec!["bstOrder"]);
    }

    #[test]
    fn wrong_weight_breaks_paths_and_counts() {
        let text = TWO.replace("5 10 1 leaf", "5 10 3 leaf");
        let r = audit_quiescent(&text, 0, None).unwrap();
        assert_eq!(failing(&r), vec!["equalWeightedPaths", "violationCount"]);
        assert_eq!(r.violation_count.nodes, vec![5]);
        assert!(audit_quiescent(&text, 2, None).unwrap().violation_count.pass);
    }

    #[test]
    fn red_root_breaks_sentinel_shape() {
        let text = TWO.replace("4 20 1 internal", "4 20 0 internal");
        let r = audit_quiescent(&text, 0, None).unwrap();
        assert!(failing(&r).contains(&"sentinelShape"));
    }

    #[test]
    fn tall_tree_breaks_height_bound() {
        // A left spine of red records: h = 5, wh = 2.
        let text = "entry 1\n1 inf 1 internal 2 -\n2 inf 1 internal 10 3\n3 inf 1 leaf - -\n\
            10 50 1 internal 11 19\n11 40 0 internal 12 18\n12 30 0 internal 13 17\n\
            13 20 0 internal 14 16\n14 10 1 leaf - -\n16 20 1 leaf - -\n17 30 1 leaf - -\n\
            18 40 1 leaf - -\n19 50 1 leaf - -\n";
        let r = audit_quiescent(text, 0, None).unwrap();
        assert!(!r.height_vs_weighted_height.pass);
        assert_eq!((r.height, r.weighted_height), (5, 2));
        assert!(audit_quiescent(text, 3, None).unwrap().height_vs_weighted_height.pass);
    }

    #[test]
    fn oracle_mismatch_is_reported() {
        let exp: BTreeMap<i128, String> = [(10, "a".to_string()), (30, "c".to_string())].into();
        let r = audit_quiescent(TWO, 0, Some(&exp)).unwrap();
        assert_eq!(failing(&r), vec!["leafSetVsOracle"]);
        assert_eq!(r.leaf_set_vs_oracle.nodes, vec![6]);
    }

    #[test]
    fn malformed_text_is_an_error() {
        assert!(audit_quiescent("", 0, None).is_err());
        assert!(audit_quiescent("entry 1\n1 inf 1 internal 2\n", 0, None).is_err());
        assert!(audit_quiescent("entry 1\n1 inf 1 internal 9 -\n", 0, None).is_err());
        let shared = "entry 1\n1 inf 1 internal 2 2\n2 inf 1 leaf - -\n";
        assert!(audit_quiescent(shared, 0, None).is_err());
    }
}
