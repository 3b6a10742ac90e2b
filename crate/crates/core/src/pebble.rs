//! Pebble-passing systems: two-place process types exchanging a pebble along
//! edges. Coverability is decided exactly with the flow algebra.

use std::collections::{BTreeMap, BTreeSet};

use crate::counting::{Answer, Mode, Verdict};
use crate::grammar::{self, Algebra, HrGrammar, HrTerm, Query, QueryKind};
use crate::systems::{Declarations, Edge, OpenSystem, Renaming, VertexId};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum PebbleError {
    #[error("not a pebble-passing specification: {0}")]
    NotPps(String),
    #[error("query `{query}`: {reason}")]
    Query { query: String, reason: String },
    #[error("unknown source `{0}`")]
    UnknownSource(String),
}

pub const SEND: &str = "send";
pub const RECV: &str = "recv";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PpsType {
    /// Place holding the pebble.
    pub top: String,
    /// Place marking a hole.
    pub bot: String,
    pub init_top: bool,
}

/// The pebble-passing reading of the process types used by a grammar.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PebbleSignature {
    pub types: BTreeMap<String, PpsType>,
    pub source_types: BTreeMap<String, String>,
}

impl PebbleSignature {
    pub fn of_source(&self, sigma: &str) -> Result<&PpsType, PebbleError> {
        self.source_types
            .get(sigma)
            .and_then(|t| self.types.get(t))
            .ok_or_else(|| PebbleError::UnknownSource(sigma.to_string()))
    }

    /// `(type, is_top)` of a place name.
    pub fn place(&self, q: &str) -> Option<(&str, bool)> {
        self.types.iter().find_map(|(n, t)| {
            if t.top == q {
                Some((n.as_str(), true))
            } else if t.bot == q {
                Some((n.as_str(), false))
            } else {
                None
            }
        })
    }
}

fn edge_label_ok(l: &(String, String)) -> bool {
    (l.0 == SEND && l.1 == RECV) || (l.0 == RECV && l.1 == SEND)
}

fn collect_edges<'a>(t: &'a HrTerm, out: &mut Vec<(&'a (String, String), &'a str, &'a str)>) {
    match t {
        HrTerm::Edge { label, s1, s2 } => out.push((label, s1, s2)),
        HrTerm::Restrict { body, .. } | HrTerm::Rename { body, .. } => collect_edges(body, out),
        HrTerm::Compose(a, b) => {
            collect_edges(a, out);
            collect_edges(b, out);
        }
        HrTerm::Nt(_) => {}
    }
}

/// Accepts grammars whose edge constants are `(send,recv)` or `(recv,send)`
/// over two-place types with `send: top -> bot` and `recv: bot -> top`.
pub fn check_pps(decls: &Declarations, g: &HrGrammar) -> Result<PebbleSignature, PebbleError> {
    let mut used = BTreeSet::new();
    for r in &g.rules {
        let mut edges = Vec::new();
        collect_edges(&r.rhs, &mut edges);
        for (label, s1, s2) in edges {
            if !edge_label_ok(label) {
                return Err(PebbleError::NotPps(format!(
                    "edge label ({},{}) is neither (send,recv) nor (recv,send)",
                    label.0, label.1
                )));
            }
            for s in [s1, s2] {
                let t = decls
                    .sources
                    .get(s)
                    .ok_or_else(|| PebbleError::UnknownSource(s.to_string()))?;
                used.insert(t.clone());
            }
        }
    }
    let mut types = BTreeMap::new();
    for name in used {
        let t = decls
            .types
            .get(&name)
            .ok_or_else(|| PebbleError::NotPps(format!("unknown type `{name}`")))?;
        let bad = |why: &str| PebbleError::NotPps(format!("process type `{name}` {why}"));
        if t.places.len() != 2 {
            return Err(bad("does not have exactly two places"));
        }
        if !t.internal.is_empty() {
            return Err(bad("has internal transitions"));
        }
        let keys: Vec<&str> = t.observable.keys().map(|s| s.as_str()).collect();
        if keys != [RECV, SEND] {
            return Err(bad("must have exactly the observable transitions send and recv"));
        }
        let (top, bot) = &t.observable[SEND];
        if top == bot || t.observable[RECV] != (bot.clone(), top.clone()) {
            return Err(bad("must move the pebble with send and take it with recv"));
        }
        types.insert(
            name.clone(),
            PpsType {
                top: top.clone(),
                bot: bot.clone(),
                init_top: t.initial == *top,
            },
        );
    }
    let source_types = decls
        .sources
        .iter()
        .filter(|(_, t)| types.contains_key(*t))
        .map(|(s, t)| (s.clone(), t.clone()))
        .collect();
    Ok(PebbleSignature { types, source_types })
}

/// A pebble moving along an edge, from `from` to `to`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Move {
    pub from: VertexId,
    pub to: VertexId,
}

impl Move {
    pub fn of_edge(e: &Edge) -> Move {
        if e.label.0 == SEND {
            Move { from: e.from, to: e.to }
        } else {
            Move { from: e.to, to: e.from }
        }
    }
}

pub type Footprint = BTreeMap<VertexId, i64>;

/// Pebble positions of the initial marking of a pps system.
pub fn initial_footprint(sig: &PebbleSignature, s: &OpenSystem) -> Footprint {
    s.vertices
        .iter()
        .map(|(v, t)| (*v, i64::from(sig.types.get(t).is_some_and(|p| p.init_top))))
        .collect()
}

/// -1 at every tail, +1 at every head.
pub fn footprint_of_sequence(seq: &[Move]) -> Footprint {
    let mut fp = Footprint::new();
    for m in seq {
        *fp.entry(m.from).or_insert(0) -= 1;
        *fp.entry(m.to).or_insert(0) += 1;
    }
    fp
}

pub fn add(a: &Footprint, b: &Footprint) -> Footprint {
    let mut out = a.clone();
    for (v, x) in b {
        *out.entry(*v).or_insert(0) += x;
    }
    out
}

pub fn is_valid(fp: &Footprint) -> bool {
    fp.values().all(|&x| x == 0 || x == 1)
}

/// True iff some sub-multiset of `seq` with the same footprint can be fired
/// from the pebble positions `m`.
pub fn fireable_subsequence_exists(m: &Footprint, seq: &[Move]) -> bool {
    is_valid(&add(m, &footprint_of_sequence(seq)))
}

/// Builds a fireable reordering of a sub-multiset of `seq` whose footprint
/// equals that of `seq`: cycles are dropped, then a move from a pebble to a
/// hole on a maximal path is fired, repeatedly.
pub fn fireable_subsequence(m: &Footprint, seq: &[Move]) -> Option<Vec<Move>> {
    if !fireable_subsequence_exists(m, seq) {
        return None;
    }
    let mut cur = m.clone();
    let mut remaining: Vec<Move> = seq.to_vec();
    let mut out = Vec::new();
    while !remaining.is_empty() {
        if let Some(cycle) = find_cycle(&remaining) {
            let mut drop: Vec<usize> = cycle;
            drop.sort_unstable_by(|a, b| b.cmp(a));
            for i in drop {
                remaining.swap_remove(i);
            }
            continue;
        }
        let path = maximal_path(&remaining);
        let pos = path
            .iter()
            .position(|&i| {
                cur.get(&remaining[i].from) == Some(&1) && cur.get(&remaining[i].to).copied().unwrap_or(0) == 0
            })
            .expect("a valid acyclic footprint has a pebble-to-hole step");
        let i = path[pos];
        let mv = remaining.swap_remove(i);
        *cur.entry(mv.from).or_insert(0) -= 1;
        *cur.entry(mv.to).or_insert(0) += 1;
        out.push(mv);
    }
    Some(out)
}

/// Indices of the moves of some directed cycle.
fn find_cycle(moves: &[Move]) -> Option<Vec<usize>> {
    let mut adj: BTreeMap<VertexId, Vec<usize>> = BTreeMap::new();
    for (i, m) in moves.iter().enumerate() {
        adj.entry(m.from).or_default().push(i);
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state: BTreeMap<VertexId, u8> = BTreeMap::new();
    let starts: Vec<VertexId> = adj.keys().copied().collect();
    for s in starts {
        if state.get(&s).copied().unwrap_or(0) != 0 {
            continue;
        }
        let mut stack: Vec<(VertexId, usize)> = vec![(s, 0)];
        let mut via: Vec<usize> = Vec::new();
        state.insert(s, 1);
        while let Some(&mut (v, ref mut k)) = stack.last_mut() {
            let out = adj.get(&v).map(|x| x.as_slice()).unwrap_or(&[]);
            if *k < out.len() {
                let e = out[*k];
                *k += 1;
                let w = moves[e].to;
                match state.get(&w).copied().unwrap_or(0) {
                    0 => {
                        state.insert(w, 1);
                        stack.push((w, 0));
                        via.push(e);
                    }
                    1 => {
                        let mut cycle = vec![e];
                        let start = stack.iter().position(|&(u, _)| u == w).unwrap();
                        cycle.extend_from_slice(&via[start..]);
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                state.insert(v, 2);
                stack.pop();
                via.pop();
            }
        }
    }
    None
}

/// Move indices of a maximal path starting at a vertex without incoming moves.
fn maximal_path(moves: &[Move]) -> Vec<usize> {
    let heads: BTreeSet<VertexId> = moves.iter().map(|m| m.to).collect();
    let start = moves
        .iter()
        .map(|m| m.from)
        .find(|v| !heads.contains(v))
        .expect("acyclic");
    let mut path = Vec::new();
    let mut v = start;
    while let Some(i) = moves.iter().position(|m| m.from == v) {
        path.push(i);
        v = moves[i].to;
    }
    path
}

pub fn compute_k(target: &BTreeMap<String, u64>) -> u64 {
    target.values().sum()
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowTuple {
    /// In-degree of each visible source (zero entries omitted).
    pub plus: BTreeMap<String, u32>,
    /// Out-degree of each visible source (zero entries omitted).
    pub minus: BTreeMap<String, u32>,
    /// Closed vertices ending in each queried place, capped by the target.
    pub n: BTreeMap<String, u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowSet {
    pub visible: BTreeSet<String>,
    pub tuples: BTreeSet<FlowTuple>,
}

fn get(m: &BTreeMap<String, u32>, k: &str) -> u32 {
    m.get(k).copied().unwrap_or(0)
}

fn put(m: &mut BTreeMap<String, u32>, k: String, v: u32) {
    if v == 0 {
        m.remove(&k);
    } else {
        m.insert(k, v);
    }
}

pub struct FlowAlgebra {
    pub sig: PebbleSignature,
    pub k: u32,
    pub target: BTreeMap<String, u32>,
}

impl FlowAlgebra {
    pub fn new(sig: PebbleSignature, target: BTreeMap<String, u32>) -> Self {
        let k = target.values().sum();
        FlowAlgebra { sig, k, target }
    }

    /// Whether the closed image of `x` contains the target.
    pub fn accepts(&self, x: &FlowSet) -> Result<bool, PebbleError> {
        let closed = self.restrict(&BTreeSet::new(), x)?;
        let want: BTreeMap<String, u32> = self
            .target
            .iter()
            .filter(|(_, &v)| v > 0)
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        Ok(closed.tuples.iter().any(|t| t.n == want))
    }

    /// Upper bound on the number of tuples of a set with this many visible sources.
    pub fn cardinality_bound(&self, visible: usize) -> u128 {
        u128::from(self.k + 1).pow((2 * visible + self.target.len()) as u32)
    }
}

impl Algebra for FlowAlgebra {
    type Elem = FlowSet;
    type Error = PebbleError;

    fn edge(&self, label: &(String, String), s1: &str, s2: &str) -> Result<FlowSet, PebbleError> {
        if !edge_label_ok(label) {
            return Err(PebbleError::NotPps(format!("edge label ({},{})", label.0, label.1)));
        }
        let (tail, head) = if label.0 == SEND { (s1, s2) } else { (s2, s1) };
        let tuples = (0..=self.k)
            .map(|k| {
                let mut t = FlowTuple {
                    plus: BTreeMap::new(),
                    minus: BTreeMap::new(),
                    n: BTreeMap::new(),
                };
                put(&mut t.plus, head.to_string(), k);
                put(&mut t.minus, tail.to_string(), k);
                t
            })
            .collect();
        Ok(FlowSet {
            visible: BTreeSet::from([s1.to_string(), s2.to_string()]),
            tuples,
        })
    }

    fn restrict(&self, keep: &BTreeSet<String>, x: &FlowSet) -> Result<FlowSet, PebbleError> {
        let closed: Vec<&String> = x.visible.iter().filter(|s| !keep.contains(*s)).collect();
        let mut tuples = BTreeSet::new();
        'tuples: for t in &x.tuples {
            let mut out = t.clone();
            for s in &closed {
                let ty = self.sig.of_source(s)?;
                let v = i64::from(get(&t.plus, s)) - i64::from(get(&t.minus, s)) + i64::from(ty.init_top);
                let place = match v {
                    0 => &ty.bot,
                    1 => &ty.top,
                    _ => continue 'tuples,
                };
                if let Some(&cap) = self.target.get(place) {
                    let n = (get(&out.n, place) + 1).min(cap);
                    put(&mut out.n, place.clone(), n);
                }
                out.plus.remove(*s);
                out.minus.remove(*s);
            }
            tuples.insert(out);
        }
        Ok(FlowSet {
            visible: x.visible.intersection(keep).cloned().collect(),
            tuples,
        })
    }

    fn rename(&self, alpha: &Renaming, x: &FlowSet) -> Result<FlowSet, PebbleError> {
        let re = |m: &BTreeMap<String, u32>| -> BTreeMap<String, u32> {
            m.iter().map(|(k, v)| (alpha.apply(k).to_string(), *v)).collect()
        };
        Ok(FlowSet {
            visible: x.visible.iter().map(|s| alpha.apply(s).to_string()).collect(),
            tuples: x
                .tuples
                .iter()
                .map(|t| FlowTuple {
                    plus: re(&t.plus),
                    minus: re(&t.minus),
                    n: t.n.clone(),
                })
                .collect(),
        })
    }

    fn compose(&self, a: &FlowSet, b: &FlowSet) -> Result<FlowSet, PebbleError> {
        let mut tuples = BTreeSet::new();
        for x in &a.tuples {
            'pairs: for y in &b.tuples {
                let mut t = x.clone();
                for (s, v) in &y.plus {
                    let sum = get(&t.plus, s) + v;
                    if sum > self.k {
                        continue 'pairs;
                    }
                    put(&mut t.plus, s.clone(), sum);
                }
                for (s, v) in &y.minus {
                    let sum = get(&t.minus, s) + v;
                    if sum > self.k {
                        continue 'pairs;
                    }
                    put(&mut t.minus, s.clone(), sum);
                }
                for (q, v) in &y.n {
                    let cap = self.target.get(q).copied().unwrap_or(0);
                    let sum = (get(&t.n, q) + v).min(cap);
                    put(&mut t.n, q.clone(), sum);
                }
                tuples.insert(t);
            }
        }
        Ok(FlowSet {
            visible: a.visible.union(&b.visible).cloned().collect(),
            tuples,
        })
    }
}

/// Target counts per pps place for a cover query, rejecting pinned places.
pub fn pps_target(sig: &PebbleSignature, q: &Query) -> Result<BTreeMap<String, u64>, PebbleError> {
    let err = |reason: String| PebbleError::Query {
        query: q.id.clone(),
        reason,
    };
    if q.kind != QueryKind::Cover {
        return Err(err("pebble mode decides cover queries only".into()));
    }
    let mut target = BTreeMap::new();
    for (r, k) in &q.constraints {
        if r.source.is_some() {
            return Err(err(format!(
                "source-pinned place `{r}` is not supported in pebble mode"
            )));
        }
        if sig.place(&r.place).is_none() {
            return Err(err(format!("`{r}` is not a pebble-passing place of the grammar")));
        }
        let e = target.entry(r.place.clone()).or_insert(0);
        *e = (*e).max(*k);
    }
    target.retain(|_, k| *k > 0);
    Ok(target)
}

pub fn decide_cover_pps(decls: &Declarations, g: &HrGrammar, q: &Query) -> Result<Verdict, PebbleError> {
    let sig = check_pps(decls, g)?;
    let target = pps_target(&sig, q)?;
    let verdict = |answer| Verdict {
        query: q.id.clone(),
        mode: Mode::Pebble,
        answer,
        witness: None,
        notes: vec![],
    };
    let k = compute_k(&target);
    if k == 0 {
        let nonempty = g.axioms.iter().any(|x| g.min_sizes().contains_key(x));
        return Ok(verdict(if nonempty {
            Answer::Coverable
        } else {
            Answer::Uncoverable
        }));
    }
    let target32 = target
        .iter()
        .map(|(p, &v)| {
            u32::try_from(v)
                .map(|v| (p.clone(), v))
                .map_err(|_| PebbleError::Query {
                    query: q.id.clone(),
                    reason: "target count too large".into(),
                })
        })
        .collect::<Result<_, _>>()?;
    let alg = FlowAlgebra::new(sig, target32);
    let lang = grammar::kleene_language(g, &alg)?;
    for x in &lang.axioms {
        if alg.accepts(x)? {
            return Ok(verdict(Answer::Coverable));
        }
    }
    Ok(verdict(Answer::Uncoverable))
}

/// Whether some edge multiset with every vertex in- and out-degree at most `k`
/// leads, from the initial pebble positions, to a valid footprint covering
/// `target` (pps place -> count).
pub fn degree_bounded_cover(sig: &PebbleSignature, s: &OpenSystem, target: &BTreeMap<String, u64>, k: u32) -> bool {
    let moves: Vec<Move> = s.edges.iter().map(Move::of_edge).collect();
    let m0 = initial_footprint(sig, s);
    let covers = |fp: &Footprint| {
        let mut count: BTreeMap<&str, u64> = BTreeMap::new();
        for (v, t) in &s.vertices {
            let Some(p) = sig.types.get(t) else { continue };
            let place = if fp.get(v).copied().unwrap_or(0) == 1 {
                &p.top
            } else {
                &p.bot
            };
            *count.entry(place.as_str()).or_insert(0) += 1;
        }
        target
            .iter()
            .all(|(q, n)| count.get(q.as_str()).copied().unwrap_or(0) >= *n)
    };
    let mut indeg: BTreeMap<VertexId, u32> = BTreeMap::new();
    let mut outdeg: BTreeMap<VertexId, u32> = BTreeMap::new();
    fn go(
        i: usize,
        moves: &[Move],
        k: u32,
        fp: &mut Footprint,
        indeg: &mut BTreeMap<VertexId, u32>,
        outdeg: &mut BTreeMap<VertexId, u32>,
        covers: &dyn Fn(&Footprint) -> bool,
    ) -> bool {
        if i == moves.len() {
            return is_valid(fp) && covers(fp);
        }
        let m = moves[i];
        let mut taken = 0;
        let mut found = go(i + 1, moves, k, fp, indeg, outdeg, covers);
        while !found && indeg.get(&m.to).copied().unwrap_or(0) < k && outdeg.get(&m.from).copied().unwrap_or(0) < k {
            taken += 1;
            *indeg.entry(m.to).or_insert(0) += 1;
            *outdeg.entry(m.from).or_insert(0) += 1;
            *fp.entry(m.from).or_insert(0) -= 1;
            *fp.entry(m.to).or_insert(0) += 1;
            found = go(i + 1, moves, k, fp, indeg, outdeg, covers);
        }
        for _ in 0..taken {
            *indeg.get_mut(&m.to).unwrap() -= 1;
            *outdeg.get_mut(&m.from).unwrap() -= 1;
            *fp.get_mut(&m.from).unwrap() += 1;
            *fp.get_mut(&m.to).unwrap() -= 1;
        }
        found
    }
    let mut fp = m0;
    go(0, &moves, k, &mut fp, &mut indeg, &mut outdeg, &covers)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::grammar::{eval_term, parse_spec, Expectation, PlaceRef};

    pub const RING: &str = "
process Lead {
  places ltop lbot
  init ltop
  obs send : ltop -> lbot
  obs recv : lbot -> ltop
}
process Node {
  places ptop pbot
  init pbot
  obs send : ptop -> pbot
  obs recv : pbot -> ptop
}
source a : Lead
source b, c : Node
grammar {
  axiom R
  R -> restrict {} (P + edge (send,recv) (b,a))
  P -> edge (send,recv) (a,b)
  P -> restrict {a,b} rename (b<->c) (P + edge (send,recv) (b,c))
}
";

    fn query(cs: &[(&str, u64)]) -> Query {
        Query {
            id: "q".into(),
            kind: QueryKind::Cover,
            constraints: cs
                .iter()
                .map(|&(p, k)| {
                    let ptype = if p.starts_with('l') { "Lead" } else { "Node" };
                    (
                        PlaceRef {
                            ptype: ptype.into(),
                            source: None,
                            place: p.into(),
                        },
                        k,
                    )
                })
                .collect(),
            expect: Some(Expectation::Coverable),
        }
    }

    fn mv(from: VertexId, to: VertexId) -> Move {
        Move { from, to }
    }

    #[test]
    fn footprints() {
        assert!(footprint_of_sequence(&[]).is_empty());
        let fp = footprint_of_sequence(&[mv(0, 1), mv(1, 2)]);
        assert_eq!(fp, Footprint::from([(0, -1), (1, 0), (2, 1)]));
        assert!(footprint_of_sequence(&[mv(0, 1), mv(1, 0)]).values().all(|&x| x == 0));
    }

    #[test]
    fn fireable_single_moves() {
        let m = Footprint::from([(0, 1), (1, 0)]);
        assert!(fireable_subsequence_exists(&m, &[mv(0, 1)]));
        let hole = Footprint::from([(0, 0), (1, 0)]);
        assert!(!fireable_subsequence_exists(&hole, &[mv(0, 1)]));
        assert_eq!(fireable_subsequence(&m, &[mv(0, 1)]), Some(vec![mv(0, 1)]));
    }

    #[test]
    fn fireable_subsequence_drops_cycles_and_orders() {
        // pebble at 0; moves 1->2 listed before 0->1, plus a cycle 2->3->2
        let m = Footprint::from([(0, 1), (1, 0), (2, 0), (3, 0)]);
        let seq = [mv(1, 2), mv(2, 3), mv(0, 1), mv(3, 2)];
        let out = fireable_subsequence(&m, &seq).unwrap();
        assert_eq!(out, vec![mv(0, 1), mv(1, 2)]);
    }

    #[test]
    fn k_values() {
        assert_eq!(compute_k(&BTreeMap::from([("t".into(), 1)])), 1);
        assert_eq!(compute_k(&BTreeMap::new()), 0);
        assert_eq!(compute_k(&BTreeMap::from([("t".into(), 2), ("b".into(), 3)])), 5);
    }

    fn ring_alg(target: &[(&str, u32)]) -> (Declarations, FlowAlgebra) {
        let spec = parse_spec(RING).unwrap();
        let sig = check_pps(&spec.decls, &spec.grammar).unwrap();
        let t = target.iter().map(|(p, k)| (p.to_string(), *k)).collect();
        (spec.decls, FlowAlgebra::new(sig, t))
    }

    #[test]
    fn edge_sets() {
        let (_, alg) = ring_alg(&[]);
        let e = alg.edge(&(SEND.into(), RECV.into()), "a", "b").unwrap();
        assert_eq!(e.tuples.len(), 1);
        let (_, alg) = ring_alg(&[("ptop", 1), ("pbot", 1)]);
        let e = alg.edge(&(SEND.into(), RECV.into()), "a", "b").unwrap();
        assert_eq!(e.tuples.len(), 3);
        for t in &e.tuples {
            assert_eq!(get(&t.plus, "b"), get(&t.minus, "a"));
            assert!(t.plus.keys().all(|k| k == "b"));
        }
        let r = alg.edge(&(RECV.into(), SEND.into()), "a", "b").unwrap();
        let swapped: BTreeSet<FlowTuple> = e
            .tuples
            .iter()
            .map(|t| FlowTuple {
                plus: t.minus.clone(),
                minus: t.plus.clone(),
                n: t.n.clone(),
            })
            .collect();
        assert_eq!(r.tuples, swapped);
    }

    #[test]
    fn restrict_and_compose_rules() {
        let (_, alg) = ring_alg(&[("ptop", 1)]);
        let e = alg.edge(&(SEND.into(), RECV.into()), "a", "b").unwrap();
        assert_eq!(alg.restrict(&e.visible, &e).unwrap(), e);
        // hiding b (a hole initially) after one incoming move counts a pebble
        let r = alg.restrict(&BTreeSet::from(["a".to_string()]), &e).unwrap();
        assert!(r
            .tuples
            .iter()
            .any(|t| t.n == BTreeMap::from([("ptop".to_string(), 1)])));
        // two incoming moves on b exceed K = 1
        let f = alg.edge(&(SEND.into(), RECV.into()), "c", "b").unwrap();
        let both = alg.compose(&e, &f).unwrap();
        assert!(both.tuples.iter().all(|t| get(&t.plus, "b") <= 1));
    }

    #[test]
    fn ring_decisions() {
        let spec = parse_spec(RING).unwrap();
        let d = &spec.decls;
        let g = &spec.grammar;
        let v = decide_cover_pps(d, g, &query(&[("ptop", 1)])).unwrap();
        assert_eq!(v.answer, Answer::Coverable);
        let v = decide_cover_pps(d, g, &query(&[("ptop", 2)])).unwrap();
        assert_eq!(v.answer, Answer::Uncoverable);
        let v = decide_cover_pps(d, g, &query(&[("ptop", 1), ("ltop", 1)])).unwrap();
        assert_eq!(v.answer, Answer::Uncoverable);
        let v = decide_cover_pps(d, g, &query(&[("pbot", 3), ("ltop", 1)])).unwrap();
        assert_eq!(v.answer, Answer::Coverable);
        let v = decide_cover_pps(d, g, &query(&[])).unwrap();
        assert_eq!(v.answer, Answer::Coverable);
    }

    #[test]
    fn pinned_and_foreign_places_are_rejected() {
        let spec = parse_spec(RING).unwrap();
        let mut q = query(&[("ptop", 1)]);
        q.constraints[0].0.source = Some("b".into());
        assert!(matches!(
            decide_cover_pps(&spec.decls, &spec.grammar, &q),
            Err(PebbleError::Query { .. })
        ));
    }

    #[test]
    fn non_pps_grammar_is_rejected() {
        let d = crate::systems::tests::example_decls();
        let g = crate::grammar::tests::chain_grammar();
        assert!(matches!(check_pps(&d, &g), Err(PebbleError::NotPps(_))));
    }

    #[test]
    fn flow_set_sizes_respect_bound() {
        let spec = parse_spec(RING).unwrap();
        let (_, alg) = ring_alg(&[("ptop", 2), ("pbot", 1)]);
        for (_, t) in crate::grammar::derive(&spec.grammar, 20) {
            let x = eval_term(&alg, &t, &[]).unwrap();
            assert!((x.tuples.len() as u128) <= alg.cardinality_bound(x.visible.len()));
        }
    }
}
