//! Process types and open systems with the HR operations on them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

pub type VertexId = u32;

/// An edge seen from one endpoint: direction, labels and the other end.
type Incidence<'a> = (bool, &'a str, &'a str, usize);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SystemError {
    #[error("unknown process type `{0}`")]
    UnknownType(String),
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("`{transition}` is not an observable transition of process type `{ptype}`")]
    NotObservable { transition: String, ptype: String },
    #[error("edge constant needs two distinct sources, got `{0}` twice")]
    SelfEdge(String),
    #[error("renaming maps `{from}` ({from_type}) to `{to}` ({to_type}); source types must be preserved")]
    TypeMismatch {
        from: String,
        from_type: String,
        to: String,
        to_type: String,
    },
    #[error("renaming is not a permutation: {0}")]
    NotPermutation(String),
    #[error("source `{source_name}` is bound to vertices of different process types")]
    SourceClash { source_name: String },
    #[error("invalid process type `{ptype}`: {reason}")]
    BadProcessType { ptype: String, reason: String },
}

/// An automata-like net: one token, unit weights, one pre and one post place per transition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProcessType {
    pub name: String,
    pub places: Vec<String>,
    pub initial: String,
    pub observable: BTreeMap<String, (String, String)>,
    pub internal: BTreeMap<String, (String, String)>,
}

impl ProcessType {
    pub fn validate(&self) -> Result<(), SystemError> {
        let bad = |reason: String| SystemError::BadProcessType {
            ptype: self.name.clone(),
            reason,
        };
        let places: BTreeSet<&String> = self.places.iter().collect();
        if places.len() != self.places.len() {
            return Err(bad("duplicate place".into()));
        }
        if !places.contains(&self.initial) {
            return Err(bad(format!("initial place `{}` is not declared", self.initial)));
        }
        for (t, (a, b)) in self.observable.iter().chain(&self.internal) {
            if !places.contains(a) || !places.contains(b) {
                return Err(bad(format!("transition `{t}` uses an undeclared place")));
            }
        }
        if let Some(t) = self.observable.keys().find(|t| self.internal.contains_key(*t)) {
            return Err(bad(format!("`{t}` is both observable and internal")));
        }
        Ok(())
    }
}

/// Process types and the process type of every source label.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Declarations {
    pub types: BTreeMap<String, ProcessType>,
    pub sources: BTreeMap<String, String>,
}

impl Declarations {
    pub fn ptype_of_source(&self, sigma: &str) -> Result<&ProcessType, SystemError> {
        let ty = self
            .sources
            .get(sigma)
            .ok_or_else(|| SystemError::UnknownSource(sigma.to_string()))?;
        self.ptype(ty)
    }

    pub fn ptype(&self, name: &str) -> Result<&ProcessType, SystemError> {
        self.types
            .get(name)
            .ok_or_else(|| SystemError::UnknownType(name.to_string()))
    }

    /// Process type owning a place name (place names are global).
    pub fn type_of_place(&self, place: &str) -> Option<&ProcessType> {
        self.types.values().find(|t| t.places.iter().any(|p| p == place))
    }
}

/// A finite permutation of source labels; labels not mentioned are fixed.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Renaming {
    map: BTreeMap<String, String>,
}

impl Renaming {
    pub fn identity() -> Self {
        Renaming::default()
    }

    /// Product of transpositions, applied left to right.
    pub fn from_swaps<'a>(swaps: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut r = Renaming::identity();
        for (a, b) in swaps {
            let swap = Renaming::from_map(BTreeMap::from([
                (a.to_string(), b.to_string()),
                (b.to_string(), a.to_string()),
            ]))
            .expect("a transposition is a permutation");
            r = swap.after(&r);
        }
        r
    }

    pub fn from_map(map: BTreeMap<String, String>) -> Result<Self, SystemError> {
        let image: BTreeSet<&String> = map.values().collect();
        let domain: BTreeSet<&String> = map.keys().collect();
        if image != domain {
            return Err(SystemError::NotPermutation(format!(
                "domain {domain:?} differs from image {image:?}"
            )));
        }
        let map = map.into_iter().filter(|(a, b)| a != b).collect();
        Ok(Renaming { map })
    }

    pub fn apply<'a>(&'a self, sigma: &'a str) -> &'a str {
        self.map.get(sigma).map(|s| s.as_str()).unwrap_or(sigma)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn after(&self, other: &Renaming) -> Renaming {
        let mut keys: BTreeSet<String> = self.map.keys().cloned().collect();
        keys.extend(other.map.keys().cloned());
        let map = keys
            .into_iter()
            .map(|k| {
                let v = self.apply(other.apply(&k)).to_string();
                (k, v)
            })
            .filter(|(a, b)| a != b)
            .collect();
        Renaming { map }
    }

    pub fn inverse(&self) -> Renaming {
        Renaming {
            map: self.map.iter().map(|(a, b)| (b.clone(), a.clone())).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.map.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&String, &String)> {
        self.map.iter()
    }

    /// Checks that every moved source keeps its process type.
    pub fn check_types(&self, decls: &Declarations) -> Result<(), SystemError> {
        for (a, b) in &self.map {
            let ta = decls
                .sources
                .get(a)
                .ok_or_else(|| SystemError::UnknownSource(a.clone()))?;
            let tb = decls
                .sources
                .get(b)
                .ok_or_else(|| SystemError::UnknownSource(b.clone()))?;
            if ta != tb {
                return Err(SystemError::TypeMismatch {
                    from: a.clone(),
                    from_type: ta.clone(),
                    to: b.clone(),
                    to_type: tb.clone(),
                });
            }
        }
        Ok(())
    }

    /// Decomposes into disjoint cycles written as swaps, for printing.
    pub fn to_swaps(&self) -> Vec<(String, String)> {
        let mut seen = BTreeSet::new();
        let mut swaps = Vec::new();
        for start in self.map.keys() {
            if seen.contains(start) {
                continue;
            }
            let mut cycle = vec![start.clone()];
            seen.insert(start.clone());
            let mut cur = self.apply(start).to_string();
            while &cur != start {
                seen.insert(cur.clone());
                cycle.push(cur.clone());
                cur = self.apply(&cur).to_string();
            }
            // (c0 c1 ... ck) = (c0 ck)…(c0 c1) applied left to right as (c0 c1) then (c0 c2)…
            for c in cycle.iter().skip(1) {
                swaps.push((cycle[0].clone(), c.clone()));
            }
        }
        swaps
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub from: VertexId,
    pub label: (String, String),
    pub to: VertexId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpenSystem {
    pub vertices: BTreeMap<VertexId, String>,
    pub edges: BTreeSet<Edge>,
    pub sources: BTreeMap<String, VertexId>,
}

impl OpenSystem {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// The visible source labels.
    pub fn source_type(&self) -> BTreeSet<String> {
        self.sources.keys().cloned().collect()
    }

    pub fn source_of(&self, v: VertexId) -> Option<&str> {
        self.sources.iter().find(|(_, &w)| w == v).map(|(s, _)| s.as_str())
    }

    /// Checks source injectivity and the ptype of every sourced vertex.
    pub fn check_invariants(&self, decls: &Declarations) -> Result<(), SystemError> {
        let mut seen = BTreeSet::new();
        for (s, v) in &self.sources {
            if !seen.insert(*v) {
                return Err(SystemError::SourceClash { source_name: s.clone() });
            }
            let expected = decls
                .sources
                .get(s)
                .ok_or_else(|| SystemError::UnknownSource(s.clone()))?;
            if self.vertices.get(v) != Some(expected) {
                return Err(SystemError::SourceClash { source_name: s.clone() });
            }
        }
        Ok(())
    }
}

pub fn edge_const(decls: &Declarations, label: (&str, &str), s1: &str, s2: &str) -> Result<OpenSystem, SystemError> {
    if s1 == s2 {
        return Err(SystemError::SelfEdge(s1.to_string()));
    }
    let p1 = decls.ptype_of_source(s1)?;
    let p2 = decls.ptype_of_source(s2)?;
    for (t, p) in [(label.0, p1), (label.1, p2)] {
        if !p.observable.contains_key(t) {
            return Err(SystemError::NotObservable {
                transition: t.to_string(),
                ptype: p.name.clone(),
            });
        }
    }
    Ok(OpenSystem {
        vertices: BTreeMap::from([(0, p1.name.clone()), (1, p2.name.clone())]),
        edges: BTreeSet::from([Edge {
            from: 0,
            label: (label.0.to_string(), label.1.to_string()),
            to: 1,
        }]),
        sources: BTreeMap::from([(s1.to_string(), 0), (s2.to_string(), 1)]),
    })
}

pub fn restrict(s: &OpenSystem, keep: &BTreeSet<String>) -> OpenSystem {
    OpenSystem {
        vertices: s.vertices.clone(),
        edges: s.edges.clone(),
        sources: s
            .sources
            .iter()
            .filter(|(k, _)| keep.contains(*k))
            .map(|(k, v)| (k.clone(), *v))
            .collect(),
    }
}

pub fn rename(s: &OpenSystem, alpha: &Renaming) -> OpenSystem {
    OpenSystem {
        vertices: s.vertices.clone(),
        edges: s.edges.clone(),
        sources: s
            .sources
            .iter()
            .map(|(k, v)| (alpha.apply(k).to_string(), *v))
            .collect(),
    }
}

/// Disjoint union fusing vertices that carry the same source; duplicate edges
/// collapse. Vertex ids are regenerated: `s1`'s vertices first, then the
/// unfused vertices of `s2`, each in id order.
pub fn compose(s1: &OpenSystem, s2: &OpenSystem) -> Result<OpenSystem, SystemError> {
    let mut map1 = BTreeMap::new();
    let mut vertices = BTreeMap::new();
    let mut next: VertexId = 0;
    for (v, ty) in &s1.vertices {
        map1.insert(*v, next);
        vertices.insert(next, ty.clone());
        next += 1;
    }
    let mut map2 = BTreeMap::new();
    for (sigma, v2) in &s2.sources {
        if let Some(v1) = s1.sources.get(sigma) {
            if s1.vertices[v1] != s2.vertices[v2] {
                return Err(SystemError::SourceClash {
                    source_name: sigma.clone(),
                });
            }
            map2.insert(*v2, map1[v1]);
        }
    }
    for (v, ty) in &s2.vertices {
        if !map2.contains_key(v) {
            map2.insert(*v, next);
            vertices.insert(next, ty.clone());
            next += 1;
        }
    }
    let mut edges = BTreeSet::new();
    for e in &s1.edges {
        edges.insert(Edge {
            from: map1[&e.from],
            label: e.label.clone(),
            to: map1[&e.to],
        });
    }
    for e in &s2.edges {
        edges.insert(Edge {
            from: map2[&e.from],
            label: e.label.clone(),
            to: map2[&e.to],
        });
    }
    let mut sources: BTreeMap<String, VertexId> = s1.sources.iter().map(|(k, v)| (k.clone(), map1[v])).collect();
    for (k, v) in &s2.sources {
        sources.entry(k.clone()).or_insert(map2[v]);
    }
    Ok(OpenSystem {
        vertices,
        edges,
        sources,
    })
}

/// A canonical encoding of an open system up to renaming of vertex ids.
/// Two systems have equal forms iff they are isomorphic by a bijection that
/// preserves process types, edge labels and source labels.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalForm {
    vertices: Vec<(String, Option<String>)>,
    edges: Vec<(usize, String, String, usize)>,
}

impl fmt::Display for CanonicalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (ty, src)) in self.vertices.iter().enumerate() {
            match src {
                Some(s) => write!(f, "{i}:{ty}*{s} ")?,
                None => write!(f, "{i}:{ty} ")?,
            }
        }
        for (a, l1, l2, b) in &self.edges {
            write!(f, "{a}-({l1},{l2})->{b} ")?;
        }
        Ok(())
    }
}

/// Canonical relabeling by colour refinement, then individualization of the
/// remaining ties; the lexicographically least encoding wins.
pub fn canonical_form(s: &OpenSystem) -> CanonicalForm {
    let ids: Vec<VertexId> = s.vertices.keys().copied().collect();
    let pos: BTreeMap<VertexId, usize> = ids.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let n = ids.len();
    let base: Vec<(String, Option<String>)> = ids
        .iter()
        .map(|v| (s.vertices[v].clone(), s.source_of(*v).map(|x| x.to_string())))
        .collect();
    let edges: Vec<(usize, String, String, usize)> = s
        .edges
        .iter()
        .map(|e| (pos[&e.from], e.label.0.clone(), e.label.1.clone(), pos[&e.to]))
        .collect();

    // initial colours: rank of the (type, source) pair
    let mut keys: Vec<&(String, Option<String>)> = base.iter().collect();
    keys.sort();
    keys.dedup();
    let colour: Vec<usize> = base
        .iter()
        .map(|b| keys.iter().position(|k| *k == b).unwrap())
        .collect();
    let colour = refine(colour, &edges, n);

    let mut best: Option<CanonicalForm> = None;
    search(colour, &edges, &base, n, &mut best);
    best.unwrap_or(CanonicalForm {
        vertices: vec![],
        edges: vec![],
    })
}

fn refine(mut colour: Vec<usize>, edges: &[(usize, String, String, usize)], n: usize) -> Vec<usize> {
    loop {
        let mut sig: Vec<(usize, Vec<Incidence>)> = (0..n).map(|v| (colour[v], Vec::new())).collect();
        for (a, l1, l2, b) in edges {
            sig[*a].1.push((true, l1, l2, colour[*b]));
            sig[*b].1.push((false, l1, l2, colour[*a]));
        }
        for s in sig.iter_mut() {
            s.1.sort();
        }
        let mut keys: Vec<&(usize, Vec<Incidence>)> = sig.iter().collect();
        keys.sort();
        keys.dedup();
        let next: Vec<usize> = sig.iter().map(|s| keys.binary_search(&s).unwrap()).collect();
        let before = colour.iter().collect::<BTreeSet<_>>().len();
        let after = keys.len();
        colour = next;
        if after == before {
            return colour;
        }
    }
}

fn search(
    colour: Vec<usize>,
    edges: &[(usize, String, String, usize)],
    base: &[(String, Option<String>)],
    n: usize,
    best: &mut Option<CanonicalForm>,
) {
    let classes = colour.iter().collect::<BTreeSet<_>>().len();
    if classes == n {
        let form = encode(&colour, edges, base);
        if best.as_ref().is_none_or(|b| form < *b) {
            *best = Some(form);
        }
        return;
    }
    // first (smallest colour) non-singleton cell
    let mut count = BTreeMap::new();
    for &c in &colour {
        *count.entry(c).or_insert(0usize) += 1;
    }
    let cell = *count.iter().find(|(_, &k)| k > 1).unwrap().0;
    // twins (same neighbours, no edge between them) are swapped by an
    // automorphism fixing the colouring, so one of each suffices
    let cell_vs: Vec<usize> = (0..n).filter(|&v| colour[v] == cell).collect();
    let neighbours = |v: usize| {
        let mut out: Vec<Incidence> = Vec::new();
        for (a, l1, l2, b) in edges {
            if *a == v {
                out.push((true, l1, l2, *b));
            }
            if *b == v {
                out.push((false, l1, l2, *a));
            }
        }
        out.sort();
        out
    };
    let sigs: Vec<_> = cell_vs.iter().map(|&v| neighbours(v)).collect();
    let adjacent = |u: usize, v: usize| {
        edges
            .iter()
            .any(|(a, _, _, b)| (*a == u && *b == v) || (*a == v && *b == u))
    };
    let mut reps: Vec<usize> = Vec::new();
    for (i, &v) in cell_vs.iter().enumerate() {
        let twin = reps.iter().any(|&r| {
            let j = cell_vs.iter().position(|&x| x == r).unwrap();
            sigs[i] == sigs[j] && !adjacent(r, v)
        });
        if !twin {
            reps.push(v);
        }
    }
    for v in reps {
        // individualize v: it gets the cell colour, the rest of the cell moves up
        let mut c: Vec<usize> = colour.iter().map(|&x| x * 2 + usize::from(x > cell)).collect();
        for (u, cu) in c.iter_mut().enumerate() {
            if colour[u] == cell && u != v {
                *cu += 1;
            }
        }
        let c = refine(c, edges, n);
        search(c, edges, base, n, best);
    }
}

fn encode(
    colour: &[usize],
    edges: &[(usize, String, String, usize)],
    base: &[(String, Option<String>)],
) -> CanonicalForm {
    let n = colour.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| colour[v]);
    let mut rank = vec![0; n];
    for (i, &v) in order.iter().enumerate() {
        rank[v] = i;
    }
    let vertices = order.iter().map(|&v| base[v].clone()).collect();
    let mut es: Vec<(usize, String, String, usize)> = edges
        .iter()
        .map(|(a, l1, l2, b)| (rank[*a], l1.clone(), l2.clone(), rank[*b]))
        .collect();
    es.sort();
    CanonicalForm { vertices, edges: es }
}
