//! Place/transition nets with integer weights.
//!
//! Places and transitions are addressed by dense indices. Names are kept for
//! reporting and export only.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;

use thiserror::Error;

pub type PlaceId = usize;
pub type TransitionId = usize;

/// Sparse constraint `place -> lower bound` (or exact value for reach queries).
pub type PartialMarking = BTreeMap<PlaceId, u64>;
/// Weighted arcs of one side of a transition.
pub type Arcs = Vec<(PlaceId, u64)>;
/// A transition written over place names: `(name, pre, post)`.
pub type NamedTransition<'a> = (&'a str, &'a [(&'a str, u64)], &'a [(&'a str, u64)]);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PetriError {
    #[error("duplicate place name `{0}`")]
    DuplicatePlace(String),
    #[error("duplicate transition name `{0}`")]
    DuplicateTransition(String),
    #[error("name `{0}` is used for both a place and a transition")]
    NameClash(String),
    #[error("transition `{transition}` refers to unknown place index {place}")]
    UnknownPlace { transition: String, place: PlaceId },
    #[error("unknown transition index {0}")]
    UnknownTransition(TransitionId),
    #[error("transition `{0}` is not enabled")]
    NotEnabled(String),
    #[error("marking has {got} entries, net has {expected} places")]
    Dimension { expected: usize, got: usize },
    #[error("token counter overflow on place `{0}`")]
    Overflow(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Transition {
    pub name: String,
    /// `(place, W(place, t))`, sorted by place, no zero weights.
    pub pre: Vec<(PlaceId, u64)>,
    /// `(place, W(t, place))`, sorted by place, no zero weights.
    pub post: Vec<(PlaceId, u64)>,
}

impl Transition {
    pub fn new(
        name: impl Into<String>,
        pre: impl IntoIterator<Item = (PlaceId, u64)>,
        post: impl IntoIterator<Item = (PlaceId, u64)>,
    ) -> Self {
        Transition {
            name: name.into(),
            pre: normalize_arcs(pre),
            post: normalize_arcs(post),
        }
    }

    pub fn pre_weight(&self, p: PlaceId) -> u64 {
        lookup(&self.pre, p)
    }

    pub fn post_weight(&self, p: PlaceId) -> u64 {
        lookup(&self.post, p)
    }
}

fn lookup(arcs: &[(PlaceId, u64)], p: PlaceId) -> u64 {
    arcs.binary_search_by_key(&p, |&(q, _)| q)
        .map(|i| arcs[i].1)
        .unwrap_or(0)
}

fn normalize_arcs(arcs: impl IntoIterator<Item = (PlaceId, u64)>) -> Vec<(PlaceId, u64)> {
    let mut acc: BTreeMap<PlaceId, u64> = BTreeMap::new();
    for (p, w) in arcs {
        *acc.entry(p).or_default() += w;
    }
    acc.into_iter().filter(|&(_, w)| w > 0).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Net {
    places: Vec<String>,
    transitions: Vec<Transition>,
    place_index: HashMap<String, PlaceId>,
}

impl Net {
    pub fn new(places: Vec<String>, transitions: Vec<Transition>) -> Result<Self, PetriError> {
        let mut place_index = HashMap::new();
        for (i, p) in places.iter().enumerate() {
            if place_index.insert(p.clone(), i).is_some() {
                return Err(PetriError::DuplicatePlace(p.clone()));
            }
        }
        let mut seen = HashSet::new();
        for t in &transitions {
            if !seen.insert(t.name.as_str()) {
                return Err(PetriError::DuplicateTransition(t.name.clone()));
            }
            if place_index.contains_key(&t.name) {
                return Err(PetriError::NameClash(t.name.clone()));
            }
            for &(p, _) in t.pre.iter().chain(&t.post) {
                if p >= places.len() {
                    return Err(PetriError::UnknownPlace {
                        transition: t.name.clone(),
                        place: p,
                    });
                }
            }
        }
        Ok(Net {
            places,
            transitions,
            place_index,
        })
    }

    pub fn places(&self) -> &[String] {
        &self.places
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn place_count(&self) -> usize {
        self.places.len()
    }

    pub fn place_index(&self, name: &str) -> Option<PlaceId> {
        self.place_index.get(name).copied()
    }

    pub fn transition_index(&self, name: &str) -> Option<TransitionId> {
        self.transitions.iter().position(|t| t.name == name)
    }

    fn transition(&self, t: TransitionId) -> Result<&Transition, PetriError> {
        self.transitions.get(t).ok_or(PetriError::UnknownTransition(t))
    }

    fn check_dim(&self, m: &Marking) -> Result<(), PetriError> {
        if m.0.len() != self.places.len() {
            return Err(PetriError::Dimension {
                expected: self.places.len(),
                got: m.0.len(),
            });
        }
        Ok(())
    }

    pub fn is_enabled(&self, m: &Marking, t: TransitionId) -> Result<bool, PetriError> {
        self.check_dim(m)?;
        let tr = self.transition(t)?;
        Ok(tr.pre.iter().all(|&(p, w)| m.0[p] >= w))
    }

    pub fn fire(&self, m: &Marking, t: TransitionId) -> Result<Marking, PetriError> {
        if !self.is_enabled(m, t)? {
            return Err(PetriError::NotEnabled(self.transitions[t].name.clone()));
        }
        let tr = &self.transitions[t];
        let mut next = m.clone();
        for &(p, w) in &tr.pre {
            next.0[p] -= w;
        }
        for &(p, w) in &tr.post {
            next.0[p] = next.0[p]
                .checked_add(w)
                .ok_or_else(|| PetriError::Overflow(self.places[p].clone()))?;
        }
        Ok(next)
    }

    /// Replays `seq` from `m`, returning the final marking.
    pub fn fire_sequence(&self, m: &Marking, seq: &[TransitionId]) -> Result<Marking, PetriError> {
        seq.iter().try_fold(m.clone(), |acc, &t| self.fire(&acc, t))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Marking(pub Vec<u64>);

impl Marking {
    pub fn zero(places: usize) -> Self {
        Marking(vec![0; places])
    }

    pub fn from_partial(places: usize, pm: &PartialMarking) -> Self {
        let mut m = Marking::zero(places);
        for (&p, &k) in pm {
            m.0[p] = k;
        }
        m
    }

    pub fn get(&self, p: PlaceId) -> u64 {
        self.0[p]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    /// Pointwise `self >= other`.
    pub fn geq(&self, other: &Marking) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a >= b)
    }

    pub fn to_partial(&self) -> PartialMarking {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &k)| k > 0)
            .map(|(p, &k)| (p, k))
            .collect()
    }
}

impl fmt::Display for Marking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, k) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{k}")?;
        }
        write!(f, "]")
    }
}

pub fn covers(m: &Marking, target: &PartialMarking) -> bool {
    target.iter().all(|(&p, &k)| m.0.get(p).copied().unwrap_or(0) >= k)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PetriNet {
    pub net: Net,
    pub initial: Marking,
}

impl PetriNet {
    pub fn new(net: Net, initial: Marking) -> Result<Self, PetriError> {
        net.check_dim(&initial)?;
        Ok(PetriNet { net, initial })
    }

    /// Renders a marking as `name:k` pairs for non-zero places.
    pub fn show_marking(&self, m: &Marking) -> String {
        let parts: Vec<String> =
            m.0.iter()
                .enumerate()
                .filter(|(_, &k)| k > 0)
                .map(|(p, k)| format!("{}:{}", self.net.places[p], k))
                .collect();
        format!("{{{}}}", parts.join(", "))
    }
}

#[derive(Clone, Debug)]
pub struct ReachSet {
    pub markings: Vec<Marking>,
    pub truncated: bool,
    index: HashSet<Marking>,
}

impl ReachSet {
    pub fn contains(&self, m: &Marking) -> bool {
        self.index.contains(m)
    }

    pub fn len(&self) -> usize {
        self.markings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markings.is_empty()
    }
}

/// Breadth-first enumeration of reachable markings, stopping after `state_cap`
/// distinct markings.
pub fn reachable_bounded(pn: &PetriNet, state_cap: usize) -> Result<ReachSet, PetriError> {
    let mut index = HashSet::new();
    let mut markings = Vec::new();
    let mut queue = VecDeque::new();
    index.insert(pn.initial.clone());
    markings.push(pn.initial.clone());
    queue.push_back(pn.initial.clone());
    let mut truncated = false;
    'outer: while let Some(m) = queue.pop_front() {
        for t in 0..pn.net.transitions.len() {
            if !pn.net.is_enabled(&m, t)? {
                continue;
            }
            let next = pn.net.fire(&m, t)?;
            if index.contains(&next) {
                continue;
            }
            if markings.len() >= state_cap {
                truncated = true;
                break 'outer;
            }
            index.insert(next.clone());
            markings.push(next.clone());
            queue.push_back(next);
        }
    }
    Ok(ReachSet {
        markings,
        truncated,
        index,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Search {
    Found { path: Vec<TransitionId>, marking: Marking },
    Exhausted,
    Truncated,
}

/// Breadth-first search for a reachable marking satisfying `goal`; the returned
/// path is a shortest one.
pub fn find_reachable(
    pn: &PetriNet,
    state_cap: usize,
    mut goal: impl FnMut(&Marking) -> bool,
) -> Result<Search, PetriError> {
    let mut parent: HashMap<Marking, Option<(Marking, TransitionId)>> = HashMap::new();
    let mut queue = VecDeque::new();
    parent.insert(pn.initial.clone(), None);
    queue.push_back(pn.initial.clone());
    let rebuild = |parent: &HashMap<Marking, Option<(Marking, TransitionId)>>, m: &Marking| {
        let mut path = Vec::new();
        let mut cur = m.clone();
        while let Some(Some((prev, t))) = parent.get(&cur) {
            path.push(*t);
            cur = prev.clone();
        }
        path.reverse();
        path
    };
    if goal(&pn.initial) {
        return Ok(Search::Found {
            path: vec![],
            marking: pn.initial.clone(),
        });
    }
    let mut truncated = false;
    while let Some(m) = queue.pop_front() {
        for t in 0..pn.net.transitions.len() {
            if !pn.net.is_enabled(&m, t)? {
                continue;
            }
            let next = pn.net.fire(&m, t)?;
            if parent.contains_key(&next) {
                continue;
            }
            if parent.len() >= state_cap {
                truncated = true;
                continue;
            }
            parent.insert(next.clone(), Some((m.clone(), t)));
            if goal(&next) {
                let path = rebuild(&parent, &next);
                return Ok(Search::Found { path, marking: next });
            }
            queue.push_back(next);
        }
    }
    Ok(if truncated {
        Search::Truncated
    } else {
        Search::Exhausted
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Coverability {
    Coverable { witness: Vec<TransitionId> },
    Uncoverable,
}

impl Coverability {
    pub fn is_coverable(&self) -> bool {
        matches!(self, Coverability::Coverable { .. })
    }
}

pub fn backward_coverable(pn: &PetriNet, target: &PartialMarking) -> Result<Coverability, PetriError> {
    backward_coverable_any(pn, std::slice::from_ref(target))
}

struct BasisEntry {
    marking: Marking,
    /// Transition leading from this element towards `parent`'s upward closure.
    step: Option<(TransitionId, usize)>,
    active: bool,
}

/// Decides whether some marking covering one of `targets` is reachable, by
/// saturating the upward-closed set of markings that can cover a target.
pub fn backward_coverable_any(pn: &PetriNet, targets: &[PartialMarking]) -> Result<Coverability, PetriError> {
    let n = pn.net.place_count();
    let mut arena: Vec<BasisEntry> = Vec::new();
    let mut queue = VecDeque::new();

    let witness = |arena: &Vec<BasisEntry>, mut i: usize| {
        let mut seq = Vec::new();
        while let Some((t, parent)) = arena[i].step {
            seq.push(t);
            i = parent;
        }
        seq
    };

    for target in targets {
        for &p in target.keys() {
            if p >= n {
                return Err(PetriError::Dimension {
                    expected: n,
                    got: p + 1,
                });
            }
        }
        let m = Marking::from_partial(n, target);
        if insert_minimal(&mut arena, m, None) {
            let i = arena.len() - 1;
            if pn.initial.geq(&arena[i].marking) {
                return Ok(Coverability::Coverable { witness: vec![] });
            }
            queue.push_back(i);
        }
    }

    while let Some(i) = queue.pop_front() {
        if !arena[i].active {
            continue;
        }
        for (t, tr) in pn.net.transitions.iter().enumerate() {
            let b = &arena[i].marking;
            let mut pre = Vec::with_capacity(n);
            for q in 0..n {
                let wi = tr.pre_weight(q);
                let wo = tr.post_weight(q);
                let need = b.0[q]
                    .checked_add(wi)
                    .ok_or_else(|| PetriError::Overflow(pn.net.places[q].clone()))?
                    .saturating_sub(wo);
                pre.push(need.max(wi));
            }
            let pre = Marking(pre);
            if insert_minimal(&mut arena, pre, Some((t, i))) {
                let j = arena.len() - 1;
                if pn.initial.geq(&arena[j].marking) {
                    let seq = witness(&arena, j);
                    debug_assert!(pn.net.fire_sequence(&pn.initial, &seq).is_ok());
                    return Ok(Coverability::Coverable { witness: seq });
                }
                queue.push_back(j);
            }
        }
    }
    Ok(Coverability::Uncoverable)
}

/// Adds `m` to the basis unless it is subsumed; deactivates elements it subsumes.
fn insert_minimal(arena: &mut Vec<BasisEntry>, m: Marking, step: Option<(TransitionId, usize)>) -> bool {
    if arena.iter().any(|e| e.active && m.geq(&e.marking)) {
        return false;
    }
    for e in arena.iter_mut() {
        if e.active && e.marking.geq(&m) {
            e.active = false;
        }
    }
    arena.push(BasisEntry {
        marking: m,
        step,
        active: true,
    });
    true
}

/// Partition of the places of a net, given as a class name per place.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlaceEquivalence {
    class_of: Vec<String>,
}

impl PlaceEquivalence {
    pub fn new(class_of: Vec<String>) -> Self {
        PlaceEquivalence { class_of }
    }

    pub fn identity(net: &Net) -> Self {
        PlaceEquivalence {
            class_of: net.places.clone(),
        }
    }

    pub fn from_fn(net: &Net, f: impl Fn(&str) -> String) -> Self {
        PlaceEquivalence {
            class_of: net.places.iter().map(|p| f(p)).collect(),
        }
    }

    pub fn class_name(&self, p: PlaceId) -> &str {
        &self.class_of[p]
    }
}

/// Merges equivalent places, summing weights and markings over each class;
/// transitions with identical class-level weight vectors are merged into the
/// one with the smallest name.
pub fn quotient(pn: &PetriNet, eq: &PlaceEquivalence) -> Result<PetriNet, PetriError> {
    if eq.class_of.len() != pn.net.place_count() {
        return Err(PetriError::Dimension {
            expected: pn.net.place_count(),
            got: eq.class_of.len(),
        });
    }
    let mut classes: Vec<String> = eq.class_of.clone();
    classes.sort();
    classes.dedup();
    let id_of: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let map = |p: PlaceId| id_of[eq.class_of[p].as_str()];

    let mut merged: BTreeMap<(Arcs, Arcs), String> = BTreeMap::new();
    for tr in &pn.net.transitions {
        let pre = normalize_arcs(tr.pre.iter().map(|&(p, w)| (map(p), w)));
        let post = normalize_arcs(tr.post.iter().map(|&(p, w)| (map(p), w)));
        merged
            .entry((pre, post))
            .and_modify(|name| {
                if tr.name < *name {
                    *name = tr.name.clone();
                }
            })
            .or_insert_with(|| tr.name.clone());
    }
    let mut transitions: Vec<Transition> = merged
        .into_iter()
        .map(|((pre, post), name)| Transition { name, pre, post })
        .collect();
    transitions.sort_by(|a, b| a.name.cmp(&b.name));

    let mut initial = Marking::zero(classes.len());
    for (p, &k) in pn.initial.0.iter().enumerate() {
        let c = map(p);
        initial.0[c] = initial.0[c]
            .checked_add(k)
            .ok_or_else(|| PetriError::Overflow(classes[c].clone()))?;
    }
    let net = Net::new(classes, transitions)?;
    PetriNet::new(net, initial)
}

/// Builds a net from named places and `(name, pre, post)` triples over place names.
pub fn net_from_names(
    places: &[&str],
    transitions: &[NamedTransition],
    initial: &[(&str, u64)],
) -> Result<PetriNet, PetriError> {
    let places: Vec<String> = places.iter().map(|s| s.to_string()).collect();
    let idx: HashMap<&str, usize> = places.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    let resolve = |name: &str, tn: &str| {
        idx.get(name).copied().ok_or_else(|| PetriError::UnknownPlace {
            transition: tn.to_string(),
            place: usize::MAX,
        })
    };
    let mut ts = Vec::new();
    for (name, pre, post) in transitions {
        let pre: Result<Vec<_>, _> = pre.iter().map(|&(p, w)| Ok((resolve(p, name)?, w))).collect();
        let post: Result<Vec<_>, _> = post.iter().map(|&(p, w)| Ok((resolve(p, name)?, w))).collect();
        ts.push(Transition::new(*name, pre?, post?));
    }
    let mut m = Marking::zero(places.len());
    for &(p, k) in initial {
        m.0[resolve(p, "<initial>")?] = k;
    }
    let net = Net::new(places, ts)?;
    PetriNet::new(net, m)
}
