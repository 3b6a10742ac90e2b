//! Behaviors of systems, their foldings, and the finite algebra of folded nets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::grammar::Algebra;
use crate::petri::{self, Marking, Net, PetriError, PetriNet, PlaceEquivalence, PlaceId, Transition};
use crate::systems::{self, Declarations, OpenSystem, Renaming, SystemError, VertexId};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum BehaviorError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Petri(#[from] PetriError),
}

/// The net of a system: one copy of its process type per vertex, one
/// synchronizing transition per edge.
#[derive(Clone, Debug)]
pub struct Behavior {
    pub pn: PetriNet,
    /// `(process-type place, vertex)` of every net place.
    pub place_keys: Vec<(String, VertexId)>,
    pub sources: BTreeMap<(String, String), PlaceId>,
    pub system: OpenSystem,
}

impl Behavior {
    pub fn place_of(&self, q: &str, v: VertexId) -> Option<PlaceId> {
        self.place_keys.iter().position(|(p, w)| p == q && *w == v)
    }
}

pub fn beta(decls: &Declarations, s: &OpenSystem) -> Result<Behavior, BehaviorError> {
    let mut places = Vec::new();
    let mut place_keys = Vec::new();
    let mut index = BTreeMap::new();
    let mut initial = Vec::new();
    for (v, ty) in &s.vertices {
        let pt = decls.ptype(ty)?;
        for q in &pt.places {
            index.insert((q.clone(), *v), places.len());
            places.push(format!("{q}@{v}"));
            place_keys.push((q.clone(), *v));
            initial.push(u64::from(*q == pt.initial));
        }
    }
    let mut transitions = Vec::new();
    for e in &s.edges {
        let p1 = decls.ptype(&s.vertices[&e.from])?;
        let p2 = decls.ptype(&s.vertices[&e.to])?;
        let (a1, b1) = observable(p1, &e.label.0)?;
        let (a2, b2) = observable(p2, &e.label.1)?;
        transitions.push(Transition::new(
            format!("{}|{}@{}>{}", e.label.0, e.label.1, e.from, e.to),
            [(index[&(a1.clone(), e.from)], 1), (index[&(a2.clone(), e.to)], 1)],
            [(index[&(b1.clone(), e.from)], 1), (index[&(b2.clone(), e.to)], 1)],
        ));
    }
    for (v, ty) in &s.vertices {
        for (t, (a, b)) in &decls.ptype(ty)?.internal {
            transitions.push(Transition::new(
                format!("{t}@{v}"),
                [(index[&(a.clone(), *v)], 1)],
                [(index[&(b.clone(), *v)], 1)],
            ));
        }
    }
    let mut sources = BTreeMap::new();
    for (sigma, v) in &s.sources {
        for q in &decls.ptype(&s.vertices[v])?.places {
            sources.insert((sigma.clone(), q.clone()), index[&(q.clone(), *v)]);
        }
    }
    let net = Net::new(places, transitions)?;
    Ok(Behavior {
        pn: PetriNet::new(net, Marking(initial))?,
        place_keys,
        sources,
        system: s.clone(),
    })
}

fn observable<'a>(p: &'a systems::ProcessType, t: &str) -> Result<&'a (String, String), SystemError> {
    p.observable.get(t).ok_or_else(|| SystemError::NotObservable {
        transition: t.to_string(),
        ptype: p.name.clone(),
    })
}

/// A place of a folded net: all non-source copies of `q` merged, or the copy
/// of `q` at the vertex carrying source `σ`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PlaceKey {
    Class(String),
    Source(String, String),
}

impl PlaceKey {
    pub fn place(&self) -> &str {
        match self {
            PlaceKey::Class(q) | PlaceKey::Source(_, q) => q,
        }
    }

    pub fn source(&self) -> Option<&str> {
        match self {
            PlaceKey::Class(_) => None,
            PlaceKey::Source(s, _) => Some(s),
        }
    }

    /// Export name: `q__<place>` or `src__<σ>__<place>`.
    pub fn export_name(&self) -> String {
        match self {
            PlaceKey::Class(q) => format!("q__{q}"),
            PlaceKey::Source(s, q) => format!("src__{s}__{q}"),
        }
    }
}

impl fmt::Display for PlaceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlaceKey::Class(q) => write!(f, "{q}"),
            PlaceKey::Source(s, q) => write!(f, "{s}.{q}"),
        }
    }
}

/// A transition as a pair of sorted place multisets.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FoldedTransition {
    pub pre: Vec<PlaceKey>,
    pub post: Vec<PlaceKey>,
}

impl FoldedTransition {
    pub fn new(mut pre: Vec<PlaceKey>, mut post: Vec<PlaceKey>) -> Self {
        pre.sort();
        post.sort();
        FoldedTransition { pre, post }
    }

    fn rekey(&self, f: &impl Fn(&PlaceKey) -> PlaceKey) -> Self {
        FoldedTransition::new(self.pre.iter().map(f).collect(), self.post.iter().map(f).collect())
    }
}

impl fmt::Display for FoldedTransition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |ks: &[PlaceKey]| ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("+");
        write!(f, "{} -> {}", show(&self.pre), show(&self.post))
    }
}

/// Canonical folded net. Equality is structural.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FoldedNet {
    pub visible: BTreeSet<String>,
    pub places: BTreeSet<PlaceKey>,
    pub transitions: BTreeSet<FoldedTransition>,
    pub initial: Option<BTreeMap<PlaceKey, u64>>,
}

impl fmt::Display for FoldedNet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let places: Vec<String> = self.places.iter().map(|p| p.to_string()).collect();
        writeln!(f, "places {}", places.join(" "))?;
        for t in &self.transitions {
            writeln!(f, "  {t}")?;
        }
        if let Some(m) = &self.initial {
            let ms: Vec<String> = m.iter().map(|(k, v)| format!("{k}:{v}")).collect();
            writeln!(f, "initial {}", ms.join(" "))?;
        }
        Ok(())
    }
}

impl FoldedNet {
    /// The underlying net with places in key order and transitions named `b000`, `b001`, ...
    pub fn to_petri(&self) -> Result<PetriNet, PetriError> {
        let keys: Vec<&PlaceKey> = self.places.iter().collect();
        let idx: BTreeMap<&PlaceKey, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let transitions = self
            .transitions
            .iter()
            .enumerate()
            .map(|(i, t)| {
                Transition::new(
                    format!("b{i:03}"),
                    t.pre.iter().map(|k| (idx[k], 1)),
                    t.post.iter().map(|k| (idx[k], 1)),
                )
            })
            .collect();
        let mut m = Marking::zero(keys.len());
        if let Some(init) = &self.initial {
            for (k, v) in init {
                m.0[idx[k]] = *v;
            }
        }
        let net = Net::new(keys.iter().map(|k| k.export_name()).collect(), transitions)?;
        PetriNet::new(net, m)
    }
}

fn key_of(b: &Behavior, p: PlaceId) -> PlaceKey {
    let (q, v) = &b.place_keys[p];
    match b.system.source_of(*v) {
        Some(s) => PlaceKey::Source(s.to_string(), q.clone()),
        None => PlaceKey::Class(q.clone()),
    }
}

/// Quotient of a behavior merging the copies of each place over non-source vertices.
pub fn fold(b: &Behavior) -> Result<FoldedNet, BehaviorError> {
    let keys: Vec<PlaceKey> = (0..b.pn.net.place_count()).map(|p| key_of(b, p)).collect();
    let by_name: BTreeMap<String, PlaceKey> = keys.iter().map(|k| (k.export_name(), k.clone())).collect();
    let eq = PlaceEquivalence::new(keys.iter().map(|k| k.export_name()).collect());
    let q = petri::quotient(&b.pn, &eq)?;
    let key = |p: PlaceId| by_name[&q.net.places()[p]].clone();
    let expand = |arcs: &[(PlaceId, u64)]| -> Vec<PlaceKey> {
        arcs.iter()
            .flat_map(|&(p, w)| std::iter::repeat_n(key(p), w as usize))
            .collect()
    };
    let transitions = q
        .net
        .transitions()
        .iter()
        .map(|t| FoldedTransition::new(expand(&t.pre), expand(&t.post)))
        .collect();
    let initial = (0..q.net.place_count())
        .filter(|&p| q.initial.get(p) > 0)
        .map(|p| (key(p), q.initial.get(p)))
        .collect();
    Ok(FoldedNet {
        visible: b.system.source_type(),
        places: keys.into_iter().collect(),
        transitions,
        initial: Some(initial),
    })
}

pub fn drop_marking(f: &FoldedNet) -> FoldedNet {
    FoldedNet {
        initial: None,
        ..f.clone()
    }
}

/// Folded nets without markings under the HR operations.
#[derive(Clone, Debug)]
pub struct FoldedAlgebra<'a> {
    pub decls: &'a Declarations,
}

impl<'a> FoldedAlgebra<'a> {
    pub fn new(decls: &'a Declarations) -> Self {
        FoldedAlgebra { decls }
    }

    fn rekey(x: &FoldedNet, visible: BTreeSet<String>, f: impl Fn(&PlaceKey) -> PlaceKey) -> FoldedNet {
        FoldedNet {
            visible,
            places: x.places.iter().map(&f).collect(),
            transitions: x.transitions.iter().map(|t| t.rekey(&f)).collect(),
            initial: x.initial.as_ref().map(|m| {
                let mut out = BTreeMap::new();
                for (k, v) in m {
                    *out.entry(f(k)).or_insert(0) += v;
                }
                out
            }),
        }
    }
}

impl Algebra for FoldedAlgebra<'_> {
    type Elem = FoldedNet;
    type Error = BehaviorError;

    fn edge(&self, label: &(String, String), s1: &str, s2: &str) -> Result<FoldedNet, BehaviorError> {
        let s = systems::edge_const(self.decls, (&label.0, &label.1), s1, s2)?;
        Ok(drop_marking(&fold(&beta(self.decls, &s)?)?))
    }

    fn restrict(&self, keep: &BTreeSet<String>, x: &FoldedNet) -> Result<FoldedNet, BehaviorError> {
        let visible = x.visible.intersection(keep).cloned().collect();
        Ok(Self::rekey(x, visible, |k| match k {
            PlaceKey::Source(s, q) if !keep.contains(s) => PlaceKey::Class(q.clone()),
            _ => k.clone(),
        }))
    }

    fn rename(&self, alpha: &Renaming, x: &FoldedNet) -> Result<FoldedNet, BehaviorError> {
        let visible = x.visible.iter().map(|s| alpha.apply(s).to_string()).collect();
        Ok(Self::rekey(x, visible, |k| match k {
            PlaceKey::Source(s, q) => PlaceKey::Source(alpha.apply(s).to_string(), q.clone()),
            _ => k.clone(),
        }))
    }

    fn compose(&self, a: &FoldedNet, b: &FoldedNet) -> Result<FoldedNet, BehaviorError> {
        Ok(FoldedNet {
            visible: a.visible.union(&b.visible).cloned().collect(),
            places: a.places.union(&b.places).cloned().collect(),
            transitions: a.transitions.union(&b.transitions).cloned().collect(),
            initial: None,
        })
    }
}
