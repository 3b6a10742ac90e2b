//! The counting abstraction: one folded net per value of the grammar's
//! language, each paired with a net that generates its initial markings.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rayon::prelude::*;

use crate::behaviors::{BehaviorError, FoldedAlgebra, FoldedNet, PlaceKey};
use crate::grammar::{self, annotate, AnnotNt, AnnotatedGrammar, Expectation, HrGrammar, PlaceRef, Query, QueryKind};
use crate::petri::{
    self, Coverability, Marking, Net, PartialMarking, PetriError, PetriNet, PlaceId, Search, Transition,
};
use crate::systems::{Declarations, SystemError};

#[derive(Debug, thiserror::Error)]
pub enum CountingError {
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Petri(#[from] PetriError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("query `{query}`: {reason}")]
    Query { query: String, reason: String },
}

/// A folded net of the language together with the grammar of its instances.
#[derive(Clone, Debug)]
pub struct NetSplit {
    pub folded: FoldedNet,
    pub grammar: HrGrammar,
}

pub fn split_per_net(decls: &Declarations, g: &HrGrammar) -> Result<Vec<NetSplit>, CountingError> {
    let alg = FoldedAlgebra::new(decls);
    let lang = grammar::kleene_language(g, &alg)?;
    let mut out = Vec::new();
    for folded in &lang.axioms {
        let f = grammar::filter(g, &alg, folded)?;
        out.push(NetSplit {
            folded: folded.clone(),
            grammar: f.grammar,
        });
    }
    Ok(out)
}

fn sanitize(x: &str) -> String {
    x.chars()
        .map(|c| match c {
            '#' => "_h".to_string(),
            '@' => "_a".to_string(),
            c if c.is_ascii_alphanumeric() || c == '_' => c.to_string(),
            _ => "_".to_string(),
        })
        .collect()
}

/// 32-bit FNV-1a of the sorted source names, as 8 hex digits.
fn visible_hash(visible: &BTreeSet<String>) -> String {
    let joined = visible.iter().cloned().collect::<Vec<_>>().join(",");
    let mut h: u32 = 0x811c_9dc5;
    for b in joined.bytes() {
        h ^= u32::from(b);
        h = h.wrapping_mul(0x0100_0193);
    }
    format!("{h:08x}")
}

pub fn nonterminal_place_name(n: &AnnotNt) -> String {
    format!("nt__{}__{}", sanitize(&n.base), visible_hash(&n.visible))
}

#[derive(Clone, Debug)]
pub struct InitNet {
    pub pn: PetriNet,
    pub nonterminals: BTreeMap<AnnotNt, PlaceId>,
    pub proc_places: BTreeMap<PlaceKey, PlaceId>,
    /// Human-readable rule of every transition.
    pub descriptions: Vec<String>,
}

pub fn build_init_net(decls: &Declarations, ag: &AnnotatedGrammar) -> Result<InitNet, CountingError> {
    let init_of = |sigma: &str| -> Result<String, SystemError> { Ok(decls.ptype_of_source(sigma)?.initial.clone()) };
    let mut keys: BTreeSet<PlaceKey> = decls
        .types
        .values()
        .flat_map(|t| t.places.iter().map(|q| PlaceKey::Class(q.clone())))
        .collect();
    for a in &ag.axioms {
        for s in &a.visible {
            keys.insert(PlaceKey::Source(s.clone(), init_of(s)?));
        }
    }
    let mut places = vec!["S".to_string()];
    let mut nonterminals = BTreeMap::new();
    for n in &ag.nonterminals {
        nonterminals.insert(n.clone(), places.len());
        places.push(nonterminal_place_name(n));
    }
    let mut proc_places = BTreeMap::new();
    for k in keys {
        proc_places.insert(k.clone(), places.len());
        places.push(k.export_name());
    }

    let mut transitions = Vec::new();
    let mut descriptions = Vec::new();
    for a in &ag.axioms {
        let mut post = vec![(nonterminals[a], 1)];
        for s in &a.visible {
            post.push((proc_places[&PlaceKey::Source(s.clone(), init_of(s)?)], 1));
        }
        transitions.push(Transition::new(format!("i{:03}", transitions.len()), [(0, 1)], post));
        descriptions.push(format!("axiom {a}"));
    }
    for r in &ag.rules {
        let mut post: Vec<(PlaceId, u64)> = r.children.iter().map(|c| (nonterminals[c], 1)).collect();
        for s in &r.hidden {
            post.push((proc_places[&PlaceKey::Class(init_of(s)?)], 1));
        }
        transitions.push(Transition::new(
            format!("i{:03}", transitions.len()),
            [(nonterminals[&r.lhs], 1)],
            post,
        ));
        let children: Vec<String> = r.children.iter().map(|c| c.to_string()).collect();
        descriptions.push(format!("{} => rule {} [{}]", r.lhs, r.rule + 1, children.join(", ")));
    }
    let n = places.len();
    let net = Net::new(places, transitions)?;
    let mut m = Marking::zero(n);
    m.0[0] = 1;
    Ok(InitNet {
        pn: PetriNet::new(net, m)?,
        nonterminals,
        proc_places,
        descriptions,
    })
}

/// An init net and a folded net glued on their process-type places.
#[derive(Clone, Debug)]
pub struct CombinedNet {
    pub pn: PetriNet,
    pub folded: FoldedNet,
    /// Transitions `0..init_transitions` come from the init net.
    pub init_transitions: usize,
    pub nonterminal_places: Vec<PlaceId>,
    pub keys: BTreeMap<PlaceKey, PlaceId>,
    pub descriptions: Vec<String>,
}

pub fn build_combined(init: &InitNet, folded: &FoldedNet) -> Result<CombinedNet, CountingError> {
    let mut places: Vec<String> = vec!["S".into()];
    let mut nonterminal_places = Vec::new();
    for &p in init.nonterminals.values() {
        nonterminal_places.push(places.len());
        places.push(init.pn.net.places()[p].clone());
    }
    let all_keys: BTreeSet<PlaceKey> = init.proc_places.keys().chain(folded.places.iter()).cloned().collect();
    let mut keys = BTreeMap::new();
    for k in all_keys {
        keys.insert(k.clone(), places.len());
        places.push(k.export_name());
    }
    let remap: BTreeMap<PlaceId, PlaceId> = std::iter::once((0, 0))
        .chain(
            init.nonterminals
                .values()
                .zip(&nonterminal_places)
                .map(|(&a, &b)| (a, b)),
        )
        .chain(init.proc_places.iter().map(|(k, &p)| (p, keys[k])))
        .collect();

    let mut transitions = Vec::new();
    let mut descriptions = init.descriptions.clone();
    for t in init.pn.net.transitions() {
        transitions.push(Transition::new(
            t.name.clone(),
            t.pre.iter().map(|&(p, w)| (remap[&p], w)),
            t.post.iter().map(|&(p, w)| (remap[&p], w)),
        ));
    }
    let init_transitions = transitions.len();
    for (i, t) in folded.transitions.iter().enumerate() {
        transitions.push(Transition::new(
            format!("b{i:03}"),
            t.pre.iter().map(|k| (keys[k], 1)),
            t.post.iter().map(|k| (keys[k], 1)),
        ));
        descriptions.push(t.to_string());
    }
    let n = places.len();
    let net = Net::new(places, transitions)?;
    let mut m = Marking::zero(n);
    m.0[0] = 1;
    Ok(CombinedNet {
        pn: PetriNet::new(net, m)?,
        folded: folded.clone(),
        init_transitions,
        nonterminal_places,
        keys,
        descriptions,
    })
}

impl CombinedNet {
    /// Places whose tokens count towards a query place: the pinned source
    /// place, or the class place and every source copy of it.
    pub fn group(&self, r: &PlaceRef) -> Vec<PlaceId> {
        self.keys
            .iter()
            .filter(|(k, _)| {
                k.place() == r.place
                    && match &r.source {
                        Some(s) => k.source() == Some(s.as_str()),
                        None => true,
                    }
            })
            .map(|(_, &p)| p)
            .collect()
    }

    /// Minimal markings covering every constraint of a cover query.
    pub fn cover_basis(&self, constraints: &[(PlaceRef, u64)]) -> Vec<PartialMarking> {
        let mut basis: Vec<PartialMarking> = vec![PartialMarking::new()];
        for (r, k) in constraints {
            if *k == 0 {
                continue;
            }
            let group = self.group(r);
            let dists = distributions(&group, *k);
            let mut next = Vec::new();
            for b in &basis {
                for d in &dists {
                    let mut m = b.clone();
                    for (&p, &v) in d {
                        let e = m.entry(p).or_insert(0);
                        *e = (*e).max(v);
                    }
                    next.push(m);
                }
            }
            basis = minimize(next);
        }
        basis
    }

    /// Splits a firing sequence into init and behavior transitions, init first.
    pub fn split_witness(&self, seq: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let (init, beh): (Vec<usize>, Vec<usize>) = seq.iter().partition(|&&t| t < self.init_transitions);
        (init, beh)
    }
}

/// All ways to place `k` tokens on `group`.
fn distributions(group: &[PlaceId], k: u64) -> Vec<PartialMarking> {
    let Some((&first, rest)) = group.split_first() else {
        return vec![];
    };
    if rest.is_empty() {
        return vec![PartialMarking::from([(first, k)])];
    }
    let mut out = Vec::new();
    for here in 0..=k {
        for mut d in distributions(rest, k - here) {
            if here > 0 {
                d.insert(first, here);
            }
            out.push(d);
        }
    }
    out
}

fn minimize(mut xs: Vec<PartialMarking>) -> Vec<PartialMarking> {
    xs.sort();
    xs.dedup();
    let geq = |a: &PartialMarking, b: &PartialMarking| b.iter().all(|(p, v)| a.get(p).copied().unwrap_or(0) >= *v);
    let mut out: Vec<PartialMarking> = Vec::new();
    for (i, x) in xs.iter().enumerate() {
        let dominated = xs.iter().enumerate().any(|(j, y)| j != i && geq(x, y) && (x != y));
        if !dominated {
            out.push(x.clone());
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Counting,
    Pebble,
    Exported,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Answer {
    Safe,
    UnknownCoverable,
    UnknownReachable,
    Coverable,
    Uncoverable,
    Exported,
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Answer::Safe => "SAFE",
            Answer::UnknownCoverable => "UNKNOWN(coverable-in-abstraction)",
            Answer::UnknownReachable => "UNKNOWN(reachable-in-abstraction)",
            Answer::Coverable => "COVERABLE",
            Answer::Uncoverable => "UNCOVERABLE",
            Answer::Exported => "EXPORTED",
        })
    }
}

/// Whether a verdict answers as a query's `expect` clause says.
pub fn expectation_met(e: Expectation, a: Answer) -> bool {
    matches!(
        (e, a),
        (Expectation::Safe, Answer::Safe)
            | (
                Expectation::Unknown,
                Answer::UnknownCoverable | Answer::UnknownReachable
            )
            | (Expectation::Coverable, Answer::Coverable)
            | (Expectation::Uncoverable, Answer::Uncoverable)
            | (Expectation::Exported, Answer::Exported)
    )
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Witness {
    pub net: usize,
    pub init_prefix: Vec<String>,
    pub behavior_suffix: Vec<String>,
    /// `(transition id, description)` for every step, in order.
    pub steps: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub query: String,
    pub mode: Mode,
    pub answer: Answer,
    pub witness: Option<Witness>,
    pub notes: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReachMode {
    Bounded(usize),
    Export,
}

pub const DEFAULT_REACH_CAP: usize = 100_000;

/// The combined nets of a grammar.
#[derive(Clone, Debug)]
pub struct CountingAbstraction {
    pub nets: Vec<CombinedNet>,
    /// The init net of every combined net, as combined.
    pub inits: Vec<InitNet>,
    pub splits: Vec<NetSplit>,
    pub warnings: Vec<String>,
}

impl CountingAbstraction {
    pub fn build(decls: &Declarations, g: &HrGrammar) -> Result<Self, CountingError> {
        Self::build_with(decls, g, |_| {})
    }

    /// Like [`build`](Self::build), letting the caller alter each init net
    /// before it is combined (used to check that the oracle notices a broken one).
    pub fn build_with(
        decls: &Declarations,
        g: &HrGrammar,
        tweak: impl Fn(&mut InitNet),
    ) -> Result<Self, CountingError> {
        let splits = split_per_net(decls, g)?;
        let mut warnings = Vec::new();
        if splits.is_empty() {
            warnings.push("the grammar's language is empty; every query holds vacuously".to_string());
        }
        let mut nets = Vec::new();
        let mut inits = Vec::new();
        for s in &splits {
            let mut init = build_init_net(decls, &annotate(&s.grammar))?;
            tweak(&mut init);
            let c = build_combined(&init, &s.folded)?;
            log::debug!(
                "net {}: {} places, {} transitions",
                nets.len(),
                c.pn.net.place_count(),
                c.pn.net.transitions().len()
            );
            nets.push(c);
            inits.push(init);
        }
        Ok(CountingAbstraction {
            nets,
            inits,
            splits,
            warnings,
        })
    }

    fn witness(&self, net: usize, seq: &[usize]) -> Result<Witness, CountingError> {
        let c = &self.nets[net];
        let (init, beh) = c.split_witness(seq);
        let ordered: Vec<usize> = init.iter().chain(&beh).copied().collect();
        c.pn.net.fire_sequence(&c.pn.initial, &ordered)?;
        let name = |t: &usize| c.pn.net.transitions()[*t].name.clone();
        Ok(Witness {
            net,
            init_prefix: init.iter().map(name).collect(),
            behavior_suffix: beh.iter().map(name).collect(),
            steps: ordered.iter().map(|t| (name(t), c.descriptions[*t].clone())).collect(),
        })
    }

    pub fn verify_cover(&self, q: &Query) -> Result<Verdict, CountingError> {
        let mut notes = Vec::new();
        if self.nets.is_empty() {
            notes.push("empty language: vacuously safe".into());
            return Ok(verdict(q, Mode::Counting, Answer::Safe, None, notes));
        }
        let results: Vec<Result<Coverability, PetriError>> = self
            .nets
            .par_iter()
            .map(|c| petri::backward_coverable_any(&c.pn, &c.cover_basis(&q.constraints)))
            .collect();
        for (i, r) in results.into_iter().enumerate() {
            if let Coverability::Coverable { witness } = r? {
                if q.constraints.iter().all(|(_, k)| *k == 0) {
                    notes.push("covered by every instance".into());
                }
                let w = self.witness(i, &witness)?;
                return Ok(verdict(q, Mode::Counting, Answer::UnknownCoverable, Some(w), notes));
            }
        }
        Ok(verdict(q, Mode::Counting, Answer::Safe, None, notes))
    }

    pub fn verify_reach(&self, q: &Query, mode: ReachMode) -> Result<Verdict, CountingError> {
        let cap = match mode {
            ReachMode::Export => return Ok(verdict(q, Mode::Exported, Answer::Exported, None, vec![])),
            ReachMode::Bounded(k) => k,
        };
        if self.nets.is_empty() {
            return Ok(verdict(
                q,
                Mode::Counting,
                Answer::Safe,
                None,
                vec!["empty language: vacuously safe".into()],
            ));
        }
        let results: Vec<Result<Search, PetriError>> = self
            .nets
            .par_iter()
            .map(|c| {
                let groups: Vec<(Vec<PlaceId>, u64)> = q.constraints.iter().map(|(r, k)| (c.group(r), *k)).collect();
                let zero: Vec<PlaceId> = std::iter::once(0).chain(c.nonterminal_places.iter().copied()).collect();
                petri::find_reachable(&c.pn, cap, |m| {
                    zero.iter().all(|&p| m.get(p) == 0)
                        && groups
                            .iter()
                            .all(|(g, k)| g.iter().map(|&p| m.get(p)).sum::<u64>() == *k)
                })
            })
            .collect();
        let mut truncated = false;
        for (i, r) in results.into_iter().enumerate() {
            match r? {
                Search::Found { path, .. } => {
                    let w = self.witness(i, &path)?;
                    return Ok(verdict(q, Mode::Counting, Answer::UnknownReachable, Some(w), vec![]));
                }
                Search::Truncated => truncated = true,
                Search::Exhausted => {}
            }
        }
        if truncated {
            return Ok(verdict(
                q,
                Mode::Exported,
                Answer::Exported,
                None,
                vec![format!("bounded search truncated at {cap} states")],
            ));
        }
        Ok(verdict(q, Mode::Counting, Answer::Safe, None, vec![]))
    }

    pub fn verify(&self, q: &Query, reach: ReachMode) -> Result<Verdict, CountingError> {
        match q.kind {
            QueryKind::Cover => self.verify_cover(q),
            QueryKind::Reach => self.verify_reach(q, reach),
        }
    }
}

fn verdict(q: &Query, mode: Mode, answer: Answer, witness: Option<Witness>, notes: Vec<String>) -> Verdict {
    Verdict {
        query: q.id.clone(),
        mode,
        answer,
        witness,
        notes,
    }
}

/// Process-place projections of the init net's reachable markings that have
/// no nonterminal token left, restricted to at most `max_tokens` process tokens.
pub fn zero_nonterminal_projections(
    init: &InitNet,
    max_tokens: u64,
    state_cap: usize,
) -> Result<(BTreeSet<BTreeMap<PlaceKey, u64>>, bool), PetriError> {
    let pn = &init.pn;
    let proc_: Vec<(PlaceId, &PlaceKey)> = init.proc_places.iter().map(|(k, &p)| (p, k)).collect();
    let nts: Vec<PlaceId> = init.nonterminals.values().copied().collect();
    // every transition consumes one token, so each pending token still owes
    // at least `owed[p]` process tokens before it can disappear
    let n = pn.net.place_count();
    let mut owed: Vec<Option<u64>> = vec![None; n];
    for &(p, _) in &proc_ {
        owed[p] = Some(1);
    }
    let mut changed = true;
    while changed {
        changed = false;
        for t in pn.net.transitions() {
            let [(src, 1)] = t.pre[..] else { continue };
            if proc_.iter().any(|&(p, _)| p == src) {
                continue;
            }
            let cost = t
                .post
                .iter()
                .try_fold(0u64, |acc, &(p, w)| owed[p].map(|c| acc + c * w));
            if let Some(c) = cost {
                if owed[src].is_none_or(|o| c < o) {
                    owed[src] = Some(c);
                    changed = true;
                }
            }
        }
    }
    let load = |m: &Marking| -> Option<u64> {
        (0..n)
            .filter(|&p| m.get(p) > 0)
            .try_fold(0u64, |acc, p| owed[p].map(|c| acc + c * m.get(p)))
    };
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::new();
    let mut out = BTreeSet::new();
    seen.insert(pn.initial.clone());
    queue.push_back(pn.initial.clone());
    let mut truncated = false;
    while let Some(m) = queue.pop_front() {
        if m.get(0) == 0 && nts.iter().all(|&p| m.get(p) == 0) {
            out.insert(
                proc_
                    .iter()
                    .filter(|&&(p, _)| m.get(p) > 0)
                    .map(|&(p, k)| (k.clone(), m.get(p)))
                    .collect(),
            );
        }
        for t in 0..pn.net.transitions().len() {
            if !pn.net.is_enabled(&m, t)? {
                continue;
            }
            let next = pn.net.fire(&m, t)?;
            if load(&next).is_none_or(|l| l > max_tokens) || seen.contains(&next) {
                continue;
            }
            if seen.len() >= state_cap {
                truncated = true;
                continue;
            }
            seen.insert(next.clone());
            queue.push_back(next);
        }
    }
    Ok((out, truncated))
}
