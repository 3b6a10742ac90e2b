//! Brute-force ground truth on small instances: enumerate the systems a
//! grammar generates, explore their behaviors exhaustively, and compare with
//! the counting and pebble verdicts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::behaviors::{beta, Behavior, BehaviorError, PlaceKey};
use crate::counting::{self, Answer, CountingAbstraction, CountingError, InitNet, ReachMode, Verdict};
use crate::grammar::{eval_system, eval_term, HrGrammar, HrTerm, PlaceRef, Query, QueryKind};
use crate::pebble::{self, FlowAlgebra, PebbleSignature};
use crate::petri::{self, Net, PetriNet, Search};
use crate::systems::{canonical_form, CanonicalForm, Declarations, OpenSystem};

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error(transparent)]
    Counting(#[from] CountingError),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Petri(#[from] petri::PetriError),
    #[error(transparent)]
    Pebble(#[from] pebble::PebbleError),
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub term: HrTerm,
    pub system: OpenSystem,
}

/// Every system derivable from an axiom with at most `max_vertices` vertices,
/// one representative per isomorphism class, ordered by size then term.
///
/// No operation removes vertices, so subterms larger than the bound are
/// dropped during the fixpoint without losing instances.
pub fn enumerate_instances(decls: &Declarations, g: &HrGrammar, max_vertices: usize) -> Vec<Instance> {
    let mut found: BTreeMap<String, BTreeMap<CanonicalForm, Instance>> = BTreeMap::new();
    let mut done: BTreeSet<(usize, Vec<CanonicalForm>)> = BTreeSet::new();
    loop {
        let mut added: Vec<(String, CanonicalForm, Instance)> = Vec::new();
        for (ri, rule) in g.rules.iter().enumerate() {
            let nts: Vec<&str> = rule.rhs.nonterminals();
            let pools: Vec<Vec<(&CanonicalForm, &Instance)>> = nts
                .iter()
                .map(|x| found.get(*x).map(|m| m.iter().collect()).unwrap_or_default())
                .collect();
            if pools.iter().any(|p| p.is_empty()) {
                continue;
            }
            let mut idx = vec![0usize; pools.len()];
            loop {
                let key: Vec<CanonicalForm> = idx.iter().zip(&pools).map(|(&i, p)| p[i].0.clone()).collect();
                if done.insert((ri, key)) {
                    let mut args = idx.iter().zip(&pools).map(|(&i, p)| p[i].1.term.clone());
                    let term = rule
                        .rhs
                        .substitute(&mut |_| args.next().expect("one argument per nonterminal"));
                    if let Ok(system) = eval_system(decls, &term) {
                        if system.vertex_count() <= max_vertices {
                            added.push((rule.lhs.clone(), canonical_form(&system), Instance { term, system }));
                        }
                    }
                }
                // odometer over the argument pools
                let mut k = 0;
                while k < idx.len() {
                    idx[k] += 1;
                    if idx[k] < pools[k].len() {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == idx.len() {
                    break;
                }
            }
        }
        let mut changed = false;
        for (x, cf, inst) in added {
            let slot = found.entry(x).or_default();
            if let std::collections::btree_map::Entry::Vacant(e) = slot.entry(cf) {
                e.insert(inst);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut out: Vec<Instance> = Vec::new();
    let mut seen = BTreeSet::new();
    for a in &g.axioms {
        for (cf, inst) in found.remove(a).unwrap_or_default() {
            if seen.insert(cf) {
                out.push(inst);
            }
        }
    }
    out.sort_by_cached_key(|i| (i.system.vertex_count(), i.term.size(), i.term.to_string()));
    out
}

/// The initial marking of an instance, counted per merged place.
pub fn initial_projection(decls: &Declarations, s: &OpenSystem) -> BTreeMap<PlaceKey, u64> {
    let mut out = BTreeMap::new();
    for (v, ty) in &s.vertices {
        let q = decls.types[ty].initial.clone();
        let key = match s.source_of(*v) {
            Some(sigma) => PlaceKey::Source(sigma.to_string(), q),
            None => PlaceKey::Class(q),
        };
        *out.entry(key).or_insert(0) += 1;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Concrete {
    Holds,
    Fails,
    Inconclusive,
}

impl Concrete {
    fn word(self, kind: QueryKind) -> &'static str {
        match (self, kind) {
            (Concrete::Holds, QueryKind::Cover) => "covered",
            (Concrete::Fails, QueryKind::Cover) => "not-covered",
            (Concrete::Holds, QueryKind::Reach) => "reached",
            (Concrete::Fails, QueryKind::Reach) => "not-reached",
            (Concrete::Inconclusive, _) => "inconclusive",
        }
    }
}

fn place_group(b: &Behavior, r: &PlaceRef) -> Vec<usize> {
    let s = &b.system;
    let pinned = r.source.as_ref().map(|sigma| s.sources.get(sigma).copied());
    b.place_keys
        .iter()
        .enumerate()
        .filter(|(_, (q, v))| {
            *q == r.place
                && s.vertices[v] == r.ptype
                && match pinned {
                    None => true,
                    Some(w) => w == Some(*v),
                }
        })
        .map(|(i, _)| i)
        .collect()
}

fn concrete_search(
    decls: &Declarations,
    s: &OpenSystem,
    constraints: &[(PlaceRef, u64)],
    state_cap: usize,
    exact: bool,
) -> Result<Concrete, OracleError> {
    let b = beta(decls, s)?;
    let groups: Vec<(Vec<usize>, u64)> = constraints.iter().map(|(r, k)| (place_group(&b, r), *k)).collect();
    let r = petri::find_reachable(&b.pn, state_cap, |m| {
        groups.iter().all(|(g, k)| {
            let sum: u64 = g.iter().map(|&p| m.get(p)).sum();
            if exact {
                sum == *k
            } else {
                sum >= *k
            }
        })
    })?;
    Ok(match r {
        Search::Found { .. } => Concrete::Holds,
        Search::Exhausted => Concrete::Fails,
        Search::Truncated => Concrete::Inconclusive,
    })
}

/// Whether some reachable marking of the system's behavior has, for every
/// constraint, at least the given number of tokens summed over the matching copies.
pub fn concrete_cover(
    decls: &Declarations,
    s: &OpenSystem,
    constraints: &[(PlaceRef, u64)],
    state_cap: usize,
) -> Result<Concrete, OracleError> {
    concrete_search(decls, s, constraints, state_cap, false)
}

/// Like [`concrete_cover`] with equal sums.
pub fn concrete_reach(
    decls: &Declarations,
    s: &OpenSystem,
    constraints: &[(PlaceRef, u64)],
    state_cap: usize,
) -> Result<Concrete, OracleError> {
    concrete_search(decls, s, constraints, state_cap, true)
}

#[derive(Clone, Copy, Debug)]
pub struct OracleConfig {
    pub max_vertices: usize,
    pub state_cap: usize,
    pub reach: ReachMode,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            max_vertices: 8,
            state_cap: 1_000_000,
            reach: ReachMode::Bounded(counting::DEFAULT_REACH_CAP),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryResult {
    pub query: String,
    pub concrete: Concrete,
    /// Exact per-instance verdict of the flow algebra, for pebble queries.
    pub pebble: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceRecord {
    pub term: String,
    pub vertices: usize,
    pub results: Vec<QueryResult>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Discrepancy {
    pub lemma: &'static str,
    pub query: Option<String>,
    pub term: Option<String>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleReport {
    pub instances: Vec<InstanceRecord>,
    /// `(query, counting answer, pebble answer)`.
    pub verdicts: Vec<(String, Answer, Option<Answer>)>,
    pub discrepancies: Vec<Discrepancy>,
}

impl OracleReport {
    pub fn is_clean(&self) -> bool {
        self.discrepancies.is_empty()
    }

    pub fn inconclusive(&self) -> usize {
        self.instances
            .iter()
            .flat_map(|i| &i.results)
            .filter(|r| r.concrete == Concrete::Inconclusive)
            .count()
    }

    /// Line-oriented rendering: `VERDICT`, `INSTANCE`, `RESULT`,
    /// `DISCREPANCY`, then one `SUMMARY` line.
    pub fn render(&self, kinds: &BTreeMap<String, QueryKind>) -> String {
        let mut out = String::new();
        for (q, a, p) in &self.verdicts {
            let _ = write!(out, "VERDICT query={q} counting={a}");
            if let Some(p) = p {
                let _ = write!(out, " pebble={p}");
            }
            out.push('\n');
        }
        for (i, inst) in self.instances.iter().enumerate() {
            let _ = writeln!(out, "INSTANCE {i} vertices={} term={}", inst.vertices, inst.term);
            for r in &inst.results {
                let kind = kinds.get(&r.query).copied().unwrap_or(QueryKind::Cover);
                let _ = write!(out, "RESULT {i} query={} concrete={}", r.query, r.concrete.word(kind));
                if let Some(p) = r.pebble {
                    let _ = write!(out, " pebble={}", if p { "covered" } else { "not-covered" });
                }
                out.push('\n');
            }
        }
        for d in &self.discrepancies {
            let _ = write!(out, "DISCREPANCY lemma={}", d.lemma);
            if let Some(q) = &d.query {
                let _ = write!(out, " query={q}");
            }
            if let Some(t) = &d.term {
                let _ = write!(out, " term={t}");
            }
            let _ = writeln!(out, " detail={}", d.detail);
        }
        let _ = writeln!(
            out,
            "SUMMARY instances={} queries={} discrepancies={} inconclusive={}",
            self.instances.len(),
            self.verdicts.len(),
            self.discrepancies.len(),
            self.inconclusive()
        );
        out
    }
}

fn pebble_target(sig: &Option<PebbleSignature>, q: &Query) -> Option<(PebbleSignature, BTreeMap<String, u64>)> {
    let sig = sig.as_ref()?;
    let t = pebble::pps_target(sig, q).ok()?;
    Some((sig.clone(), t))
}

/// Per-instance exact verdict of the flow algebra.
pub fn pebble_instance_verdict(
    sig: &PebbleSignature,
    target: &BTreeMap<String, u64>,
    term: &HrTerm,
) -> Result<bool, pebble::PebbleError> {
    let t32 = target.iter().map(|(p, &k)| (p.clone(), k as u32)).collect();
    let alg = FlowAlgebra::new(sig.clone(), t32);
    let x = eval_term(&alg, term, &[])?;
    alg.accepts(&x)
}

pub fn check_soundness(
    decls: &Declarations,
    g: &HrGrammar,
    queries: &[Query],
    cfg: OracleConfig,
) -> Result<OracleReport, OracleError> {
    let abs = CountingAbstraction::build(decls, g)?;
    check_soundness_against(decls, g, queries, cfg, &abs)
}

/// Compares the oracle with a given counting abstraction.
pub fn check_soundness_against(
    decls: &Declarations,
    g: &HrGrammar,
    queries: &[Query],
    cfg: OracleConfig,
    abs: &CountingAbstraction,
) -> Result<OracleReport, OracleError> {
    let sig = pebble::check_pps(decls, g).ok();
    let mut counting_verdicts: Vec<Verdict> = Vec::new();
    let mut verdicts = Vec::new();
    let mut pebble_queries = Vec::new();
    for q in queries {
        let v = abs.verify(q, cfg.reach)?;
        let pt = if q.kind == QueryKind::Cover {
            pebble_target(&sig, q)
        } else {
            None
        };
        let pa = match &pt {
            Some(_) => Some(pebble::decide_cover_pps(decls, g, q)?.answer),
            None => None,
        };
        verdicts.push((q.id.clone(), v.answer, pa));
        counting_verdicts.push(v);
        pebble_queries.push(pt);
    }

    let instances = enumerate_instances(decls, g, cfg.max_vertices);
    log::info!(
        "{} instances with at most {} vertices",
        instances.len(),
        cfg.max_vertices
    );
    let records: Vec<Result<(InstanceRecord, Vec<Discrepancy>), OracleError>> = instances
        .par_iter()
        .map(|inst| {
            let term = inst.term.to_string();
            let mut results = Vec::new();
            let mut disc = Vec::new();
            for ((q, v), pt) in queries.iter().zip(&counting_verdicts).zip(&pebble_queries) {
                let concrete = match q.kind {
                    QueryKind::Cover => concrete_cover(decls, &inst.system, &q.constraints, cfg.state_cap)?,
                    QueryKind::Reach => concrete_reach(decls, &inst.system, &q.constraints, cfg.state_cap)?,
                };
                if concrete == Concrete::Holds && v.answer == Answer::Safe {
                    disc.push(Discrepancy {
                        lemma: match q.kind {
                            QueryKind::Cover => "cover-soundness",
                            QueryKind::Reach => "reach-soundness",
                        },
                        query: Some(q.id.clone()),
                        term: Some(term.clone()),
                        detail: "instance satisfies the query but the abstraction answered SAFE".into(),
                    });
                }
                let mut pebble_verdict = None;
                if let Some((sig, target)) = pt {
                    let p = pebble_instance_verdict(sig, target, &inst.term)?;
                    pebble_verdict = Some(p);
                    if concrete != Concrete::Inconclusive && p != (concrete == Concrete::Holds) {
                        disc.push(Discrepancy {
                            lemma: "pebble-exactness",
                            query: Some(q.id.clone()),
                            term: Some(term.clone()),
                            detail: format!("flow algebra says {p}, exhaustive search disagrees"),
                        });
                    }
                    let k = pebble::compute_k(target) as u32;
                    let bounded = pebble::degree_bounded_cover(sig, &inst.system, target, k);
                    if concrete != Concrete::Inconclusive && bounded != (concrete == Concrete::Holds) {
                        disc.push(Discrepancy {
                            lemma: "degree-bound",
                            query: Some(q.id.clone()),
                            term: Some(term.clone()),
                            detail: format!("degree-{k} search says {bounded}, exhaustive search disagrees"),
                        });
                    }
                }
                results.push(QueryResult {
                    query: q.id.clone(),
                    concrete,
                    pebble: pebble_verdict,
                });
            }
            Ok((
                InstanceRecord {
                    term,
                    vertices: inst.system.vertex_count(),
                    results,
                },
                disc,
            ))
        })
        .collect();

    let mut report = OracleReport {
        instances: Vec::new(),
        verdicts,
        discrepancies: Vec::new(),
    };
    report
        .discrepancies
        .extend(check_init_markings(decls, g, abs, cfg.max_vertices, cfg.state_cap)?);
    for r in records {
        let (rec, disc) = r?;
        report.instances.push(rec);
        report.discrepancies.extend(disc);
    }
    for (qi, q) in queries.iter().enumerate() {
        if report.verdicts[qi].2 == Some(Answer::Uncoverable)
            && report
                .instances
                .iter()
                .any(|i| i.results[qi].concrete == Concrete::Holds)
        {
            report.discrepancies.push(Discrepancy {
                lemma: "pebble-completeness",
                query: Some(q.id.clone()),
                term: None,
                detail: "an instance covers the target but the grammar was judged UNCOVERABLE".into(),
            });
        }
    }
    Ok(report)
}

/// Keeps only the axiom transitions of an init net, so that no process token
/// is ever produced by a rule. A negative control for the oracle.
pub fn starve_init_net(init: &mut InitNet) {
    let keep: Vec<usize> = (0..init.pn.net.transitions().len())
        .filter(|&t| init.pn.net.transitions()[t].pre == [(0, 1)])
        .collect();
    let transitions = keep.iter().map(|&t| init.pn.net.transitions()[t].clone()).collect();
    let net = Net::new(init.pn.net.places().to_vec(), transitions).expect("subset of a valid net");
    init.pn = PetriNet::new(net, init.pn.initial.clone()).expect("same places");
    init.descriptions = keep.iter().map(|&t| init.descriptions[t].clone()).collect();
}

/// Compares the zero-nonterminal projections of every init net with the
/// initial markings of the enumerated instances, both bounded by `max_tokens`.
pub fn check_init_markings(
    decls: &Declarations,
    g: &HrGrammar,
    abs: &CountingAbstraction,
    max_tokens: usize,
    state_cap: usize,
) -> Result<Option<Discrepancy>, OracleError> {
    let mut abstract_side = BTreeSet::new();
    for init in &abs.inits {
        let (set, truncated) = counting::zero_nonterminal_projections(init, max_tokens as u64, state_cap)?;
        if truncated {
            return Ok(Some(Discrepancy {
                lemma: "init-markings",
                query: None,
                term: None,
                detail: format!("init net exploration truncated at {state_cap} states"),
            }));
        }
        abstract_side.extend(set);
    }
    let concrete_side: BTreeSet<BTreeMap<PlaceKey, u64>> = enumerate_instances(decls, g, max_tokens)
        .iter()
        .map(|i| initial_projection(decls, &i.system))
        .collect();
    if abstract_side == concrete_side {
        return Ok(None);
    }
    let show = |m: &BTreeMap<PlaceKey, u64>| m.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(",");
    let extra: Vec<String> = abstract_side.difference(&concrete_side).map(show).collect();
    let missing: Vec<String> = concrete_side.difference(&abstract_side).map(show).collect();
    Ok(Some(Discrepancy {
        lemma: "init-markings",
        query: None,
        term: None,
        detail: format!(
            "only in init net: [{}]; only in instances: [{}]",
            extra.join("; "),
            missing.join("; ")
        ),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::tests::{chain_grammar, star_grammar};
    use crate::grammar::{parse_spec, HrGrammar, Rule};
    use crate::pebble::tests::RING;
    use crate::systems::tests::example_decls;

    fn pref(ptype: &str, place: &str) -> PlaceRef {
        PlaceRef {
            ptype: ptype.into(),
            source: None,
            place: place.into(),
        }
    }

    fn cover(id: &str, cs: &[(&str, &str, u64)]) -> Query {
        Query {
            id: id.into(),
            kind: QueryKind::Cover,
            constraints: cs.iter().map(|&(t, p, k)| (pref(t, p), k)).collect(),
            expect: None,
        }
    }

    #[test]
    fn chain_and_star_instance_sizes() {
        let d = example_decls();
        let sizes = |g: &HrGrammar, n| -> Vec<usize> {
            enumerate_instances(&d, g, n)
                .iter()
                .map(|i| i.system.vertex_count())
                .collect()
        };
        assert_eq!(sizes(&chain_grammar(), 5), vec![3, 4, 5]);
        assert_eq!(sizes(&star_grammar(), 4), vec![2, 3, 4]);
        assert!(sizes(&chain_grammar(), 2).is_empty());
    }

    #[test]
    fn empty_language_has_no_instances() {
        let g = HrGrammar {
            rules: vec![Rule {
                lhs: "X".into(),
                rhs: HrTerm::compose(HrTerm::nt("X"), HrTerm::edge("rel", "get", "s1", "s2")),
            }],
            axioms: vec!["X".into()],
        };
        assert!(enumerate_instances(&example_decls(), &g, 8).is_empty());
    }

    #[test]
    fn concrete_cover_on_chain() {
        let d = example_decls();
        let inst = enumerate_instances(&d, &chain_grammar(), 4);
        let four = &inst.iter().find(|i| i.system.vertex_count() == 4).unwrap().system;
        let work = cover("w", &[("Proc", "work", 2)]).constraints;
        assert_eq!(concrete_cover(&d, four, &work, 1000).unwrap(), Concrete::Fails);
        assert_eq!(concrete_cover(&d, four, &[], 1000).unwrap(), Concrete::Holds);
        let tok = cover("t", &[("Proc", "tok", 1)]).constraints;
        assert_eq!(concrete_cover(&d, four, &tok, 1000).unwrap(), Concrete::Holds);
        assert_eq!(concrete_cover(&d, four, &work, 1).unwrap(), Concrete::Inconclusive);
    }

    #[test]
    fn concrete_reach_uses_equality() {
        let d = example_decls();
        let inst = enumerate_instances(&d, &chain_grammar(), 4);
        let s = &inst[0].system;
        let reach = |cs: &[(&str, &str, u64)]| {
            let c: Vec<(PlaceRef, u64)> = cs.iter().map(|&(t, p, k)| (pref(t, p), k)).collect();
            concrete_reach(&d, s, &c, 1000).unwrap()
        };
        assert_eq!(reach(&[("Cont", "nokC", 1), ("Proc", "tok", 1)]), Concrete::Holds);
        assert_eq!(reach(&[("Proc", "nok", 0)]), Concrete::Fails);
    }

    #[test]
    fn chain_soundness_report_is_clean_and_deterministic() {
        let d = example_decls();
        let g = chain_grammar();
        let qs = vec![
            cover("mutex", &[("Proc", "work", 2)]),
            cover("tok", &[("Proc", "tok", 1)]),
        ];
        let cfg = OracleConfig {
            max_vertices: 6,
            ..OracleConfig::default()
        };
        let r1 = check_soundness(&d, &g, &qs, cfg).unwrap();
        assert!(r1.is_clean(), "{:?}", r1.discrepancies);
        assert_eq!(r1.instances.len(), 4);
        let kinds = BTreeMap::new();
        let r2 = check_soundness(&d, &g, &qs, cfg).unwrap();
        assert_eq!(r1.render(&kinds), r2.render(&kinds));
        assert!(r1
            .render(&kinds)
            .ends_with("SUMMARY instances=4 queries=2 discrepancies=0 inconclusive=0\n"));
    }

    #[test]
    fn corrupted_init_net_is_caught() {
        let d = example_decls();
        let g = chain_grammar();
        let qs = vec![cover("tok", &[("Proc", "tok", 1)])];
        let broken = CountingAbstraction::build_with(&d, &g, starve_init_net).unwrap();
        let r = check_soundness_against(&d, &g, &qs, OracleConfig::default(), &broken).unwrap();
        let lemmas: BTreeSet<&str> = r.discrepancies.iter().map(|x| x.lemma).collect();
        assert_eq!(lemmas, BTreeSet::from(["cover-soundness", "init-markings"]));
    }

    #[test]
    fn init_markings_match_instances() {
        let d = example_decls();
        for g in [chain_grammar(), star_grammar()] {
            let abs = CountingAbstraction::build(&d, &g).unwrap();
            assert_eq!(check_init_markings(&d, &g, &abs, 7, 100_000).unwrap(), None);
        }
    }

    #[test]
    fn ring_pebble_verdicts_match() {
        let spec = parse_spec(RING).unwrap();
        let qs = vec![
            cover("one", &[("Node", "ptop", 1)]),
            cover("two", &[("Node", "ptop", 2)]),
            cover("both", &[("Node", "ptop", 1), ("Lead", "ltop", 1)]),
        ];
        let r = check_soundness(&spec.decls, &spec.grammar, &qs, OracleConfig::default()).unwrap();
        assert!(r.is_clean(), "{:?}", r.discrepancies);
        let pebble: Vec<Option<Answer>> = r.verdicts.iter().map(|v| v.2).collect();
        assert_eq!(
            pebble,
            vec![
                Some(Answer::Coverable),
                Some(Answer::Uncoverable),
                Some(Answer::Uncoverable)
            ]
        );
        assert_eq!(r.instances.len(), 7);
    }
}
