use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;

use super::{HrGrammar, HrTerm, Rule};
use crate::systems::Renaming;

/// An interpretation of the HR operations.
pub trait Algebra {
    type Elem: Clone + Ord + Debug;
    type Error;

    fn edge(&self, label: &(String, String), s1: &str, s2: &str) -> Result<Self::Elem, Self::Error>;
    fn restrict(&self, keep: &BTreeSet<String>, x: &Self::Elem) -> Result<Self::Elem, Self::Error>;
    fn rename(&self, alpha: &Renaming, x: &Self::Elem) -> Result<Self::Elem, Self::Error>;
    fn compose(&self, a: &Self::Elem, b: &Self::Elem) -> Result<Self::Elem, Self::Error>;
}

/// Evaluates a term whose nonterminal occurrences are bound, left to right, to `args`.
pub fn eval_term<A: Algebra>(alg: &A, t: &HrTerm, args: &[A::Elem]) -> Result<A::Elem, A::Error> {
    let mut next = 0;
    eval_inner(alg, t, args, &mut next)
}

fn eval_inner<A: Algebra>(alg: &A, t: &HrTerm, args: &[A::Elem], next: &mut usize) -> Result<A::Elem, A::Error> {
    match t {
        HrTerm::Edge { label, s1, s2 } => alg.edge(label, s1, s2),
        HrTerm::Restrict { keep, body } => alg.restrict(keep, &eval_inner(alg, body, args, next)?),
        HrTerm::Rename { alpha, body } => alg.rename(alpha, &eval_inner(alg, body, args, next)?),
        HrTerm::Compose(a, b) => {
            let x = eval_inner(alg, a, args, next)?;
            let y = eval_inner(alg, b, args, next)?;
            alg.compose(&x, &y)
        }
        HrTerm::Nt(_) => {
            let v = args[*next].clone();
            *next += 1;
            Ok(v)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Language<E> {
    pub per_nt: BTreeMap<String, BTreeSet<E>>,
    pub axioms: BTreeSet<E>,
}

impl<E: Ord> Language<E> {
    pub fn of(&self, x: &str) -> Option<&BTreeSet<E>> {
        self.per_nt.get(x)
    }
}

/// All argument tuples for the nonterminal occurrences of `rhs`, drawn from `values`.
fn tuples<E: Clone + Ord>(rhs: &HrTerm, values: &BTreeMap<String, BTreeSet<E>>) -> Vec<Vec<E>> {
    let mut acc: Vec<Vec<E>> = vec![vec![]];
    for x in rhs.nonterminals() {
        let Some(set) = values.get(x) else {
            return vec![];
        };
        let mut next = Vec::with_capacity(acc.len() * set.len());
        for prefix in &acc {
            for v in set {
                let mut p = prefix.clone();
                p.push(v.clone());
                next.push(p);
            }
        }
        acc = next;
    }
    acc
}

/// Least fixpoint of the grammar's equation system in `alg`. Unproductive
/// nonterminals do not appear in the map.
pub fn kleene_language<A: Algebra>(g: &HrGrammar, alg: &A) -> Result<Language<A::Elem>, A::Error> {
    let mut values: BTreeMap<String, BTreeSet<A::Elem>> = BTreeMap::new();
    let mut done: BTreeSet<(usize, Vec<A::Elem>)> = BTreeSet::new();
    loop {
        let mut changed = false;
        for (i, r) in g.rules.iter().enumerate() {
            for args in tuples(&r.rhs, &values) {
                let key = (i, args);
                if done.contains(&key) {
                    continue;
                }
                let v = eval_term(alg, &r.rhs, &key.1)?;
                done.insert(key);
                if values.entry(r.lhs.clone()).or_default().insert(v) {
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let axioms = g
        .axioms
        .iter()
        .filter_map(|x| values.get(x))
        .flat_map(|s| s.iter().cloned())
        .collect();
    Ok(Language { per_nt: values, axioms })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FilteredGrammar<E> {
    pub grammar: HrGrammar,
    /// Filtered nonterminal -> (original nonterminal, algebra value).
    pub origin: BTreeMap<String, (String, E)>,
}

/// Grammar generating exactly the terms of `g` that evaluate to `target`.
/// Nonterminals are named `X@k` where `k` indexes the value in the sorted
/// table of all values of the language.
pub fn filter<A: Algebra>(g: &HrGrammar, alg: &A, target: &A::Elem) -> Result<FilteredGrammar<A::Elem>, A::Error> {
    let lang = kleene_language(g, alg)?;
    let table: Vec<A::Elem> = lang
        .per_nt
        .values()
        .flat_map(|s| s.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index = |e: &A::Elem| table.binary_search(e).expect("value of the language");
    let name = |x: &str, e: &A::Elem| format!("{x}@{}", index(e));

    let mut rules = Vec::new();
    let mut seen = BTreeSet::new();
    for r in &g.rules {
        for args in tuples(&r.rhs, &lang.per_nt) {
            let v = eval_term(alg, &r.rhs, &args)?;
            let mut it = args.iter();
            let rhs = r.rhs.substitute(&mut |x| HrTerm::Nt(name(x, it.next().unwrap())));
            let rule = Rule {
                lhs: name(&r.lhs, &v),
                rhs,
            };
            if seen.insert(rule.clone()) {
                rules.push(rule);
            }
        }
    }
    let axioms: Vec<String> = g
        .axioms
        .iter()
        .filter(|x| lang.per_nt.get(*x).is_some_and(|s| s.contains(target)))
        .map(|x| name(x, target))
        .collect();

    // keep what is reachable from the axioms
    let mut reach: BTreeSet<String> = axioms.iter().cloned().collect();
    loop {
        let before = reach.len();
        for r in &rules {
            if reach.contains(&r.lhs) {
                for x in r.rhs.nonterminals() {
                    reach.insert(x.to_string());
                }
            }
        }
        if reach.len() == before {
            break;
        }
    }
    rules.retain(|r| reach.contains(&r.lhs));

    let mut origin = BTreeMap::new();
    for (x, set) in &lang.per_nt {
        for e in set {
            let n = name(x, e);
            if reach.contains(&n) {
                origin.insert(n, (x.clone(), e.clone()));
            }
        }
    }
    Ok(FilteredGrammar {
        grammar: HrGrammar { rules, axioms },
        origin,
    })
}
