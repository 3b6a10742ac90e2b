//! HR terms and grammars: normalization, derivation, Kleene evaluation over
//! finite algebras, filtering and source annotation.

mod annotate;
mod kleene;
pub(crate) mod parse;

pub use annotate::{annotate, AnnotNt, AnnotatedGrammar, AnnotatedRule};
pub use kleene::{eval_term, filter, kleene_language, Algebra, FilteredGrammar, Language};
pub use parse::{parse_spec, Diagnostic, Expectation, PlaceRef, Query, QueryKind, Spec, SpecError};

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;

use crate::systems::{self, Declarations, OpenSystem, Renaming, SystemError};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HrTerm {
    Edge {
        label: (String, String),
        s1: String,
        s2: String,
    },
    Restrict {
        keep: BTreeSet<String>,
        body: Box<HrTerm>,
    },
    Rename {
        alpha: Renaming,
        body: Box<HrTerm>,
    },
    Compose(Box<HrTerm>, Box<HrTerm>),
    Nt(String),
}

impl HrTerm {
    pub fn edge(t1: &str, t2: &str, s1: &str, s2: &str) -> Self {
        HrTerm::Edge {
            label: (t1.into(), t2.into()),
            s1: s1.into(),
            s2: s2.into(),
        }
    }

    pub fn restrict<'a>(keep: impl IntoIterator<Item = &'a str>, body: HrTerm) -> Self {
        HrTerm::Restrict {
            keep: keep.into_iter().map(String::from).collect(),
            body: Box::new(body),
        }
    }

    pub fn rename(alpha: Renaming, body: HrTerm) -> Self {
        HrTerm::Rename {
            alpha,
            body: Box::new(body),
        }
    }

    pub fn compose(a: HrTerm, b: HrTerm) -> Self {
        HrTerm::Compose(Box::new(a), Box::new(b))
    }

    pub fn nt(name: &str) -> Self {
        HrTerm::Nt(name.into())
    }

    /// Number of constructor nodes; nonterminal leaves count zero.
    pub fn size(&self) -> usize {
        match self {
            HrTerm::Edge { .. } => 1,
            HrTerm::Restrict { body, .. } | HrTerm::Rename { body, .. } => 1 + body.size(),
            HrTerm::Compose(a, b) => 1 + a.size() + b.size(),
            HrTerm::Nt(_) => 0,
        }
    }

    pub fn is_ground(&self) -> bool {
        self.nonterminals().is_empty()
    }

    /// Nonterminal occurrences, left to right.
    pub fn nonterminals(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_nts(&mut out);
        out
    }

    fn collect_nts<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            HrTerm::Edge { .. } => {}
            HrTerm::Restrict { body, .. } | HrTerm::Rename { body, .. } => body.collect_nts(out),
            HrTerm::Compose(a, b) => {
                a.collect_nts(out);
                b.collect_nts(out);
            }
            HrTerm::Nt(x) => out.push(x),
        }
    }

    /// Replaces the nonterminal occurrences left to right by `subst`.
    pub fn substitute(&self, subst: &mut impl FnMut(&str) -> HrTerm) -> HrTerm {
        match self {
            HrTerm::Edge { .. } => self.clone(),
            HrTerm::Restrict { keep, body } => HrTerm::Restrict {
                keep: keep.clone(),
                body: Box::new(body.substitute(subst)),
            },
            HrTerm::Rename { alpha, body } => HrTerm::Rename {
                alpha: alpha.clone(),
                body: Box::new(body.substitute(subst)),
            },
            HrTerm::Compose(a, b) => {
                let a = a.substitute(subst);
                let b = b.substitute(subst);
                HrTerm::Compose(Box::new(a), Box::new(b))
            }
            HrTerm::Nt(x) => subst(x),
        }
    }

    fn replace_leftmost(&self, rhs: &HrTerm) -> HrTerm {
        let mut done = false;
        self.substitute(&mut |x| {
            if done {
                HrTerm::Nt(x.to_string())
            } else {
                done = true;
                rhs.clone()
            }
        })
    }
}

impl fmt::Display for HrTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn operand(t: &HrTerm, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            if matches!(t, HrTerm::Compose(..)) {
                write!(f, "({t})")
            } else {
                write!(f, "{t}")
            }
        }
        match self {
            HrTerm::Edge { label, s1, s2 } => {
                write!(f, "edge ({},{}) ({},{})", label.0, label.1, s1, s2)
            }
            HrTerm::Restrict { keep, body } => {
                let ks: Vec<&str> = keep.iter().map(|s| s.as_str()).collect();
                write!(f, "restrict {{{}}} ", ks.join(","))?;
                operand(body, f)
            }
            HrTerm::Rename { alpha, body } => {
                let sw: Vec<String> = alpha.to_swaps().iter().map(|(a, b)| format!("{a}<->{b}")).collect();
                write!(f, "rename ({}) ", sw.join(","))?;
                operand(body, f)
            }
            HrTerm::Compose(a, b) => {
                write!(f, "{a} + ")?;
                operand(b, f)
            }
            HrTerm::Nt(x) => write!(f, "{x}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rule {
    pub lhs: String,
    pub rhs: HrTerm,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HrGrammar {
    pub rules: Vec<Rule>,
    pub axioms: Vec<String>,
}

impl HrGrammar {
    /// Nonterminals in order of first appearance (axioms, then rule lhs).
    pub fn nonterminals(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for x in self.axioms.iter().chain(self.rules.iter().map(|r| &r.lhs)) {
            if seen.insert(x.clone()) {
                out.push(x.clone());
            }
        }
        out
    }

    pub fn rules_for<'a>(&'a self, x: &'a str) -> impl Iterator<Item = &'a Rule> + 'a {
        self.rules.iter().filter(move |r| r.lhs == x)
    }

    /// Minimal ground size derivable from each productive nonterminal.
    pub fn min_sizes(&self) -> BTreeMap<String, usize> {
        let mut best: BTreeMap<String, usize> = BTreeMap::new();
        loop {
            let mut changed = false;
            for r in &self.rules {
                let mut total = r.rhs.size();
                let mut ok = true;
                for x in r.rhs.nonterminals() {
                    match best.get(x) {
                        Some(k) => total += k,
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok && best.get(&r.lhs).is_none_or(|&k| total < k) {
                    best.insert(r.lhs.clone(), total);
                    changed = true;
                }
            }
            if !changed {
                return best;
            }
        }
    }

    pub fn unproductive(&self) -> Vec<String> {
        let sizes = self.min_sizes();
        self.nonterminals()
            .into_iter()
            .filter(|x| !sizes.contains_key(x))
            .collect()
    }

    /// True when every rule has at most one constructor on its rhs.
    pub fn is_normal(&self) -> bool {
        self.rules.iter().all(|r| is_normal_rhs(&r.rhs))
    }
}

fn is_normal_rhs(t: &HrTerm) -> bool {
    let leaf = |t: &HrTerm| matches!(t, HrTerm::Nt(_));
    match t {
        HrTerm::Edge { .. } | HrTerm::Nt(_) => true,
        HrTerm::Restrict { body, .. } | HrTerm::Rename { body, .. } => leaf(body),
        HrTerm::Compose(a, b) => leaf(a) && leaf(b),
    }
}

/// Splits every rhs so that it carries exactly one constructor. A constructor
/// operand that is not a nonterminal becomes a fresh nonterminal `X#k`, where
/// `k` numbers the subterms of all rules of `X` in preorder.
pub fn normalize(g: &HrGrammar) -> HrGrammar {
    let mut counters: BTreeMap<String, usize> = BTreeMap::new();
    let mut rules = Vec::new();
    for r in &g.rules {
        let counter = counters.entry(r.lhs.clone()).or_insert(0);
        let mut extra = Vec::new();
        let rhs = split(&r.lhs, &r.rhs, counter, &mut extra);
        rules.push(Rule {
            lhs: r.lhs.clone(),
            rhs,
        });
        rules.extend(extra);
    }
    HrGrammar {
        rules,
        axioms: g.axioms.clone(),
    }
}

fn split(base: &str, t: &HrTerm, counter: &mut usize, out: &mut Vec<Rule>) -> HrTerm {
    *counter += 1;
    let operand = |c: &HrTerm, counter: &mut usize, out: &mut Vec<Rule>| -> HrTerm {
        if let HrTerm::Nt(_) = c {
            *counter += 1;
            return c.clone();
        }
        let name = format!("{base}#{}", *counter);
        let pos = out.len();
        let rhs = split(base, c, counter, out);
        out.insert(pos, Rule { lhs: name.clone(), rhs });
        HrTerm::Nt(name)
    };
    match t {
        HrTerm::Edge { .. } | HrTerm::Nt(_) => t.clone(),
        HrTerm::Restrict { keep, body } => HrTerm::Restrict {
            keep: keep.clone(),
            body: Box::new(operand(body, counter, out)),
        },
        HrTerm::Rename { alpha, body } => HrTerm::Rename {
            alpha: alpha.clone(),
            body: Box::new(operand(body, counter, out)),
        },
        HrTerm::Compose(a, b) => {
            let a = operand(a, counter, out);
            let b = operand(b, counter, out);
            HrTerm::Compose(Box::new(a), Box::new(b))
        }
    }
}

/// Ground terms of size at most `max_term_size` derivable from an axiom, each
/// once, in breadth-first order of leftmost derivations (rules in declaration
/// order). Stops after `limit` terms when given.
pub fn derive_limited(g: &HrGrammar, max_term_size: usize, limit: Option<usize>) -> Vec<(String, HrTerm)> {
    let sizes = g.min_sizes();
    let bound = |t: &HrTerm| -> Option<usize> {
        let mut total = t.size();
        for x in t.nonterminals() {
            total += sizes.get(x)?;
        }
        Some(total)
    };
    let mut out = Vec::new();
    let mut emitted = HashSet::new();
    let mut visited = HashSet::new();
    let mut queue = VecDeque::new();
    for ax in &g.axioms {
        let t = HrTerm::Nt(ax.clone());
        if bound(&t).is_some_and(|b| b <= max_term_size) && visited.insert(t.clone()) {
            queue.push_back((ax.clone(), t));
        }
    }
    while let Some((ax, t)) = queue.pop_front() {
        let nts = t.nonterminals();
        let Some(&x) = nts.first() else {
            if emitted.insert(t.clone()) {
                out.push((ax, t));
                if limit.is_some_and(|l| out.len() >= l) {
                    break;
                }
            }
            continue;
        };
        for r in g.rules_for(x) {
            let next = t.replace_leftmost(&r.rhs);
            if bound(&next).is_some_and(|b| b <= max_term_size) && visited.insert(next.clone()) {
                queue.push_back((ax.clone(), next));
            }
        }
    }
    out
}

pub fn derive(g: &HrGrammar, max_term_size: usize) -> Vec<(String, HrTerm)> {
    derive_limited(g, max_term_size, None)
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("term is not ground: nonterminal `{0}`")]
    NotGround(String),
    #[error(transparent)]
    System(#[from] SystemError),
}

pub fn eval_system(decls: &Declarations, t: &HrTerm) -> Result<OpenSystem, EvalError> {
    Ok(match t {
        HrTerm::Edge { label, s1, s2 } => systems::edge_const(decls, (&label.0, &label.1), s1, s2)?,
        HrTerm::Restrict { keep, body } => systems::restrict(&eval_system(decls, body)?, keep),
        HrTerm::Rename { alpha, body } => systems::rename(&eval_system(decls, body)?, alpha),
        HrTerm::Compose(a, b) => systems::compose(&eval_system(decls, a)?, &eval_system(decls, b)?)?,
        HrTerm::Nt(x) => return Err(EvalError::NotGround(x.clone())),
    })
}
