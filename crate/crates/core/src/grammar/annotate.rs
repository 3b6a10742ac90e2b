use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{HrGrammar, HrTerm};

/// A nonterminal together with the sources visible in what it derives.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AnnotNt {
    pub base: String,
    pub visible: BTreeSet<String>,
}

impl fmt::Display for AnnotNt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v: Vec<&str> = self.visible.iter().map(|s| s.as_str()).collect();
        write!(f, "{}^{{{}}}", self.base, v.join(","))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct AnnotatedRule {
    pub lhs: AnnotNt,
    /// Index of the rule of the source grammar.
    pub rule: usize,
    pub rhs: HrTerm,
    /// Annotations of the rhs nonterminal occurrences, left to right.
    pub children: Vec<AnnotNt>,
    /// Sources hidden by the restrictions inside `rhs`, one entry per hidden vertex.
    pub hidden: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnnotatedGrammar {
    pub nonterminals: BTreeSet<AnnotNt>,
    pub rules: Vec<AnnotatedRule>,
    pub axioms: Vec<AnnotNt>,
}

/// Visible set of `t` given the annotations of its nonterminal occurrences,
/// collecting the sources hidden along the way.
pub(crate) fn propagate(
    t: &HrTerm,
    children: &[AnnotNt],
    next: &mut usize,
    hidden: &mut Vec<String>,
) -> BTreeSet<String> {
    match t {
        HrTerm::Edge { s1, s2, .. } => BTreeSet::from([s1.clone(), s2.clone()]),
        HrTerm::Restrict { keep, body } => {
            let inner = propagate(body, children, next, hidden);
            hidden.extend(inner.difference(keep).cloned());
            inner.intersection(keep).cloned().collect()
        }
        HrTerm::Rename { alpha, body } => propagate(body, children, next, hidden)
            .iter()
            .map(|s| alpha.apply(s).to_string())
            .collect(),
        HrTerm::Compose(a, b) => {
            let mut x = propagate(a, children, next, hidden);
            x.extend(propagate(b, children, next, hidden));
            x
        }
        HrTerm::Nt(_) => {
            let v = children[*next].visible.clone();
            *next += 1;
            v
        }
    }
}

/// Annotates every nonterminal with each visible-source set it can take,
/// producing one rule per reachable combination of child annotations.
pub fn annotate(g: &HrGrammar) -> AnnotatedGrammar {
    let mut known: BTreeMap<String, BTreeSet<BTreeSet<String>>> = BTreeMap::new();
    let mut rules: Vec<AnnotatedRule> = Vec::new();
    let mut seen: BTreeSet<(usize, Vec<AnnotNt>)> = BTreeSet::new();
    loop {
        let mut changed = false;
        for (i, r) in g.rules.iter().enumerate() {
            let mut combos: Vec<Vec<AnnotNt>> = vec![vec![]];
            for x in r.rhs.nonterminals() {
                let options = known.get(x).cloned().unwrap_or_default();
                combos = combos
                    .into_iter()
                    .flat_map(|prefix| {
                        options.iter().map(move |v| {
                            let mut p = prefix.clone();
                            p.push(AnnotNt {
                                base: x.to_string(),
                                visible: v.clone(),
                            });
                            p
                        })
                    })
                    .collect();
            }
            for children in combos {
                if !seen.insert((i, children.clone())) {
                    continue;
                }
                let mut hidden = Vec::new();
                let visible = propagate(&r.rhs, &children, &mut 0, &mut hidden);
                known.entry(r.lhs.clone()).or_default().insert(visible.clone());
                rules.push(AnnotatedRule {
                    lhs: AnnotNt {
                        base: r.lhs.clone(),
                        visible,
                    },
                    rule: i,
                    rhs: r.rhs.clone(),
                    children,
                    hidden,
                });
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut axioms = Vec::new();
    for x in &g.axioms {
        for v in known.get(x).into_iter().flatten() {
            let a = AnnotNt {
                base: x.clone(),
                visible: v.clone(),
            };
            if !axioms.contains(&a) {
                axioms.push(a);
            }
        }
    }
    let nonterminals = rules.iter().map(|r| r.lhs.clone()).collect();
    AnnotatedGrammar {
        nonterminals,
        rules,
        axioms,
    }
}

impl AnnotatedGrammar {
    /// Recomputes every rule's lhs annotation and hidden sources from its rhs.
    pub fn check_equations(&self) -> Result<(), String> {
        for r in &self.rules {
            let mut hidden = Vec::new();
            let v = propagate(&r.rhs, &r.children, &mut 0, &mut hidden);
            if v != r.lhs.visible || hidden != r.hidden {
                return Err(format!("rule for {} violates the annotation equations", r.lhs));
            }
            if let Some(c) = r.children.iter().find(|c| !self.nonterminals.contains(c)) {
                return Err(format!("rule for {} uses unknown {}", r.lhs, c));
            }
        }
        Ok(())
    }
}
