use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use hrcount::behaviors::{beta, drop_marking, fold, FoldedAlgebra};
use hrcount::grammar::{eval_system, eval_term, parse_spec, HrTerm, Spec};
use hrcount::oracle::enumerate_instances;
use hrcount::pebble::{self, footprint_of_sequence, initial_footprint, Footprint, Move};
use hrcount::petri::{backward_coverable, covers, reachable_bounded, Marking, Net, PetriNet, Transition};
use hrcount::systems::{self, canonical_form, Renaming};

const TYPES: &str = "
process Cont {
  places tokC nokC
  init tokC
  obs getC : nokC -> tokC
  obs relC : tokC -> nokC
}
process Proc {
  places tok nok work
  init nok
  obs get : nok -> tok
  obs rel : tok -> nok
  int start : tok -> work
  int stop : work -> tok
}
source s1, s2, s4 : Proc
source s3 : Cont
grammar {
  axiom C
  C -> edge (rel,get) (s1,s2)
}
";

fn spec() -> Spec {
    parse_spec(TYPES).unwrap()
}

/// Type-correct edge constants over the declared sources.
const EDGES: &[(&str, &str, &str, &str)] = &[
    ("rel", "get", "s1", "s2"),
    ("rel", "get", "s2", "s1"),
    ("rel", "get", "s2", "s4"),
    ("get", "rel", "s4", "s1"),
    ("relC", "get", "s3", "s1"),
    ("relC", "get", "s3", "s2"),
    ("getC", "rel", "s3", "s4"),
    ("rel", "getC", "s1", "s3"),
];

const SOURCES: &[&str] = &["s1", "s2", "s3", "s4"];

fn term() -> impl Strategy<Value = HrTerm> {
    let leaf = (0..EDGES.len()).prop_map(|i| {
        let (a, b, s1, s2) = EDGES[i];
        HrTerm::edge(a, b, s1, s2)
    });
    leaf.prop_recursive(4, 16, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| HrTerm::compose(a, b)),
            (inner.clone(), proptest::sample::subsequence(SOURCES.to_vec(), 0..=4))
                .prop_map(|(t, keep)| HrTerm::restrict(keep, t)),
            (
                inner,
                prop_oneof![Just(("s1", "s2")), Just(("s2", "s4")), Just(("s1", "s4"))]
            )
                .prop_map(|(t, (a, b))| HrTerm::rename(Renaming::from_swaps([(a, b)]), t)),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn compose_is_commutative_and_associative(a in term(), b in term(), c in term()) {
        let d = spec().decls;
        let (a, b, c) = (eval_system(&d, &a).unwrap(), eval_system(&d, &b).unwrap(), eval_system(&d, &c).unwrap());
        let ab = systems::compose(&a, &b).unwrap();
        prop_assert_eq!(canonical_form(&ab), canonical_form(&systems::compose(&b, &a).unwrap()));
        let l = systems::compose(&ab, &c).unwrap();
        let r = systems::compose(&a, &systems::compose(&b, &c).unwrap()).unwrap();
        prop_assert_eq!(canonical_form(&l), canonical_form(&r));
        prop_assert!(ab.vertex_count() >= a.vertex_count().max(b.vertex_count()));
        prop_assert!(ab.check_invariants(&d).is_ok());
    }

    #[test]
    fn restrict_and_rename_laws(t in term(),
                                a in proptest::sample::subsequence(SOURCES.to_vec(), 0..=4),
                                b in proptest::sample::subsequence(SOURCES.to_vec(), 0..=4)) {
        let d = spec().decls;
        let s = eval_system(&d, &t).unwrap();
        let set = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<BTreeSet<String>>();
        let (a, b) = (set(&a), set(&b));
        let twice = systems::restrict(&systems::restrict(&s, &a), &b);
        let once = systems::restrict(&s, &a.intersection(&b).cloned().collect());
        prop_assert_eq!(canonical_form(&twice), canonical_form(&once));
        prop_assert_eq!(twice.vertex_count(), s.vertex_count());
        let alpha = Renaming::from_swaps([("s1", "s2"), ("s2", "s4")]);
        let back = systems::rename(&systems::rename(&s, &alpha), &alpha.inverse());
        prop_assert_eq!(canonical_form(&back), canonical_form(&s));
        prop_assert_eq!(canonical_form(&systems::rename(&s, &Renaming::identity())), canonical_form(&s));
    }

    #[test]
    fn canonical_form_ignores_vertex_ids(t in term(), perm in Just(()).prop_perturb(|_, mut rng| rng.next_u64())) {
        let d = spec().decls;
        let s = eval_system(&d, &t).unwrap();
        // shuffle the ids with a seeded permutation
        let mut ids: Vec<systems::VertexId> = s.vertices.keys().copied().collect();
        let mut state = perm;
        for i in (1..ids.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ids.swap(i, (state >> 33) as usize % (i + 1));
        }
        let map: BTreeMap<systems::VertexId, systems::VertexId> = s.vertices.keys().copied().zip(ids).collect();
        let moved = systems::OpenSystem {
            vertices: s.vertices.iter().map(|(v, ty)| (map[v], ty.clone())).collect(),
            edges: s
                .edges
                .iter()
                .map(|e| systems::Edge { from: map[&e.from], label: e.label.clone(), to: map[&e.to] })
                .collect(),
            sources: s.sources.iter().map(|(x, v)| (x.clone(), map[v])).collect(),
        };
        prop_assert_eq!(canonical_form(&moved), canonical_form(&s));
    }

    #[test]
    fn folding_commutes_with_evaluation(t in term()) {
        prop_assume!(t.size() <= 8);
        let d = spec().decls;
        let concrete = fold(&beta(&d, &eval_system(&d, &t).unwrap()).unwrap()).unwrap();
        let abstract_ = eval_term(&FoldedAlgebra::new(&d), &t, &[]).unwrap();
        prop_assert_eq!(drop_marking(&concrete), abstract_);
    }
}

fn net(places: usize, conservative: bool) -> impl Strategy<Value = PetriNet> {
    let arcs = proptest::collection::vec(0u64..=2, places);
    let transition = (arcs.clone(), arcs);
    (
        proptest::collection::vec(transition, 1..=5),
        proptest::collection::vec(0u64..=2, places),
    )
        .prop_map(move |(ts, init)| {
            let transitions = ts
                .into_iter()
                .enumerate()
                .map(|(i, (pre, mut post))| {
                    if conservative {
                        // never produce more tokens than consumed
                        let budget: u64 = pre.iter().sum();
                        let mut left = budget;
                        for w in post.iter_mut() {
                            *w = (*w).min(left);
                            left -= *w;
                        }
                    }
                    Transition::new(
                        format!("t{i}"),
                        pre.into_iter().enumerate(),
                        post.into_iter().enumerate(),
                    )
                })
                .collect();
            let names = (0..places).map(|p| format!("p{p}")).collect();
            PetriNet::new(Net::new(names, transitions).unwrap(), Marking(init)).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn firing_moves_arc_weights(pn in (1usize..=5).prop_flat_map(|n| net(n, false))) {
        for (i, t) in pn.net.transitions().iter().enumerate() {
            if pn.net.is_enabled(&pn.initial, i).unwrap() {
                let next = pn.net.fire(&pn.initial, i).unwrap();
                for p in 0..pn.net.place_count() {
                    prop_assert_eq!(next.get(p) + t.pre_weight(p), pn.initial.get(p) + t.post_weight(p));
                }
            } else {
                prop_assert!(t.pre.iter().any(|&(p, w)| pn.initial.get(p) < w));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn backward_search_agrees_with_exhaustive_search(
        pn in (1usize..=5).prop_flat_map(|n| net(n, true)),
        target in proptest::collection::vec(0u64..=3, 5),
    ) {
        let reach = reachable_bounded(&pn, 100_000).unwrap();
        prop_assert!(!reach.truncated);
        let target: BTreeMap<usize, u64> = target
            .into_iter()
            .take(pn.net.place_count())
            .enumerate()
            .filter(|&(_, k)| k > 0)
            .collect();
        let forward = reach.markings.iter().any(|m| covers(m, &target));
        let backward = backward_coverable(&pn, &target).unwrap();
        prop_assert_eq!(forward, backward.is_coverable());
        if let hrcount::petri::Coverability::Coverable { witness } = backward {
            let m = pn.net.fire_sequence(&pn.initial, &witness).unwrap();
            prop_assert!(covers(&m, &target));
        }
    }
}

const PPS_RING: &str = "
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
  R -> restrict {} (P + edge (send,recv) (b,a) + edge (recv,send) (b,a))
  P -> edge (send,recv) (a,b)
  P -> restrict {a,b} rename (b<->c) (P + edge (send,recv) (b,c) + edge (recv,send) (b,c))
}
";

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn footprints_track_random_runs(which in 0usize..6, choices in proptest::collection::vec(any::<prop::sample::Index>(), 0..20)) {
        let spec = parse_spec(PPS_RING).unwrap();
        let sig = pebble::check_pps(&spec.decls, &spec.grammar).unwrap();
        let instances = enumerate_instances(&spec.decls, &spec.grammar, 7);
        let s = &instances[which % instances.len()].system;
        let b = beta(&spec.decls, s).unwrap();
        let edges: Vec<Move> = s.edges.iter().map(Move::of_edge).collect();
        let tops: BTreeMap<usize, u32> = b
            .place_keys
            .iter()
            .enumerate()
            .filter(|(_, (q, _))| sig.place(q).is_some_and(|(_, top)| top))
            .map(|(p, (_, v))| (p, *v))
            .collect();
        let footprint = |m: &Marking| -> Footprint {
            let mut f: Footprint = s.vertices.keys().map(|v| (*v, 0)).collect();
            for (&p, v) in &tops {
                *f.get_mut(v).unwrap() += m.get(p) as i64;
            }
            f
        };
        let m0 = b.pn.initial.clone();
        prop_assert_eq!(footprint(&m0), initial_footprint(&sig, s));
        let mut m = m0.clone();
        let mut seq = Vec::new();
        for c in choices {
            let enabled: Vec<usize> = (0..b.pn.net.transitions().len())
                .filter(|&t| b.pn.net.is_enabled(&m, t).unwrap())
                .collect();
            if enabled.is_empty() {
                break;
            }
            let t = enabled[c.index(enabled.len())];
            m = b.pn.net.fire(&m, t).unwrap();
            // edge transitions come first, in edge order
            seq.push(edges[t]);
        }
        let delta: Footprint = footprint(&m)
            .into_iter()
            .map(|(v, x)| (v, x - footprint(&m0)[&v]))
            .collect();
        let mut expected: Footprint = s.vertices.keys().map(|v| (*v, 0)).collect();
        for (v, x) in footprint_of_sequence(&seq) {
            *expected.get_mut(&v).unwrap() += x;
        }
        prop_assert_eq!(delta, expected);
    }
}
