//! Acceptance suite: one test and one PASS/FAIL line per criterion.
//! Run with `cargo test -p hrcount-cli --test acceptance -- --nocapture --test-threads 1`
//! to see the lines.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hrcount::behaviors::{beta, drop_marking, fold, FoldedAlgebra, FoldedNet, FoldedTransition, PlaceKey};
use hrcount::counting::{zero_nonterminal_projections, Answer, CountingAbstraction};
use hrcount::export::{canonical, read_lola, read_pnml, write_lola, write_pnml};
use hrcount::grammar::{
    derive_limited, eval_system, eval_term, parse_spec, HrGrammar, HrTerm, PlaceRef, Query, QueryKind, Rule, Spec,
};
use hrcount::oracle::{concrete_cover, enumerate_instances, initial_projection, Concrete};
use hrcount::pebble::{self, fireable_subsequence, footprint_of_sequence, Footprint, Move};
use hrcount::petri::{backward_coverable, reachable_bounded, Marking, Net, PetriNet, PlaceEquivalence, Transition};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn spec_path(name: &str) -> PathBuf {
    root().join("specs").join(name)
}

fn load(name: &str) -> Spec {
    parse_spec(&fs::read_to_string(spec_path(name)).unwrap()).unwrap()
}

fn bundled() -> Vec<String> {
    let mut out = Vec::new();
    for dir in ["", "bench", "demo"] {
        let mut names: Vec<String> = fs::read_dir(root().join("specs").join(dir))
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".pcs"))
            .map(|n| if dir.is_empty() { n } else { format!("{dir}/{n}") })
            .collect();
        names.sort();
        out.extend(names);
    }
    out
}

fn hrcount(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hrcount")).args(args).output().unwrap()
}

/// Prints the criterion line and fails the test on FAIL.
fn verdict(n: u32, title: &str, start: Instant, failures: Vec<String>, detail: String) {
    let secs = start.elapsed().as_secs_f64();
    let status = if failures.is_empty() { "PASS" } else { "FAIL" };
    println!("criterion {n}: {status} {title} ({detail}; {secs:.2}s)");
    for f in &failures {
        println!("  {f}");
    }
    assert!(failures.is_empty(), "criterion {n} failed: {failures:#?}");
}

#[test]
fn c1_mutual_exclusion_on_chain_and_star() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut times = Vec::new();
    for name in ["chain.pcs", "star.pcs"] {
        let t = Instant::now();
        let o = hrcount(&["check", spec_path(name).to_str().unwrap()]);
        let el = t.elapsed();
        times.push(format!("{name} {:.3}s", el.as_secs_f64()));
        let out = String::from_utf8_lossy(&o.stdout);
        if !out.lines().any(|l| l == "QUERY mutex: SAFE") {
            failures.push(format!("{name}: no SAFE verdict for work >= 2:\n{out}"));
        }
        if el >= Duration::from_secs(1) {
            failures.push(format!("{name}: took {el:?}"));
        }
    }
    verdict(
        1,
        "work >= 2 is SAFE on Chain and Star",
        start,
        failures,
        times.join(", "),
    );
}

fn c(q: &str) -> PlaceKey {
    PlaceKey::Class(q.into())
}

fn tr(pre: &[&str], post: &[&str]) -> FoldedTransition {
    FoldedTransition::new(pre.iter().map(|q| c(q)).collect(), post.iter().map(|q| c(q)).collect())
}

fn figure_net(extra: FoldedTransition) -> FoldedNet {
    FoldedNet {
        visible: BTreeSet::new(),
        places: ["tokC", "nokC", "tok", "nok", "work"].iter().map(|q| c(q)).collect(),
        transitions: [
            tr(&["tokC", "nok"], &["nokC", "tok"]),
            tr(&["tok"], &["work"]),
            tr(&["work"], &["tok"]),
            extra,
        ]
        .into(),
        initial: Some([(c("tokC"), 1), (c("nok"), 3)].into()),
    }
}

/// The closed system of the first enumerated instance with `n` vertices.
fn closed_instance(spec: &Spec, n: usize) -> hrcount::systems::OpenSystem {
    let inst = enumerate_instances(&spec.decls, &spec.grammar, n)
        .into_iter()
        .find(|i| i.system.vertex_count() == n)
        .unwrap();
    eval_system(&spec.decls, &HrTerm::restrict([], inst.term)).unwrap()
}

#[test]
fn c2_folding_matches_figure() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let chain = load("chain.pcs");
    let got = fold(&beta(&chain.decls, &closed_instance(&chain, 4)).unwrap()).unwrap();
    let want = figure_net(tr(&["tok", "nok"], &["nok", "tok"]));
    if got != want {
        failures.push(format!("chain:\n{got}expected\n{want}"));
    }
    let star = load("star.pcs");
    let got = fold(&beta(&star.decls, &closed_instance(&star, 4)).unwrap()).unwrap();
    let want = figure_net(tr(&["nokC", "tok"], &["tokC", "nok"]));
    if got != want {
        failures.push(format!("star:\n{got}expected\n{want}"));
    }
    verdict(
        2,
        "folded 4-vertex chain and star equal the figure nets",
        start,
        failures,
        "structural equality".into(),
    );
}

#[test]
fn c3_homomorphism_on_derived_terms() {
    // derived terms nest hundreds of levels deep
    std::thread::Builder::new()
        .stack_size(512 << 20)
        .spawn(homomorphism_on_derived_terms)
        .unwrap()
        .join()
        .unwrap();
}

fn homomorphism_on_derived_terms() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut counts = Vec::new();
    for name in bundled() {
        let spec = load(&name);
        let mut size = 16;
        let terms = loop {
            let t = derive_limited(&spec.grammar, size, Some(100));
            if t.len() >= 100 || size > 4000 {
                break t;
            }
            size *= 2;
        };
        if terms.len() < 100 {
            failures.push(format!("{name}: only {} ground terms", terms.len()));
        }
        let alg = FoldedAlgebra::new(&spec.decls);
        let mut mismatches = 0;
        for (_, t) in &terms {
            let concrete = fold(&beta(&spec.decls, &eval_system(&spec.decls, t).unwrap()).unwrap()).unwrap();
            if drop_marking(&concrete) != eval_term(&alg, t, &[]).unwrap() {
                mismatches += 1;
            }
        }
        if mismatches > 0 {
            failures.push(format!("{name}: {mismatches} mismatches"));
        }
        counts.push(format!("{name}:{}", terms.len()));
    }
    verdict(
        3,
        "finite-algebra evaluation equals folding of the evaluated system",
        start,
        failures,
        counts.join(" "),
    );
}

#[test]
fn c4_init_net_generates_instance_markings() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut sizes = Vec::new();
    for name in ["chain.pcs", "star.pcs"] {
        let spec = load(name);
        let abs = CountingAbstraction::build(&spec.decls, &spec.grammar).unwrap();
        let mut from_net = BTreeSet::new();
        for init in &abs.inits {
            let (set, truncated) = zero_nonterminal_projections(init, 10, 1_000_000).unwrap();
            if truncated {
                failures.push(format!("{name}: init net exploration truncated"));
            }
            from_net.extend(set);
        }
        let from_instances: BTreeSet<BTreeMap<PlaceKey, u64>> = enumerate_instances(&spec.decls, &spec.grammar, 10)
            .iter()
            .map(|i| initial_projection(&spec.decls, &i.system))
            .collect();
        if from_net != from_instances {
            failures.push(format!("{name}: init net {from_net:?} vs instances {from_instances:?}"));
        }
        sizes.push(format!("{name}: {} markings", from_instances.len()));
    }
    if start.elapsed() >= Duration::from_secs(5) {
        failures.push(format!("took {:?}", start.elapsed()));
    }
    verdict(
        4,
        "zero-nonterminal init markings equal instance markings up to 10 tokens",
        start,
        failures,
        sizes.join(", "),
    );
}

#[test]
fn c5_oracle_finds_no_discrepancy() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut instances = 0;
    for name in bundled() {
        let o = hrcount(&[
            "oracle",
            spec_path(&name).to_str().unwrap(),
            "--max-vertices",
            "8",
            "--state-cap",
            "1000000",
        ]);
        let out = String::from_utf8_lossy(&o.stdout);
        let summary = out.lines().last().unwrap_or("");
        if o.status.code() != Some(0) || !summary.contains("discrepancies=0") {
            failures.push(format!("{name}: {summary}"));
        }
        instances += out.lines().filter(|l| l.starts_with("INSTANCE ")).count();
    }
    if start.elapsed() >= Duration::from_secs(60) {
        failures.push(format!("took {:?}", start.elapsed()));
    }
    verdict(
        5,
        "oracle reports zero discrepancies on every bundled grammar",
        start,
        failures,
        format!("{instances} instances"),
    );
}

fn random_net(rng: &mut ChaCha8Rng) -> PetriNet {
    let places = rng.gen_range(1..=6);
    let transitions = (0..rng.gen_range(1..=5))
        .map(|i| {
            let mut arcs = || -> Vec<(usize, u64)> {
                let mut v = Vec::new();
                for p in 0..places {
                    if rng.gen_bool(0.4) {
                        v.push((p, rng.gen_range(1..=2)));
                    }
                }
                v
            };
            let pre = arcs();
            let post = arcs();
            Transition::new(format!("t{i}"), pre, post)
        })
        .collect();
    let names = (0..places).map(|p| format!("p{p}")).collect();
    let initial = Marking((0..places).map(|_| rng.gen_range(0..=2)).collect());
    PetriNet::new(Net::new(names, transitions).unwrap(), initial).unwrap()
}

fn project(m: &Marking, class: &[usize], classes: usize) -> Marking {
    let mut out = Marking::zero(classes);
    for (p, &k) in m.0.iter().enumerate() {
        out.0[class[p]] += k;
    }
    out
}

#[test]
fn c6_quotient_is_sound() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = Vec::new();
    let (mut steps, mut inclusions, mut covers) = (0usize, 0usize, 0usize);
    for n in 0..200 {
        let pn = random_net(&mut rng);
        let places = pn.net.place_count();
        let eq = PlaceEquivalence::new((0..places).map(|_| format!("c{}", rng.gen_range(0..places))).collect());
        let q = hrcount::petri::quotient(&pn, &eq).unwrap();
        let class: Vec<usize> = (0..places)
            .map(|p| q.net.place_index(eq.class_name(p)).unwrap())
            .collect();
        let k = q.net.place_count();
        let lift = |arcs: &[(usize, u64)]| -> BTreeMap<usize, u64> {
            let mut m = BTreeMap::new();
            for &(p, w) in arcs {
                *m.entry(class[p]).or_insert(0) += w;
            }
            m
        };
        if project(&pn.initial, &class, k) != q.initial {
            failures.push(format!("net {n}: initial marking not projected"));
        }
        // every step of the net is a step of the quotient between projections
        let reach = reachable_bounded(&pn, 2_000).unwrap();
        for m in &reach.markings {
            for (ti, t) in pn.net.transitions().iter().enumerate() {
                if !pn.net.is_enabled(m, ti).unwrap() {
                    continue;
                }
                let next = pn.net.fire(m, ti).unwrap();
                let (pre, post) = (lift(&t.pre), lift(&t.post));
                let qt = q.net.transitions().iter().position(|u| {
                    u.pre.iter().copied().collect::<BTreeMap<_, _>>() == pre
                        && u.post.iter().copied().collect::<BTreeMap<_, _>>() == post
                });
                let pm = project(m, &class, k);
                match qt {
                    Some(qt) if q.net.is_enabled(&pm, qt).unwrap() => {
                        if q.net.fire(&pm, qt).unwrap() != project(&next, &class, k) {
                            failures.push(format!("net {n}: step {} lands elsewhere", t.name));
                        }
                    }
                    _ => failures.push(format!("net {n}: step {} has no image", t.name)),
                }
                steps += 1;
            }
        }
        // explicit inclusion where both state spaces are finite and small
        let qreach = reachable_bounded(&q, 20_000).unwrap();
        if !reach.truncated && !qreach.truncated {
            for m in &reach.markings {
                if !qreach.contains(&project(m, &class, k)) {
                    failures.push(format!("net {n}: projected marking {m} not reachable in the quotient"));
                }
                inclusions += 1;
            }
        }
        // coverability transfers
        for _ in 0..3 {
            let mut target = BTreeMap::new();
            for p in 0..places {
                if rng.gen_bool(0.5) {
                    target.insert(p, rng.gen_range(1..=3u64));
                }
            }
            if backward_coverable(&pn, &target).unwrap().is_coverable() {
                let mut qt = BTreeMap::new();
                for (&p, &w) in &target {
                    *qt.entry(class[p]).or_insert(0) += w;
                }
                if !backward_coverable(&q, &qt).unwrap().is_coverable() {
                    failures.push(format!("net {n}: target {target:?} covered but its projection is not"));
                }
                covers += 1;
            }
        }
    }
    verdict(
        6,
        "quotients over-approximate reachability and coverability",
        start,
        failures,
        format!("200 nets, {steps} steps, {inclusions} inclusions, {covers} covers"),
    );
}

fn pps_places(sig: &pebble::PebbleSignature) -> Vec<(String, String)> {
    sig.types
        .iter()
        .flat_map(|(n, t)| [(n.clone(), t.top.clone()), (n.clone(), t.bot.clone())])
        .collect()
}

/// Every assignment of counts to `places` summing to at most `k`.
fn targets(places: usize, k: u64) -> Vec<Vec<u64>> {
    let mut out = vec![vec![]];
    for _ in 0..places {
        out = out
            .into_iter()
            .flat_map(|v: Vec<u64>| {
                let used: u64 = v.iter().sum();
                (0..=k - used).map(move |x| {
                    let mut w = v.clone();
                    w.push(x);
                    w
                })
            })
            .collect();
    }
    out
}

#[test]
fn c7_pebble_procedure_is_exact_on_small_instances() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut checked = 0usize;
    for name in ["pps_ring.pcs", "pps_star.pcs"] {
        let spec = load(name);
        let sig = pebble::check_pps(&spec.decls, &spec.grammar).unwrap();
        let places = pps_places(&sig);
        let instances = enumerate_instances(&spec.decls, &spec.grammar, 8);
        for counts in targets(places.len(), 3) {
            let q = Query {
                id: "t".into(),
                kind: QueryKind::Cover,
                constraints: places
                    .iter()
                    .zip(&counts)
                    .filter(|(_, &k)| k > 0)
                    .map(|((ty, p), &k)| {
                        (
                            PlaceRef {
                                ptype: ty.clone(),
                                source: None,
                                place: p.clone(),
                            },
                            k,
                        )
                    })
                    .collect(),
                expect: None,
            };
            let target = pebble::pps_target(&sig, &q).unwrap();
            let k = pebble::compute_k(&target) as u32;
            let mut any = false;
            for inst in &instances {
                let truth = concrete_cover(&spec.decls, &inst.system, &q.constraints, 1_000_000).unwrap();
                if truth == Concrete::Inconclusive {
                    failures.push(format!("{name}: inconclusive on {}", inst.term));
                    continue;
                }
                let truth = truth == Concrete::Holds;
                any |= truth;
                let single = HrGrammar {
                    rules: vec![Rule {
                        lhs: "I".into(),
                        rhs: inst.term.clone(),
                    }],
                    axioms: vec!["I".into()],
                };
                let decided = pebble::decide_cover_pps(&spec.decls, &single, &q).unwrap().answer;
                if (decided == Answer::Coverable) != truth {
                    failures.push(format!("{name} {counts:?}: decided {decided} on {}", inst.term));
                }
                if pebble::degree_bounded_cover(&sig, &inst.system, &target, k) != truth {
                    failures.push(format!(
                        "{name} {counts:?}: degree-{k} search disagrees on {}",
                        inst.term
                    ));
                }
                checked += 1;
            }
            let whole = pebble::decide_cover_pps(&spec.decls, &spec.grammar, &q).unwrap().answer;
            if any && whole != Answer::Coverable {
                failures.push(format!(
                    "{name} {counts:?}: an instance covers but the grammar is {whole}"
                ));
            }
        }
    }

    // fireable-subsequence lemma on random footprints and move sequences
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut constructed = 0;
    for _ in 0..500 {
        let n: u32 = rng.gen_range(2..=6);
        let m: Footprint = (0..n).map(|v| (v, i64::from(rng.gen_bool(0.4)))).collect();
        let seq: Vec<Move> = (0..rng.gen_range(0..=8))
            .map(|_| {
                let from = rng.gen_range(0..n);
                let to = (from + rng.gen_range(1..n)) % n;
                Move { from, to }
            })
            .collect();
        let valid = pebble::is_valid(&pebble::add(&m, &footprint_of_sequence(&seq)));
        match fireable_subsequence(&m, &seq) {
            None if valid => failures.push(format!("no subsequence for valid {m:?} {seq:?}")),
            None => {}
            Some(_) if !valid => failures.push(format!("subsequence for invalid {m:?} {seq:?}")),
            Some(sub) => {
                constructed += 1;
                let mut cur = m.clone();
                for mv in &sub {
                    if cur[&mv.from] != 1 || cur[&mv.to] != 0 {
                        failures.push(format!("{sub:?} is not fireable from {m:?}"));
                        break;
                    }
                    *cur.get_mut(&mv.from).unwrap() -= 1;
                    *cur.get_mut(&mv.to).unwrap() += 1;
                }
                let mut pool = seq.clone();
                for mv in &sub {
                    match pool.iter().position(|x| x == mv) {
                        Some(i) => {
                            pool.swap_remove(i);
                        }
                        None => failures.push(format!("{sub:?} is not drawn from {seq:?}")),
                    }
                }
                let norm = |f: Footprint| -> Footprint { f.into_iter().filter(|&(_, x)| x != 0).collect() };
                if norm(footprint_of_sequence(&sub)) != norm(footprint_of_sequence(&seq)) {
                    failures.push(format!("{sub:?} changes the footprint of {seq:?}"));
                }
            }
        }
    }
    if start.elapsed() >= Duration::from_secs(60) {
        failures.push(format!("took {:?}", start.elapsed()));
    }
    verdict(
        7,
        "pebble verdicts, degree-bounded search and exhaustive search agree",
        start,
        failures,
        format!("{checked} instance/target pairs, 500 subsequence cases ({constructed} constructed)"),
    );
}

#[test]
fn c8_exports_round_trip() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut nets = 0;
    let dir = tempfile::tempdir().unwrap();
    for name in bundled() {
        let spec = load(&name);
        let abs = CountingAbstraction::build(&spec.decls, &spec.grammar).unwrap();
        let stem = Path::new(&name).file_stem().unwrap().to_string_lossy().into_owned();
        let out = dir.path().join(&stem);
        for format in ["lola", "pnml"] {
            let o = hrcount(&[
                "export",
                spec_path(&name).to_str().unwrap(),
                "--format",
                format,
                "--out",
                out.to_str().unwrap(),
            ]);
            if o.status.code() != Some(0) {
                failures.push(format!("{name}: export --format {format} failed"));
            }
        }
        for (i, c) in abs.nets.iter().enumerate() {
            nets += 1;
            let id = format!("{stem}_{i}");
            let lola = fs::read_to_string(out.join(format!("{id}.lola"))).unwrap_or_default();
            let pnml = fs::read_to_string(out.join(format!("{id}.pnml"))).unwrap_or_default();
            if lola != write_lola(&c.pn).unwrap() || pnml != write_pnml(&c.pn, &id).unwrap() {
                failures.push(format!("{id}: exported file differs from the writer"));
            }
            match read_lola(&lola) {
                Ok(back) => {
                    if write_lola(&canonical(&back)).unwrap() != write_lola(&canonical(&c.pn)).unwrap()
                        || write_lola(&back).unwrap() != lola
                    {
                        failures.push(format!("{id}: LoLA round trip changes the net"));
                    }
                }
                Err(e) => failures.push(format!("{id}: {e}")),
            }
            match read_pnml(&pnml) {
                Ok(back) => {
                    if write_pnml(&canonical(&back), &id).unwrap() != write_pnml(&canonical(&c.pn), &id).unwrap()
                        || write_pnml(&back, &id).unwrap() != pnml
                    {
                        failures.push(format!("{id}: PNML round trip changes the net"));
                    }
                }
                Err(e) => failures.push(format!("{id}: {e}")),
            }
        }
    }
    verdict(
        8,
        "LoLA and PNML exports round-trip byte for byte",
        start,
        failures,
        format!("{nets} nets"),
    );
}

#[test]
fn c9_benchmark_substitutes() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for name in [
        "bench/ring.pcs",
        "bench/star.pcs",
        "bench/tree_down.pcs",
        "bench/philosophers.pcs",
    ] {
        let o = hrcount(&["check", spec_path(name).to_str().unwrap(), "--mode", "counting"]);
        let out = String::from_utf8_lossy(&o.stdout);
        let safe = out.lines().filter(|l| l.ends_with(": SAFE")).count();
        if safe == 0 {
            failures.push(format!("{name}: no SAFE verdict"));
        }
        let spec = load(name);
        let abs = CountingAbstraction::build(&spec.decls, &spec.grammar).unwrap();
        let places = abs.nets.iter().map(|c| c.pn.net.place_count()).max().unwrap_or(0);
        let transitions = abs.nets.iter().map(|c| c.pn.net.transitions().len()).max().unwrap_or(0);
        if abs.nets.len() > 20 || places > 30 || transitions > 35 {
            failures.push(format!(
                "{name}: {} nets, {places} places, {transitions} transitions",
                abs.nets.len()
            ));
        }
        rows.push(format!(
            "{name}: {} nets, <= {places} places, <= {transitions} transitions, {safe} SAFE",
            abs.nets.len()
        ));
    }
    if start.elapsed() >= Duration::from_secs(10) {
        failures.push(format!("took {:?}", start.elapsed()));
    }
    verdict(
        9,
        "ring, star, tree-down and philosophers each yield a SAFE verdict at table scale",
        start,
        failures,
        rows.join("; "),
    );
}
