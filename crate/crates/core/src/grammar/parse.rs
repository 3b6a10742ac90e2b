//! Parser for `.pcs` specification files.
//!
//! ```text
//! # comment
//! process Proc {
//!   places tok nok work
//!   init nok
//!   obs get : nok -> tok
//!   int start : tok -> work
//! }
//! source s1, s2 : Proc
//! grammar {
//!   axiom C
//!   C -> restrict {s1} (edge (relC,get) (s3,s2) + edge (rel,get) (s2,s1))
//! }
//! query mutex cover Proc.work >= 2 expect safe
//! query r reach Cont.nokC = 1, Proc*s1.tok = 1
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use super::{HrGrammar, HrTerm, Rule};
use crate::systems::{self, Declarations, ProcessType, Renaming};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Diagnostic {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"))]
pub struct SpecError(pub Vec<Diagnostic>);

impl SpecError {
    pub fn messages(&self) -> Vec<&str> {
        self.0.iter().map(|d| d.message.as_str()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryKind {
    Cover,
    Reach,
}

/// `Type.place` or, pinned to a source, `Type*σ.place`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct PlaceRef {
    pub ptype: String,
    pub source: Option<String>,
    pub place: String,
}

impl fmt::Display for PlaceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            Some(s) => write!(f, "{}*{}.{}", self.ptype, s, self.place),
            None => write!(f, "{}.{}", self.ptype, self.place),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Expectation {
    Safe,
    Unknown,
    Coverable,
    Uncoverable,
    Exported,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub kind: QueryKind,
    pub constraints: Vec<(PlaceRef, u64)>,
    pub expect: Option<Expectation>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Spec {
    pub decls: Declarations,
    pub grammar: HrGrammar,
    pub queries: Vec<Query>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Num(u64),
    Sym(&'static str),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: [&str; 14] = ["<->", "->", ">=", "{", "}", "(", ")", ",", ":", "+", "*", ".", "=", ";"];

const KEYWORDS: [&str; 15] = [
    "process", "places", "init", "obs", "int", "source", "grammar", "axiom", "query", "cover", "reach", "expect",
    "edge", "restrict", "rename",
];

fn lex(text: &str) -> Result<Vec<Token>, Diagnostic> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        'scan: while i < chars.len() {
            let c = chars[i];
            let pos = (ln + 1, i + 1);
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(chars[start..i].iter().collect()),
                    line: pos.0,
                    col: pos.1,
                });
                continue;
            }
            if c.is_ascii_digit() {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                let n = s.parse().map_err(|_| Diagnostic {
                    line: pos.0,
                    col: pos.1,
                    message: format!("number `{s}` out of range"),
                })?;
                out.push(Token {
                    tok: Tok::Num(n),
                    line: pos.0,
                    col: pos.1,
                });
                continue;
            }
            for sym in SYMBOLS {
                let sc: Vec<char> = sym.chars().collect();
                if chars[i..].starts_with(&sc) {
                    out.push(Token {
                        tok: Tok::Sym(sym),
                        line: pos.0,
                        col: pos.1,
                    });
                    i += sc.len();
                    continue 'scan;
                }
            }
            return Err(Diagnostic {
                line: pos.0,
                col: pos.1,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn here(&self) -> (usize, usize) {
        match self.toks.get(self.pos).or(self.toks.last()) {
            Some(t) => (t.line, t.col),
            None => (1, 1),
        }
    }

    fn err<T>(&self, message: impl Into<String>) -> PResult<T> {
        let (line, col) = self.here();
        Err(Diagnostic {
            line,
            col,
            message: message.into(),
        })
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(x)) if *x == s)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(x)) if x == k)
    }

    fn sym(&mut self, s: &str) -> PResult<()> {
        if self.is_sym(s) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{s}`, found {}", self.describe()))
        }
    }

    fn kw(&mut self, k: &str) -> PResult<()> {
        if self.is_kw(k) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{k}`, found {}", self.describe()))
        }
    }

    fn describe(&self) -> String {
        match self.peek() {
            Some(Tok::Ident(x)) => format!("`{x}`"),
            Some(Tok::Num(n)) => format!("`{n}`"),
            Some(Tok::Sym(s)) => format!("`{s}`"),
            None => "end of input".into(),
        }
    }

    fn ident(&mut self) -> PResult<(String, (usize, usize))> {
        let at = self.here();
        match self.peek() {
            Some(Tok::Ident(x)) if !KEYWORDS.contains(&x.as_str()) => {
                let x = x.clone();
                self.pos += 1;
                Ok((x, at))
            }
            _ => self.err(format!("expected a name, found {}", self.describe())),
        }
    }

    fn num(&mut self) -> PResult<u64> {
        match self.peek() {
            Some(Tok::Num(n)) => {
                let n = *n;
                self.pos += 1;
                Ok(n)
            }
            _ => self.err(format!("expected a number, found {}", self.describe())),
        }
    }

    fn at_name(&self) -> bool {
        matches!(self.peek(), Some(Tok::Ident(x)) if !KEYWORDS.contains(&x.as_str()))
    }
}

/// Raw items with positions, checked semantically afterwards.
#[derive(Default)]
struct Raw {
    types: Vec<(ProcessType, (usize, usize))>,
    sources: Vec<(String, String, (usize, usize))>,
    rules: Vec<(Rule, (usize, usize))>,
    axioms: Vec<(String, (usize, usize))>,
    queries: Vec<(Query, (usize, usize))>,
    grammar_seen: bool,
}

fn parse_process(p: &mut Parser, raw: &mut Raw) -> PResult<()> {
    let at = p.here();
    p.kw("process")?;
    let (name, _) = p.ident()?;
    p.sym("{")?;
    let mut places = Vec::new();
    let mut initial = None;
    let mut observable = BTreeMap::new();
    let mut internal = BTreeMap::new();
    while !p.is_sym("}") {
        if p.is_kw("places") {
            p.pos += 1;
            while p.at_name() {
                places.push(p.ident()?.0);
                if p.is_sym(",") {
                    p.pos += 1;
                }
            }
        } else if p.is_kw("init") {
            p.pos += 1;
            initial = Some(p.ident()?.0);
        } else if p.is_kw("obs") || p.is_kw("int") {
            let obs = p.is_kw("obs");
            p.pos += 1;
            let (t, _) = p.ident()?;
            p.sym(":")?;
            let (a, _) = p.ident()?;
            p.sym("->")?;
            let (b, _) = p.ident()?;
            let map = if obs { &mut observable } else { &mut internal };
            if map.insert(t.clone(), (a, b)).is_some() {
                return p.err(format!("transition `{t}` declared twice in `{name}`"));
            }
        } else if p.is_sym(";") {
            p.pos += 1;
        } else {
            return p.err(format!(
                "expected `places`, `init`, `obs`, `int` or `}}`, found {}",
                p.describe()
            ));
        }
    }
    p.sym("}")?;
    let Some(initial) = initial else {
        return Err(Diagnostic {
            line: at.0,
            col: at.1,
            message: format!("process `{name}` has no `init` place"),
        });
    };
    raw.types.push((
        ProcessType {
            name,
            places,
            initial,
            observable,
            internal,
        },
        at,
    ));
    Ok(())
}

fn parse_source(p: &mut Parser, raw: &mut Raw) -> PResult<()> {
    p.kw("source")?;
    let mut names = vec![p.ident()?];
    while p.is_sym(",") {
        p.pos += 1;
        names.push(p.ident()?);
    }
    p.sym(":")?;
    let (ty, _) = p.ident()?;
    for (n, at) in names {
        raw.sources.push((n, ty.clone(), at));
    }
    Ok(())
}

fn parse_set(p: &mut Parser) -> PResult<BTreeSet<String>> {
    p.sym("{")?;
    let mut out = BTreeSet::new();
    while !p.is_sym("}") {
        out.insert(p.ident()?.0);
        if !p.is_sym("}") {
            p.sym(",")?;
        }
    }
    p.sym("}")?;
    Ok(out)
}

fn parse_pair(p: &mut Parser) -> PResult<(String, String)> {
    p.sym("(")?;
    let (a, _) = p.ident()?;
    p.sym(",")?;
    let (b, _) = p.ident()?;
    p.sym(")")?;
    Ok((a, b))
}

fn parse_term(p: &mut Parser) -> PResult<HrTerm> {
    let mut t = parse_unary(p)?;
    while p.is_sym("+") {
        p.pos += 1;
        let u = parse_unary(p)?;
        t = HrTerm::compose(t, u);
    }
    Ok(t)
}

fn parse_unary(p: &mut Parser) -> PResult<HrTerm> {
    if p.is_kw("edge") {
        p.pos += 1;
        let label = parse_pair(p)?;
        let (s1, s2) = parse_pair(p)?;
        return Ok(HrTerm::Edge { label, s1, s2 });
    }
    if p.is_kw("restrict") {
        p.pos += 1;
        let keep = parse_set(p)?;
        let body = parse_unary(p)?;
        return Ok(HrTerm::Restrict {
            keep,
            body: Box::new(body),
        });
    }
    if p.is_kw("rename") {
        p.pos += 1;
        p.sym("(")?;
        let mut swaps = Vec::new();
        while !p.is_sym(")") {
            let (a, _) = p.ident()?;
            p.sym("<->")?;
            let (b, _) = p.ident()?;
            swaps.push((a, b));
            if !p.is_sym(")") {
                p.sym(",")?;
            }
        }
        p.sym(")")?;
        let body = parse_unary(p)?;
        let alpha = Renaming::from_swaps(swaps.iter().map(|(a, b)| (a.as_str(), b.as_str())));
        return Ok(HrTerm::Rename {
            alpha,
            body: Box::new(body),
        });
    }
    if p.is_sym("(") {
        p.pos += 1;
        let t = parse_term(p)?;
        p.sym(")")?;
        return Ok(t);
    }
    if p.at_name() {
        return Ok(HrTerm::Nt(p.ident()?.0));
    }
    p.err(format!("expected a term, found {}", p.describe()))
}

fn parse_grammar(p: &mut Parser, raw: &mut Raw) -> PResult<()> {
    if raw.grammar_seen {
        return p.err("only one `grammar` block is allowed");
    }
    raw.grammar_seen = true;
    p.kw("grammar")?;
    p.sym("{")?;
    while !p.is_sym("}") {
        if p.is_kw("axiom") {
            p.pos += 1;
            raw.axioms.push(p.ident()?);
            while p.is_sym(",") {
                p.pos += 1;
                raw.axioms.push(p.ident()?);
            }
        } else if p.is_sym(";") {
            p.pos += 1;
        } else {
            let (lhs, at) = p.ident()?;
            p.sym("->")?;
            let rhs = parse_term(p)?;
            raw.rules.push((Rule { lhs, rhs }, at));
        }
    }
    p.sym("}")?;
    Ok(())
}

fn parse_place_ref(p: &mut Parser) -> PResult<PlaceRef> {
    let (ptype, _) = p.ident()?;
    let source = if p.is_sym("*") {
        p.pos += 1;
        Some(p.ident()?.0)
    } else {
        None
    };
    p.sym(".")?;
    let (place, _) = p.ident()?;
    Ok(PlaceRef { ptype, source, place })
}

fn parse_query(p: &mut Parser, raw: &mut Raw) -> PResult<()> {
    let at = p.here();
    p.kw("query")?;
    let (id, _) = p.ident()?;
    let kind = if p.is_kw("cover") {
        QueryKind::Cover
    } else if p.is_kw("reach") {
        QueryKind::Reach
    } else {
        return p.err(format!("expected `cover` or `reach`, found {}", p.describe()));
    };
    p.pos += 1;
    let mut constraints = Vec::new();
    if p.at_name() {
        loop {
            let r = parse_place_ref(p)?;
            match kind {
                QueryKind::Cover => p.sym(">=")?,
                QueryKind::Reach => p.sym("=")?,
            }
            constraints.push((r, p.num()?));
            if !p.is_sym(",") {
                break;
            }
            p.pos += 1;
        }
    }
    let expect = if p.is_kw("expect") {
        p.pos += 1;
        let (w, _) = match p.peek() {
            Some(Tok::Ident(_)) => {
                let at = p.here();
                let Some(Tok::Ident(w)) = p.peek().cloned() else {
                    unreachable!()
                };
                p.pos += 1;
                (w, at)
            }
            _ => return p.err("expected an expected verdict"),
        };
        Some(match w.as_str() {
            "safe" => Expectation::Safe,
            "unknown" => Expectation::Unknown,
            "coverable" => Expectation::Coverable,
            "uncoverable" => Expectation::Uncoverable,
            "exported" => Expectation::Exported,
            _ => {
                p.pos -= 1;
                return p.err(format!(
                    "unknown verdict `{w}` (safe, unknown, coverable, uncoverable, exported)"
                ));
            }
        })
    } else {
        None
    };
    raw.queries.push((
        Query {
            id,
            kind,
            constraints,
            expect,
        },
        at,
    ));
    Ok(())
}

fn diag(at: (usize, usize), message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        line: at.0,
        col: at.1,
        message: message.into(),
    }
}

fn check_term(t: &HrTerm, decls: &Declarations, nts: &BTreeSet<String>) -> Result<(), String> {
    match t {
        HrTerm::Edge { label, s1, s2 } => systems::edge_const(decls, (&label.0, &label.1), s1, s2)
            .map(|_| ())
            .map_err(|e| e.to_string()),
        HrTerm::Restrict { keep, body } => {
            if let Some(s) = keep.iter().find(|s| !decls.sources.contains_key(*s)) {
                return Err(format!("unknown source `{s}`"));
            }
            check_term(body, decls, nts)
        }
        HrTerm::Rename { alpha, body } => {
            alpha.check_types(decls).map_err(|e| e.to_string())?;
            check_term(body, decls, nts)
        }
        HrTerm::Compose(a, b) => {
            check_term(a, decls, nts)?;
            check_term(b, decls, nts)
        }
        HrTerm::Nt(x) => {
            if nts.contains(x) {
                Ok(())
            } else {
                Err(format!("nonterminal `{x}` has no rule"))
            }
        }
    }
}

fn check(raw: Raw) -> Result<Spec, SpecError> {
    let mut errs = Vec::new();
    let mut warnings = Vec::new();
    let mut decls = Declarations::default();
    let mut place_owner: BTreeMap<String, String> = BTreeMap::new();
    for (t, at) in raw.types {
        if let Err(e) = t.validate() {
            errs.push(diag(at, e.to_string()));
        }
        for p in &t.places {
            if let Some(other) = place_owner.insert(p.clone(), t.name.clone()) {
                if other != t.name {
                    errs.push(diag(
                        at,
                        format!("place `{p}` is declared by both `{other}` and `{}`", t.name),
                    ));
                }
            }
        }
        if decls.types.contains_key(&t.name) {
            errs.push(diag(at, format!("process type `{}` declared twice", t.name)));
        }
        decls.types.insert(t.name.clone(), t);
    }
    for (s, ty, at) in raw.sources {
        if !decls.types.contains_key(&ty) {
            errs.push(diag(at, format!("source `{s}` has unknown process type `{ty}`")));
        }
        if decls.sources.insert(s.clone(), ty).is_some() {
            errs.push(diag(at, format!("source `{s}` declared twice")));
        }
    }

    let nts: BTreeSet<String> = raw.rules.iter().map(|(r, _)| r.lhs.clone()).collect();
    for (r, at) in &raw.rules {
        if let Err(m) = check_term(&r.rhs, &decls, &nts) {
            errs.push(diag(*at, format!("in rule for `{}`: {m}", r.lhs)));
        }
    }
    if raw.axioms.is_empty() {
        errs.push(diag((1, 1), "no axiom"));
    }
    for (x, at) in &raw.axioms {
        if !nts.contains(x) {
            errs.push(diag(*at, format!("axiom `{x}` has no rule")));
        }
    }

    let mut ids = BTreeSet::new();
    for (q, at) in &raw.queries {
        if !ids.insert(q.id.clone()) {
            errs.push(diag(*at, format!("query `{}` declared twice", q.id)));
        }
        for (r, _) in &q.constraints {
            let Some(t) = decls.types.get(&r.ptype) else {
                errs.push(diag(*at, format!("unknown process type `{}`", r.ptype)));
                continue;
            };
            if !t.places.contains(&r.place) {
                errs.push(diag(*at, format!("`{}` is not a place of `{}`", r.place, r.ptype)));
            }
            if let Some(s) = &r.source {
                match decls.sources.get(s) {
                    Some(ty) if *ty == r.ptype => {}
                    Some(ty) => errs.push(diag(*at, format!("source `{s}` has type `{ty}`, not `{}`", r.ptype))),
                    None => errs.push(diag(*at, format!("unknown source `{s}`"))),
                }
            }
        }
    }
    if !errs.is_empty() {
        errs.sort();
        return Err(SpecError(errs));
    }
    let grammar = HrGrammar {
        rules: raw.rules.into_iter().map(|(r, _)| r).collect(),
        axioms: raw.axioms.into_iter().map(|(x, _)| x).collect(),
    };
    for x in grammar.unproductive() {
        warnings.push(format!("nonterminal `{x}` derives no ground term"));
    }
    Ok(Spec {
        decls,
        grammar,
        queries: raw.queries.into_iter().map(|(q, _)| q).collect(),
        warnings,
    })
}

pub fn parse_spec(text: &str) -> Result<Spec, SpecError> {
    let toks = lex(text).map_err(|d| SpecError(vec![d]))?;
    let mut p = Parser { toks, pos: 0 };
    let mut raw = Raw::default();
    while p.peek().is_some() {
        let r = if p.is_kw("process") {
            parse_process(&mut p, &mut raw)
        } else if p.is_kw("source") {
            parse_source(&mut p, &mut raw)
        } else if p.is_kw("grammar") {
            parse_grammar(&mut p, &mut raw)
        } else if p.is_kw("query") {
            parse_query(&mut p, &mut raw)
        } else if p.is_sym(";") {
            p.pos += 1;
            Ok(())
        } else {
            p.err(format!(
                "expected `process`, `source`, `grammar` or `query`, found {}",
                p.describe()
            ))
        };
        r.map_err(|d| SpecError(vec![d]))?;
    }
    check(raw)
}
