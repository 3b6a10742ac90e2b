//! LoLA and PNML writers and readers for place/transition nets, plus LoLA
//! reachability predicates for reach queries on combined nets.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use quick_xml::events::{BytesDecl, BytesText, Event};
use quick_xml::{Reader, Writer};

use crate::counting::CombinedNet;
use crate::grammar::{PlaceRef, Query, QueryKind};
use crate::petri::{Arcs, Marking, Net, PetriError, PetriNet, PlaceId, Transition};

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("line {line}: {message}")]
    Lola { line: usize, message: String },
    #[error("pnml: {0}")]
    Pnml(String),
    #[error("xml: {0}")]
    Xml(#[from] quick_xml::Error),
    #[error(transparent)]
    Petri(#[from] PetriError),
    #[error("`{0}` is not a valid LoLA identifier")]
    Identifier(String),
}

fn lola_ident_ok(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '@' | '|' | '>' | '.' | '-'))
}

fn arcs(pn: &PetriNet, a: &[(PlaceId, u64)]) -> String {
    a.iter()
        .map(|&(p, w)| format!("{}:{w}", pn.net.places()[p]))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn write_lola(pn: &PetriNet) -> Result<String, ExportError> {
    for n in pn
        .net
        .places()
        .iter()
        .chain(pn.net.transitions().iter().map(|t| &t.name))
    {
        if !lola_ident_ok(n) {
            return Err(ExportError::Identifier(n.clone()));
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "PLACE {};", pn.net.places().join(", "));
    let marking: Vec<(PlaceId, u64)> = pn
        .initial
        .0
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, k)| k > 0)
        .collect();
    let _ = writeln!(out, "MARKING {};", arcs(pn, &marking));
    for t in pn.net.transitions() {
        let _ = writeln!(out, "TRANSITION {}", t.name);
        let _ = writeln!(out, "  CONSUME {};", arcs(pn, &t.pre));
        let _ = writeln!(out, "  PRODUCE {};", arcs(pn, &t.post));
    }
    Ok(out)
}

#[derive(Debug, PartialEq)]
enum LTok {
    Word(String),
    Punct(char),
}

fn lola_tokens(s: &str) -> Result<Vec<(usize, LTok)>, ExportError> {
    let mut out = Vec::new();
    for (i, line) in s.lines().enumerate() {
        let line_no = i + 1;
        let mut word = String::new();
        for c in line.chars() {
            if matches!(c, ',' | ':' | ';') || c.is_whitespace() {
                if !word.is_empty() {
                    out.push((line_no, LTok::Word(std::mem::take(&mut word))));
                }
                if !c.is_whitespace() {
                    out.push((line_no, LTok::Punct(c)));
                }
            } else if c.is_ascii_alphanumeric() || matches!(c, '_' | '@' | '|' | '>' | '.' | '-') {
                word.push(c);
            } else {
                return Err(ExportError::Lola {
                    line: line_no,
                    message: format!("unexpected character `{c}`"),
                });
            }
        }
        if !word.is_empty() {
            out.push((line_no, LTok::Word(word)));
        }
    }
    Ok(out)
}

struct LolaParser {
    toks: Vec<(usize, LTok)>,
    pos: usize,
}

impl LolaParser {
    fn line(&self) -> usize {
        self.toks.get(self.pos).or(self.toks.last()).map(|t| t.0).unwrap_or(1)
    }

    fn err(&self, message: impl Into<String>) -> ExportError {
        ExportError::Lola {
            line: self.line(),
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<&LTok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn word(&mut self) -> Result<String, ExportError> {
        match self.toks.get(self.pos) {
            Some((_, LTok::Word(w))) => {
                self.pos += 1;
                Ok(w.clone())
            }
            _ => Err(self.err("expected an identifier")),
        }
    }

    fn keyword(&mut self, k: &str) -> Result<(), ExportError> {
        let w = self.word()?;
        if w == k {
            Ok(())
        } else {
            self.pos -= 1;
            Err(self.err(format!("expected `{k}`, found `{w}`")))
        }
    }

    fn punct(&mut self, c: char) -> bool {
        if self.peek() == Some(&LTok::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ExportError> {
        if self.punct(c) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }

    /// `name:k, …;` (possibly empty).
    fn weighted(&mut self) -> Result<Vec<(String, u64)>, ExportError> {
        let mut out = Vec::new();
        if self.punct(';') {
            return Ok(out);
        }
        loop {
            let p = self.word()?;
            self.expect(':')?;
            let k = self.word()?;
            let k: u64 = k.parse().map_err(|_| self.err(format!("bad weight `{k}`")))?;
            out.push((p, k));
            if self.punct(';') {
                return Ok(out);
            }
            self.expect(',')?;
        }
    }
}

pub fn read_lola(s: &str) -> Result<PetriNet, ExportError> {
    let mut p = LolaParser {
        toks: lola_tokens(s)?,
        pos: 0,
    };
    p.keyword("PLACE")?;
    let mut places = Vec::new();
    if !p.punct(';') {
        loop {
            places.push(p.word()?);
            if p.punct(';') {
                break;
            }
            p.expect(',')?;
        }
    }
    let index: BTreeMap<String, PlaceId> = places.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
    let resolve = |p: &LolaParser, arcs: Vec<(String, u64)>| -> Result<Vec<(PlaceId, u64)>, ExportError> {
        arcs.into_iter()
            .map(|(n, k)| {
                index
                    .get(&n)
                    .map(|&i| (i, k))
                    .ok_or_else(|| p.err(format!("unknown place `{n}`")))
            })
            .collect()
    };
    p.keyword("MARKING")?;
    let m = p.weighted()?;
    let mut initial = Marking::zero(places.len());
    for (i, k) in resolve(&p, m)? {
        initial.0[i] += k;
    }
    let mut transitions = Vec::new();
    while p.peek().is_some() {
        p.keyword("TRANSITION")?;
        let name = p.word()?;
        p.keyword("CONSUME")?;
        let pre = p.weighted()?;
        let pre = resolve(&p, pre)?;
        p.keyword("PRODUCE")?;
        let post = p.weighted()?;
        let post = resolve(&p, post)?;
        transitions.push(Transition::new(name, pre, post));
    }
    let net = Net::new(places, transitions)?;
    Ok(PetriNet::new(net, initial)?)
}

type XmlResult = Result<(), quick_xml::Error>;

fn text_child<W: std::io::Write>(w: &mut Writer<W>, tag: &str, text: &str) -> XmlResult {
    w.create_element(tag).write_inner_content(|w| {
        w.create_element("text").write_text_content(BytesText::new(text))?;
        XmlResult::Ok(())
    })?;
    Ok(())
}

/// Standard P/T net PNML. Places are `p<i>`, transitions `t<i>`, arcs
/// `a<i>`; the net's own names go into `<name>`.
pub fn write_pnml(pn: &PetriNet, id: &str) -> Result<String, ExportError> {
    let mut w = Writer::new_with_indent(Vec::new(), b' ', 2);
    w.write_event(Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None)))?;
    w.create_element("pnml")
        .with_attribute(("xmlns", "http://www.pnml.org/version-2009/grammar/pnml"))
        .write_inner_content(|w| {
            w.create_element("net")
                .with_attribute(("id", id))
                .with_attribute(("type", "http://www.pnml.org/version-2009/grammar/ptnet"))
                .write_inner_content(|w| {
                    text_child(w, "name", id)?;
                    w.create_element("page")
                        .with_attribute(("id", "page0"))
                        .write_inner_content(|w| write_page(w, pn))?;
                    XmlResult::Ok(())
                })?;
            XmlResult::Ok(())
        })?;
    let mut s = String::from_utf8(w.into_inner()).expect("writer emits UTF-8");
    s.push('\n');
    Ok(s)
}

fn write_page<W: std::io::Write>(w: &mut Writer<W>, pn: &PetriNet) -> XmlResult {
    for (i, name) in pn.net.places().iter().enumerate() {
        w.create_element("place")
            .with_attribute(("id", format!("p{i}").as_str()))
            .write_inner_content(|w| {
                text_child(w, "name", name)?;
                let k = pn.initial.get(i);
                if k > 0 {
                    text_child(w, "initialMarking", &k.to_string())?;
                }
                XmlResult::Ok(())
            })?;
    }
    for (i, t) in pn.net.transitions().iter().enumerate() {
        w.create_element("transition")
            .with_attribute(("id", format!("t{i}").as_str()))
            .write_inner_content(|w| text_child(w, "name", &t.name))?;
    }
    let mut a = 0;
    for (i, t) in pn.net.transitions().iter().enumerate() {
        let tid = format!("t{i}");
        let arcs = t
            .pre
            .iter()
            .map(|&(p, k)| (format!("p{p}"), tid.clone(), k))
            .chain(t.post.iter().map(|&(p, k)| (tid.clone(), format!("p{p}"), k)));
        for (src, tgt, k) in arcs {
            w.create_element("arc")
                .with_attribute(("id", format!("a{a}").as_str()))
                .with_attribute(("source", src.as_str()))
                .with_attribute(("target", tgt.as_str()))
                .write_inner_content(|w| text_child(w, "inscription", &k.to_string()))?;
            a += 1;
        }
    }
    Ok(())
}

#[derive(Default)]
struct PnmlNode {
    kind: String,
    id: String,
    source: String,
    target: String,
    name: Option<String>,
    number: Option<u64>,
}

/// Reads a P/T net written by [`write_pnml`] or any PNML with the same
/// element structure. Missing names default to ids, missing inscriptions to 1.
pub fn read_pnml(s: &str) -> Result<PetriNet, ExportError> {
    let mut r = Reader::from_str(s);
    r.trim_text(true);
    let mut stack: Vec<String> = Vec::new();
    let mut nodes: Vec<PnmlNode> = Vec::new();
    let mut current: Option<PnmlNode> = None;
    let attr = |e: &quick_xml::events::BytesStart, k: &str| -> Result<String, ExportError> {
        match e.try_get_attribute(k)? {
            Some(a) => Ok(a.unescape_value()?.into_owned()),
            None => Ok(String::new()),
        }
    };
    loop {
        let ev = r.read_event()?;
        match ev {
            Event::Start(ref e) | Event::Empty(ref e)
                if matches!(e.name().as_ref(), b"place" | b"transition" | b"arc") =>
            {
                let kind = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                let node = PnmlNode {
                    id: attr(e, "id")?,
                    source: attr(e, "source")?,
                    target: attr(e, "target")?,
                    kind: kind.clone(),
                    ..PnmlNode::default()
                };
                if matches!(ev, Event::Empty(_)) {
                    nodes.push(node);
                } else {
                    current = Some(node);
                    stack.push(kind);
                }
            }
            Event::Start(e) => stack.push(String::from_utf8_lossy(e.name().as_ref()).into_owned()),
            Event::End(e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                if stack.pop().as_deref() != Some(name.as_str()) {
                    return Err(ExportError::Pnml(format!("unbalanced `{name}`")));
                }
                if matches!(name.as_str(), "place" | "transition" | "arc") {
                    nodes.extend(current.take());
                }
            }
            Event::Text(t) => {
                let text = t.unescape()?.into_owned();
                let n = stack.len();
                if n >= 2 && stack[n - 1] == "text" {
                    if let Some(node) = current.as_mut() {
                        match stack[n - 2].as_str() {
                            "name" => node.name = Some(text),
                            "initialMarking" | "inscription" => {
                                let k = text
                                    .trim()
                                    .parse()
                                    .map_err(|_| ExportError::Pnml(format!("bad number `{text}`")))?;
                                node.number = Some(k);
                            }
                            _ => {}
                        }
                    }
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    let mut places = Vec::new();
    let mut initial = Vec::new();
    let mut place_ids = BTreeMap::new();
    let mut trans: Vec<(String, Arcs, Arcs)> = Vec::new();
    let mut trans_ids = BTreeMap::new();
    for n in &nodes {
        match n.kind.as_str() {
            "place" => {
                place_ids.insert(n.id.clone(), places.len());
                places.push(n.name.clone().unwrap_or_else(|| n.id.clone()));
                initial.push(n.number.unwrap_or(0));
            }
            "transition" => {
                trans_ids.insert(n.id.clone(), trans.len());
                trans.push((n.name.clone().unwrap_or_else(|| n.id.clone()), vec![], vec![]));
            }
            _ => {}
        }
    }
    for n in nodes.iter().filter(|n| n.kind == "arc") {
        let k = n.number.unwrap_or(1);
        match (
            place_ids.get(&n.source),
            trans_ids.get(&n.target),
            trans_ids.get(&n.source),
            place_ids.get(&n.target),
        ) {
            (Some(&p), Some(&t), _, _) => trans[t].1.push((p, k)),
            (_, _, Some(&t), Some(&p)) => trans[t].2.push((p, k)),
            _ => {
                return Err(ExportError::Pnml(format!(
                    "arc `{}` does not join a place and a transition",
                    n.id
                )))
            }
        }
    }
    let transitions = trans
        .into_iter()
        .map(|(n, pre, post)| Transition::new(n, pre, post))
        .collect();
    let net = Net::new(places, transitions)?;
    Ok(PetriNet::new(net, Marking(initial))?)
}

/// The same net with places and transitions sorted by name.
pub fn canonical(pn: &PetriNet) -> PetriNet {
    let mut order: Vec<PlaceId> = (0..pn.net.place_count()).collect();
    order.sort_by(|&a, &b| pn.net.places()[a].cmp(&pn.net.places()[b]));
    let mut new_id = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        new_id[old] = new;
    }
    let places = order.iter().map(|&p| pn.net.places()[p].clone()).collect();
    let mut transitions: Vec<Transition> = pn
        .net
        .transitions()
        .iter()
        .map(|t| {
            Transition::new(
                t.name.clone(),
                t.pre.iter().map(|&(p, w)| (new_id[p], w)),
                t.post.iter().map(|&(p, w)| (new_id[p], w)),
            )
        })
        .collect();
    transitions.sort_by(|a, b| a.name.cmp(&b.name));
    let net = Net::new(places, transitions).expect("renumbering keeps the net valid");
    let initial = Marking(order.iter().map(|&p| pn.initial.get(p)).collect());
    PetriNet::new(net, initial).expect("same dimension")
}

fn sum_expr(c: &CombinedNet, r: &PlaceRef) -> String {
    let g = c.group(r);
    if g.is_empty() {
        return "0".into();
    }
    g.iter()
        .map(|&p| c.pn.net.places()[p].clone())
        .collect::<Vec<_>>()
        .join(" + ")
}

/// LoLA predicate for a reach query: equal sums on the queried groups and no
/// token left on `S` or any nonterminal place. `None` for cover queries.
pub fn reach_formula(c: &CombinedNet, q: &Query) -> Option<String> {
    if q.kind != QueryKind::Reach {
        return None;
    }
    let mut atoms: Vec<String> = q
        .constraints
        .iter()
        .map(|(r, k)| format!("{} = {k}", sum_expr(c, r)))
        .collect();
    atoms.push(format!("{} = 0", c.pn.net.places()[0]));
    for &p in &c.nonterminal_places {
        atoms.push(format!("{} = 0", c.pn.net.places()[p]));
    }
    Some(format!("EF ({})\n", atoms.join(" AND ")))
}
