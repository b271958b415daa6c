//! Random corpora, patterns and views shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use p2pxml::catalog::{Catalog, ViewDef};
use p2pxml::overlay::{Overlay, OverlayConfig, PeerId};
use p2pxml::pattern::{evaluate_pattern, Axis, Label, Predicate, QuerySpec, TreePattern};
use p2pxml::rewriter::Store;
use p2pxml::synopsis::estimate_contribution;
use p2pxml::table::Table;
use p2pxml::xml::{parse_document, Document};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LABELS: [&str; 4] = ["a", "b", "c", "d"];
pub const WORDS: [&str; 4] = ["x", "y", "z", "x y"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random document text with at most `max_nodes` elements.
pub fn random_xml(rng: &mut ChaCha8Rng, max_nodes: usize) -> String {
    fn node(rng: &mut ChaCha8Rng, budget: &mut usize, depth: usize, out: &mut String) {
        *budget -= 1;
        let label = LABELS.choose(rng).unwrap();
        out.push('<');
        out.push_str(label);
        out.push('>');
        if rng.random_bool(0.5) {
            out.push_str(WORDS.choose(rng).unwrap());
        }
        let kids = if depth >= 5 { 0 } else { rng.random_range(0..=3) };
        for _ in 0..kids {
            if *budget == 0 {
                break;
            }
            node(rng, budget, depth + 1, out);
            if rng.random_bool(0.2) {
                out.push_str(WORDS.choose(rng).unwrap());
            }
        }
        out.push_str("</");
        out.push_str(label);
        out.push('>');
    }
    let mut out = String::new();
    let mut budget = rng.random_range(1..=max_nodes);
    node(rng, &mut budget, 0, &mut out);
    out
}

pub fn random_corpus(rng: &mut ChaCha8Rng, docs: usize, max_nodes: usize) -> Vec<Document> {
    (0..docs)
        .map(|i| parse_document(random_xml(rng, max_nodes).as_bytes(), &format!("doc{i:02}.xml")).unwrap())
        .collect()
}

/// Random pattern text with at most `max_nodes` nodes; `vars` names the
/// variables to attach (each to a distinct node, which also gets `val`).
pub fn random_pattern_text(rng: &mut ChaCha8Rng, max_nodes: usize, vars: &[&str]) -> String {
    let n = rng.random_range(1..=max_nodes);
    let mut parent = vec![None; n];
    for (i, p) in parent.iter_mut().enumerate().skip(1) {
        *p = Some(rng.random_range(0..i));
    }
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 1..n {
        children[parent[i].unwrap()].push(i);
    }
    let mut anns: Vec<Vec<&str>> = (0..n)
        .map(|_| {
            ["id", "val", "cont"]
                .into_iter()
                .filter(|_| rng.random_bool(0.2))
                .collect()
        })
        .collect();
    let mut var_at = vec![None; n];
    for v in vars {
        let free: Vec<usize> = (0..n).filter(|&i| var_at[i].is_none()).collect();
        if let Some(&i) = free.choose(rng) {
            var_at[i] = Some(*v);
            if !anns[i].contains(&"val") {
                anns[i].push("val");
            }
        }
    }
    if anns.iter().all(Vec::is_empty) {
        anns[rng.random_range(0..n)].push(["id", "val", "cont"].choose(rng).unwrap());
    }
    fn write(
        rng: &mut ChaCha8Rng,
        i: usize,
        children: &[Vec<usize>],
        anns: &mut [Vec<&str>],
        var_at: &[Option<&str>],
        out: &mut String,
    ) {
        let axis = if i == 0 {
            if rng.random_bool(0.2) { "/" } else { "//" }
        } else if rng.random_bool(0.5) {
            "/"
        } else {
            "//"
        };
        let label = if rng.random_bool(0.15) { "*" } else { LABELS.choose(rng).unwrap() };
        out.push_str(&format!("({axis}{label}"));
        if let Some(v) = var_at[i] {
            out.push_str(&format!(" ${v}"));
        }
        if !anns[i].is_empty() {
            let order = ["id", "val", "cont"];
            anns[i].sort_by_key(|a| order.iter().position(|o| o == a));
            anns[i].dedup();
            out.push_str(&format!(" {{{}}}", anns[i].join(",")));
        }
        match rng.random_range(0..10) {
            0 => out.push_str(&format!(" [= \"{}\"]", WORDS.choose(rng).unwrap())),
            1 => out.push_str(&format!(" [~ {}]", ["x", "y", "z"].choose(rng).unwrap())),
            _ => {}
        }
        for &c in &children[i] {
            out.push(' ');
            write(rng, c, children, anns, var_at, out);
        }
        out.push(')');
    }
    let mut out = String::new();
    write(rng, 0, &children, &mut anns, &var_at, &mut out);
    out
}

/// Random query of 1 or 2 patterns (each ≤ `max_nodes`), joined on a
/// variable pair when there are two.
pub fn random_query(rng: &mut ChaCha8Rng, max_nodes: usize) -> QuerySpec {
    if rng.random_bool(0.25) {
        let a = random_pattern_text(rng, max_nodes, &["l"]);
        let b = random_pattern_text(rng, max_nodes, &["r"]);
        QuerySpec::parse(&format!("{a}; {b} WHERE $l=$r")).unwrap()
    } else {
        QuerySpec::parse(&random_pattern_text(rng, max_nodes, &[])).unwrap()
    }
}

/// A view pattern derived from a query pattern: a random rooted fragment,
/// optionally relaxed, with random annotations (biased to id and cont).
pub fn derived_view(rng: &mut ChaCha8Rng, q: &TreePattern) -> Option<TreePattern> {
    let start = rng.random_range(0..q.len());
    let mut t = q.without_vars().subtree(start);
    fn mutate(rng: &mut ChaCha8Rng, t: &mut p2pxml::pattern::PatternTree, root: bool) {
        t.var = None;
        t.children.retain(|_| rng.random_bool(0.7));
        if !root && t.axis == Axis::Child && rng.random_bool(0.2) {
            t.axis = Axis::Descendant;
        }
        if t.predicate.is_some() && rng.random_bool(0.4) {
            t.predicate = None;
        }
        if rng.random_bool(0.1) {
            t.label = Label::Wildcard;
        }
        let mut anns = p2pxml::pattern::AnnSet::EMPTY;
        for (a, p) in [
            (p2pxml::table::Ann::Id, 0.5),
            (p2pxml::table::Ann::Val, 0.3),
            (p2pxml::table::Ann::Cont, 0.35),
        ] {
            if rng.random_bool(p) {
                anns.insert(a);
            }
        }
        t.anns = anns;
        for c in &mut t.children {
            mutate(rng, c, false);
        }
    }
    mutate(rng, &mut t, true);
    if start != 0 || t.axis == Axis::Child && rng.random_bool(0.5) {
        t.axis = Axis::Descendant;
    }
    let p = TreePattern::from_tree(&t);
    p.has_annotation().then_some(p)
}

pub fn random_view_pattern(rng: &mut ChaCha8Rng, q: &QuerySpec) -> TreePattern {
    loop {
        if rng.random_bool(0.8) {
            let pi = rng.random_range(0..q.patterns.len());
            if let Some(p) = derived_view(rng, &q.patterns[pi]) {
                return p;
            }
        } else {
            return TreePattern::parse(&random_pattern_text(rng, 3, &[])).unwrap();
        }
    }
}

/// Catalog, store and ring over a fixed corpus.
pub struct World {
    pub catalog: Catalog,
    pub store: Store,
    pub peers: Vec<PeerId>,
}

impl World {
    pub fn new(corpus: Vec<Document>, peers: usize) -> World {
        let names: Vec<String> = (0..peers).map(|i| format!("p{i:02}")).collect();
        let overlay = Overlay::new(&names, OverlayConfig::default()).unwrap();
        let peers = overlay.peers().to_vec();
        let mut catalog = Catalog::new(overlay);
        let mut store = Store::default();
        for (i, d) in corpus.into_iter().enumerate() {
            catalog.publish_document(&peers[i % peers.len()], &d).unwrap();
            store.documents.insert(d.uri().to_string(), Arc::new(d));
        }
        World { catalog, store, peers }
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.store.documents.values().map(|d| d.as_ref())
    }

    /// Materializes `p` at `holder` (extent + estimate) without advertising.
    pub fn materialize(&mut self, p: TreePattern, holder: usize) -> ViewDef {
        let mut extent = Table::empty(
            p.annotated_columns()
                .into_iter()
                .map(|(n, a)| p2pxml::table::Column::new(0, n, a))
                .collect(),
        );
        let mut est = 0;
        for d in self.store.documents.values() {
            extent.union_with(evaluate_pattern(d, &p));
            est += estimate_contribution(self.catalog.peek_synopsis(d.uri()).unwrap(), &p);
        }
        let mut v = ViewDef::new(p, self.peers[holder].clone(), est, 0);
        v.actual_bytes = Some(extent.payload_bytes());
        self.store.extents.insert(v.view_id.clone(), extent);
        v
    }
}

pub fn pred_kinds(q: &QuerySpec) -> BTreeMap<&'static str, usize> {
    let mut m = BTreeMap::new();
    for p in &q.patterns {
        for n in p.nodes() {
            match n.predicate {
                Some(Predicate::Equals(_)) => *m.entry("equals").or_default() += 1,
                Some(Predicate::ContainsWord(_)) => *m.entry("containsWord").or_default() += 1,
                None => {}
            }
        }
    }
    m
}
