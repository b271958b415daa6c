mod common;

use std::collections::BTreeSet;

use common::*;
use p2pxml::adapt::{adapt_round, lgg, rollups, AdaptConfig, QueryStats, RoundInput};
use p2pxml::catalog::ViewDef;
use p2pxml::overlay::{Category, Overlay, OverlayConfig};
use p2pxml::pattern::{evaluate_pattern, Axis, Label, Predicate, QuerySpec, TreePattern};
use p2pxml::rewriter::{Planner, RewriteConfig};
use p2pxml::synopsis::{build_synopsis, estimate_contribution, Synopsis};
use p2pxml::table::{Ann, Tuple, Value};
use p2pxml::xml::{id_contains, parse_document, Child, Document};
use proptest::prelude::*;
use rand::Rng;

fn is_ancestor(d: &Document, a: usize, mut b: usize) -> bool {
    while let Some(p) = d.element(b).parent {
        if p == a {
            return true;
        }
        b = p;
    }
    false
}

fn text_of(d: &Document, i: usize, out: &mut String) {
    for c in &d.element(i).children {
        match c {
            Child::Text(t) => out.push_str(t),
            Child::Element(e) => text_of(d, *e, out),
        }
    }
}

fn runs(d: &Document, i: usize, out: &mut Vec<String>) {
    for c in &d.element(i).children {
        match c {
            Child::Text(t) => out.push(t.clone()),
            Child::Element(e) => runs(d, *e, out),
        }
    }
}

/// Brute force: every assignment of pattern nodes to elements, filtered by
/// labels, axes, predicates and the root rule.
fn naive_rows(d: &Document, p: &TreePattern) -> BTreeSet<Tuple> {
    let n = d.len();
    let k = p.len();
    let value = |i: usize| {
        let mut s = String::new();
        text_of(d, i, &mut s);
        s
    };
    let holds = |pred: &Predicate, i: usize| match pred {
        Predicate::Equals(t) => value(i) == *t,
        Predicate::ContainsWord(w) => {
            let mut rs = Vec::new();
            runs(d, i, &mut rs);
            rs.iter().any(|r| {
                r.split_whitespace()
                    .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
                    .any(|t| t == *w)
            })
        }
    };
    let cols = p.annotated_columns();
    let mut out = BTreeSet::new();
    let mut assign = vec![0usize; k];
    loop {
        let ok = (0..k).all(|j| {
            let pn = p.node(j);
            let e = assign[j];
            let label_ok = match &pn.label {
                Label::Wildcard => true,
                Label::Name(l) => d.element(e).label == *l,
            };
            let edge_ok = match (pn.parent, pn.axis) {
                (None, Axis::Child) => e == d.root(),
                (None, Axis::Descendant) => true,
                (Some(pj), Axis::Child) => d.element(e).parent == Some(assign[pj]),
                (Some(pj), Axis::Descendant) => is_ancestor(d, assign[pj], e),
            };
            label_ok && edge_ok && pn.predicate.as_ref().is_none_or(|pr| holds(pr, e))
        });
        if ok {
            out.insert(
                cols.iter()
                    .map(|&(j, a)| match a {
                        Ann::Id => Value::Id(d.node_id(assign[j])),
                        Ann::Val => Value::Val(value(assign[j])),
                        Ann::Cont => Value::Cont(d.serialize_at(assign[j])),
                    })
                    .collect(),
            );
        }
        let mut j = 0;
        while j < k {
            assign[j] += 1;
            if assign[j] < n {
                break;
            }
            assign[j] = 0;
            j += 1;
        }
        if j == k {
            return out;
        }
    }
}

fn doc(seed: u64, max_nodes: usize) -> Document {
    let mut r = rng(seed);
    parse_document(random_xml(&mut r, max_nodes).as_bytes(), "d.xml").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn interval_ids_encode_ancestry(seed in any::<u64>()) {
        let d = doc(seed, 40);
        for a in 0..d.len() {
            for b in 0..d.len() {
                prop_assert_eq!(id_contains(&d.node_id(a), &d.node_id(b)), is_ancestor(&d, a, b));
            }
        }
    }

    #[test]
    fn pattern_evaluation_matches_brute_force(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = parse_document(random_xml(&mut r, 12).as_bytes(), "d.xml").unwrap();
        let p = TreePattern::parse(&random_pattern_text(&mut r, 4, &[])).unwrap();
        prop_assert_eq!(evaluate_pattern(&d, &p).rows, naive_rows(&d, &p));
    }

    #[test]
    fn serialization_round_trips(seed in any::<u64>()) {
        let d = doc(seed, 40);
        let again = parse_document(d.serialize_at(d.root()).as_bytes(), d.uri()).unwrap();
        prop_assert!(d.same_structure(&again));
        for i in 0..d.len() {
            prop_assert_eq!(d.value_of(i), again.value_of(i));
        }
    }

    #[test]
    fn synopsis_round_trips(seed in any::<u64>()) {
        let s = build_synopsis(&doc(seed, 40));
        prop_assert_eq!(Synopsis::decode(&s.encode()).unwrap(), s);
    }

    #[test]
    fn pattern_text_round_trips(seed in any::<u64>()) {
        let q = random_query(&mut rng(seed), 5);
        prop_assert_eq!(QuerySpec::parse(&q.canonical()).unwrap(), q.clone());
        for p in &q.patterns {
            prop_assert_eq!(TreePattern::parse(&p.canonical()).unwrap(), p.clone());
        }
    }

    #[test]
    fn estimate_zero_implies_no_bytes(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = parse_document(random_xml(&mut r, 30).as_bytes(), "d.xml").unwrap();
        let p = TreePattern::parse(&random_pattern_text(&mut r, 4, &[])).unwrap();
        if estimate_contribution(&build_synopsis(&d), &p) == 0 {
            prop_assert_eq!(evaluate_pattern(&d, &p).payload_bytes(), 0);
        }
    }

    #[test]
    fn rollups_generalize(seed in any::<u64>()) {
        let p = TreePattern::parse(&random_pattern_text(&mut rng(seed), 5, &[])).unwrap();
        prop_assert_eq!(lgg(&p, &p), Some(p.clone()));
        for g in rollups(&p) {
            prop_assert!(g.has_annotation());
            prop_assert!(g.len() <= p.len());
            prop_assert_ne!(g.canonical(), p.canonical());
        }
    }

    #[test]
    fn view_entries_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = TreePattern::parse(&random_pattern_text(&mut r, 5, &[])).unwrap();
        let names: Vec<String> = (0..3).map(|i| format!("p{i}")).collect();
        let o = Overlay::new(&names, OverlayConfig::default()).unwrap();
        let mut v = ViewDef::new(p, o.peers()[r.random_range(0..3)].clone(), r.random(), r.random_range(0..9));
        if r.random_bool(0.5) {
            v.actual_bytes = Some(r.random());
        }
        prop_assert_eq!(ViewDef::decode(&v.encode()).unwrap(), v);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn adding_a_view_never_raises_cost(seed in any::<u64>()) {
        let mut r = rng(seed);
        let docs = r.random_range(1..=6);
        let mut w = World::new(random_corpus(&mut r, docs, 25), 3);
        let q = random_query(&mut r, 4);
        let views: Vec<ViewDef> = (0..r.random_range(0..=3))
            .map(|_| {
                let p = random_view_pattern(&mut r, &q);
                let h = r.random_range(0..3);
                w.materialize(p, h)
            })
            .collect();
        let extra_p = random_view_pattern(&mut r, &q);
        let extra = w.materialize(extra_p, r.random_range(0..3));
        let peer = w.peers[r.random_range(0..3)].clone();
        let planner = Planner::new(&w.catalog, RewriteConfig::default());
        let mut more = views.clone();
        more.push(extra);
        prop_assert!(planner.best_cost(&q, &more, &peer) <= planner.best_cost(&q, &views, &peer));
    }

    #[test]
    fn rounds_respect_budget_and_usefulness(seed in any::<u64>()) {
        let mut r = rng(seed);
        let docs = r.random_range(2..=8);
        let mut w = World::new(random_corpus(&mut r, docs, 25), 3);
        let peer = w.peers[r.random_range(0..3)].clone();
        let mut stats = QueryStats::default();
        let queries: Vec<QuerySpec> = (0..r.random_range(1..=3)).map(|_| random_query(&mut r, 4)).collect();
        for q in &queries {
            for _ in 0..r.random_range(1..=4) {
                stats.record(q, &w.peers[r.random_range(0..3)]);
            }
        }
        let capacity = r.random_range(0..600);
        let cfg = RewriteConfig::default();
        let cost = |w: &World| -> Vec<u64> {
            let views: Vec<ViewDef> = w.catalog.views().cloned().collect();
            let pl = Planner::new(&w.catalog, cfg);
            stats.entries().map(|e| pl.best_cost(&e.query, &views, &e.asker)).collect()
        };
        let before = cost(&w);
        let report = adapt_round(
            RoundInput { peer: &peer, stats: &stats, capacity, round: 1, adapt: &AdaptConfig::default(), rewrite: &cfg },
            &mut w.catalog,
            &mut w.store,
        ).unwrap();
        prop_assert!(report.used_bytes <= capacity);
        prop_assert!(report.drops.is_empty());
        let after = cost(&w);
        for (a, b) in after.iter().zip(&before) {
            prop_assert!(a <= b);
        }
        let m = w.catalog.overlay().metrics();
        prop_assert_eq!(m.global.get(Category::QueryExecution).bytes, 0);
        prop_assert_eq!(m.global, m.sum_of_peers());
    }
}

