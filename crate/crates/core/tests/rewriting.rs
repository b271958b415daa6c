mod common;

use std::collections::BTreeMap;

use common::*;
use p2pxml::pattern::evaluate_query;
use p2pxml::rewriter::{execute_plan, Planner, RewriteConfig};
use rand::Rng;

#[test]
fn randomized_soundness_smoke() {
    let mut shapes: BTreeMap<String, usize> = BTreeMap::new();
    for trial in 0..300u64 {
        let mut r = rng(trial);
        let docs = r.random_range(1..=8);
        let corpus = random_corpus(&mut r, docs, 30);
        let mut w = World::new(corpus, 4);
        let q = random_query(&mut r, 5);
        let nviews = r.random_range(0..=6);
        let views: Vec<_> = (0..nviews)
            .map(|_| {
                let p = random_view_pattern(&mut r, &q);
                let h = r.random_range(0..4);
                w.materialize(p, h)
            })
            .collect();
        let peer = w.peers[r.random_range(0..4)].clone();
        let cfg = RewriteConfig::default();
        let plan = Planner::new(&w.catalog, cfg).best_plan(&q, &views, &peer).0;
        let got = execute_plan(&plan, &peer, &mut w.catalog, &w.store, &cfg).unwrap().table;
        let want = evaluate_query(w.documents(), &q);
        assert_eq!(got, want, "trial {trial}: {q}\nviews: {:?}\nplan: {}", views.iter().map(|v| v.pattern.to_string()).collect::<Vec<_>>(), plan.to_json());
        *shapes.entry(plan.leaves().iter().map(|l| l.operator()).collect::<Vec<_>>().join("+")).or_default() += 1;
    }
    eprintln!("{shapes:?}");
}

#[test]
fn every_enumerated_rewriting_is_sound() {
    let mut checked = 0;
    let mut ops: BTreeMap<&'static str, usize> = BTreeMap::new();
    for trial in 0..600u64 {
        let mut r = rng(10_000 + trial);
        let docs = r.random_range(1..=6);
        let corpus = random_corpus(&mut r, docs, 30);
        let mut w = World::new(corpus, 3);
        let q = random_query(&mut r, 4);
        let views: Vec<_> = (0..r.random_range(1..=5))
            .map(|_| {
                let p = random_view_pattern(&mut r, &q);
                w.materialize(p, 0)
            })
            .collect();
        let want = evaluate_query(w.documents(), &q);
        let peer = w.peers[0].clone();
        for plan in p2pxml::rewriter::enumerate_rewritings(&q, &views, 2).into_iter().take(20) {
            let got = execute_plan(&plan, &peer, &mut w.catalog, &w.store, &RewriteConfig::default())
                .unwrap()
                .table;
            assert_eq!(
                got, want,
                "trial {trial}: {q}\nviews: {:?}\nplan: {}",
                views.iter().map(|v| v.pattern.to_string()).collect::<Vec<_>>(),
                plan.to_json()
            );
            checked += 1;
            let mut stack = vec![&plan];
            while let Some(p) = stack.pop() {
                *ops.entry(p.operator()).or_default() += 1;
                stack.extend(p.children());
            }
        }
    }
    eprintln!("{checked} plans, {ops:?}");
    assert!(checked > 100);
}

#[test]
fn incremental_cost_matches_full_replanning() {
    let mut improved = 0;
    for trial in 0..300u64 {
        let mut r = rng(50_000 + trial);
        let docs = r.random_range(1..=6);
        let corpus = random_corpus(&mut r, docs, 25);
        let mut w = World::new(corpus, 4);
        let q = random_query(&mut r, 4);
        let views: Vec<_> = (0..r.random_range(0..=3))
            .map(|_| {
                let p = random_view_pattern(&mut r, &q);
                let h = r.random_range(0..4);
                w.materialize(p, h)
            })
            .collect();
        let extra_p = random_view_pattern(&mut r, &q);
        let extra = w.materialize(extra_p, r.random_range(0..4));
        let peer = w.peers[r.random_range(0..4)].clone();
        let planner = Planner::new(&w.catalog, RewriteConfig::default());
        let base = planner.baseline(&q, &views, &peer);
        let mut all = views.clone();
        all.push(extra.clone());
        let full = planner.best_cost(&q, &all, &peer);
        let inc = planner.cost_with(&base, &extra);
        assert_eq!(inc, full, "trial {trial}");
        assert!(full <= base.cost);
        improved += (full < base.cost) as usize;
    }
    eprintln!("improved {improved}");
    assert!(improved > 20);
}
