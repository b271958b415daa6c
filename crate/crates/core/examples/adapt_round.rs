//! One peer's adaptation round: candidate lattice, scores, greedy admission
//! under a budget, and a second round that changes nothing.

use std::sync::Arc;

use p2pxml::adapt::{adapt_round, enumerate_candidates, AdaptConfig, QueryStats, RoundInput};
use p2pxml::catalog::Catalog;
use p2pxml::overlay::{Overlay, OverlayConfig};
use p2pxml::pattern::QuerySpec;
use p2pxml::rewriter::{RewriteConfig, Store};
use p2pxml::xml::parse_document;

fn main() {
    let budget: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(120);
    let names: Vec<String> = (0..3).map(|i| format!("p{i:02}")).collect();
    let mut cat = Catalog::new(Overlay::new(&names, OverlayConfig::default()).unwrap());
    let peers = cat.overlay().peers().to_vec();
    let mut store = Store::default();
    for i in 0..6 {
        let x = format!("<book><title>T{i}</title><author>A{}</author><year>20{i:02}</year></book>", i % 2);
        let d = parse_document(x.as_bytes(), &format!("b{i}.xml")).unwrap();
        cat.publish_document(&peers[i % 3], &d).unwrap();
        store.documents.insert(d.uri().to_string(), Arc::new(d));
    }

    let me = &peers[0];
    let mut stats = QueryStats::default();
    for (q, n) in [("(//book (/title {val}) (/year))", 5), ("(//book (/author {val}) (/year [= \"2001\"]))", 2)] {
        let q = QuerySpec::parse(q).unwrap();
        for _ in 0..n {
            stats.record(&q, me);
        }
    }
    let workload: Vec<_> = stats.entries().map(|e| (e.query.clone(), e.count)).collect();
    for s in enumerate_candidates(&workload, 64) {
        println!("{:?} support {} steps {}  {}", s.provenance, s.support, s.steps, s.pattern);
    }

    let (adapt, rewrite) = (AdaptConfig::default(), RewriteConfig::default());
    for round in 1..=2 {
        let input = RoundInput { peer: me, stats: &stats, capacity: budget, round, adapt: &adapt, rewrite: &rewrite };
        let r = adapt_round(input, &mut cat, &mut store).unwrap();
        println!("round {round}: used {} of {} bytes", r.used_bytes, r.capacity_bytes);
        for c in r.scores.iter().take(5) {
            println!("  score {:>7.2}  benefit {:>5}  size {:>4}  {}", c.ratio, c.benefit, c.estimated_bytes, c.pattern);
        }
        for v in &r.adds {
            println!("  add  {} est {} actual {:?}", v.pattern, v.estimated_bytes, v.actual_bytes);
        }
        for v in &r.drops {
            println!("  drop {}", v.pattern);
        }
    }
}
