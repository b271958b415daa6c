//! Rewriting a query over materialized views: every candidate plan with its
//! estimated cost, then the cheapest one executed and checked against
//! direct evaluation.

use std::sync::Arc;

use p2pxml::catalog::{Catalog, ViewDef};
use p2pxml::overlay::{Category, Overlay, OverlayConfig};
use p2pxml::pattern::{evaluate_pattern, evaluate_query, QuerySpec, TreePattern};
use p2pxml::rewriter::{enumerate_rewritings, execute_plan, plan_cost, Planner, RewriteConfig, Store};
use p2pxml::synopsis::estimate_contribution;
use p2pxml::xml::parse_document;

fn main() {
    let names: Vec<String> = (0..4).map(|i| format!("p{i:02}")).collect();
    let mut cat = Catalog::new(Overlay::new(&names, OverlayConfig::default()).unwrap());
    let peers = cat.overlay().peers().to_vec();
    let mut store = Store::default();
    let xml = [
        "<book><title>AI</title><author>Smith</author><author>Lee</author></book>",
        "<book><title>DB</title><year>2010</year></book>",
        "<book><title>IR</title><author>Lee</author><year>2008</year></book>",
    ];
    for (i, x) in xml.iter().enumerate() {
        let d = parse_document(x.as_bytes(), &format!("b{i}.xml")).unwrap();
        cat.publish_document(&peers[i % 4], &d).unwrap();
        store.documents.insert(d.uri().to_string(), Arc::new(d));
    }

    // two views at p03: titles with ids, and authors with ids
    let mut views = Vec::new();
    for text in ["(//book {id} (/title {val}))", "(//book {id} (/author {val}))"] {
        let p = TreePattern::parse(text).unwrap();
        let mut extent = None;
        let mut est = 0;
        for d in store.documents.values() {
            let t = evaluate_pattern(d, &p);
            est += estimate_contribution(cat.peek_synopsis(d.uri()).unwrap(), &p);
            extent.get_or_insert_with(|| p2pxml::table::Table::empty(t.header.clone())).union_with(t);
        }
        let extent = extent.unwrap();
        let mut v = ViewDef::new(p, peers[3].clone(), est, 0);
        v.actual_bytes = Some(extent.payload_bytes());
        store.extents.insert(v.view_id.clone(), extent);
        cat.advertise_view(&v).unwrap();
        views.push(v);
    }

    let q = QuerySpec::parse("(//book (/title {val}) (/author {val}))").unwrap();
    let asker = &peers[0];
    let cfg = RewriteConfig::default();
    let planner = Planner::new(&cat, cfg);
    for plan in enumerate_rewritings(&q, &views, cfg.max_views) {
        println!("{:>6} bytes  {}", plan_cost(&plan, asker, planner.model()).bytes, plan.to_json());
    }
    println!("{:>6} bytes  ship query to document holders", planner.docship_cost(&q));

    let (best, cost) = planner.best_plan(&q, &views, asker);
    for item in &cost.breakdown {
        println!("  {:<10} {:<30} {}", item.operator, item.detail, item.bytes);
    }
    let before = cat.overlay().metrics().global.get(Category::QueryExecution).bytes;
    let run = execute_plan(&best, asker, &mut cat, &store, &cfg).unwrap();
    let after = cat.overlay().metrics().global.get(Category::QueryExecution).bytes;
    assert_eq!(run.table, evaluate_query(store.documents.values().map(|d| d.as_ref()), &q));
    println!("executed: {} rows, {} bytes moved (estimated {})", run.table.len(), after - before, cost.bytes);
}
