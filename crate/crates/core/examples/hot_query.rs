//! A three-peer scenario where one peer keeps asking the same query: the
//! first window ships it to document holders, the adaptation round
//! materializes a view, and later answers come from it.

use p2pxml::engine::{Engine, ScenarioConfig};

fn main() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/configs");
    let mut cfg = ScenarioConfig::from_json(&std::fs::read_to_string(format!("{dir}/fixture_hot_query.json")).unwrap()).unwrap();
    if let p2pxml::engine::CorpusConfig::Dir(d) = &mut cfg.corpus {
        *d = std::path::Path::new(dir).join(&*d);
    }
    let mut e = Engine::new(cfg).unwrap();
    while !e.finished() {
        for rec in e.step(1).unwrap() {
            for q in &rec.queries {
                println!("tick {} {} asks {}: {} rows, {} bytes, views {:?}", rec.tick, q.peer, q.query, q.rows, q.bytes, q.views);
            }
            if let Some(b) = &rec.boundary {
                for r in b.reports.iter().filter(|r| !r.is_quiet()) {
                    let adds: Vec<_> = r.adds.iter().map(|v| v.pattern.as_str()).collect();
                    println!("round {} at {}: adds {adds:?}", b.round, r.peer);
                }
            }
        }
    }
    let out = e.submit_query("p01", "(//book (/title {val}))").unwrap();
    println!("ad hoc: {} via {}", out.table.to_json(), out.plan.to_json());
}
