//! Publishing documents into the distributed index and advertising a view
//! so that another peer can find it from a query.

use std::collections::BTreeSet;

use p2pxml::catalog::{Catalog, ViewDef};
use p2pxml::overlay::{Category, Overlay, OverlayConfig};
use p2pxml::pattern::{QuerySpec, TreePattern};
use p2pxml::xml::{parse_document, Term};

fn main() {
    let names: Vec<String> = (0..4).map(|i| format!("p{i:02}")).collect();
    let mut cat = Catalog::new(Overlay::new(&names, OverlayConfig::default()).unwrap());
    let peers = cat.overlay().peers().to_vec();
    let docs = [
        "<book><title>AI</title><author>Smith</author></book>",
        "<book><title>DB</title><year>2010</year></book>",
        "<article><title>AI agents</title><journal>JAIR</journal></article>",
    ];
    for (i, x) in docs.iter().enumerate() {
        let d = parse_document(x.as_bytes(), &format!("d{i}.xml")).unwrap();
        cat.publish_document(&peers[i % peers.len()], &d).unwrap();
    }
    let m = cat.overlay().metrics().global.get(Category::IndexMaintenance);
    println!("published {} documents: {} messages, {} bytes", cat.document_count(), m.messages, m.bytes);

    let terms = BTreeSet::from([Term::label("title"), Term::word("ai")]);
    println!("title + ai -> {:?}", cat.lookup_documents(&peers[3], &terms, Category::QueryExecution).unwrap());

    let v = ViewDef::new(TreePattern::parse("(//book (/title {val}))").unwrap(), peers[1].clone(), 4, 1);
    cat.advertise_view(&v).unwrap();
    println!("advertised {} ({} byte entry)", v.view_id, v.encode().len());

    let q = QuerySpec::parse("(//book (/title {val}) (/author))").unwrap();
    for found in cat.lookup_views(&peers[2], &q).unwrap() {
        println!("{} held by {}: {}", found.view_id, found.holder.name, found.pattern);
    }
    cat.retract_view(&v.view_id, &v.pattern).unwrap();
    println!("after retract: {} views", cat.lookup_views(&peers[2], &q).unwrap().len());
}
