//! A small ring: key placement, puts and gets, and the traffic they cost.

use p2pxml::overlay::{hash_key, Category, Overlay, OverlayConfig};

fn main() {
    let names: Vec<String> = (0..8).map(|i| format!("p{i:02}")).collect();
    let mut ring = Overlay::new(&names, OverlayConfig::default()).unwrap();
    for p in ring.peers() {
        println!("{} at {:#010x}", p.name, p.position);
    }
    println!("{} hops and {} bytes per lookup", ring.hops(), ring.lookup_bytes());

    let me = ring.peers()[3].clone();
    for key in ["label:book", "word:lee", "view:title"] {
        println!("{key} hashes to {:#010x}, owned by {}", hash_key(key), ring.responsible_peer(key).unwrap().name);
        ring.dht_put(&me, key, key.as_bytes().to_vec(), Category::IndexMaintenance).unwrap();
    }
    ring.dht_put(&me, "label:book", b"book2.xml".to_vec(), Category::IndexMaintenance).unwrap();
    let got = ring.dht_get(&ring.peers()[0].clone(), "label:book", Category::QueryExecution).unwrap();
    println!("label:book -> {:?}", got.iter().map(|e| String::from_utf8_lossy(e)).collect::<Vec<_>>());

    let removed = ring.dht_remove(&me, "label:book", Category::IndexMaintenance, |e| e == b"book2.xml").unwrap();
    println!("removed {removed}");
    println!("{}", serde_json::to_string_pretty(&ring.metrics().global.to_json()).unwrap());
}
