//! Simulated DHT ring with hop and byte accounting.
//!
//! Routing is abstract: every lookup costs `max(1, ceil(log2 N))` messages.
//! A put or get charges the payload once, the key overhead once and a
//! message header per hop. Direct shipping between peers costs one message
//! and one header; local shipping is free.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OverlayError {
    #[error("the ring has no peers")]
    EmptyRing,
    #[error("entry of {size} bytes exceeds the {max} byte limit")]
    Oversize { size: u64, max: u64 },
    #[error("peers {0} and {1} hash to the same ring position")]
    PositionClash(String, String),
    #[error("unknown peer {0}")]
    UnknownPeer(String),
}

/// FNV-1a, 32 bit.
pub fn hash_key(key: &str) -> u32 {
    let mut h: u32 = 2166136261;
    for b in key.as_bytes() {
        h ^= *b as u32;
        h = h.wrapping_mul(16777619);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PeerId {
    pub position: u32,
    pub name: String,
}

impl PartialOrd for PeerId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PeerId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.position
            .cmp(&other.position)
            .then_with(|| self.name.cmp(&other.name))
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    IndexMaintenance,
    ViewMaterialization,
    QueryExecution,
    Adaptation,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::IndexMaintenance,
        Category::ViewMaterialization,
        Category::QueryExecution,
        Category::Adaptation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::IndexMaintenance => "index_maintenance",
            Category::ViewMaterialization => "view_materialization",
            Category::QueryExecution => "query_execution",
            Category::Adaptation => "adaptation",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub messages: u64,
    pub bytes: u64,
}

impl std::ops::AddAssign for Counters {
    fn add_assign(&mut self, rhs: Counters) {
        self.messages += rhs.messages;
        self.bytes += rhs.bytes;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CategoryCounters([Counters; 4]);

impl CategoryCounters {
    pub fn get(&self, c: Category) -> Counters {
        self.0[c.index()]
    }

    fn charge(&mut self, c: Category, messages: u64, bytes: u64) {
        let slot = &mut self.0[c.index()];
        slot.messages += messages;
        slot.bytes += bytes;
    }

    pub fn total(&self) -> Counters {
        let mut t = Counters::default();
        for c in &self.0 {
            t += *c;
        }
        t
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        for c in Category::ALL {
            m.insert(c.name().to_string(), serde_json::to_value(self.get(c)).unwrap());
        }
        serde_json::Value::Object(m)
    }
}

impl std::ops::AddAssign<&CategoryCounters> for CategoryCounters {
    fn add_assign(&mut self, rhs: &CategoryCounters) {
        for (a, b) in self.0.iter_mut().zip(rhs.0.iter()) {
            *a += *b;
        }
    }
}

/// Per-peer and global message/byte counters by traffic category.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NetworkMetrics {
    pub per_peer: BTreeMap<String, CategoryCounters>,
    pub global: CategoryCounters,
}

impl NetworkMetrics {
    fn charge(&mut self, peer: &PeerId, c: Category, messages: u64, bytes: u64) {
        self.per_peer
            .entry(peer.name.clone())
            .or_default()
            .charge(c, messages, bytes);
        self.global.charge(c, messages, bytes);
    }

    pub fn sum_of_peers(&self) -> CategoryCounters {
        let mut s = CategoryCounters::default();
        for c in self.per_peer.values() {
            s += c;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverlayConfig {
    pub msg_header_bytes: u64,
    pub key_overhead_bytes: u64,
    pub max_entry_bytes: u64,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        OverlayConfig {
            msg_header_bytes: 64,
            key_overhead_bytes: 32,
            max_entry_bytes: 1 << 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Overlay {
    config: OverlayConfig,
    ring: Vec<PeerId>,
    store: BTreeMap<u32, BTreeMap<String, Vec<Vec<u8>>>>,
    metrics: NetworkMetrics,
}

impl Overlay {
    /// Places each named peer at `hash_key(name)`.
    pub fn new(names: &[String], config: OverlayConfig) -> Result<Self, OverlayError> {
        let placed: Vec<(String, u32)> = names.iter().map(|n| (n.clone(), hash_key(n))).collect();
        Self::with_positions(&placed, config)
    }

    pub fn with_positions(peers: &[(String, u32)], config: OverlayConfig) -> Result<Self, OverlayError> {
        let mut ring: Vec<PeerId> = peers
            .iter()
            .map(|(n, p)| PeerId {
                position: *p,
                name: n.clone(),
            })
            .collect();
        ring.sort();
        for w in ring.windows(2) {
            if w[0].position == w[1].position {
                return Err(OverlayError::PositionClash(w[0].name.clone(), w[1].name.clone()));
            }
        }
        let mut metrics = NetworkMetrics::default();
        for p in &ring {
            metrics.per_peer.insert(p.name.clone(), CategoryCounters::default());
        }
        Ok(Overlay {
            config,
            ring,
            store: BTreeMap::new(),
            metrics,
        })
    }

    pub fn config(&self) -> &OverlayConfig {
        &self.config
    }

    pub fn peers(&self) -> &[PeerId] {
        &self.ring
    }

    pub fn peer(&self, name: &str) -> Result<&PeerId, OverlayError> {
        self.ring
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| OverlayError::UnknownPeer(name.to_string()))
    }

    pub fn metrics(&self) -> &NetworkMetrics {
        &self.metrics
    }

    /// Messages per routed lookup.
    pub fn hops(&self) -> u64 {
        let n = self.ring.len().max(1) as u64;
        (64 - (n - 1).leading_zeros() as u64).max(1)
    }

    /// Bytes of one routed request carrying no payload.
    pub fn lookup_bytes(&self) -> u64 {
        self.config.key_overhead_bytes + self.hops() * self.config.msg_header_bytes
    }

    pub fn responsible_peer(&self, key: &str) -> Result<&PeerId, OverlayError> {
        responsible_peer(&self.ring, key)
    }

    pub fn dht_put(
        &mut self,
        from: &PeerId,
        key: &str,
        entry: Vec<u8>,
        category: Category,
    ) -> Result<(), OverlayError> {
        let size = entry.len() as u64;
        if size > self.config.max_entry_bytes {
            return Err(OverlayError::Oversize {
                size,
                max: self.config.max_entry_bytes,
            });
        }
        let owner = self.responsible_peer(key)?.position;
        let (hops, bytes) = (self.hops(), size + self.lookup_bytes());
        self.metrics.charge(from, category, hops, bytes);
        self.store
            .entry(owner)
            .or_default()
            .entry(key.to_string())
            .or_default()
            .push(entry);
        Ok(())
    }

    pub fn dht_get(
        &mut self,
        from: &PeerId,
        key: &str,
        category: Category,
    ) -> Result<Vec<Vec<u8>>, OverlayError> {
        let entries = self.peek(key)?.to_vec();
        let returned: u64 = entries.iter().map(|e| e.len() as u64).sum();
        let (hops, bytes) = (self.hops(), returned + self.lookup_bytes());
        self.metrics.charge(from, category, hops, bytes);
        Ok(entries)
    }

    /// Removes the entries under `key` matching `pred`; returns how many.
    pub fn dht_remove(
        &mut self,
        from: &PeerId,
        key: &str,
        category: Category,
        mut pred: impl FnMut(&[u8]) -> bool,
    ) -> Result<usize, OverlayError> {
        let owner = self.responsible_peer(key)?.position;
        let (hops, bytes) = (self.hops(), self.lookup_bytes());
        self.metrics.charge(from, category, hops, bytes);
        let Some(keys) = self.store.get_mut(&owner) else {
            return Ok(0);
        };
        let Some(list) = keys.get_mut(key) else {
            return Ok(0);
        };
        let before = list.len();
        list.retain(|e| !pred(e));
        let removed = before - list.len();
        if list.is_empty() {
            keys.remove(key);
        }
        Ok(removed)
    }

    /// Entries stored under `key`, without charging any traffic.
    pub fn peek(&self, key: &str) -> Result<&[Vec<u8>], OverlayError> {
        let owner = self.responsible_peer(key)?.position;
        Ok(self
            .store
            .get(&owner)
            .and_then(|m| m.get(key))
            .map_or(&[][..], |v| v.as_slice()))
    }

    /// All keys currently holding entries, across peers.
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.store.values().flat_map(|m| m.keys().map(String::as_str))
    }

    pub fn ship(&mut self, from: &PeerId, to: &PeerId, payload_bytes: u64, category: Category) {
        if from == to {
            return;
        }
        let bytes = payload_bytes + self.config.msg_header_bytes;
        self.metrics.charge(from, category, 1, bytes);
    }
}

/// Successor of `hash_key(key)` on the ring, wrapping around.
pub fn responsible_peer<'a>(ring: &'a [PeerId], key: &str) -> Result<&'a PeerId, OverlayError> {
    if ring.is_empty() {
        return Err(OverlayError::EmptyRing);
    }
    let h = hash_key(key);
    let i = ring.partition_point(|p| p.position < h);
    Ok(&ring[i % ring.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_fnv(bytes: &[u8]) -> u32 {
        let mut h = 0x811c9dc5u32;
        for &b in bytes {
            h = (h ^ u32::from(b)).wrapping_mul(0x01000193);
        }
        h
    }

    fn ring(positions: &[u32]) -> Overlay {
        let peers: Vec<(String, u32)> = positions
            .iter()
            .map(|p| (format!("p{p}"), *p))
            .collect();
        Overlay::with_positions(&peers, OverlayConfig::default()).unwrap()
    }

    /// Finds a key whose hash is the given value modulo nothing: searches
    /// short keys until one lands in [lo, hi].
    fn key_in(lo: u32, hi: u32) -> String {
        (0u64..)
            .map(|i| format!("k{i}"))
            .find(|k| (lo..=hi).contains(&hash_key(k)))
            .unwrap()
    }

    #[test]
    fn fnv_values() {
        assert_eq!(hash_key(""), 2166136261);
        assert_eq!(hash_key("a"), reference_fnv(b"a"));
        assert_eq!(hash_key("a"), 0xe40c292c);
        assert_eq!(hash_key("term:book"), hash_key("term:book"));
    }

    #[test]
    fn successor_rule() {
        let single = ring(&[7]);
        assert_eq!(single.responsible_peer("anything").unwrap().position, 7);
        let positions = [1u32 << 30, 3u32 << 30];
        let o = ring(&positions);
        let k = key_in((1 << 30) + 1, (3 << 30) - 1);
        assert_eq!(o.responsible_peer(&k).unwrap().position, 3 << 30);
        let k = key_in((3 << 30) + 1, u32::MAX);
        assert_eq!(o.responsible_peer(&k).unwrap().position, 1 << 30);
        assert_eq!(responsible_peer(&[], "x"), Err(OverlayError::EmptyRing));
    }

    #[test]
    fn put_get_round_trip_and_hops() {
        let mut o = ring(&[10, 20, 30, 40, 50, 60, 70, 80]);
        let p = o.peers()[0].clone();
        assert_eq!(o.hops(), 3);
        o.dht_put(&p, "k", b"one".to_vec(), Category::IndexMaintenance).unwrap();
        assert_eq!(o.metrics().global.get(Category::IndexMaintenance).messages, 3);
        o.dht_put(&p, "k", b"two".to_vec(), Category::IndexMaintenance).unwrap();
        let got = o.dht_get(&p, "k", Category::QueryExecution).unwrap();
        assert_eq!(got, vec![b"one".to_vec(), b"two".to_vec()]);
        assert!(o.dht_get(&p, "missing", Category::QueryExecution).unwrap().is_empty());
        let q = o.metrics().global.get(Category::QueryExecution);
        assert_eq!(q.messages, 6);
        assert_eq!(q.bytes, 6 + 2 * o.lookup_bytes());
    }

    #[test]
    fn oversize_rejected() {
        let mut o = Overlay::with_positions(
            &[("a".into(), 1)],
            OverlayConfig {
                max_entry_bytes: 4,
                ..Default::default()
            },
        )
        .unwrap();
        let p = o.peers()[0].clone();
        assert!(matches!(
            o.dht_put(&p, "k", vec![0; 5], Category::IndexMaintenance),
            Err(OverlayError::Oversize { .. })
        ));
        assert_eq!(o.hops(), 1);
    }

    #[test]
    fn shipping() {
        let mut o = ring(&[1, 2]);
        let (a, b) = (o.peers()[0].clone(), o.peers()[1].clone());
        o.ship(&a, &b, 100, Category::QueryExecution);
        assert_eq!(o.metrics().global.get(Category::QueryExecution).bytes, 164);
        assert_eq!(o.metrics().global.get(Category::Adaptation).bytes, 0);
        let before = o.metrics().clone();
        o.ship(&a, &a, 100, Category::QueryExecution);
        assert_eq!(o.metrics(), &before);
    }

    #[test]
    fn remove_entries() {
        let mut o = ring(&[5]);
        let p = o.peers()[0].clone();
        o.dht_put(&p, "k", b"x".to_vec(), Category::Adaptation).unwrap();
        o.dht_put(&p, "k", b"y".to_vec(), Category::Adaptation).unwrap();
        assert_eq!(o.dht_remove(&p, "k", Category::Adaptation, |e| e == b"x").unwrap(), 1);
        assert_eq!(o.peek("k").unwrap(), &[b"y".to_vec()]);
        assert_eq!(o.dht_remove(&p, "k", Category::Adaptation, |_| true).unwrap(), 1);
        assert_eq!(o.keys().count(), 0);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Put(usize, u8, usize),
        Get(usize, u8),
        Ship(usize, usize, u16),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0..6usize, 0..20u8, 0..64usize).prop_map(|(p, k, n)| Op::Put(p, k, n)),
            (0..6usize, 0..20u8).prop_map(|(p, k)| Op::Get(p, k)),
            (0..6usize, 0..6usize, any::<u16>()).prop_map(|(a, b, n)| Op::Ship(a, b, n)),
        ]
    }

    fn run(ops: &[Op]) -> Overlay {
        let names: Vec<String> = (0..6).map(|i| format!("peer{i}")).collect();
        let mut o = Overlay::new(&names, OverlayConfig::default()).unwrap();
        let peers = o.peers().to_vec();
        for op in ops {
            match op {
                Op::Put(p, k, n) => o
                    .dht_put(&peers[*p], &format!("key{k}"), vec![7; *n], Category::IndexMaintenance)
                    .unwrap(),
                Op::Get(p, k) => {
                    o.dht_get(&peers[*p], &format!("key{k}"), Category::QueryExecution)
                        .unwrap();
                }
                Op::Ship(a, b, n) => o.ship(&peers[*a], &peers[*b], *n as u64, Category::Adaptation),
            }
        }
        o
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn conservation_and_determinism(ops in proptest::collection::vec(op(), 10_000)) {
            let a = run(&ops);
            prop_assert_eq!(&a.metrics().sum_of_peers(), &a.metrics().global);
            let b = run(&ops);
            prop_assert_eq!(a.metrics(), b.metrics());
            prop_assert_eq!(&a.store, &b.store);
        }

        #[test]
        fn responsibility_is_stable(key in ".{0,12}") {
            let o = run(&[]);
            let a = o.responsible_peer(&key).unwrap().clone();
            prop_assert_eq!(&a, o.responsible_peer(&key).unwrap());
            prop_assert_eq!(o.peers().iter().filter(|p| **p == a).count(), 1);
        }
    }
}
