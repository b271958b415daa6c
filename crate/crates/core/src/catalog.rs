//! Distributed indexes kept in the overlay:
//!
//! * `term:<text>` → URIs of documents carrying the term
//! * `syn:<uri>` → encoded dataguide of the document
//! * `view:<text>` → advertised view definitions (`view:*` for patterns
//!   without any term)

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::overlay::{hash_key, Category, Overlay, OverlayError, PeerId};
use crate::pattern::{label_terms, pattern_terms, QuerySpec, TreePattern};
use crate::synopsis::{build_synopsis_truncated, Synopsis, SynopsisError};
use crate::xml::{extract_terms, Document, Term};

pub const TERM_PREFIX: &str = "term:";
pub const SYNOPSIS_PREFIX: &str = "syn:";
pub const VIEW_PREFIX: &str = "view:";
pub const WILDCARD_VIEW_KEY: &str = "view:*";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error("document {0} is already published")]
    AlreadyPublished(String),
    #[error("document {0} is not published")]
    UnknownDocument(String),
    #[error("view {0} is already advertised")]
    DuplicateView(String),
    #[error("view {0} is not advertised")]
    UnknownView(String),
    #[error("empty term set: locating documents would scan the whole network")]
    EmptyTermSet,
    #[error("corrupt synopsis entry: {0}")]
    Synopsis(#[from] SynopsisError),
    #[error("corrupt view entry: {0}")]
    ViewEntry(String),
}

/// A materialized (or hypothetical) view: pattern, holder and sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewDef {
    pub view_id: String,
    pub pattern: TreePattern,
    pub holder: PeerId,
    pub estimated_bytes: u64,
    pub actual_bytes: Option<u64>,
    pub created_at_round: u64,
}

impl ViewDef {
    pub fn new(pattern: TreePattern, holder: PeerId, estimated_bytes: u64, round: u64) -> Self {
        ViewDef {
            view_id: view_id(&pattern, &holder),
            pattern,
            holder,
            estimated_bytes,
            actual_bytes: None,
            created_at_round: round,
        }
    }

    /// Tab-separated entry: id, holder name, holder position, estimated
    /// bytes, actual bytes (`-` if unknown), round, canonical pattern.
    pub fn encode(&self) -> Vec<u8> {
        let actual = self.actual_bytes.map_or("-".to_string(), |a| a.to_string());
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.view_id,
            self.holder.name,
            self.holder.position,
            self.estimated_bytes,
            actual,
            self.created_at_round,
            self.pattern.canonical()
        )
        .into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<ViewDef, CatalogError> {
        let bad = |m: &str| CatalogError::ViewEntry(m.to_string());
        let text = std::str::from_utf8(bytes).map_err(|e| bad(&e.to_string()))?;
        let f: Vec<&str> = text.splitn(7, '\t').collect();
        let [id, name, pos, est, actual, round, pattern] = f[..] else {
            return Err(bad("expected 7 tab-separated fields"));
        };
        let num = |s: &str| s.parse::<u64>().map_err(|e| bad(&format!("{s:?}: {e}")));
        Ok(ViewDef {
            view_id: id.to_string(),
            pattern: TreePattern::parse(pattern).map_err(|e| bad(&e.to_string()))?,
            holder: PeerId {
                name: name.to_string(),
                position: pos.parse().map_err(|e| bad(&format!("{pos:?}: {e}")))?,
            },
            estimated_bytes: num(est)?,
            actual_bytes: if actual == "-" { None } else { Some(num(actual)?) },
            created_at_round: num(round)?,
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "view_id": self.view_id,
            "pattern": self.pattern.canonical(),
            "holder": self.holder.name,
            "estimated_bytes": self.estimated_bytes,
            "actual_bytes": self.actual_bytes,
            "created_at_round": self.created_at_round,
        })
    }
}

pub fn view_id(pattern: &TreePattern, holder: &PeerId) -> String {
    format!("v{:08x}", hash_key(&format!("{}@{}", pattern.canonical(), holder.name)))
}

fn term_keys(prefix: &str, terms: &BTreeSet<Term>) -> BTreeSet<String> {
    terms.iter().map(|t| format!("{prefix}{}", t.text)).collect()
}

fn view_keys(pattern: &TreePattern) -> BTreeSet<String> {
    let mut keys = term_keys(VIEW_PREFIX, &pattern_terms(pattern));
    // lookups only probe label keys, so a pattern without labels must also
    // sit under the reserved key
    if label_terms(pattern).is_empty() {
        keys.insert(WILDCARD_VIEW_KEY.to_string());
    }
    keys
}

/// The overlay plus the catalog state every peer can reach through it.
/// `views` mirrors the advertisements stored in the DHT; `synopses` caches
/// decoded `syn:` entries for cost estimation without traffic.
#[derive(Debug, Clone)]
pub struct Catalog {
    overlay: Overlay,
    synopsis_depth: Option<usize>,
    holders: BTreeMap<String, PeerId>,
    synopses: BTreeMap<String, Synopsis>,
    views: BTreeMap<String, ViewDef>,
}

impl Catalog {
    pub fn new(overlay: Overlay) -> Self {
        Catalog {
            overlay,
            synopsis_depth: None,
            holders: BTreeMap::new(),
            synopses: BTreeMap::new(),
            views: BTreeMap::new(),
        }
    }

    pub fn with_synopsis_depth(mut self, depth: Option<usize>) -> Self {
        self.synopsis_depth = depth;
        self
    }

    pub fn overlay(&self) -> &Overlay {
        &self.overlay
    }

    pub fn overlay_mut(&mut self) -> &mut Overlay {
        &mut self.overlay
    }

    pub fn publish_document(&mut self, p: &PeerId, d: &Document) -> Result<(), CatalogError> {
        if self.holders.contains_key(d.uri()) {
            return Err(CatalogError::AlreadyPublished(d.uri().to_string()));
        }
        for key in term_keys(TERM_PREFIX, &extract_terms(d)) {
            self.overlay
                .dht_put(p, &key, d.uri().as_bytes().to_vec(), Category::IndexMaintenance)?;
        }
        let syn = build_synopsis_truncated(d, self.synopsis_depth);
        self.overlay.dht_put(
            p,
            &format!("{SYNOPSIS_PREFIX}{}", d.uri()),
            syn.encode(),
            Category::IndexMaintenance,
        )?;
        self.synopses.insert(d.uri().to_string(), syn);
        self.holders.insert(d.uri().to_string(), p.clone());
        Ok(())
    }

    pub fn holder_of(&self, uri: &str) -> Option<&PeerId> {
        self.holders.get(uri)
    }

    pub fn documents(&self) -> impl Iterator<Item = &str> {
        self.holders.keys().map(String::as_str)
    }

    pub fn document_count(&self) -> usize {
        self.holders.len()
    }

    /// Intersection of the term postings, charged to `from`.
    pub fn lookup_documents(
        &mut self,
        from: &PeerId,
        terms: &BTreeSet<Term>,
        category: Category,
    ) -> Result<BTreeSet<String>, CatalogError> {
        let keys = term_keys(TERM_PREFIX, terms);
        if keys.is_empty() {
            return Err(CatalogError::EmptyTermSet);
        }
        let mut acc: Option<BTreeSet<String>> = None;
        for key in keys {
            let uris: BTreeSet<String> = self
                .overlay
                .dht_get(from, &key, category)?
                .into_iter()
                .map(|b| String::from_utf8_lossy(&b).into_owned())
                .collect();
            acc = Some(match acc {
                None => uris,
                Some(prev) => prev.intersection(&uris).cloned().collect(),
            });
        }
        Ok(acc.unwrap_or_default())
    }

    /// Same result as [`Catalog::lookup_documents`], without traffic. An
    /// empty term set yields every published document.
    pub fn peek_documents(&self, terms: &BTreeSet<Term>) -> BTreeSet<String> {
        let keys = term_keys(TERM_PREFIX, terms);
        if keys.is_empty() {
            return self.holders.keys().cloned().collect();
        }
        let mut acc: Option<BTreeSet<String>> = None;
        for key in keys {
            let uris: BTreeSet<String> = self
                .overlay
                .peek(&key)
                .map(|es| {
                    es.iter()
                        .map(|b| String::from_utf8_lossy(b).into_owned())
                        .collect()
                })
                .unwrap_or_default();
            acc = Some(match acc {
                None => uris,
                Some(prev) => prev.intersection(&uris).cloned().collect(),
            });
            if acc.as_ref().is_some_and(BTreeSet::is_empty) {
                break;
            }
        }
        acc.unwrap_or_default()
    }

    pub fn fetch_synopsis(&mut self, from: &PeerId, uri: &str) -> Result<Synopsis, CatalogError> {
        let entries =
            self.overlay
                .dht_get(from, &format!("{SYNOPSIS_PREFIX}{uri}"), Category::Adaptation)?;
        match entries.first() {
            Some(bytes) => Ok(Synopsis::decode(bytes)?),
            None => Err(CatalogError::UnknownDocument(uri.to_string())),
        }
    }

    pub fn peek_synopsis(&self, uri: &str) -> Option<&Synopsis> {
        self.synopses.get(uri)
    }

    pub fn advertise_view(&mut self, v: &ViewDef) -> Result<(), CatalogError> {
        if self.views.contains_key(&v.view_id) {
            return Err(CatalogError::DuplicateView(v.view_id.clone()));
        }
        let entry = v.encode();
        for key in view_keys(&v.pattern) {
            self.overlay
                .dht_put(&v.holder, &key, entry.clone(), Category::IndexMaintenance)?;
        }
        self.views.insert(v.view_id.clone(), v.clone());
        Ok(())
    }

    pub fn retract_view(&mut self, view_id: &str, pattern: &TreePattern) -> Result<(), CatalogError> {
        let Some(v) = self.views.remove(view_id) else {
            return Err(CatalogError::UnknownView(view_id.to_string()));
        };
        for key in view_keys(pattern) {
            self.overlay
                .dht_remove(&v.holder, &key, Category::IndexMaintenance, |e| {
                    ViewDef::decode(e).is_ok_and(|d| d.view_id == view_id)
                })?;
        }
        Ok(())
    }

    /// Advertised views that may embed into `q`, deduplicated by id and
    /// sorted by id. Charged to `from` under query execution.
    pub fn lookup_views(&mut self, from: &PeerId, q: &QuerySpec) -> Result<Vec<ViewDef>, CatalogError> {
        let mut found = BTreeMap::new();
        for key in Self::lookup_keys(q) {
            for e in self.overlay.dht_get(from, &key, Category::QueryExecution)? {
                let v = ViewDef::decode(&e)?;
                found.entry(v.view_id.clone()).or_insert(v);
            }
        }
        Ok(found.into_values().collect())
    }

    /// Traffic-free version of [`Catalog::lookup_views`].
    pub fn peek_views(&self, q: &QuerySpec) -> Vec<ViewDef> {
        let mut found = BTreeMap::new();
        for key in Self::lookup_keys(q) {
            for e in self.overlay.peek(&key).unwrap_or(&[]) {
                if let Ok(v) = ViewDef::decode(e) {
                    found.entry(v.view_id.clone()).or_insert(v);
                }
            }
        }
        found.into_values().collect()
    }

    fn lookup_keys(q: &QuerySpec) -> BTreeSet<String> {
        let mut keys = BTreeSet::new();
        for p in &q.patterns {
            keys.extend(term_keys(VIEW_PREFIX, &label_terms(p)));
        }
        keys.insert(WILDCARD_VIEW_KEY.to_string());
        keys
    }

    pub fn views(&self) -> impl Iterator<Item = &ViewDef> {
        self.views.values()
    }

    pub fn view(&self, id: &str) -> Option<&ViewDef> {
        self.views.get(id)
    }

    pub fn views_of<'a>(&'a self, holder: &'a PeerId) -> impl Iterator<Item = &'a ViewDef> + 'a {
        self.views.values().filter(move |v| v.holder == *holder)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay::OverlayConfig;
    use crate::pattern::{embed_pattern, parse_query};
    use crate::synopsis::{build_synopsis, estimate_contribution};
    use crate::xml::parse_document;

    const D1: &str = "<book><title>AI</title><author>Smith</author><author>Lee</author></book>";
    const D2: &str = "<book><title>DB</title><year>2010</year></book>";

    fn catalog() -> (Catalog, Vec<PeerId>) {
        let names: Vec<String> = (0..4).map(|i| format!("p{i}")).collect();
        let o = Overlay::new(&names, OverlayConfig::default()).unwrap();
        let peers = o.peers().to_vec();
        (Catalog::new(o), peers)
    }

    fn messages(c: &Catalog, cat: Category) -> u64 {
        c.overlay().metrics().global.get(cat).messages
    }

    fn pat(s: &str) -> TreePattern {
        TreePattern::parse(s).unwrap()
    }

    #[test]
    fn publish_counts_puts() {
        let (mut c, peers) = catalog();
        let hops = c.overlay().hops();
        let d1 = parse_document(D1.as_bytes(), "d1").unwrap();
        c.publish_document(&peers[0], &d1).unwrap();
        assert_eq!(messages(&c, Category::IndexMaintenance), 7 * hops);
        let a = parse_document(b"<a/>", "a").unwrap();
        c.publish_document(&peers[1], &a).unwrap();
        assert_eq!(messages(&c, Category::IndexMaintenance), 9 * hops);
        assert!(matches!(
            c.publish_document(&peers[1], &d1),
            Err(CatalogError::AlreadyPublished(_))
        ));
    }

    #[test]
    fn document_lookup() {
        let (mut c, peers) = catalog();
        c.publish_document(&peers[0], &parse_document(D1.as_bytes(), "d1").unwrap())
            .unwrap();
        c.publish_document(&peers[1], &parse_document(D2.as_bytes(), "d2").unwrap())
            .unwrap();
        let p = &peers[2];
        let q = |c: &mut Catalog, ts: &[Term]| {
            c.lookup_documents(p, &ts.iter().cloned().collect(), Category::QueryExecution)
                .unwrap()
        };
        assert_eq!(
            q(&mut c, &[Term::label("book"), Term::word("smith")]),
            ["d1".to_string()].into_iter().collect()
        );
        assert_eq!(q(&mut c, &[Term::label("book")]).len(), 2);
        assert!(q(&mut c, &[Term::word("zzz")]).is_empty());
        assert!(matches!(
            c.lookup_documents(p, &BTreeSet::new(), Category::QueryExecution),
            Err(CatalogError::EmptyTermSet)
        ));
        assert_eq!(c.peek_documents(&BTreeSet::new()).len(), 2);
    }

    #[test]
    fn synopsis_round_trip_through_dht() {
        let (mut c, peers) = catalog();
        let d1 = parse_document(D1.as_bytes(), "d1").unwrap();
        c.publish_document(&peers[0], &d1).unwrap();
        let fetched = c.fetch_synopsis(&peers[3], "d1").unwrap();
        let local = build_synopsis(&d1);
        assert_eq!(fetched, local);
        let v = pat("(//author {val})");
        assert_eq!(estimate_contribution(&fetched, &v), estimate_contribution(&local, &v));
        assert!(messages(&c, Category::Adaptation) > 0);
        assert!(matches!(
            c.fetch_synopsis(&peers[3], "nope"),
            Err(CatalogError::UnknownDocument(_))
        ));
    }

    #[test]
    fn advertise_lookup_retract() {
        let (mut c, peers) = catalog();
        let v = ViewDef::new(pat("(//author {val})"), peers[0].clone(), 8, 0);
        c.advertise_view(&v).unwrap();
        assert_eq!(c.overlay().peek("view:author").unwrap().len(), 1);
        assert!(matches!(c.advertise_view(&v), Err(CatalogError::DuplicateView(_))));

        let q = parse_query("(//book (/author {val}))").unwrap();
        let found = c.lookup_views(&peers[1], &q).unwrap();
        assert_eq!(found, vec![v.clone()]);
        let q2 = parse_query("(//year {val})").unwrap();
        assert!(c.lookup_views(&peers[1], &q2).unwrap().is_empty());

        let w = ViewDef::new(pat("(//* {cont})"), peers[1].clone(), 10, 0);
        c.advertise_view(&w).unwrap();
        assert_eq!(c.overlay().peek(WILDCARD_VIEW_KEY).unwrap().len(), 1);
        assert_eq!(c.lookup_views(&peers[1], &q2).unwrap(), vec![w.clone()]);

        let t1 = ViewDef::new(pat("(//title {val})"), peers[0].clone(), 4, 0);
        let t2 = ViewDef::new(pat("(//title {id})"), peers[0].clone(), 24, 0);
        c.advertise_view(&t1).unwrap();
        c.advertise_view(&t2).unwrap();
        let q3 = parse_query("(//title {val})").unwrap();
        assert_eq!(c.lookup_views(&peers[2], &q3).unwrap().len(), 3);

        c.retract_view(&t1.view_id, &t1.pattern).unwrap();
        let left: Vec<_> = c.lookup_views(&peers[2], &q3).unwrap();
        assert!(left.iter().all(|x| x.view_id != t1.view_id));
        assert!(left.iter().any(|x| x.view_id == t2.view_id));
        assert!(matches!(
            c.retract_view("nope", &t1.pattern),
            Err(CatalogError::UnknownView(_))
        ));
        c.retract_view(&v.view_id, &v.pattern).unwrap();
        for key in c.overlay().keys() {
            for e in c.overlay().peek(key).unwrap() {
                if key.starts_with(VIEW_PREFIX) {
                    assert_ne!(ViewDef::decode(e).unwrap().view_id, v.view_id);
                }
            }
        }
    }

    #[test]
    fn view_lookup_is_complete() {
        use rand::{Rng, SeedableRng};
        let labels = ["a", "b", "c", "d"];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let gen = |rng: &mut rand_chacha::ChaCha8Rng| -> TreePattern {
            let mut text = String::new();
            let n = rng.random_range(1..4);
            for i in 0..n {
                let axis = if rng.random_bool(0.5) { "//" } else { "/" };
                let label = if rng.random_bool(0.2) { "*" } else { labels[rng.random_range(0..4)] };
                text.push_str(&format!("({}{}", if i == 0 { "//" } else { axis }, label));
            }
            text.push_str(" {id}");
            text.push_str(&")".repeat(n));
            pat(&text)
        };
        for round in 0..40 {
            let (mut c, peers) = catalog();
            let views: Vec<ViewDef> = (0..5)
                .map(|i| ViewDef::new(gen(&mut rng), peers[i % 4].clone(), 1, round))
                .filter(|v| c.advertise_view(v).is_ok())
                .collect();
            for _ in 0..5 {
                let q = QuerySpec::single(gen(&mut rng)).unwrap();
                let found: BTreeSet<String> = c
                    .lookup_views(&peers[0], &q)
                    .unwrap()
                    .into_iter()
                    .map(|v| v.view_id)
                    .collect();
                for v in &views {
                    if !embed_pattern(&v.pattern, &q.patterns[0]).is_empty() {
                        assert!(found.contains(&v.view_id), "{} into {}", v.pattern, q);
                    }
                }
            }
        }
    }
}
