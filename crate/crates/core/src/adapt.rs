//! Per-peer workload statistics and the periodic view selection round.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError, ViewDef};
use crate::overlay::{Category, PeerId};
use crate::pattern::{
    locator_terms, pattern_rows, AnnSet, Axis, Label, PatternTree, QuerySpec, TreePattern,
};
use crate::rewriter::{Planner, RewriteConfig, Store};
use crate::synopsis::{estimate_contribution, Synopsis};
use crate::table::{Column, Table, Value};

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("document {0} is published but not stored")]
    MissingDocument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize, Serialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub theta: f64,
    pub max_candidates: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            theta: 1.2,
            max_candidates: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatEntry {
    pub query: QuerySpec,
    pub asker: PeerId,
    pub count: u64,
}

/// Query frequencies of one peer in the current window, keyed by query
/// text and asking peer (costs depend on where the query is asked).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryStats {
    entries: BTreeMap<(String, String), StatEntry>,
}

impl QueryStats {
    pub fn record(&mut self, q: &QuerySpec, asker: &PeerId) {
        self.entries
            .entry((q.canonical(), asker.name.clone()))
            .or_insert_with(|| StatEntry {
                query: q.clone(),
                asker: asker.clone(),
                count: 0,
            })
            .count += 1;
    }

    pub fn reset(&mut self) {
        self.entries.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &StatEntry> {
        self.entries.values()
    }

    /// #q per query text, summed over askers.
    pub fn counts(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for e in self.entries.values() {
            *out.entry(e.query.canonical()).or_default() += e.count;
        }
        out
    }

    pub fn count(&self, q: &QuerySpec) -> u64 {
        self.counts().get(&q.canonical()).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Provenance {
    WorkloadQuery,
    Rollup,
    Lgg,
    Existing,
}

/// A candidate pattern before scoring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seed {
    pub pattern: TreePattern,
    pub provenance: Provenance,
    /// Σ #q of the workload queries that produced it.
    pub support: u64,
    /// Lattice steps from the closest workload pattern.
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Edit {
    Drop,
    Relax,
    Widen,
    Collapse,
}

fn edit(p: &TreePattern, target: usize, op: Edit) -> TreePattern {
    fn build(p: &TreePattern, i: usize, target: usize, op: Edit) -> Option<PatternTree> {
        if i == target && op == Edit::Drop {
            return None;
        }
        let n = p.node(i);
        let mut t = PatternTree::new(n.axis, n.label.clone());
        t.anns = n.anns;
        t.predicate = n.predicate.clone();
        if i == target {
            match op {
                Edit::Relax => t.predicate = None,
                Edit::Widen => t.axis = Axis::Descendant,
                Edit::Collapse => {
                    t.anns = AnnSet::ID_CONT;
                    return Some(t);
                }
                Edit::Drop => unreachable!(),
            }
        }
        t.children = n
            .children
            .iter()
            .filter_map(|&c| build(p, c, target, op))
            .collect();
        Some(t)
    }
    TreePattern::from_tree(&build(p, 0, target, op).expect("root is never dropped"))
}

/// One-step roll-ups: drop an unannotated leaf, delete a predicate, turn a
/// child axis into descendant, or collapse a subtree holding annotations
/// into `{id,cont}` at its root.
pub fn rollups(p: &TreePattern) -> Vec<TreePattern> {
    let mut out = Vec::new();
    for i in 0..p.len() {
        let n = p.node(i);
        if i > 0 && n.children.is_empty() && n.anns.is_empty() {
            out.push(edit(p, i, Edit::Drop));
        }
        if n.predicate.is_some() {
            out.push(edit(p, i, Edit::Relax));
        }
        if n.axis == Axis::Child {
            out.push(edit(p, i, Edit::Widen));
        }
        if p.descendants(i).any(|d| !p.node(d).anns.is_empty()) {
            out.push(edit(p, i, Edit::Collapse));
        }
    }
    out
}

/// Least general generalization: roots merge when their labels agree or one
/// is a wildcard; children pair up greedily by equal label; a node that
/// loses children on either side keeps `{id,cont}`.
pub fn lgg(p1: &TreePattern, p2: &TreePattern) -> Option<TreePattern> {
    fn merge(a: &PatternTree, b: &PatternTree, label: Label) -> PatternTree {
        let axis = if a.axis == Axis::Child && b.axis == Axis::Child {
            Axis::Child
        } else {
            Axis::Descendant
        };
        let mut t = PatternTree::new(axis, label);
        if a.predicate == b.predicate {
            t.predicate = a.predicate.clone();
        }
        let mut used = vec![false; b.children.len()];
        let mut dropped = false;
        for ca in &a.children {
            match (0..b.children.len()).find(|&j| !used[j] && b.children[j].label == ca.label) {
                Some(j) => {
                    used[j] = true;
                    t.children.push(merge(ca, &b.children[j], ca.label.clone()));
                }
                None => dropped = true,
            }
        }
        dropped |= used.iter().any(|u| !u);
        t.anns = if dropped {
            AnnSet::ID_CONT
        } else {
            a.anns.union(b.anns)
        };
        t
    }
    let (a, b) = (p1.without_vars().to_tree(), p2.without_vars().to_tree());
    let label = match (&a.label, &b.label) {
        (x, y) if x == y => x.clone(),
        (Label::Wildcard, _) | (_, Label::Wildcard) => Label::Wildcard,
        _ => return None,
    };
    let p = TreePattern::from_tree(&merge(&a, &b, label));
    p.has_annotation().then_some(p)
}

const LATTICE_LIMIT: usize = 512;

/// Candidate patterns for a workload of (query, #q): every pattern with
/// exactly its required annotations, its roll-up closure and pairwise
/// LGGs; deduplicated by text and capped at `max` by support.
pub fn enumerate_candidates(workload: &[(QuerySpec, u64)], max: usize) -> Vec<Seed> {
    struct Acc {
        pattern: TreePattern,
        provenance: Provenance,
        steps: usize,
        queries: BTreeSet<usize>,
    }
    let mut acc: BTreeMap<String, Acc> = BTreeMap::new();
    let mut note = |p: TreePattern, prov: Provenance, steps: usize, qs: &[usize]| {
        let e = acc.entry(p.canonical()).or_insert_with(|| Acc {
            pattern: p,
            provenance: prov,
            steps,
            queries: BTreeSet::new(),
        });
        if (prov, steps) < (e.provenance, e.steps) {
            e.provenance = prov;
            e.steps = steps;
        }
        e.queries.extend(qs.iter().copied());
    };
    let mut bases: Vec<(TreePattern, usize)> = Vec::new();
    for (qi, (q, _)) in workload.iter().enumerate() {
        for pi in 0..q.patterns.len() {
            let l0 = q.required_pattern(pi);
            if !l0.has_annotation() {
                continue;
            }
            bases.push((l0.clone(), qi));
            let mut seen = BTreeSet::new();
            let mut queue = VecDeque::from([(l0, 0usize)]);
            while let Some((p, steps)) = queue.pop_front() {
                if !seen.insert(p.canonical()) || seen.len() > LATTICE_LIMIT {
                    continue;
                }
                for r in rollups(&p) {
                    queue.push_back((r, steps + 1));
                }
                let prov = if steps == 0 {
                    Provenance::WorkloadQuery
                } else {
                    Provenance::Rollup
                };
                note(p, prov, steps, &[qi]);
            }
        }
    }
    for i in 0..bases.len() {
        for j in i + 1..bases.len() {
            if let Some(g) = lgg(&bases[i].0, &bases[j].0) {
                note(g, Provenance::Lgg, 1, &[bases[i].1, bases[j].1]);
            }
        }
    }
    let mut seeds: Vec<Seed> = acc
        .into_values()
        .map(|a| Seed {
            support: a.queries.iter().map(|&qi| workload[qi].1).sum(),
            pattern: a.pattern,
            provenance: a.provenance,
            steps: a.steps,
        })
        .collect();
    seeds.sort_by(|a, b| {
        b.support
            .cmp(&a.support)
            .then(a.provenance.cmp(&b.provenance))
            .then(a.steps.cmp(&b.steps))
            .then_with(|| a.pattern.canonical().cmp(&b.pattern.canonical()))
    });
    seeds.truncate(max);
    seeds
}

/// Synopses fetched during one round, so each is transferred once.
#[derive(Debug, Default)]
pub struct SynopsisCache {
    fetched: BTreeMap<String, Synopsis>,
}

/// `size(v)_ε`: the sum of the estimated contributions of every document
/// that may hold matches, synopses fetched through the DHT.
pub fn estimate_view_size(catalog: &mut Catalog, from: &PeerId, v: &TreePattern) -> Result<u64, CatalogError> {
    estimate_view_size_cached(catalog, from, v, &mut SynopsisCache::default())
}

pub fn estimate_view_size_cached(
    catalog: &mut Catalog,
    from: &PeerId,
    v: &TreePattern,
    cache: &mut SynopsisCache,
) -> Result<u64, CatalogError> {
    let uris = locate(catalog, from, v, Category::Adaptation)?;
    let mut total = 0;
    for uri in uris {
        if !cache.fetched.contains_key(&uri) {
            let s = catalog.fetch_synopsis(from, &uri)?;
            cache.fetched.insert(uri.clone(), s);
        }
        total += estimate_contribution(&cache.fetched[&uri], v);
    }
    Ok(total)
}

fn locate(catalog: &mut Catalog, from: &PeerId, v: &TreePattern, cat: Category) -> Result<BTreeSet<String>, CatalogError> {
    let terms = locator_terms(v);
    if terms.is_empty() {
        Ok(catalog.documents().map(str::to_string).collect())
    } else {
        catalog.lookup_documents(from, &terms, cat)
    }
}

/// `b(v, Q, V) = Σ #q × (cost(q, V) − cost(q, V ∪ {v}))`, costs taken at
/// each entry's asking peer.
pub fn benefit(planner: &Planner<'_>, workload: &[StatEntry], views: &[ViewDef], v: &ViewDef) -> u64 {
    workload
        .iter()
        .map(|e| {
            let base = planner.baseline(&e.query, views, &e.asker);
            e.count * (base.cost - planner.cost_with(&base, v))
        })
        .sum()
}

/// A scored candidate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    #[serde(serialize_with = "ser_pattern")]
    pub pattern: TreePattern,
    pub estimated_bytes: u64,
    pub benefit: u64,
    pub ratio: f64,
    pub provenance: Provenance,
    /// Set for a view the peer already holds.
    pub view_id: Option<String>,
}

fn ser_pattern<S: serde::Serializer>(p: &TreePattern, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&p.canonical())
}

impl Candidate {
    pub fn new(pattern: TreePattern, estimated_bytes: u64, benefit: u64, provenance: Provenance) -> Self {
        Candidate {
            ratio: ratio(benefit, estimated_bytes),
            pattern,
            estimated_bytes,
            benefit,
            provenance,
            view_id: None,
        }
    }
}

pub fn ratio(benefit: u64, size: u64) -> f64 {
    benefit as f64 / size.max(1) as f64
}

fn greedy_order(cands: &[Candidate]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&cands[a], &cands[b]);
        y.ratio
            .total_cmp(&x.ratio)
            .then(x.estimated_bytes.cmp(&y.estimated_bytes))
            .then_with(|| x.pattern.canonical().cmp(&y.pattern.canonical()))
    });
    order
}

/// Knapsack by ratio: candidates in descending ratio (smaller size, then
/// pattern text on ties) are admitted whenever they still fit; positive
/// benefit is required. Returns admitted indices in admission order.
pub fn greedy_admit(cands: &[Candidate], capacity: u64) -> Vec<usize> {
    let mut used = 0u64;
    let mut out = Vec::new();
    for i in greedy_order(cands) {
        let c = &cands[i];
        if c.benefit > 0 && used + c.estimated_bytes <= capacity {
            used += c.estimated_bytes;
            out.push(i);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewSummary {
    pub view_id: String,
    pub pattern: String,
    pub estimated_bytes: u64,
    pub actual_bytes: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    pub peer: String,
    pub round: u64,
    pub adds: Vec<ViewSummary>,
    pub drops: Vec<ViewSummary>,
    /// Admitted candidates not kept: oversize after materialization,
    /// evicted on overflow, or clashing ids.
    pub discarded: Vec<ViewSummary>,
    pub scores: Vec<Candidate>,
    pub used_bytes: u64,
    pub capacity_bytes: u64,
}

impl RoundReport {
    pub fn is_quiet(&self) -> bool {
        self.adds.is_empty() && self.drops.is_empty()
    }
}

/// Everything one adaptation round reads or changes.
pub struct RoundInput<'a> {
    pub peer: &'a PeerId,
    pub stats: &'a QueryStats,
    pub capacity: u64,
    pub round: u64,
    pub adapt: &'a AdaptConfig,
    pub rewrite: &'a RewriteConfig,
}

/// One selection round at a peer: score the lattice of workload candidates
/// and the views already held, admit by benefit-to-size ratio within the
/// budget, drop only under hysteresis, then materialize and advertise.
pub fn adapt_round(input: RoundInput<'_>, catalog: &mut Catalog, store: &mut Store) -> Result<RoundReport, AdaptError> {
    let RoundInput {
        peer,
        stats,
        capacity,
        round,
        adapt,
        rewrite,
    } = input;
    let entries: Vec<StatEntry> = stats.entries().cloned().collect();
    let mut workload: BTreeMap<String, (QuerySpec, u64)> = BTreeMap::new();
    for e in &entries {
        workload
            .entry(e.query.canonical())
            .or_insert_with(|| (e.query.clone(), 0))
            .1 += e.count;
    }
    let workload: Vec<(QuerySpec, u64)> = workload.into_values().collect();
    let own: Vec<ViewDef> = catalog.views_of(peer).cloned().collect();
    let others: Vec<ViewDef> = catalog.views().filter(|v| v.holder != *peer).cloned().collect();
    let own_patterns: BTreeSet<String> = own.iter().map(|v| v.pattern.canonical()).collect();

    let seeds: Vec<Seed> = if entries.is_empty() {
        Vec::new()
    } else {
        enumerate_candidates(&workload, adapt.max_candidates)
            .into_iter()
            .filter(|s| !own_patterns.contains(&s.pattern.canonical()))
            .collect()
    };
    let mut cache = SynopsisCache::default();
    let mut sized = Vec::with_capacity(seeds.len());
    for s in seeds {
        let size = estimate_view_size_cached(catalog, peer, &s.pattern, &mut cache)?;
        sized.push((s, size));
    }

    let planner = Planner::new(catalog, *rewrite);
    let baselines: Vec<_> = entries
        .iter()
        .map(|e| planner.baseline(&e.query, &others, &e.asker))
        .collect();
    let score = |v: &ViewDef| -> u64 {
        entries
            .iter()
            .zip(&baselines)
            .map(|(e, b)| e.count * (b.cost - planner.cost_with(b, v)))
            .sum()
    };
    let mut cands: Vec<Candidate> = Vec::new();
    let mut defs: Vec<ViewDef> = Vec::new();
    for v in &own {
        let size = v.actual_bytes.unwrap_or(v.estimated_bytes);
        let b = if entries.is_empty() { 0 } else { score(v) };
        let mut c = Candidate::new(v.pattern.clone(), size, b, Provenance::Existing);
        c.view_id = Some(v.view_id.clone());
        cands.push(c);
        defs.push(v.clone());
    }
    for (s, size) in sized {
        let v = ViewDef::new(s.pattern.clone(), peer.clone(), size, round);
        let b = score(&v);
        cands.push(Candidate::new(s.pattern, size, b, s.provenance));
        defs.push(v);
    }
    drop(planner);

    let admitted = greedy_admit(&cands, capacity);
    let admitted_set: BTreeSet<usize> = admitted.iter().copied().collect();
    let existing = |i: usize| cands[i].view_id.is_some();
    // existing views outside the admitted set survive unless a better new
    // candidate needs their space (hysteresis θ)
    let mut kept: Vec<usize> = (0..cands.len())
        .filter(|&i| existing(i) && !admitted_set.contains(&i))
        .collect();
    kept.sort_by(|&a, &b| {
        cands[a]
            .ratio
            .total_cmp(&cands[b].ratio)
            .then_with(|| cands[a].pattern.canonical().cmp(&cands[b].pattern.canonical()))
    });
    let mut used: u64 = admitted
        .iter()
        .filter(|&&i| existing(i))
        .map(|&i| cands[i].estimated_bytes)
        .sum::<u64>()
        + kept.iter().map(|&i| cands[i].estimated_bytes).sum::<u64>();
    let mut accepted = Vec::new();
    let mut dropped = Vec::new();
    for &n in admitted.iter().filter(|&&i| !existing(i)) {
        let need = cands[n].estimated_bytes;
        if used + need <= capacity {
            used += need;
            accepted.push(n);
            continue;
        }
        let mut freed = 0;
        let mut victims = Vec::new();
        for &e in &kept {
            if used + need - freed <= capacity {
                break;
            }
            if cands[n].ratio >= adapt.theta * cands[e].ratio {
                freed += cands[e].estimated_bytes;
                victims.push(e);
            } else {
                break;
            }
        }
        if used + need - freed <= capacity {
            used = used + need - freed;
            kept.retain(|e| !victims.contains(e));
            dropped.extend(victims);
            accepted.push(n);
        }
    }

    let summary = |i: usize, v: &ViewDef| ViewSummary {
        view_id: v.view_id.clone(),
        pattern: v.pattern.canonical(),
        estimated_bytes: v.estimated_bytes,
        actual_bytes: v.actual_bytes.unwrap_or(0),
        ratio: cands[i].ratio,
    };
    let mut report = RoundReport {
        peer: peer.name.clone(),
        round,
        adds: Vec::new(),
        drops: Vec::new(),
        discarded: Vec::new(),
        scores: Vec::new(),
        used_bytes: 0,
        capacity_bytes: capacity,
    };
    dropped.sort();
    for &i in &dropped {
        let v = &defs[i];
        catalog.retract_view(&v.view_id, &v.pattern)?;
        store.extents.remove(&v.view_id);
        report.drops.push(summary(i, v));
    }

    // held: (candidate index, actual bytes) of the views the peer keeps
    let mut held: Vec<(usize, u64)> = (0..cands.len())
        .filter(|&i| existing(i) && !dropped.contains(&i))
        .map(|i| (i, defs[i].actual_bytes.unwrap_or(defs[i].estimated_bytes)))
        .collect();
    let mut fresh: BTreeMap<usize, Table> = BTreeMap::new();
    for &n in &accepted {
        let extent = materialize(catalog, store, peer, &defs[n].pattern, rewrite.query_bytes)?;
        let actual = extent.payload_bytes();
        defs[n].actual_bytes = Some(actual);
        if actual > capacity || catalog.view(&defs[n].view_id).is_some() {
            report.discarded.push(summary(n, &defs[n]));
            continue;
        }
        held.push((n, actual));
        fresh.insert(n, extent);
        // evict lowest ratio first until the budget holds again
        while held.iter().map(|h| h.1).sum::<u64>() > capacity {
            let (pos, _) = held
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    cands[a.0]
                        .ratio
                        .total_cmp(&cands[b.0].ratio)
                        .then_with(|| defs[a.0].view_id.cmp(&defs[b.0].view_id))
                })
                .expect("over budget implies a held view");
            let (victim, _) = held.remove(pos);
            if fresh.remove(&victim).is_some() {
                report.discarded.push(summary(victim, &defs[victim]));
            } else {
                let v = &defs[victim];
                catalog.retract_view(&v.view_id, &v.pattern)?;
                store.extents.remove(&v.view_id);
                report.drops.push(summary(victim, v));
            }
        }
    }
    for (n, extent) in fresh {
        catalog.advertise_view(&defs[n])?;
        store.extents.insert(defs[n].view_id.clone(), extent);
        report.adds.push(summary(n, &defs[n]));
    }
    report.used_bytes = held.iter().map(|h| h.1).sum();
    let order = greedy_order(&cands);
    let admitted_final: BTreeSet<usize> = held.iter().map(|h| h.0).collect();
    report.scores = order
        .into_iter()
        .map(|i| {
            let mut c = cands[i].clone();
            if admitted_final.contains(&i) {
                c.view_id = Some(defs[i].view_id.clone());
            }
            c
        })
        .collect();
    Ok(report)
}

/// Evaluates `v` at the holders of every document that may match and ships
/// the results to `peer`, charging view materialization.
pub fn materialize(
    catalog: &mut Catalog,
    store: &Store,
    peer: &PeerId,
    v: &TreePattern,
    query_bytes: u64,
) -> Result<Table, AdaptError> {
    let cols = v.annotated_columns();
    let mut extent = Table::empty(cols.iter().map(|&(n, a)| Column::new(0, n, a)).collect());
    for uri in locate(catalog, peer, v, Category::ViewMaterialization)? {
        let d = store
            .documents
            .get(&uri)
            .ok_or_else(|| AdaptError::MissingDocument(uri.clone()))?;
        let holder = catalog
            .holder_of(&uri)
            .cloned()
            .ok_or_else(|| AdaptError::MissingDocument(uri.clone()))?;
        let rows = pattern_rows(d, v, &cols, None);
        let bytes: u64 = rows.iter().flatten().map(Value::payload_bytes).sum();
        let o = catalog.overlay_mut();
        o.ship(peer, &holder, query_bytes, Category::ViewMaterialization);
        o.ship(&holder, peer, bytes, Category::ViewMaterialization);
        extent.rows.extend(rows);
    }
    Ok(extent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay::{Overlay, OverlayConfig};
    use crate::pattern::tests::{D1, D2};
    use crate::xml::parse_document;
    use std::sync::Arc;

    fn pat(s: &str) -> TreePattern {
        TreePattern::parse(s).unwrap()
    }

    fn q(s: &str) -> QuerySpec {
        QuerySpec::parse(s).unwrap()
    }

    fn texts(seeds: &[Seed]) -> BTreeSet<String> {
        seeds.iter().map(|s| s.pattern.canonical()).collect()
    }

    #[test]
    fn lattice_examples() {
        let c = enumerate_candidates(&[(q("(//book (/title {val}))"), 1)], 64);
        let t = texts(&c);
        assert!(t.contains("(//book (/title {val}))"));
        assert!(t.contains("(//book {id,cont})"));
        assert_eq!(c[0].provenance, Provenance::WorkloadQuery);
        assert_eq!(t.len(), c.len());

        let c = enumerate_candidates(&[(q("(//author [= \"Smith\"] {id})"), 1)], 64);
        assert!(texts(&c).contains("(//author {id})"));
    }

    #[test]
    fn candidate_cap_keeps_supported_patterns() {
        let w = vec![
            (q("(//a (/b (/c {val})))"), 1),
            (q("(//x (/y {val}))"), 10),
        ];
        let c = enumerate_candidates(&w, 3);
        assert_eq!(c.len(), 3);
        assert!(c.iter().all(|s| s.support == 10));
        assert_eq!(c[0].pattern.canonical(), "(//x (/y {val}))");
    }

    #[test]
    fn lgg_examples() {
        assert_eq!(
            lgg(&pat("(//book (/title {val}))"), &pat("(//book (/author {val}))"))
                .unwrap()
                .canonical(),
            "(//book {id,cont})"
        );
        let p = pat("(//book {id} (/title {val}) (//author [~ lee] {cont}))");
        assert_eq!(lgg(&p, &p).unwrap(), p);
        assert!(lgg(&pat("(//book {val})"), &pat("(//year {val})")).is_none());
        assert_eq!(
            lgg(&pat("(/* {val})"), &pat("(//year {id})")).unwrap().canonical(),
            "(//* {id,val})"
        );
    }

    #[test]
    fn greedy_ratio_order() {
        let c = |s, b| Candidate::new(pat("(//a {id})"), s, b, Provenance::Rollup);
        let cands = vec![c(60, 120), c(50, 75), c(40, 70)];
        let mut got = greedy_admit(&cands, 100);
        got.sort();
        assert_eq!(got, vec![0, 2]);
        assert!(greedy_admit(&cands, 0).is_empty());
    }

    fn world() -> (Catalog, Store, Vec<PeerId>) {
        let names: Vec<String> = (0..3).map(|i| format!("p{i}")).collect();
        let overlay = Overlay::new(&names, OverlayConfig::default()).unwrap();
        let peers = overlay.peers().to_vec();
        let mut catalog = Catalog::new(overlay);
        let mut store = Store::default();
        for (i, (uri, text)) in [("d1", D1), ("d2", D2)].into_iter().enumerate() {
            let d = parse_document(text.as_bytes(), uri).unwrap();
            catalog.publish_document(&peers[i + 1], &d).unwrap();
            store.documents.insert(uri.into(), Arc::new(d));
        }
        (catalog, store, peers)
    }

    #[test]
    fn view_size_estimates() {
        let (mut catalog, _, peers) = world();
        assert_eq!(estimate_view_size(&mut catalog, &peers[0], &pat("(//author {val})")).unwrap(), 8);
        assert_eq!(estimate_view_size(&mut catalog, &peers[0], &pat("(//zzz {val})")).unwrap(), 0);
        assert!(catalog.overlay().metrics().global.get(Category::Adaptation).bytes > 0);
    }

    #[test]
    fn benefit_of_exact_local_view() {
        let (catalog, _, peers) = world();
        let planner = Planner::new(&catalog, RewriteConfig::default());
        let query = q("(//title {val})");
        let entries = vec![StatEntry {
            query: query.clone(),
            asker: peers[0].clone(),
            count: 5,
        }];
        let v = ViewDef::new(pat("(//title {val})"), peers[0].clone(), 4, 0);
        let fallback = planner.best_cost(&query, &[], &peers[0]);
        let local = planner.model().lookup_bytes;
        assert_eq!(benefit(&planner, &entries, &[], &v), 5 * (fallback - local));
        assert_eq!(benefit(&planner, &[], &[], &v), 0);
        let useless = ViewDef::new(pat("(//year {val})"), peers[0].clone(), 4, 0);
        assert_eq!(benefit(&planner, &entries, &[], &useless), 0);
    }

    fn input<'a>(peer: &'a PeerId, stats: &'a QueryStats, capacity: u64, round: u64, a: &'a AdaptConfig, r: &'a RewriteConfig) -> RoundInput<'a> {
        RoundInput {
            peer,
            stats,
            capacity,
            round,
            adapt: a,
            rewrite: r,
        }
    }

    #[test]
    fn round_examples() {
        let (a, r) = (AdaptConfig::default(), RewriteConfig::default());
        let (mut catalog, mut store, peers) = world();
        let empty = QueryStats::default();
        let rep = adapt_round(input(&peers[0], &empty, 1000, 1, &a, &r), &mut catalog, &mut store).unwrap();
        assert!(rep.is_quiet());

        let query = q("(//title {val})");
        let mut stats = QueryStats::default();
        for _ in 0..5 {
            stats.record(&query, &peers[0]);
        }
        let rep = adapt_round(input(&peers[0], &stats, 0, 1, &a, &r), &mut catalog, &mut store).unwrap();
        assert!(rep.adds.is_empty());

        let planner_cost = |c: &Catalog| {
            let views: Vec<ViewDef> = c.views().cloned().collect();
            Planner::new(c, r).best_cost(&query, &views, &peers[0])
        };
        let before = planner_cost(&catalog);
        let rep = adapt_round(input(&peers[0], &stats, 1000, 1, &a, &r), &mut catalog, &mut store).unwrap();
        assert_eq!(rep.adds[0].pattern, "(//title {val})");
        assert!(rep.used_bytes <= 1000);
        let after = planner_cost(&catalog);
        assert!(after < before);
        assert_eq!(after, Planner::new(&catalog, r).model().lookup_bytes);

        // the same workload again: nothing changes
        let rep = adapt_round(input(&peers[0], &stats, 1000, 2, &a, &r), &mut catalog, &mut store).unwrap();
        assert!(rep.is_quiet(), "{rep:?}");
    }
}
