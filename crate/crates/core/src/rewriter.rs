//! View-based rewriting, cost estimation and plan execution.
//!
//! A query is answered pattern by pattern. Each pattern is either shipped to
//! the holders of candidate documents (`DocShip`) or rebuilt from view
//! extents. A view contributes through an injective embedding of its pattern
//! into the query pattern (a *use*); uses are stitched together by id
//! equality (`IdJoin`) or id containment (`StructJoin`), stored `cont`
//! fragments are re-parsed to reach nodes no view covers (`Navigate`), and
//! predicates missing from the views are checked on stored values (`Select`).
//!
//! The rules enforced while enumerating guarantee that every combination of
//! view rows surviving the plan comes from one embedding of the query
//! pattern in one document:
//!
//! * a query node covered by two or more uses is id-stored in all of them;
//! * nodes strictly below a navigation root are covered by no use, all
//!   other nodes by at least one;
//! * every query edge is a direct edge with the same axis inside one use, a
//!   descendant edge between two id-stored nodes, or lies inside a
//!   navigated fragment;
//! * labels, predicates and the document-root constraint of the query are
//!   each enforced by some use, a navigation root or a selection.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde_json::json;
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError, ViewDef};
use crate::overlay::{Category, PeerId};
use crate::pattern::{
    embed_pattern, locator_terms, pattern_rows, Axis, Label, Predicate, QuerySpec, TreePattern,
};
use crate::synopsis::estimate_contribution;
use crate::table::{Ann, Column, Table, Tuple, Value};
use crate::xml::{id_contains, parse_document, Document, NodeId, Term, XmlError};
use crate::pattern::AnnSet;

#[derive(Debug, Error)]
pub enum RewriteError {
    #[error("plan references view {0}, which is not materialized")]
    DanglingView(String),
    #[error("plan references document {0}, which is not stored")]
    UnknownDocument(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("stored fragment does not parse: {0}")]
    Fragment(#[from] XmlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RewriteConfig {
    pub max_views: usize,
    pub query_bytes: u64,
}

impl Default for RewriteConfig {
    fn default() -> Self {
        RewriteConfig {
            max_views: 2,
            query_bytes: 256,
        }
    }
}

/// Constants of the transfer cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostModel {
    pub msg_header: u64,
    pub lookup_bytes: u64,
    pub query_bytes: u64,
}

impl CostModel {
    pub fn new(catalog: &Catalog, cfg: &RewriteConfig) -> Self {
        CostModel {
            msg_header: catalog.overlay().config().msg_header_bytes,
            lookup_bytes: catalog.overlay().lookup_bytes(),
            query_bytes: cfg.query_bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectPred {
    /// Value of `node` equals `text`, read from its val or cont column.
    Equals { node: Column, text: String },
    /// Some text run of the stored cont of `node` contains `word`.
    ContainsWord { node: Column, word: String },
    /// `node` is the document root element.
    DocRoot { node: Column },
    /// Id column `ancestor` strictly contains id column `descendant`.
    Contains { ancestor: Column, descendant: Column },
    /// Two val columns hold the same text.
    SameValue { left: Column, right: Column },
}

impl SelectPred {
    fn to_json(&self) -> serde_json::Value {
        match self {
            SelectPred::Equals { node, text } => {
                json!({"kind": "equals", "column": node.to_string(), "text": text})
            }
            SelectPred::ContainsWord { node, word } => {
                json!({"kind": "containsWord", "column": node.to_string(), "word": word})
            }
            SelectPred::DocRoot { node } => json!({"kind": "docRoot", "column": node.to_string()}),
            SelectPred::Contains {
                ancestor,
                descendant,
            } => json!({"kind": "contains", "ancestor": ancestor.to_string(), "descendant": descendant.to_string()}),
            SelectPred::SameValue { left, right } => {
                json!({"kind": "sameValue", "left": left.to_string(), "right": right.to_string()})
            }
        }
    }
}

/// Per-document shipping estimate inside a `DocShip` leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShipTarget {
    pub uri: String,
    pub estimated_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Plan {
    ViewScan {
        view_id: String,
        holder: PeerId,
        estimated_bytes: u64,
        /// (view extent column, query column)
        columns: Vec<(Column, Column)>,
    },
    DocShip {
        pattern_index: usize,
        pattern: TreePattern,
        terms: Vec<Term>,
        targets: Vec<ShipTarget>,
    },
    IdJoin {
        left: Box<Plan>,
        right: Box<Plan>,
        nodes: Vec<Column>,
    },
    StructJoin {
        left: Box<Plan>,
        right: Box<Plan>,
        ancestor: Column,
        descendant: Column,
    },
    Navigate {
        input: Box<Plan>,
        cont: Column,
        /// Id of the navigation root, needed when ids below it are produced.
        base: Option<Column>,
        pattern: TreePattern,
        /// (local pattern node, annotation, produced query column)
        columns: Vec<(usize, Ann, Column)>,
    },
    Select {
        input: Box<Plan>,
        predicate: SelectPred,
    },
    Project {
        input: Box<Plan>,
        columns: Vec<Column>,
    },
    ValueJoin {
        left: Box<Plan>,
        right: Box<Plan>,
        on: Vec<(Column, Column)>,
    },
}

impl Plan {
    pub fn operator(&self) -> &'static str {
        match self {
            Plan::ViewScan { .. } => "ViewScan",
            Plan::DocShip { .. } => "DocShip",
            Plan::IdJoin { .. } => "IdJoin",
            Plan::StructJoin { .. } => "StructJoin",
            Plan::Navigate { .. } => "Navigate",
            Plan::Select { .. } => "Select",
            Plan::Project { .. } => "Project",
            Plan::ValueJoin { .. } => "ValueJoin",
        }
    }

    pub fn children(&self) -> Vec<&Plan> {
        match self {
            Plan::ViewScan { .. } | Plan::DocShip { .. } => vec![],
            Plan::IdJoin { left, right, .. }
            | Plan::StructJoin { left, right, .. }
            | Plan::ValueJoin { left, right, .. } => vec![left, right],
            Plan::Navigate { input, .. } | Plan::Select { input, .. } | Plan::Project { input, .. } => {
                vec![input]
            }
        }
    }

    pub fn leaves(&self) -> Vec<&Plan> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(p) = stack.pop() {
            let ch = p.children();
            if ch.is_empty() {
                out.push(p);
            } else {
                stack.extend(ch.into_iter().rev());
            }
        }
        out
    }

    /// Ids of the views scanned, sorted, with repetitions.
    pub fn view_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .leaves()
            .into_iter()
            .filter_map(|l| match l {
                Plan::ViewScan { view_id, .. } => Some(view_id.clone()),
                _ => None,
            })
            .collect();
        ids.sort();
        ids
    }

    pub fn uses_views(&self) -> bool {
        self.leaves().iter().any(|l| matches!(l, Plan::ViewScan { .. }))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let cols = |cs: &[Column]| cs.iter().map(|c| c.to_string()).collect::<Vec<_>>();
        let attributes = match self {
            Plan::ViewScan {
                view_id,
                holder,
                estimated_bytes,
                columns,
            } => json!({
                "view_id": view_id,
                "holder": holder.name,
                "estimated_bytes": estimated_bytes,
                "columns": columns.iter().map(|(_, q)| q.to_string()).collect::<Vec<_>>(),
            }),
            Plan::DocShip {
                pattern_index,
                pattern,
                terms,
                targets,
            } => json!({
                "pattern_index": pattern_index,
                "pattern": pattern.canonical(),
                "terms": terms.iter().map(|t| t.to_string()).collect::<Vec<_>>(),
                "documents": targets.iter().map(|t| json!({"uri": t.uri, "estimated_bytes": t.estimated_bytes})).collect::<Vec<_>>(),
            }),
            Plan::IdJoin { nodes, .. } => json!({"nodes": cols(nodes)}),
            Plan::StructJoin {
                ancestor,
                descendant,
                ..
            } => json!({"ancestor": ancestor.to_string(), "descendant": descendant.to_string()}),
            Plan::Navigate {
                cont,
                pattern,
                columns,
                ..
            } => json!({
                "cont": cont.to_string(),
                "pattern": pattern.canonical(),
                "columns": columns.iter().map(|(_, _, c)| c.to_string()).collect::<Vec<_>>(),
            }),
            Plan::Select { predicate, .. } => predicate.to_json(),
            Plan::Project { columns, .. } => json!({"columns": cols(columns)}),
            Plan::ValueJoin { on, .. } => json!({
                "on": on.iter().map(|(l, r)| format!("{l}={r}")).collect::<Vec<_>>(),
            }),
        };
        json!({
            "operator": self.operator(),
            "attributes": attributes,
            "children": self.children().into_iter().map(Plan::to_json).collect::<Vec<_>>(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct CostItem {
    pub operator: String,
    pub detail: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct CostEstimate {
    pub bytes: u64,
    pub breakdown: Vec<CostItem>,
}

/// Estimated transfer of `plan` when evaluated at `query_peer`.
pub fn plan_cost(plan: &Plan, query_peer: &PeerId, model: &CostModel) -> CostEstimate {
    let mut breakdown = Vec::new();
    let mut looked_up = BTreeSet::new();
    for leaf in plan.leaves() {
        match leaf {
            Plan::ViewScan {
                view_id,
                holder,
                estimated_bytes,
                columns,
            } => {
                let bytes = if holder == query_peer {
                    0
                } else {
                    estimated_bytes + model.msg_header
                };
                breakdown.push(CostItem {
                    operator: "ViewScan".into(),
                    detail: format!("{view_id}@{}", holder.name),
                    bytes,
                });
                // one advertisement lookup per view and query pattern
                let pattern = columns.first().map_or(0, |(_, c)| c.pattern);
                if looked_up.insert((pattern, view_id.clone())) {
                    breakdown.push(CostItem {
                        operator: "Lookup".into(),
                        detail: format!("view {view_id}"),
                        bytes: model.lookup_bytes,
                    });
                }
            }
            Plan::DocShip { terms, targets, .. } => {
                for t in targets {
                    breakdown.push(CostItem {
                        operator: "DocShip".into(),
                        detail: t.uri.clone(),
                        bytes: t.estimated_bytes + model.query_bytes + model.msg_header,
                    });
                }
                for key in term_keys(terms) {
                    breakdown.push(CostItem {
                        operator: "Lookup".into(),
                        detail: format!("term {key}"),
                        bytes: model.lookup_bytes,
                    });
                }
            }
            _ => unreachable!("leaves are scans"),
        }
    }
    CostEstimate {
        bytes: breakdown.iter().map(|c| c.bytes).sum(),
        breakdown,
    }
}

fn term_keys(terms: &[Term]) -> BTreeSet<&str> {
    terms.iter().map(|t| t.text.as_str()).collect()
}

/// One injective embedding of a view pattern into a query pattern.
#[derive(Debug, Clone)]
struct Use {
    view: usize,
    /// view node -> query node
    map: Vec<usize>,
    /// query node -> view node
    inv: Vec<Option<usize>>,
}

impl Use {
    fn top(&self) -> usize {
        self.map[0]
    }
}

fn uses_of_view(vi: usize, v: &ViewDef, q: &TreePattern) -> Vec<Use> {
    let mut out = Vec::new();
    for map in embed_pattern(&v.pattern, q) {
        let mut inv = vec![None; q.len()];
        let mut injective = true;
        for (vn, &qn) in map.iter().enumerate() {
            if inv[qn].is_some() {
                injective = false;
                break;
            }
            inv[qn] = Some(vn);
        }
        if injective {
            out.push(Use { view: vi, map, inv });
        }
    }
    out
}

fn uses_of(views: &[&ViewDef], q: &TreePattern) -> Vec<Use> {
    views
        .iter()
        .enumerate()
        .flat_map(|(vi, v)| uses_of_view(vi, v, q))
        .collect()
}

/// How a valid selection of uses rebuilds one query pattern.
#[derive(Debug, Clone)]
struct Rebuild {
    uses: Vec<usize>,
    nav_roots: Vec<usize>,
    /// Descendant edges (parent, child) enforced by id containment.
    contains: Vec<(usize, usize)>,
    selects: Vec<(usize, SelectKind)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SelectKind {
    EqualsVal,
    EqualsCont,
    ContainsWord,
    DocRoot,
}

struct Checker<'a> {
    q: &'a TreePattern,
    required: &'a [(usize, Ann)],
    views: &'a [&'a ViewDef],
    uses: &'a [Use],
}

impl Checker<'_> {
    fn vnode(&self, u: usize, x: usize) -> Option<&crate::pattern::PatternNode> {
        let u = &self.uses[u];
        u.inv[x].map(|vn| self.views[u.view].pattern.node(vn))
    }

    fn check(&self, sel: &[usize]) -> Option<Rebuild> {
        let q = self.q;
        let n = q.len();
        let mut cover: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut avail = vec![AnnSet::EMPTY; n];
        for &u in sel {
            for x in 0..n {
                if let Some(vn) = self.vnode(u, x) {
                    cover[x].push(u);
                    avail[x] = avail[x].union(vn.anns);
                }
            }
        }
        // shared nodes must be id-stored by every use covering them
        #[allow(clippy::needless_range_loop)]
        for x in 0..n {
            if cover[x].len() >= 2
                && cover[x]
                    .iter()
                    .any(|&u| !self.vnode(u, x).unwrap().anns.contains(Ann::Id))
            {
                return None;
            }
        }
        let cont_nodes: Vec<usize> = (0..n)
            .filter(|&x| avail[x].contains(Ann::Cont) && !cover[x].is_empty())
            .collect();
        let k = cont_nodes.len();
        let mut masks: Vec<u32> = (0..(1u32 << k)).collect();
        masks.sort_by_key(|m| (m.count_ones(), *m));
        'mask: for mask in masks {
            let roots: Vec<usize> = (0..k)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| cont_nodes[i])
                .collect();
            for (i, &a) in roots.iter().enumerate() {
                for &b in &roots[i + 1..] {
                    if q.is_ancestor(a, b) || q.is_ancestor(b, a) {
                        continue 'mask;
                    }
                }
            }
            let mut below = vec![false; n];
            for &r in &roots {
                for x in q.descendants(r) {
                    if x != r {
                        below[x] = true;
                    }
                }
            }
            if let Some(rb) = self.check_with_roots(sel, &cover, &avail, &roots, &below) {
                return Some(rb);
            }
        }
        None
    }

    fn check_with_roots(
        &self,
        sel: &[usize],
        cover: &[Vec<usize>],
        avail: &[AnnSet],
        roots: &[usize],
        below: &[bool],
    ) -> Option<Rebuild> {
        let q = self.q;
        let n = q.len();
        let root_of = |x: usize| roots.iter().copied().find(|&r| q.is_ancestor(r, x));
        for x in 0..n {
            if below[x] != cover[x].is_empty() {
                return None;
            }
        }
        for &(x, a) in self.required {
            let ok = if below[x] {
                a != Ann::Id || avail[root_of(x).unwrap()].contains(Ann::Id)
            } else if avail[x].contains(a) {
                true
            } else {
                roots.contains(&x) && a == Ann::Val
            };
            if !ok {
                return None;
            }
        }
        let mut contains = Vec::new();
        let mut selects = Vec::new();
        for y in 0..n {
            if below[y] {
                continue;
            }
            let yn = q.node(y);
            if let Some(x) = yn.parent {
                let direct = cover[y].iter().any(|&u| {
                    let Some(vy) = self.uses[u].inv[y] else { return false };
                    let v = &self.views[self.uses[u].view].pattern;
                    let vn = v.node(vy);
                    vn.axis == yn.axis
                        && vn.parent.is_some()
                        && self.uses[u].inv[x] == vn.parent
                });
                if !direct {
                    if yn.axis == Axis::Descendant
                        && avail[x].contains(Ann::Id)
                        && avail[y].contains(Ann::Id)
                    {
                        contains.push((x, y));
                    } else {
                        return None;
                    }
                }
            } else if yn.axis == Axis::Child {
                let anchored = cover[y].iter().any(|&u| {
                    let uu = &self.uses[u];
                    uu.inv[y] == Some(0) && self.views[uu.view].pattern.root().axis == Axis::Child
                });
                if !anchored {
                    if avail[y].contains(Ann::Id) {
                        selects.push((y, SelectKind::DocRoot));
                    } else {
                        return None;
                    }
                }
            }
            let is_root = roots.contains(&y);
            if let Label::Name(_) = yn.label {
                let labelled = is_root
                    || cover[y]
                        .iter()
                        .any(|&u| !self.vnode(u, y).unwrap().label.is_wildcard());
                if !labelled {
                    return None;
                }
            }
            if let Some(p) = &yn.predicate {
                let matched = is_root
                    || cover[y]
                        .iter()
                        .any(|&u| self.vnode(u, y).unwrap().predicate.is_some());
                if !matched {
                    let kind = match p {
                        Predicate::Equals(_) if avail[y].contains(Ann::Val) => SelectKind::EqualsVal,
                        Predicate::Equals(_) if avail[y].contains(Ann::Cont) => SelectKind::EqualsCont,
                        Predicate::ContainsWord(_) if avail[y].contains(Ann::Cont) => {
                            SelectKind::ContainsWord
                        }
                        _ => return None,
                    };
                    selects.push((y, kind));
                }
            }
        }
        Some(Rebuild {
            uses: sel.to_vec(),
            nav_roots: roots.to_vec(),
            contains,
            selects,
        })
    }
}

/// A rewriting of one pattern, before the plan tree is built.
#[derive(Debug, Clone)]
struct PatternOption {
    cost: u64,
    leaves: usize,
    view_ids: Vec<String>,
    forced: bool,
    plan: Plan,
}

/// All index subsets of size 1..=max as increasing sequences, in
/// lexicographic order, whose smallest element is below `first_below`.
fn subsets(count: usize, max: usize, first_below: usize, mut f: impl FnMut(&[usize])) {
    fn go(start: usize, count: usize, max: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        for i in start..count {
            cur.push(i);
            f(cur);
            if cur.len() < max {
                go(i + 1, count, max, cur, f);
            }
            cur.pop();
        }
    }
    let mut cur = Vec::new();
    for i in 0..count.min(first_below) {
        cur.push(i);
        f(&cur);
        if max > 1 {
            go(i + 1, count, max, &mut cur, &mut f);
        }
        cur.pop();
    }
}

fn scan_leaf(v: &ViewDef, u: &Use, pi: usize) -> Plan {
    let columns = v
        .pattern
        .annotated_columns()
        .into_iter()
        .map(|(vn, a)| (Column::new(0, vn, a), Column::new(pi, u.map[vn], a)))
        .collect();
    Plan::ViewScan {
        view_id: v.view_id.clone(),
        holder: v.holder.clone(),
        estimated_bytes: v.estimated_bytes,
        columns,
    }
}

fn covered_by(u: &Use) -> BTreeSet<usize> {
    u.map.iter().copied().collect()
}

fn build_rebuild_plan(
    q: &TreePattern,
    pi: usize,
    required: &[(usize, Ann)],
    views: &[&ViewDef],
    uses: &[Use],
    rb: &Rebuild,
) -> Plan {
    let col = |x: usize, a: Ann| Column::new(pi, x, a);
    let mut order: Vec<usize> = rb.uses.clone();
    order.sort_by_key(|&u| (uses[u].top(), u));
    let first = order.remove(0);
    let mut plan = scan_leaf(views[uses[first].view], &uses[first], pi);
    let mut covered = covered_by(&uses[first]);
    let mut pending: Vec<(usize, usize)> = rb.contains.clone();
    while !order.is_empty() {
        let pick = order
            .iter()
            .position(|&u| uses[u].map.iter().any(|x| covered.contains(x)))
            .or_else(|| {
                order.iter().position(|&u| {
                    let c = covered_by(&uses[u]);
                    pending.iter().any(|&(a, d)| {
                        (covered.contains(&a) && c.contains(&d))
                            || (covered.contains(&d) && c.contains(&a))
                    })
                })
            })
            .unwrap_or(0);
        let u = order.remove(pick);
        let c = covered_by(&uses[u]);
        let right = Box::new(scan_leaf(views[uses[u].view], &uses[u], pi));
        let shared: Vec<Column> = c
            .iter()
            .filter(|x| covered.contains(x))
            .map(|&x| col(x, Ann::Id))
            .collect();
        let edge = pending.iter().position(|&(a, d)| {
            (covered.contains(&a) && c.contains(&d)) || (covered.contains(&d) && c.contains(&a))
        });
        plan = match (shared.is_empty(), edge) {
            (true, Some(e)) => {
                let (a, d) = pending.remove(e);
                Plan::StructJoin {
                    left: Box::new(plan),
                    right,
                    ancestor: col(a, Ann::Id),
                    descendant: col(d, Ann::Id),
                }
            }
            _ => Plan::IdJoin {
                left: Box::new(plan),
                right,
                nodes: shared,
            },
        };
        covered.extend(c);
    }
    for (a, d) in pending {
        plan = Plan::Select {
            input: Box::new(plan),
            predicate: SelectPred::Contains {
                ancestor: col(a, Ann::Id),
                descendant: col(d, Ann::Id),
            },
        };
    }
    let mut avail = vec![AnnSet::EMPTY; q.len()];
    for &u in &rb.uses {
        let v = &views[uses[u].view].pattern;
        for (vn, &x) in uses[u].map.iter().enumerate() {
            avail[x] = avail[x].union(v.node(vn).anns);
        }
    }
    let mut nav_roots = rb.nav_roots.clone();
    nav_roots.sort();
    for r in nav_roots {
        let range = r..q.descendants(r).end;
        let mut local = vec![AnnSet::EMPTY; range.len()];
        let mut columns = Vec::new();
        let mut needs_base = false;
        for &(x, a) in required {
            if !range.contains(&x) {
                continue;
            }
            if x == r {
                if a == Ann::Val && !avail[r].contains(Ann::Val) {
                    local[0].insert(a);
                    columns.push((0, a, col(x, a)));
                }
                continue;
            }
            local[x - r].insert(a);
            columns.push((x - r, a, col(x, a)));
            needs_base |= a == Ann::Id;
        }
        let pattern = TreePattern::from_tree(&q.subtree(r))
            .without_vars()
            .with_annotations(&local);
        plan = Plan::Navigate {
            input: Box::new(plan),
            cont: col(r, Ann::Cont),
            base: needs_base.then(|| col(r, Ann::Id)),
            pattern,
            columns,
        };
    }
    for &(x, kind) in &rb.selects {
        let predicate = match (kind, &q.node(x).predicate) {
            (SelectKind::DocRoot, _) => SelectPred::DocRoot { node: col(x, Ann::Id) },
            (SelectKind::EqualsVal, Some(Predicate::Equals(t))) => SelectPred::Equals {
                node: col(x, Ann::Val),
                text: t.clone(),
            },
            (SelectKind::EqualsCont, Some(Predicate::Equals(t))) => SelectPred::Equals {
                node: col(x, Ann::Cont),
                text: t.clone(),
            },
            (SelectKind::ContainsWord, Some(Predicate::ContainsWord(w))) => {
                SelectPred::ContainsWord {
                    node: col(x, Ann::Cont),
                    word: w.clone(),
                }
            }
            _ => unreachable!("select kind matches predicate"),
        };
        plan = Plan::Select {
            input: Box::new(plan),
            predicate,
        };
    }
    plan
}

/// Every rewriting of `q` that uses views only (no document shipping), with
/// at most `max_views` view scans in total.
pub fn enumerate_rewritings(q: &QuerySpec, views: &[ViewDef], max_views: usize) -> Vec<Plan> {
    let mut per_pattern: Vec<Vec<(usize, Plan)>> = Vec::new();
    for (pi, p) in q.patterns.iter().enumerate() {
        let required = q.required_columns(pi);
        let views: Vec<&ViewDef> = views.iter().collect();
        let uses = uses_of(&views, p);
        let checker = Checker {
            q: p,
            required: &required,
            views: &views,
            uses: &uses,
        };
        let mut opts = Vec::new();
        subsets(uses.len(), max_views, usize::MAX, |sel| {
            if let Some(rb) = checker.check(sel) {
                opts.push((sel.len(), build_rebuild_plan(p, pi, &required, &views, &uses, &rb)));
            }
        });
        per_pattern.push(opts);
    }
    let mut out = Vec::new();
    let mut combo: Vec<&Plan> = Vec::new();
    fn go<'a>(
        q: &QuerySpec,
        per: &'a [Vec<(usize, Plan)>],
        budget: usize,
        combo: &mut Vec<&'a Plan>,
        out: &mut Vec<Plan>,
    ) {
        if combo.len() == per.len() {
            out.push(assemble(q, combo.iter().map(|p| (*p).clone()).collect()));
            return;
        }
        for (k, plan) in &per[combo.len()] {
            if *k <= budget {
                combo.push(plan);
                go(q, per, budget - k, combo, out);
                combo.pop();
            }
        }
    }
    go(q, &per_pattern, max_views, &mut combo, &mut out);
    out
}

/// Joins per-pattern plans on the query's value joins and projects to the
/// query output.
fn assemble(q: &QuerySpec, parts: Vec<Plan>) -> Plan {
    let joins = q.join_columns();
    let mut iter = parts.into_iter().enumerate();
    let (_, mut plan) = iter.next().expect("query has a pattern");
    for (pi, part) in iter {
        let on: Vec<(Column, Column)> = joins
            .iter()
            .filter_map(|&(l, r)| {
                if l.pattern < pi && r.pattern == pi {
                    Some((l, r))
                } else if r.pattern < pi && l.pattern == pi {
                    Some((r, l))
                } else {
                    None
                }
            })
            .collect();
        plan = Plan::ValueJoin {
            left: Box::new(plan),
            right: Box::new(part),
            on,
        };
    }
    for &(l, r) in &joins {
        if l.pattern == r.pattern {
            plan = Plan::Select {
                input: Box::new(plan),
                predicate: SelectPred::SameValue { left: l, right: r },
            };
        }
    }
    Plan::Project {
        input: Box::new(plan),
        columns: q.output.clone(),
    }
}

#[derive(Debug, Clone)]
struct ShipInfo {
    pattern: TreePattern,
    terms: Vec<Term>,
    targets: Vec<ShipTarget>,
    cost: u64,
}

/// Plans queries against one catalog state. Document-shipping estimates are
/// cached per pattern, so a planner must not outlive a change to the set of
/// published documents.
pub struct Planner<'a> {
    catalog: &'a Catalog,
    cfg: RewriteConfig,
    model: CostModel,
    ship_cache: RefCell<HashMap<String, Arc<ShipInfo>>>,
}

impl<'a> Planner<'a> {
    pub fn new(catalog: &'a Catalog, cfg: RewriteConfig) -> Self {
        Planner {
            catalog,
            cfg,
            model: CostModel::new(catalog, &cfg),
            ship_cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn model(&self) -> &CostModel {
        &self.model
    }

    pub fn config(&self) -> &RewriteConfig {
        &self.cfg
    }

    fn ship_info(&self, q: &QuerySpec, pi: usize) -> Arc<ShipInfo> {
        let pattern = q.required_pattern(pi);
        let key = pattern.canonical();
        if let Some(s) = self.ship_cache.borrow().get(&key) {
            return s.clone();
        }
        let terms: BTreeSet<Term> = locator_terms(&pattern);
        let uris = self.catalog.peek_documents(&terms);
        let targets: Vec<ShipTarget> = uris
            .into_iter()
            .map(|uri| {
                let estimated_bytes = self
                    .catalog
                    .peek_synopsis(&uri)
                    .map_or(0, |s| estimate_contribution(s, &pattern));
                ShipTarget { uri, estimated_bytes }
            })
            .collect();
        let terms: Vec<Term> = terms.into_iter().collect();
        let cost = targets
            .iter()
            .map(|t| t.estimated_bytes + self.model.query_bytes + self.model.msg_header)
            .sum::<u64>()
            + term_keys(&terms).len() as u64 * self.model.lookup_bytes;
        let info = Arc::new(ShipInfo {
            pattern,
            terms,
            targets,
            cost,
        });
        self.ship_cache.borrow_mut().insert(key, info.clone());
        info
    }

    fn docship_option(&self, q: &QuerySpec, pi: usize) -> PatternOption {
        let s = self.ship_info(q, pi);
        PatternOption {
            cost: s.cost,
            leaves: 1,
            view_ids: vec![],
            forced: false,
            plan: Plan::DocShip {
                pattern_index: pi,
                pattern: s.pattern.clone(),
                terms: s.terms.clone(),
                targets: s.targets.clone(),
            },
        }
    }

    /// The document-shipping plan for the whole query.
    pub fn docship_plan(&self, q: &QuerySpec) -> Plan {
        let parts = (0..q.patterns.len())
            .map(|pi| self.docship_option(q, pi).plan)
            .collect();
        assemble(q, parts)
    }

    pub fn docship_cost(&self, q: &QuerySpec) -> u64 {
        (0..q.patterns.len()).map(|pi| self.ship_info(q, pi).cost).sum()
    }

    fn scan_cost(&self, v: &ViewDef, peer: &PeerId) -> u64 {
        if v.holder == *peer {
            0
        } else {
            v.estimated_bytes + self.model.msg_header
        }
    }

    /// Keeps, per distinct view pattern, the view cheapest to scan from
    /// `peer` (then smallest id). Scanning one view twice is allowed, so
    /// the dropped views never enable a cheaper plan.
    fn prune<'v>(&self, views: &'v [ViewDef], peer: &PeerId) -> Vec<&'v ViewDef> {
        let mut best: BTreeMap<String, &ViewDef> = BTreeMap::new();
        for v in views {
            let key = v.pattern.canonical();
            let better = match best.get(&key) {
                None => true,
                Some(b) => {
                    (self.scan_cost(v, peer), &v.view_id) < (self.scan_cost(b, peer), &b.view_id)
                }
            };
            if better {
                best.insert(key, v);
            }
        }
        let mut out: Vec<&ViewDef> = best.into_values().collect();
        out.sort_by(|a, b| a.view_id.cmp(&b.view_id));
        out
    }

    /// Best view rewriting of pattern `pi` per number of uses. Only subsets
    /// whose smallest use index is below `first_below` are searched; with
    /// `forced` set those options are flagged as containing the forced view.
    #[allow(clippy::too_many_arguments)]
    fn view_options(
        &self,
        q: &QuerySpec,
        pi: usize,
        views: &[&ViewDef],
        uses: &[Use],
        peer: &PeerId,
        first_below: usize,
        forced: bool,
        out: &mut Vec<PatternOption>,
    ) {
        let p = &q.patterns[pi];
        let required = q.required_columns(pi);
        let checker = Checker {
            q: p,
            required: &required,
            views,
            uses,
        };
        let mut best: BTreeMap<usize, (PatternOption, String)> = BTreeMap::new();
        subsets(uses.len(), self.cfg.max_views, first_below, |sel| {
            let mut view_ids: Vec<String> =
                sel.iter().map(|&u| views[uses[u].view].view_id.clone()).collect();
            view_ids.sort();
            let distinct: BTreeSet<&String> = view_ids.iter().collect();
            let cost = sel
                .iter()
                .map(|&u| self.scan_cost(views[uses[u].view], peer))
                .sum::<u64>()
                + distinct.len() as u64 * self.model.lookup_bytes;
            if let Some((b, _)) = best.get(&sel.len()) {
                if (cost, &view_ids) > (b.cost, &b.view_ids) {
                    return;
                }
            }
            let Some(rb) = checker.check(sel) else { return };
            let plan = build_rebuild_plan(p, pi, &required, views, uses, &rb);
            let text = plan.to_json().to_string();
            let replace = match best.get(&sel.len()) {
                None => true,
                Some((b, bt)) => (cost, &view_ids, &text) < (b.cost, &b.view_ids, bt),
            };
            if replace {
                let opt = PatternOption {
                    cost,
                    leaves: sel.len(),
                    view_ids,
                    forced,
                    plan,
                };
                best.insert(sel.len(), (opt, text));
            }
        });
        out.extend(best.into_values().map(|(o, _)| o));
    }

    fn combine(
        &self,
        q: &QuerySpec,
        per: &[Vec<PatternOption>],
        need_forced: bool,
        cost_only: bool,
    ) -> Option<(Option<Plan>, u64)> {
        type Key = (u64, usize, Vec<String>, String);
        if per.iter().any(Vec::is_empty) {
            return None;
        }
        let mut best: Option<(Key, Option<Plan>)> = None;
        let mut idx = vec![0usize; per.len()];
        loop {
            let chosen: Vec<&PatternOption> = idx.iter().zip(per).map(|(&i, o)| &o[i]).collect();
            let scans: usize = chosen.iter().map(|o| o.view_ids.len()).sum();
            let forced = chosen.iter().any(|o| o.forced);
            if scans <= self.cfg.max_views && (!need_forced || forced) {
                let cost: u64 = chosen.iter().map(|o| o.cost).sum();
                if cost_only {
                    if best.as_ref().is_none_or(|((c, ..), _)| cost < *c) {
                        best = Some(((cost, 0, vec![], String::new()), None));
                    }
                } else {
                    let leaves: usize = chosen.iter().map(|o| o.leaves).sum();
                    let mut ids: Vec<String> =
                        chosen.iter().flat_map(|o| o.view_ids.clone()).collect();
                    ids.sort();
                    let beats = match &best {
                        None => true,
                        Some(((c, l, v, _), _)) => (cost, leaves, &ids) <= (*c, *l, v),
                    };
                    if beats {
                        let plan = assemble(q, chosen.iter().map(|o| o.plan.clone()).collect());
                        let key = (cost, leaves, ids, plan.to_json().to_string());
                        if best.as_ref().is_none_or(|(b, _)| key < *b) {
                            best = Some((key, Some(plan)));
                        }
                    }
                }
            }
            let mut i = 0;
            loop {
                if i == idx.len() {
                    return best.map(|((c, ..), p)| (p, c));
                }
                idx[i] += 1;
                if idx[i] < per[i].len() {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
        }
    }

    /// Planning state of `q` at `peer` over `views`, reusable to price
    /// `views ∪ {v}` for many hypothetical `v`.
    pub fn baseline<'v>(&self, q: &QuerySpec, views: &'v [ViewDef], peer: &PeerId) -> Baseline<'v> {
        let pruned = self.prune(views, peer);
        let mut uses = Vec::new();
        let mut options = Vec::new();
        for (pi, p) in q.patterns.iter().enumerate() {
            let u = uses_of(&pruned, p);
            let mut opts = vec![self.docship_option(q, pi)];
            self.view_options(q, pi, &pruned, &u, peer, usize::MAX, false, &mut opts);
            uses.push(u);
            options.push(opts);
        }
        let (plan, cost) = self
            .combine(q, &options, false, false)
            .expect("document shipping is always available");
        Baseline {
            query: q.clone(),
            peer: peer.clone(),
            views: pruned,
            uses,
            options,
            plan: plan.expect("full combination builds the plan"),
            cost,
        }
    }

    /// The cheapest plan among all view rewritings and document shipping,
    /// with its estimate. Ties go to fewer leaves, then the smaller sorted
    /// list of view ids, then the plan text.
    pub fn best_plan(&self, q: &QuerySpec, views: &[ViewDef], peer: &PeerId) -> (Plan, CostEstimate) {
        let b = self.baseline(q, views, peer);
        let est = plan_cost(&b.plan, peer, &self.model);
        debug_assert_eq!(est.bytes, b.cost);
        (b.plan, est)
    }

    pub fn best_cost(&self, q: &QuerySpec, views: &[ViewDef], peer: &PeerId) -> u64 {
        self.baseline(q, views, peer).cost
    }

    /// `cost(q, views ∪ {extra})` from the baseline over `views`: only plans
    /// scanning `extra` are searched, the rest are already priced.
    pub fn cost_with(&self, base: &Baseline<'_>, extra: &ViewDef) -> u64 {
        let q = &base.query;
        let mut views: Vec<&ViewDef> = Vec::with_capacity(base.views.len() + 1);
        views.push(extra);
        views.extend(base.views.iter().copied().filter(|v| v.view_id != extra.view_id));
        let mut per = Vec::with_capacity(q.patterns.len());
        let mut any = false;
        for (pi, p) in q.patterns.iter().enumerate() {
            let own = uses_of_view(0, extra, p);
            let mut opts = base.options[pi].clone();
            if !own.is_empty() {
                let n_own = own.len();
                let mut uses = own;
                uses.extend(base.uses[pi].iter().filter_map(|u| {
                    let v = base.views[u.view];
                    (v.view_id != extra.view_id).then(|| Use {
                        view: 1 + views[1..]
                            .iter()
                            .position(|w| w.view_id == v.view_id)
                            .expect("baseline view kept"),
                        ..u.clone()
                    })
                }));
                let before = opts.len();
                self.view_options(q, pi, &views, &uses, &base.peer, n_own, true, &mut opts);
                any |= opts.len() > before;
            }
            per.push(opts);
        }
        if !any {
            return base.cost;
        }
        match self.combine(q, &per, true, true) {
            Some((_, c)) => c.min(base.cost),
            None => base.cost,
        }
    }
}

/// See [`Planner::baseline`].
#[derive(Debug, Clone)]
pub struct Baseline<'v> {
    query: QuerySpec,
    peer: PeerId,
    views: Vec<&'v ViewDef>,
    uses: Vec<Vec<Use>>,
    options: Vec<Vec<PatternOption>>,
    plan: Plan,
    pub cost: u64,
}

impl Baseline<'_> {
    pub fn plan(&self) -> &Plan {
        &self.plan
    }
}

/// Document bodies and view extents, keyed by URI and view id.
#[derive(Debug, Clone, Default)]
pub struct Store {
    pub documents: BTreeMap<String, Arc<Document>>,
    pub extents: BTreeMap<String, Table>,
}

#[derive(Debug, Clone)]
pub struct Execution {
    pub table: Table,
    /// Peers other than the query peer that served a view or documents.
    pub helpers: BTreeSet<PeerId>,
}

struct Exec<'a> {
    peer: &'a PeerId,
    catalog: &'a mut Catalog,
    store: &'a Store,
    query_bytes: u64,
    helpers: BTreeSet<PeerId>,
    fragments: HashMap<String, Arc<Document>>,
}

impl Exec<'_> {
    fn fragment(&mut self, text: &str) -> Result<Arc<Document>, RewriteError> {
        if let Some(d) = self.fragments.get(text) {
            return Ok(d.clone());
        }
        let d = Arc::new(parse_document(text.as_bytes(), "fragment")?);
        self.fragments.insert(text.to_string(), d.clone());
        Ok(d)
    }

    fn run(&mut self, plan: &Plan) -> Result<Table, RewriteError> {
        match plan {
            Plan::ViewScan {
                view_id,
                holder,
                columns,
                ..
            } => {
                let extent = self
                    .store
                    .extents
                    .get(view_id)
                    .ok_or_else(|| RewriteError::DanglingView(view_id.clone()))?;
                if holder != self.peer {
                    self.catalog.overlay_mut().ship(
                        holder,
                        self.peer,
                        extent.payload_bytes(),
                        Category::QueryExecution,
                    );
                    self.helpers.insert(holder.clone());
                }
                let vcols: Vec<Column> = columns.iter().map(|(v, _)| *v).collect();
                let mut t = extent.project(&vcols);
                t.header = columns.iter().map(|(_, q)| *q).collect();
                Ok(t)
            }
            Plan::DocShip {
                pattern_index,
                pattern,
                terms,
                ..
            } => {
                let term_set: BTreeSet<Term> = terms.iter().cloned().collect();
                let uris = if term_set.is_empty() {
                    self.catalog.documents().map(str::to_string).collect()
                } else {
                    self.catalog
                        .lookup_documents(self.peer, &term_set, Category::QueryExecution)?
                };
                let cols = pattern.annotated_columns();
                let mut t = Table::empty(
                    cols.iter()
                        .map(|&(n, a)| Column::new(*pattern_index, n, a))
                        .collect(),
                );
                for uri in uris {
                    let d = self
                        .store
                        .documents
                        .get(&uri)
                        .ok_or_else(|| RewriteError::UnknownDocument(uri.clone()))?;
                    let holder = self
                        .catalog
                        .holder_of(&uri)
                        .cloned()
                        .ok_or_else(|| RewriteError::UnknownDocument(uri.clone()))?;
                    let rows = pattern_rows(d, pattern, &cols, None);
                    let bytes: u64 = rows.iter().flatten().map(Value::payload_bytes).sum();
                    if holder != *self.peer {
                        let o = self.catalog.overlay_mut();
                        o.ship(self.peer, &holder, self.query_bytes, Category::QueryExecution);
                        o.ship(&holder, self.peer, bytes, Category::QueryExecution);
                        self.helpers.insert(holder);
                    }
                    t.rows.extend(rows);
                }
                Ok(t)
            }
            Plan::IdJoin { left, right, nodes } => {
                let (l, r) = (self.run(left)?, self.run(right)?);
                let on: Vec<(Column, Column)> = nodes.iter().map(|c| (*c, *c)).collect();
                Ok(l.equi_join(&r, &on))
            }
            Plan::StructJoin {
                left,
                right,
                ancestor,
                descendant,
            } => {
                let (l, r) = (self.run(left)?, self.run(right)?);
                Ok(l.theta_join(&r, |h, t| {
                    let a = h.iter().position(|c| c == ancestor).unwrap();
                    let d = h.iter().position(|c| c == descendant).unwrap();
                    match (t[a].as_id(), t[d].as_id()) {
                        (Some(a), Some(d)) => id_contains(a, d),
                        _ => false,
                    }
                }))
            }
            Plan::ValueJoin { left, right, on } => {
                let (l, r) = (self.run(left)?, self.run(right)?);
                Ok(l.equi_join(&r, on))
            }
            Plan::Project { input, columns } => Ok(self.run(input)?.project(columns)),
            Plan::Select { input, predicate } => {
                let t = self.run(input)?;
                self.select(t, predicate)
            }
            Plan::Navigate {
                input,
                cont,
                base,
                pattern,
                columns,
            } => {
                let t = self.run(input)?;
                let ci = t.position(cont).expect("navigate input carries cont");
                let bi = base.map(|b| t.position(&b).expect("navigate input carries root id"));
                let local: Vec<(usize, Ann)> = columns.iter().map(|&(n, a, _)| (n, a)).collect();
                let mut header = t.header.clone();
                header.extend(columns.iter().map(|&(_, _, c)| c));
                let mut out = Table::empty(header);
                for row in &t.rows {
                    let text = row[ci].as_text().expect("cont column holds text");
                    let frag = self.fragment(text)?;
                    let origin = bi.map(|i| row[i].as_id().expect("id column").clone());
                    for sub in pattern_rows(&frag, pattern, &local, Some(frag.root())) {
                        let mut r: Tuple = row.clone();
                        for v in sub {
                            r.push(match (v, &origin) {
                                (Value::Id(l), Some(o)) => {
                                    Value::Id(NodeId::new(o.doc.clone(), o.start + l.start, o.start + l.end))
                                }
                                (v, _) => v,
                            });
                        }
                        out.rows.insert(r);
                    }
                }
                Ok(out)
            }
        }
    }

    fn select(&mut self, mut t: Table, pred: &SelectPred) -> Result<Table, RewriteError> {
        match pred {
            SelectPred::Equals { node, text } => {
                let i = t.position(node).unwrap();
                if node.ann == Ann::Cont {
                    let mut keep = BTreeSet::new();
                    for row in &t.rows {
                        let f = self.fragment(row[i].as_text().unwrap())?;
                        if f.value_of(f.root()) == *text {
                            keep.insert(row.clone());
                        }
                    }
                    t.rows = keep;
                } else {
                    t.retain(|r| r[i].as_text() == Some(text.as_str()));
                }
            }
            SelectPred::ContainsWord { node, word } => {
                let i = t.position(node).unwrap();
                let p = Predicate::ContainsWord(word.clone());
                let mut keep = BTreeSet::new();
                for row in &t.rows {
                    let f = self.fragment(row[i].as_text().unwrap())?;
                    if p.holds(&f, f.root()) {
                        keep.insert(row.clone());
                    }
                }
                t.rows = keep;
            }
            SelectPred::DocRoot { node } => {
                let i = t.position(node).unwrap();
                t.retain(|r| r[i].as_id().is_some_and(|id| id.start == 0));
            }
            SelectPred::Contains {
                ancestor,
                descendant,
            } => {
                let (a, d) = (t.position(ancestor).unwrap(), t.position(descendant).unwrap());
                t.retain(|r| match (r[a].as_id(), r[d].as_id()) {
                    (Some(x), Some(y)) => id_contains(x, y),
                    _ => false,
                });
            }
            SelectPred::SameValue { left, right } => {
                let (a, b) = (t.position(left).unwrap(), t.position(right).unwrap());
                t.retain(|r| r[a].as_text() == r[b].as_text());
            }
        }
        Ok(t)
    }
}

/// Runs `plan` at `query_peer`, charging real transfers to query execution.
pub fn execute_plan(
    plan: &Plan,
    query_peer: &PeerId,
    catalog: &mut Catalog,
    store: &Store,
    cfg: &RewriteConfig,
) -> Result<Execution, RewriteError> {
    let mut ex = Exec {
        peer: query_peer,
        catalog,
        store,
        query_bytes: cfg.query_bytes,
        helpers: BTreeSet::new(),
        fragments: HashMap::new(),
    };
    let table = ex.run(plan)?;
    let mut helpers = ex.helpers;
    helpers.remove(query_peer);
    Ok(Execution { table, helpers })
}
