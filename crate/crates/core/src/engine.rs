//! Tick-driven scenario runner: corpus and workload ingestion, the three
//! operating modes, round boundaries and JSONL metrics.

use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::adapt::{self, adapt_round, AdaptConfig, AdaptError, QueryStats, RoundInput, RoundReport};
use crate::catalog::{Catalog, CatalogError, ViewDef};
use crate::overlay::{Category, CategoryCounters, Overlay, OverlayConfig, OverlayError, PeerId};
use crate::pattern::{QueryError, QuerySpec, TreePattern};
use crate::rewriter::{execute_plan, Plan, Planner, RewriteConfig, RewriteError, Store};
use crate::table::Table;
use crate::xml::{parse_document, Document, XmlError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown peer {0}")]
    UnknownPeer(String),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("{uri}: {source}")]
    Xml { uri: String, source: XmlError },
    #[error("reading corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Mode {
    /// Document-level indexes only.
    DocIndexOnly,
    /// Fixed user-defined views materialized at tick 0.
    UserViews,
    /// Periodic per-peer view selection.
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusConfig {
    /// Every `*.xml` file of a directory, in file name order.
    Dir(PathBuf),
    /// Generated bibliographic records.
    Synthetic { documents: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    pub peer: String,
    pub query: String,
}

fn default_zipf() -> f64 {
    1.0
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadConfig {
    Events(Vec<Event>),
    /// `per_tick` queries at every tick; template by Zipf rank, asker
    /// uniform. With `repeat_every`, the draws of the first `repeat_every`
    /// ticks are replayed periodically (a stationary workload).
    Generated {
        #[serde(default)]
        templates: Vec<String>,
        #[serde(default = "default_zipf")]
        zipf_s: f64,
        #[serde(default = "default_one")]
        per_tick: usize,
        #[serde(default)]
        repeat_every: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserView {
    pub peer: String,
    pub pattern: String,
}

fn default_tau() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    pub peers: usize,
    /// Per-peer view budget.
    pub budget_bytes: u64,
    /// Budget overrides by peer name.
    #[serde(default)]
    pub peer_budgets: BTreeMap<String, u64>,
    pub corpus: CorpusConfig,
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub user_views: Vec<UserView>,
    /// Scenario length.
    pub ticks: u64,
    #[serde(default = "default_tau")]
    pub tau_ticks: u64,
    #[serde(default)]
    pub adapt: AdaptConfig,
    #[serde(default)]
    pub rewrite: RewriteConfig,
    #[serde(default)]
    pub overlay: OverlayConfig,
    /// Dataguide truncation depth for published synopses.
    #[serde(default)]
    pub synopsis_depth: Option<usize>,
    /// How many executed plans `GET /plans/recent` keeps.
    #[serde(default = "default_recent")]
    pub recent_plans: usize,
}

fn default_recent() -> usize {
    20
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        serde_json::from_str(text).map_err(|e| EngineError::Config(e.to_string()))
    }

    pub fn peer_names(&self) -> Vec<String> {
        (0..self.peers).map(|i| format!("p{i:02}")).collect()
    }

    pub fn capacity(&self, peer: &str) -> u64 {
        self.peer_budgets.get(peer).copied().unwrap_or(self.budget_bytes)
    }
}

/// Bibliographic query templates used when a generated workload names none.
pub const DEFAULT_TEMPLATES: [&str; 20] = [
    "(//book (/title {val}))",
    "(//article (/title {val}) (/journal {val}))",
    "(//inproceedings (/booktitle {val}) (/title {val}))",
    "(//book (/author (/last {val})))",
    "(//article (/year [= \"2005\"]) (/title {val}))",
    "(//book (/publisher {val}) (/price {val}))",
    "(//author (/last [= \"smith\"]) (/first {val}))",
    "(//inproceedings (/author {cont}))",
    "(//keyword [= \"xml\"] {id})",
    "(//article (/abstract [~ index] {val}))",
    "(//book (/year {val}) (/title [~ query] {val}))",
    "(//journal {val})",
    "(//article (/author (/last {val})) (/pages {val}))",
    "(//inproceedings (/year [= \"2008\"]) (/booktitle {val}))",
    "(//book (/keyword {val}))",
    "(//title [~ peer] {val})",
    "(//article (/volume {val}) (/journal [= \"tods\"]))",
    "(//book (/title $a {val})); (//article (/title $b {val})) WHERE $a=$b",
    "(//inproceedings (/abstract [~ views] {val}))",
    "(//book [~ databases] {id} (/isbn {val}))",
];

const TITLE_WORDS: [&str; 24] = [
    "query", "xml", "peer", "views", "index", "databases", "adaptive", "distributed", "streams", "caching",
    "semantic", "web", "processing", "optimization", "storage", "networks", "graphs", "search", "mining",
    "scalable", "efficient", "systems", "models", "data",
];
const FIRST: [&str; 8] = ["ann", "bo", "chen", "dana", "eli", "fay", "gus", "hana"];
const LAST: [&str; 10] = [
    "smith", "lee", "garcia", "khan", "novak", "rossi", "tanaka", "weber", "silva", "olsen",
];
const PUBLISHERS: [&str; 5] = ["acm", "springer", "elsevier", "vldb", "ieee"];
const JOURNALS: [&str; 5] = ["tods", "vldbj", "tkde", "sigmod record", "is"];
const VENUES: [&str; 5] = ["sigmod", "vldb", "icde", "cikm", "edbt"];
const KEYWORDS: [&str; 8] = ["xml", "p2p", "views", "indexing", "caching", "rewriting", "dht", "olap"];

/// Skewed pick: index ⌊n·u²⌋ favours the front of the list.
fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    let u: f64 = rng.random();
    xs[((u * u) * xs.len() as f64) as usize % xs.len()]
}

fn words(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..=hi);
    (0..n).map(|_| pick(rng, &TITLE_WORDS)).collect::<Vec<_>>().join(" ")
}

/// Deterministic bibliographic corpus: books, articles and conference
/// records of 9 to 20 elements each (attributes count as elements).
pub fn synthetic_corpus(documents: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
    (0..documents)
        .map(|i| {
            let kind = match rng.random_range(0..20) {
                0..=7 => "book",
                8..=14 => "article",
                _ => "inproceedings",
            };
            let year = rng.random_range(1998..=2010);
            let mut x = format!("<{kind} key=\"r{i}\"><title>{}</title>", words(&mut rng, 2, 5));
            for _ in 0..rng.random_range(1..=3) {
                x += &format!(
                    "<author><first>{}</first><last>{}</last></author>",
                    pick(&mut rng, &FIRST),
                    pick(&mut rng, &LAST)
                );
            }
            x += &format!("<year>{year}</year>");
            match kind {
                "book" => {
                    x += &format!(
                        "<publisher>{}</publisher><isbn>{}</isbn><price>{}</price>",
                        pick(&mut rng, &PUBLISHERS),
                        rng.random_range(100_000..999_999),
                        rng.random_range(20..150)
                    );
                }
                "article" => {
                    x += &format!(
                        "<journal>{}</journal><volume>{}</volume><pages>{}</pages>",
                        pick(&mut rng, &JOURNALS),
                        rng.random_range(1..40),
                        rng.random_range(1..400)
                    );
                }
                _ => {
                    x += &format!(
                        "<booktitle>{}</booktitle><pages>{}</pages>",
                        pick(&mut rng, &VENUES),
                        rng.random_range(1..400)
                    );
                }
            }
            for _ in 0..rng.random_range(0..=3) {
                x += &format!("<keyword>{}</keyword>", pick(&mut rng, &KEYWORDS));
            }
            if rng.random_range(0..3) > 0 {
                x += &format!("<abstract>{}</abstract>", words(&mut rng, 6, 14));
            }
            x += &format!("</{kind}>");
            (format!("doc{i:04}.xml"), x)
        })
        .collect()
}

pub fn load_corpus(cfg: &CorpusConfig, seed: u64) -> Result<Vec<Document>, EngineError> {
    let raw: Vec<(String, Vec<u8>)> = match cfg {
        CorpusConfig::Synthetic { documents } => synthetic_corpus(*documents, seed)
            .into_iter()
            .map(|(u, x)| (u, x.into_bytes()))
            .collect(),
        CorpusConfig::Dir(dir) => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "xml"))
                .collect();
            files.sort();
            let mut out = Vec::new();
            for f in files {
                let uri = f.file_name().unwrap_or_default().to_string_lossy().into_owned();
                out.push((uri, std::fs::read(&f)?));
            }
            out
        }
    };
    raw.into_iter()
        .map(|(uri, bytes)| parse_document(&bytes, &uri).map_err(|source| EngineError::Xml { uri, source }))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
struct Scheduled {
    peer: String,
    query: QuerySpec,
}

fn build_workload(cfg: &ScenarioConfig, names: &[String]) -> Result<BTreeMap<u64, Vec<Scheduled>>, EngineError> {
    let mut out: BTreeMap<u64, Vec<Scheduled>> = BTreeMap::new();
    match &cfg.workload {
        WorkloadConfig::Events(events) => {
            for e in events {
                if !names.contains(&e.peer) {
                    return Err(EngineError::UnknownPeer(e.peer.clone()));
                }
                out.entry(e.tick).or_default().push(Scheduled {
                    peer: e.peer.clone(),
                    query: QuerySpec::parse(&e.query)?,
                });
            }
        }
        WorkloadConfig::Generated {
            templates,
            zipf_s,
            per_tick,
            repeat_every,
        } => {
            let texts: Vec<&str> = if templates.is_empty() {
                DEFAULT_TEMPLATES.to_vec()
            } else {
                templates.iter().map(String::as_str).collect()
            };
            let parsed = texts.iter().map(|t| QuerySpec::parse(t)).collect::<Result<Vec<_>, _>>()?;
            let zipf = Zipf::new(parsed.len() as f64, *zipf_s)
                .map_err(|e| EngineError::Config(format!("zipf: {e}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let period = repeat_every.unwrap_or(cfg.ticks).max(1);
            for tick in 0..cfg.ticks.min(period) {
                for _ in 0..*per_tick {
                    let t = (zipf.sample(&mut rng) as usize).clamp(1, parsed.len()) - 1;
                    let p = rng.random_range(0..names.len());
                    out.entry(tick).or_default().push(Scheduled {
                        peer: names[p].clone(),
                        query: parsed[t].clone(),
                    });
                }
            }
            for tick in period..cfg.ticks {
                if let Some(evs) = out.get(&(tick % period)).cloned() {
                    out.insert(tick, evs);
                }
            }
        }
    }
    Ok(out)
}

/// Steering parameters a client may change; applied at the next boundary.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_ticks: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_bytes: Option<u64>,
}

impl ConfigPatch {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.tau_ticks == Some(0) {
            return Err(EngineError::Config("tau_ticks must be positive".into()));
        }
        if self.theta.is_some_and(|t| !(t.is_finite() && t >= 1.0)) {
            return Err(EngineError::Config("theta must be a finite number ≥ 1".into()));
        }
        Ok(())
    }

    fn merge(&mut self, other: ConfigPatch) {
        self.tau_ticks = other.tau_ticks.or(self.tau_ticks);
        self.theta = other.theta.or(self.theta);
        self.budget_bytes = other.budget_bytes.or(self.budget_bytes);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveConfig {
    pub tau_ticks: u64,
    pub theta: f64,
    pub budget_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRecord {
    pub peer: String,
    pub query: String,
    pub rows: usize,
    /// Query-execution bytes charged by this query.
    pub bytes: u64,
    pub estimated_bytes: u64,
    pub views: Vec<String>,
    pub doc_ships: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Boundary {
    pub round: u64,
    pub config: EffectiveConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub applied: Option<ConfigPatch>,
    pub reports: Vec<RoundReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub tick: u64,
    pub scope: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peer: Option<String>,
    /// Cumulative counters.
    pub counters: Json,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub queries: Vec<QueryRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<Boundary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub published: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowMetrics {
    pub window: u64,
    pub start_tick: u64,
    pub end_tick: u64,
    pub queries: u64,
    pub bytes: BTreeMap<&'static str, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scope: &'static str,
    pub mode: Mode,
    pub ticks: u64,
    pub queries: u64,
    pub rounds: u64,
    pub totals: Json,
    /// Sum of the per-peer counters; equal to `totals` by construction.
    pub per_peer_sum: Json,
    pub windows: Vec<WindowMetrics>,
    pub final_window_query_execution_bytes: u64,
    pub view_count: usize,
    pub used_bytes: BTreeMap<String, u64>,
    pub budget_violations: u64,
}

/// A query answered outside the scheduled workload.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub table: Table,
    pub plan: Plan,
    pub record: QueryRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanRecord {
    pub tick: u64,
    pub peer: String,
    pub query: String,
    pub bytes: u64,
    pub plan: Json,
}

/// Simulation state; one instance owns a scenario.
pub struct Engine {
    cfg: ScenarioConfig,
    catalog: Catalog,
    store: Store,
    peers: Vec<PeerId>,
    docs: Vec<Arc<Document>>,
    workload: BTreeMap<u64, Vec<Scheduled>>,
    stats: BTreeMap<PeerId, QueryStats>,
    tick: u64,
    round: u64,
    next_boundary: u64,
    window_start: u64,
    window_counters: CategoryCounters,
    window_queries: u64,
    queries: u64,
    windows: Vec<WindowMetrics>,
    pending: Option<ConfigPatch>,
    recent: VecDeque<PlanRecord>,
    budget_violations: u64,
    last_reports: BTreeMap<String, RoundReport>,
}

impl Engine {
    /// Validates the config and loads the corpus; nothing is published
    /// before tick 0 runs.
    pub fn new(cfg: ScenarioConfig) -> Result<Self, EngineError> {
        if cfg.peers == 0 {
            return Err(EngineError::Config("at least one peer is required".into()));
        }
        if cfg.tau_ticks == 0 {
            return Err(EngineError::Config("tau_ticks must be positive".into()));
        }
        if cfg.mode == Mode::UserViews && cfg.user_views.is_empty() {
            return Err(EngineError::Config("userViews mode needs user_views".into()));
        }
        let names = cfg.peer_names();
        for p in cfg.peer_budgets.keys().chain(cfg.user_views.iter().map(|u| &u.peer)) {
            if !names.contains(p) {
                return Err(EngineError::UnknownPeer(p.clone()));
            }
        }
        for u in &cfg.user_views {
            TreePattern::parse(&u.pattern)?;
        }
        ConfigPatch {
            tau_ticks: None,
            theta: Some(cfg.adapt.theta),
            budget_bytes: None,
        }
        .validate()?;
        let workload = build_workload(&cfg, &names)?;
        let docs: Vec<Arc<Document>> = load_corpus(&cfg.corpus, cfg.seed)?.into_iter().map(Arc::new).collect();
        let overlay = Overlay::new(&names, cfg.overlay)?;
        let peers: Vec<PeerId> = names.iter().map(|n| overlay.peer(n).cloned()).collect::<Result<_, _>>()?;
        let catalog = Catalog::new(overlay).with_synopsis_depth(cfg.synopsis_depth);
        Ok(Engine {
            next_boundary: cfg.tau_ticks,
            cfg,
            catalog,
            store: Store::default(),
            peers,
            docs,
            workload,
            stats: BTreeMap::new(),
            tick: 0,
            round: 0,
            window_start: 0,
            window_counters: CategoryCounters::default(),
            window_queries: 0,
            queries: 0,
            windows: Vec::new(),
            pending: None,
            recent: VecDeque::new(),
            budget_violations: 0,
            last_reports: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    /// Tick at whose end the next round runs.
    pub fn next_boundary(&self) -> u64 {
        self.next_boundary
    }

    pub fn finished(&self) -> bool {
        self.tick >= self.cfg.ticks
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn peers(&self) -> &[PeerId] {
        &self.peers
    }

    pub fn stats(&self, peer: &PeerId) -> Option<&QueryStats> {
        self.stats.get(peer)
    }

    pub fn recent_plans(&self) -> impl Iterator<Item = &PlanRecord> {
        self.recent.iter()
    }

    pub fn last_report(&self, peer: &str) -> Option<&RoundReport> {
        self.last_reports.get(peer)
    }

    pub fn pending(&self) -> Option<&ConfigPatch> {
        self.pending.as_ref()
    }

    pub fn peer(&self, name: &str) -> Result<&PeerId, EngineError> {
        self.peers
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| EngineError::UnknownPeer(name.to_string()))
    }

    pub fn used_bytes(&self, peer: &PeerId) -> u64 {
        self.catalog
            .views_of(peer)
            .map(|v| v.actual_bytes.unwrap_or(v.estimated_bytes))
            .sum()
    }

    pub fn effective_config(&self) -> EffectiveConfig {
        EffectiveConfig {
            tau_ticks: self.cfg.tau_ticks,
            theta: self.cfg.adapt.theta,
            budget_bytes: self.cfg.budget_bytes,
        }
    }

    /// Queues steering changes for the next round boundary.
    pub fn queue_config(&mut self, patch: ConfigPatch) -> Result<(), EngineError> {
        patch.validate()?;
        self.pending.get_or_insert_with(ConfigPatch::default).merge(patch);
        Ok(())
    }

    /// Advances `n` ticks and returns the records of ticks with activity.
    pub fn step(&mut self, n: u64) -> Result<Vec<MetricsRecord>, EngineError> {
        let mut out = Vec::new();
        for _ in 0..n {
            out.extend(self.step_one()?);
        }
        Ok(out)
    }

    fn step_one(&mut self) -> Result<Vec<MetricsRecord>, EngineError> {
        let t = self.tick;
        let mut published = None;
        if t == 0 {
            published = Some(self.publish_all()?);
            if self.cfg.mode == Mode::UserViews {
                self.materialize_user_views()?;
            }
        }
        let mut queries = Vec::new();
        for s in self.workload.remove(&t).unwrap_or_default() {
            let peer = self.peer(&s.peer)?.clone();
            queries.push(self.answer(&peer, &s.query)?.record);
        }
        self.tick += 1;
        let mut out = Vec::new();
        let boundary = if self.tick == self.next_boundary {
            Some(self.boundary()?)
        } else {
            None
        };
        if published.is_some() || !queries.is_empty() || boundary.is_some() {
            let with_peers = boundary.is_some();
            out.push(MetricsRecord {
                tick: t,
                scope: "global",
                peer: None,
                counters: self.catalog.overlay().metrics().global.to_json(),
                queries,
                boundary,
                published,
            });
            if with_peers {
                for (name, c) in &self.catalog.overlay().metrics().per_peer {
                    out.push(MetricsRecord {
                        tick: t,
                        scope: "peer",
                        peer: Some(name.clone()),
                        counters: c.to_json(),
                        queries: Vec::new(),
                        boundary: None,
                        published: None,
                    });
                }
            }
        }
        Ok(out)
    }

    fn publish_all(&mut self) -> Result<usize, EngineError> {
        for (i, d) in self.docs.iter().enumerate() {
            let holder = &self.peers[i % self.peers.len()];
            self.catalog.publish_document(holder, d)?;
            self.store.documents.insert(d.uri().to_string(), d.clone());
        }
        Ok(self.docs.len())
    }

    fn materialize_user_views(&mut self) -> Result<(), EngineError> {
        for u in self.cfg.user_views.clone() {
            let peer = self.peer(&u.peer)?.clone();
            let pattern = TreePattern::parse(&u.pattern)?;
            let est = adapt::estimate_view_size(&mut self.catalog, &peer, &pattern)?;
            let extent = adapt::materialize(&mut self.catalog, &self.store, &peer, &pattern, self.cfg.rewrite.query_bytes)?;
            let mut v = ViewDef::new(pattern, peer.clone(), est, 0);
            let actual = extent.payload_bytes();
            v.actual_bytes = Some(actual);
            if self.used_bytes(&peer) + actual > self.cfg.capacity(&peer.name) || self.catalog.view(&v.view_id).is_some() {
                tracing::warn!(peer = %peer, pattern = %u.pattern, "user view skipped: over budget or duplicate");
                continue;
            }
            self.catalog.advertise_view(&v)?;
            self.store.extents.insert(v.view_id.clone(), extent);
        }
        Ok(())
    }

    /// Answers `q` at `peer` with the mode's strategy, charging metrics and
    /// recording statistics at the asker and every helper.
    pub fn submit_query(&mut self, peer: &str, q: &str) -> Result<QueryOutcome, EngineError> {
        let peer = self.peer(peer)?.clone();
        let q = QuerySpec::parse(q)?;
        self.answer(&peer, &q)
    }

    fn answer(&mut self, peer: &PeerId, q: &QuerySpec) -> Result<QueryOutcome, EngineError> {
        let before = self.qe_bytes();
        let (plan, estimated) = if self.cfg.mode == Mode::DocIndexOnly {
            let planner = Planner::new(&self.catalog, self.cfg.rewrite);
            (planner.docship_plan(q), planner.docship_cost(q))
        } else {
            let views = self.catalog.lookup_views(peer, q)?;
            let (plan, est) = Planner::new(&self.catalog, self.cfg.rewrite).best_plan(q, &views, peer);
            (plan, est.bytes)
        };
        let exec = execute_plan(&plan, peer, &mut self.catalog, &self.store, &self.cfg.rewrite)?;
        self.stats.entry(peer.clone()).or_default().record(q, peer);
        for h in &exec.helpers {
            self.stats.entry(h.clone()).or_default().record(q, peer);
        }
        let bytes = self.qe_bytes() - before;
        let leaves = plan.leaves();
        let record = QueryRecord {
            peer: peer.name.clone(),
            query: q.canonical(),
            rows: exec.table.len(),
            bytes,
            estimated_bytes: estimated,
            views: plan.view_ids(),
            doc_ships: leaves.iter().filter(|l| matches!(l, Plan::DocShip { .. })).count(),
        };
        self.queries += 1;
        self.window_queries += 1;
        if self.cfg.recent_plans > 0 {
            if self.recent.len() == self.cfg.recent_plans {
                self.recent.pop_front();
            }
            self.recent.push_back(PlanRecord {
                tick: self.tick,
                peer: peer.name.clone(),
                query: record.query.clone(),
                bytes,
                plan: plan.to_json(),
            });
        }
        Ok(QueryOutcome {
            table: exec.table,
            plan,
            record,
        })
    }

    fn qe_bytes(&self) -> u64 {
        self.catalog.overlay().metrics().global.get(Category::QueryExecution).bytes
    }

    fn boundary(&mut self) -> Result<Boundary, EngineError> {
        self.round += 1;
        let now = self.catalog.overlay().metrics().global;
        let mut bytes = BTreeMap::new();
        for c in Category::ALL {
            bytes.insert(c.name(), now.get(c).bytes - self.window_counters.get(c).bytes);
        }
        self.windows.push(WindowMetrics {
            window: self.round - 1,
            start_tick: self.window_start,
            end_tick: self.tick,
            queries: self.window_queries,
            bytes,
        });
        let applied = self.pending.take();
        if let Some(p) = &applied {
            if let Some(t) = p.tau_ticks {
                self.cfg.tau_ticks = t;
            }
            if let Some(t) = p.theta {
                self.cfg.adapt.theta = t;
            }
            if let Some(b) = p.budget_bytes {
                self.cfg.budget_bytes = b;
                self.cfg.peer_budgets.clear();
            }
        }
        let mut reports = Vec::new();
        if self.cfg.mode == Mode::Adaptive {
            let empty = QueryStats::default();
            for peer in self.peers.clone() {
                let stats = self.stats.get(&peer).unwrap_or(&empty);
                let report = adapt_round(
                    RoundInput {
                        peer: &peer,
                        stats,
                        capacity: self.cfg.capacity(&peer.name),
                        round: self.round,
                        adapt: &self.cfg.adapt,
                        rewrite: &self.cfg.rewrite,
                    },
                    &mut self.catalog,
                    &mut self.store,
                )?;
                self.last_reports.insert(peer.name.clone(), report.clone());
                reports.push(report);
            }
        }
        for p in &self.peers {
            if self.used_bytes(p) > self.cfg.capacity(&p.name) {
                self.budget_violations += 1;
            }
        }
        for s in self.stats.values_mut() {
            s.reset();
        }
        self.window_counters = self.catalog.overlay().metrics().global;
        self.window_start = self.tick;
        self.window_queries = 0;
        self.next_boundary = self.tick + self.cfg.tau_ticks;
        Ok(Boundary {
            round: self.round,
            config: self.effective_config(),
            applied,
            reports,
        })
    }

    pub fn budget_violations(&self) -> u64 {
        self.budget_violations
    }

    pub fn windows(&self) -> &[WindowMetrics] {
        &self.windows
    }

    pub fn summary(&self) -> Summary {
        let m = self.catalog.overlay().metrics();
        Summary {
            scope: "summary",
            mode: self.cfg.mode,
            ticks: self.tick,
            queries: self.queries,
            rounds: self.round,
            totals: m.global.to_json(),
            per_peer_sum: m.sum_of_peers().to_json(),
            windows: self.windows.clone(),
            final_window_query_execution_bytes: self
                .windows
                .last()
                .map(|w| w.bytes[Category::QueryExecution.name()])
                .unwrap_or(0),
            view_count: self.catalog.views().count(),
            used_bytes: self.peers.iter().map(|p| (p.name.clone(), self.used_bytes(p))).collect(),
            budget_violations: self.budget_violations,
        }
    }
}

/// Runs a scenario to completion and returns its JSONL metrics: one line
/// per active tick (plus per-peer lines at boundaries) and a final summary.
pub fn run_scenario(cfg: ScenarioConfig) -> Result<String, EngineError> {
    Ok(run_scenario_with(cfg)?.0)
}

pub fn run_scenario_with(cfg: ScenarioConfig) -> Result<(String, Summary), EngineError> {
    let mut engine = Engine::new(cfg)?;
    let mut out = String::new();
    while !engine.finished() {
        for r in engine.step(1)? {
            out.push_str(&serde_json::to_string(&r).expect("records serialize"));
            out.push('\n');
        }
    }
    let s = engine.summary();
    out.push_str(&serde_json::to_string(&s).expect("summary serializes"));
    out.push('\n');
    Ok((out, s))
}

/// JSON view of a peer for listings.
pub fn peer_json(engine: &Engine, p: &PeerId) -> Json {
    json!({
        "id": p.name,
        "position": p.position,
        "documents": engine.catalog.documents().filter(|u| engine.catalog.holder_of(u) == Some(p)).count(),
        "views": engine.catalog.views_of(p).count(),
        "used_bytes": engine.used_bytes(p),
        "capacity_bytes": engine.cfg.capacity(&p.name),
    })
}
