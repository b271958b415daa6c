//! Conjunctive tree patterns with value joins: the query language, its
//! parser, and a memoized evaluator over single documents.
//!
//! Patterns are stored as flat preorder arenas, so a node's index doubles as
//! its column identity. Text form:
//!
//! ```text
//! (//book $b {id,val} [= "x"] (/title {val}) (//author [~ smith]))
//! (//a $x {val}); (//b $y {val}) WHERE $x=$y
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use thiserror::Error;

use crate::table::{Ann, Column, Table, Tuple, Value};
use crate::xml::{tokenize, Document, Term};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("variable ${0} declared more than once")]
    DuplicateVariable(String),
    #[error("join refers to undeclared variable ${0}")]
    UndeclaredVariable(String),
    #[error("invalid pattern: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Axis {
    Child,
    Descendant,
}

impl Axis {
    fn as_str(self) -> &'static str {
        match self {
            Axis::Child => "/",
            Axis::Descendant => "//",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Name(String),
    Wildcard,
}

impl Label {
    pub fn name(s: &str) -> Self {
        Label::Name(s.to_string())
    }

    pub fn matches(&self, label: &str) -> bool {
        match self {
            Label::Wildcard => true,
            Label::Name(n) => n == label,
        }
    }

    pub fn is_wildcard(&self) -> bool {
        matches!(self, Label::Wildcard)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Name(n) => f.write_str(n),
            Label::Wildcard => f.write_str("*"),
        }
    }
}

/// Subset of {id, val, cont}.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AnnSet(u8);

impl AnnSet {
    pub const EMPTY: AnnSet = AnnSet(0);
    pub const ID_CONT: AnnSet = AnnSet(0b101);

    fn bit(a: Ann) -> u8 {
        match a {
            Ann::Id => 1,
            Ann::Val => 2,
            Ann::Cont => 4,
        }
    }

    pub fn of(anns: &[Ann]) -> Self {
        let mut s = AnnSet::EMPTY;
        for a in anns {
            s.insert(*a);
        }
        s
    }

    pub fn contains(self, a: Ann) -> bool {
        self.0 & Self::bit(a) != 0
    }

    pub fn insert(&mut self, a: Ann) {
        self.0 |= Self::bit(a);
    }

    pub fn union(self, other: AnnSet) -> AnnSet {
        AnnSet(self.0 | other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_subset(self, other: AnnSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// In canonical order id, val, cont.
    pub fn iter(self) -> impl Iterator<Item = Ann> {
        Ann::ALL.into_iter().filter(move |a| self.contains(*a))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Predicate {
    /// The node's value equals the text exactly.
    Equals(String),
    /// Some text run in the node's subtree contains the (lowercase) word.
    ContainsWord(String),
}

impl Predicate {
    pub fn holds(&self, d: &Document, element: usize) -> bool {
        match self {
            Predicate::Equals(t) => d.value_of(element) == *t,
            Predicate::ContainsWord(w) => d
                .subtree_text_runs(element)
                .any(|run| tokenize(run).any(|tok| tok == *w)),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Equals(t) => {
                f.write_str("[= \"")?;
                for c in t.chars() {
                    if c == '"' || c == '\\' {
                        f.write_str("\\")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str("\"]")
            }
            Predicate::ContainsWord(w) => write!(f, "[~ {w}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PatternNode {
    pub label: Label,
    /// Edge to the parent; for the root, `Child` means "is the document
    /// root element" and `Descendant` means "anywhere".
    pub axis: Axis,
    pub anns: AnnSet,
    pub predicate: Option<Predicate>,
    pub var: Option<String>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// Owned recursive form, convenient for building and transforming patterns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternTree {
    pub label: Label,
    pub axis: Axis,
    pub anns: AnnSet,
    pub predicate: Option<Predicate>,
    pub var: Option<String>,
    pub children: Vec<PatternTree>,
}

impl PatternTree {
    pub fn new(axis: Axis, label: Label) -> Self {
        PatternTree {
            label,
            axis,
            anns: AnnSet::EMPTY,
            predicate: None,
            var: None,
            children: Vec::new(),
        }
    }

    pub fn with_anns(mut self, anns: &[Ann]) -> Self {
        self.anns = AnnSet::of(anns);
        self
    }

    pub fn with_predicate(mut self, p: Predicate) -> Self {
        self.predicate = Some(p);
        self
    }

    pub fn with_child(mut self, c: PatternTree) -> Self {
        self.children.push(c);
        self
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(PatternTree::size).sum::<usize>()
    }

    pub fn has_annotation(&self) -> bool {
        !self.anns.is_empty() || self.children.iter().any(PatternTree::has_annotation)
    }
}

/// A tree pattern in preorder. Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TreePattern {
    nodes: Vec<PatternNode>,
}

impl TreePattern {
    pub fn from_tree(tree: &PatternTree) -> Self {
        fn go(t: &PatternTree, parent: Option<usize>, out: &mut Vec<PatternNode>) -> usize {
            let idx = out.len();
            out.push(PatternNode {
                label: t.label.clone(),
                axis: t.axis,
                anns: t.anns,
                predicate: t.predicate.clone(),
                var: t.var.clone(),
                parent,
                children: Vec::new(),
            });
            for c in &t.children {
                let ci = go(c, Some(idx), out);
                out[idx].children.push(ci);
            }
            idx
        }
        let mut nodes = Vec::with_capacity(tree.size());
        go(tree, None, &mut nodes);
        TreePattern { nodes }
    }

    pub fn to_tree(&self) -> PatternTree {
        self.subtree(0)
    }

    pub fn subtree(&self, idx: usize) -> PatternTree {
        let n = &self.nodes[idx];
        PatternTree {
            label: n.label.clone(),
            axis: n.axis,
            anns: n.anns,
            predicate: n.predicate.clone(),
            var: n.var.clone(),
            children: n.children.iter().map(|&c| self.subtree(c)).collect(),
        }
    }

    pub fn parse(text: &str) -> Result<TreePattern, QueryError> {
        let mut p = QParser::new(text);
        p.ws();
        let t = p.node()?;
        p.ws();
        if !p.at_end() {
            return Err(p.err("unexpected trailing input"));
        }
        let pat = TreePattern::from_tree(&t);
        pat.validate()?;
        Ok(pat)
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        if !self
            .nodes
            .iter()
            .any(|n| !n.anns.is_empty() || n.var.is_some())
        {
            return Err(QueryError::Invalid(
                "pattern needs an annotated node or a variable".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if let Some(v) = &n.var {
                if !seen.insert(v.clone()) {
                    return Err(QueryError::DuplicateVariable(v.clone()));
                }
            }
            match &n.predicate {
                Some(Predicate::Equals(t)) | Some(Predicate::ContainsWord(t)) if t.is_empty() => {
                    return Err(QueryError::Invalid("empty predicate".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, idx: usize) -> &PatternNode {
        &self.nodes[idx]
    }

    pub fn nodes(&self) -> &[PatternNode] {
        &self.nodes
    }

    pub fn root(&self) -> &PatternNode {
        &self.nodes[0]
    }

    /// Proper descendants of `idx` (a contiguous preorder range).
    pub fn descendants(&self, idx: usize) -> std::ops::Range<usize> {
        let mut end = idx + 1;
        while end < self.nodes.len() && self.is_ancestor(idx, end) {
            end += 1;
        }
        idx + 1..end
    }

    pub fn is_ancestor(&self, anc: usize, mut node: usize) -> bool {
        while let Some(p) = self.nodes[node].parent {
            if p == anc {
                return true;
            }
            node = p;
        }
        false
    }

    pub fn depth(&self, mut idx: usize) -> usize {
        let mut d = 0;
        while let Some(p) = self.nodes[idx].parent {
            d += 1;
            idx = p;
        }
        d
    }

    /// Annotated (node, ann) pairs in preorder, anns in id/val/cont order.
    pub fn annotated_columns(&self) -> Vec<(usize, Ann)> {
        self.nodes
            .iter()
            .enumerate()
            .flat_map(|(i, n)| n.anns.iter().map(move |a| (i, a)))
            .collect()
    }

    pub fn has_annotation(&self) -> bool {
        self.nodes.iter().any(|n| !n.anns.is_empty())
    }

    pub fn var_node(&self, name: &str) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.var.as_deref() == Some(name))
    }

    /// Copy with every variable removed.
    pub fn without_vars(&self) -> TreePattern {
        let mut p = self.clone();
        for n in &mut p.nodes {
            n.var = None;
        }
        p
    }

    /// Copy whose annotations are replaced by `anns[i]` for node i.
    pub fn with_annotations(&self, anns: &[AnnSet]) -> TreePattern {
        let mut p = self.clone();
        for (n, a) in p.nodes.iter_mut().zip(anns) {
            n.anns = *a;
        }
        p
    }

    pub fn canonical(&self) -> String {
        self.to_string()
    }

    fn write_node(&self, idx: usize, out: &mut String) {
        use std::fmt::Write;
        let n = &self.nodes[idx];
        let _ = write!(out, "({}{}", n.axis.as_str(), n.label);
        if let Some(v) = &n.var {
            let _ = write!(out, " ${v}");
        }
        if !n.anns.is_empty() {
            let anns: Vec<&str> = n.anns.iter().map(Ann::as_str).collect();
            let _ = write!(out, " {{{}}}", anns.join(","));
        }
        if let Some(p) = &n.predicate {
            let _ = write!(out, " {p}");
        }
        for &c in &n.children {
            out.push(' ');
            self.write_node(c, out);
        }
        out.push(')');
    }
}

impl fmt::Display for TreePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.write_node(0, &mut s);
        f.write_str(&s)
    }
}

impl FromStr for TreePattern {
    type Err = QueryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TreePattern::parse(s)
    }
}

/// Patterns joined by value equality on variables.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuerySpec {
    pub patterns: Vec<TreePattern>,
    pub joins: Vec<(String, String)>,
    /// Derived from the patterns' annotations: pattern order, then node
    /// preorder, then id/val/cont.
    pub output: Vec<Column>,
}

impl QuerySpec {
    pub fn new(patterns: Vec<TreePattern>, joins: Vec<(String, String)>) -> Result<Self, QueryError> {
        let mut seen = BTreeSet::new();
        for p in &patterns {
            p.validate()?;
            for n in p.nodes() {
                if let Some(v) = &n.var {
                    if !seen.insert(v.clone()) {
                        return Err(QueryError::DuplicateVariable(v.clone()));
                    }
                }
            }
        }
        for (a, b) in &joins {
            for v in [a, b] {
                if !seen.contains(v) {
                    return Err(QueryError::UndeclaredVariable(v.clone()));
                }
            }
        }
        let output: Vec<Column> = patterns
            .iter()
            .enumerate()
            .flat_map(|(pi, p)| {
                p.annotated_columns()
                    .into_iter()
                    .map(move |(n, a)| Column::new(pi, n, a))
            })
            .collect();
        if output.is_empty() {
            return Err(QueryError::Invalid("query has no annotated output node".into()));
        }
        Ok(QuerySpec {
            patterns,
            joins,
            output,
        })
    }

    pub fn single(p: TreePattern) -> Result<Self, QueryError> {
        QuerySpec::new(vec![p], Vec::new())
    }

    pub fn parse(text: &str) -> Result<Self, QueryError> {
        parse_query(text)
    }

    pub fn var_location(&self, name: &str) -> Option<(usize, usize)> {
        self.patterns
            .iter()
            .enumerate()
            .find_map(|(pi, p)| p.var_node(name).map(|n| (pi, n)))
    }

    /// Join conditions as val-column pairs.
    pub fn join_columns(&self) -> Vec<(Column, Column)> {
        self.joins
            .iter()
            .map(|(a, b)| {
                let (pa, na) = self.var_location(a).expect("validated join variable");
                let (pb, nb) = self.var_location(b).expect("validated join variable");
                (Column::new(pa, na, Ann::Val), Column::new(pb, nb, Ann::Val))
            })
            .collect()
    }

    /// Columns pattern `pi` must deliver: its outputs plus the val of every
    /// variable that takes part in a join. Sorted by (node, ann).
    pub fn required_columns(&self, pi: usize) -> Vec<(usize, Ann)> {
        let mut cols: BTreeSet<(usize, Ann)> = self
            .output
            .iter()
            .filter(|c| c.pattern == pi)
            .map(|c| (c.node, c.ann))
            .collect();
        for (l, r) in self.join_columns() {
            for c in [l, r] {
                if c.pattern == pi {
                    cols.insert((c.node, c.ann));
                }
            }
        }
        cols.into_iter().collect()
    }

    /// Pattern `pi` re-annotated with exactly its required columns and no
    /// variables: the shape shipped to document holders or stored as an
    /// exact-match view.
    pub fn required_pattern(&self, pi: usize) -> TreePattern {
        let p = &self.patterns[pi];
        let mut anns = vec![AnnSet::EMPTY; p.len()];
        for (n, a) in self.required_columns(pi) {
            anns[n].insert(a);
        }
        p.without_vars().with_annotations(&anns)
    }

    pub fn canonical(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for QuerySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.patterns.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{p}")?;
        }
        if !self.joins.is_empty() {
            let conds: Vec<String> = self.joins.iter().map(|(a, b)| format!("${a}=${b}")).collect();
            write!(f, " WHERE {}", conds.join(", "))?;
        }
        Ok(())
    }
}

impl FromStr for QuerySpec {
    type Err = QueryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_query(s)
    }
}

pub fn parse_query(text: &str) -> Result<QuerySpec, QueryError> {
    let mut p = QParser::new(text);
    let mut patterns = Vec::new();
    p.ws();
    let first = p.node()?;
    patterns.push(TreePattern::from_tree(&first));
    let mut joins = Vec::new();
    loop {
        p.ws();
        if p.eat(";") {
            p.ws();
            let t = p.node()?;
            patterns.push(TreePattern::from_tree(&t));
            continue;
        }
        if p.eat_keyword("WHERE") {
            loop {
                p.ws();
                let a = p.var()?;
                p.ws();
                if !p.eat("=") {
                    return Err(p.err("expected '=' in join condition"));
                }
                p.ws();
                let b = p.var()?;
                joins.push((a, b));
                p.ws();
                if !p.eat(",") {
                    break;
                }
            }
            p.ws();
        }
        break;
    }
    if !p.at_end() {
        return Err(p.err("unexpected trailing input"));
    }
    QuerySpec::new(patterns, joins)
}

struct QParser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> QParser<'a> {
    fn new(src: &'a str) -> Self {
        QParser { src, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn err(&self, message: &str) -> QueryError {
        let before = &self.src[..self.pos];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        QueryError::Syntax {
            line,
            column,
            message: message.to_string(),
        }
    }

    fn ws(&mut self) {
        let r = self.rest();
        self.pos += r.len() - r.trim_start().len();
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.rest().starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        let r = self.rest();
        if r.len() >= kw.len() && r[..kw.len()].eq_ignore_ascii_case(kw) {
            let next = r[kw.len()..].chars().next();
            if next.is_none_or(|c| !is_name_char(c)) {
                self.pos += kw.len();
                return true;
            }
        }
        false
    }

    fn name(&mut self) -> Result<String, QueryError> {
        let r = self.rest();
        let len = r.find(|c: char| !is_name_char(c)).unwrap_or(r.len());
        if len == 0 {
            return Err(self.err("expected a name"));
        }
        self.pos += len;
        Ok(r[..len].to_string())
    }

    fn var(&mut self) -> Result<String, QueryError> {
        if !self.eat("$") {
            return Err(self.err("expected a variable"));
        }
        self.name()
    }

    fn node(&mut self) -> Result<PatternTree, QueryError> {
        if !self.eat("(") {
            return Err(self.err("expected '('"));
        }
        self.ws();
        let axis = if self.eat("//") {
            Axis::Descendant
        } else if self.eat("/") {
            Axis::Child
        } else {
            return Err(self.err("expected axis '/' or '//'"));
        };
        let label = if self.eat("*") {
            Label::Wildcard
        } else {
            Label::Name(self.name()?)
        };
        let mut t = PatternTree::new(axis, label);
        let (mut saw_anns, mut saw_pred) = (false, false);
        loop {
            self.ws();
            let r = self.rest();
            if r.starts_with(')') {
                self.pos += 1;
                return Ok(t);
            }
            if r.starts_with('(') {
                t.children.push(self.node()?);
            } else if r.starts_with('$') {
                if t.var.is_some() || !t.children.is_empty() {
                    return Err(self.err("unexpected variable"));
                }
                t.var = Some(self.var()?);
            } else if r.starts_with('{') {
                if saw_anns || !t.children.is_empty() {
                    return Err(self.err("unexpected annotation list"));
                }
                saw_anns = true;
                self.pos += 1;
                loop {
                    self.ws();
                    let a = match self.name()?.as_str() {
                        "id" => Ann::Id,
                        "val" => Ann::Val,
                        "cont" => Ann::Cont,
                        _ => return Err(self.err("annotation must be id, val or cont")),
                    };
                    t.anns.insert(a);
                    self.ws();
                    if self.eat("}") {
                        break;
                    }
                    if !self.eat(",") {
                        return Err(self.err("expected ',' or '}'"));
                    }
                }
            } else if r.starts_with('[') {
                if saw_pred || !t.children.is_empty() {
                    return Err(self.err("unexpected predicate"));
                }
                saw_pred = true;
                self.pos += 1;
                self.ws();
                let pred = if self.eat("=") {
                    self.ws();
                    Predicate::Equals(self.string()?)
                } else if self.eat("~") {
                    self.ws();
                    let r = self.rest();
                    let len = r
                        .find(|c: char| c.is_whitespace() || c == ']')
                        .unwrap_or(r.len());
                    let word = r[..len].to_lowercase();
                    self.pos += len;
                    Predicate::ContainsWord(word)
                } else {
                    return Err(self.err("predicate must start with '=' or '~'"));
                };
                match &pred {
                    Predicate::Equals(s) | Predicate::ContainsWord(s) if s.is_empty() => {
                        return Err(self.err("empty predicate"))
                    }
                    _ => {}
                }
                self.ws();
                if !self.eat("]") {
                    return Err(self.err("expected ']'"));
                }
                t.predicate = Some(pred);
            } else if r.is_empty() {
                return Err(self.err("unbalanced parentheses: expected ')'"));
            } else {
                return Err(self.err("unexpected character"));
            }
        }
    }

    fn string(&mut self) -> Result<String, QueryError> {
        if !self.eat("\"") {
            return Err(self.err("expected string literal"));
        }
        let mut out = String::new();
        let mut chars = self.rest().char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    self.pos += i + 1;
                    return Ok(out);
                }
                '\\' => match chars.next() {
                    Some((_, e)) => out.push(e),
                    None => break,
                },
                _ => out.push(c),
            }
        }
        self.pos = self.src.len();
        Err(self.err("unterminated string literal"))
    }
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | ':')
}

pub(crate) fn node_matches(pn: &PatternNode, d: &Document, element: usize) -> bool {
    pn.label.matches(&d.element(element).label)
        && pn.predicate.as_ref().is_none_or(|p| p.holds(d, element))
}

/// Bottom-up evaluator: for each (pattern node, element) the set of partial
/// tuples over the columns of the pattern subtree, memoized.
struct Evaluator<'a> {
    d: &'a Document,
    p: &'a TreePattern,
    cols_by_node: Vec<Vec<Ann>>,
    memo: HashMap<(usize, usize), Rc<BTreeSet<Tuple>>>,
}

impl Evaluator<'_> {
    fn value(&self, element: usize, ann: Ann) -> Value {
        match ann {
            Ann::Id => Value::Id(self.d.node_id(element)),
            Ann::Val => Value::Val(self.d.value_of(element)),
            Ann::Cont => Value::Cont(self.d.serialize_at(element)),
        }
    }

    fn sub(&mut self, pn: usize, element: usize) -> Rc<BTreeSet<Tuple>> {
        if let Some(r) = self.memo.get(&(pn, element)) {
            return r.clone();
        }
        let node = &self.p.nodes[pn];
        let mut acc: BTreeSet<Tuple> = BTreeSet::new();
        if node_matches(node, self.d, element) {
            let own: Tuple = self.cols_by_node[pn]
                .iter()
                .map(|&a| self.value(element, a))
                .collect();
            acc.insert(own);
            for &pc in &node.children.clone() {
                let cands: Vec<usize> = match self.p.nodes[pc].axis {
                    Axis::Child => self.d.element(element).element_children().collect(),
                    Axis::Descendant => self.d.descendants(element).collect(),
                };
                let mut alts: BTreeSet<Tuple> = BTreeSet::new();
                for c in cands {
                    alts.extend(self.sub(pc, c).iter().cloned());
                }
                if alts.is_empty() {
                    acc.clear();
                    break;
                }
                acc = acc
                    .iter()
                    .flat_map(|a| {
                        alts.iter().map(move |b| {
                            let mut t = a.clone();
                            t.extend(b.iter().cloned());
                            t
                        })
                    })
                    .collect();
            }
        }
        let rc = Rc::new(acc);
        self.memo.insert((pn, element), rc.clone());
        rc
    }
}

/// Projections of all embeddings of `p` into `d` onto `cols` (in the given
/// order). With `anchor`, the pattern root is pinned to that element
/// regardless of its axis.
pub fn pattern_rows(
    d: &Document,
    p: &TreePattern,
    cols: &[(usize, Ann)],
    anchor: Option<usize>,
) -> BTreeSet<Tuple> {
    let mut sorted: Vec<(usize, Ann)> = cols.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut cols_by_node = vec![Vec::new(); p.len()];
    for &(n, a) in &sorted {
        cols_by_node[n].push(a);
    }
    let perm: Vec<usize> = cols
        .iter()
        .map(|c| sorted.binary_search(c).expect("column present"))
        .collect();
    let mut ev = Evaluator {
        d,
        p,
        cols_by_node,
        memo: HashMap::new(),
    };
    let roots: Vec<usize> = match (anchor, p.root().axis) {
        (Some(a), _) => vec![a],
        (None, Axis::Child) => vec![d.root()],
        (None, Axis::Descendant) => (0..d.len()).collect(),
    };
    let mut out = BTreeSet::new();
    for r in roots {
        for t in ev.sub(0, r).iter() {
            out.insert(perm.iter().map(|&i| t[i].clone()).collect());
        }
    }
    out
}

/// Header: annotated nodes in preorder, pattern index 0.
pub fn evaluate_pattern(d: &Document, p: &TreePattern) -> Table {
    let cols = p.annotated_columns();
    Table {
        header: cols.iter().map(|&(n, a)| Column::new(0, n, a)).collect(),
        rows: pattern_rows(d, p, &cols, None),
    }
}

/// Per-pattern tables over the whole corpus, value-joined and projected to
/// the query output. Join partners may come from different documents.
pub fn evaluate_query<'a>(corpus: impl IntoIterator<Item = &'a Document>, q: &QuerySpec) -> Table {
    let docs: Vec<&Document> = corpus.into_iter().collect();
    let mut acc: Option<Table> = None;
    let joins = q.join_columns();
    for (pi, p) in q.patterns.iter().enumerate() {
        let cols = q.required_columns(pi);
        let mut t = Table::empty(cols.iter().map(|&(n, a)| Column::new(pi, n, a)).collect());
        for d in &docs {
            t.rows.extend(pattern_rows(d, p, &cols, None));
        }
        acc = Some(match acc {
            None => t,
            Some(prev) => {
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
                prev.equi_join(&t, &on)
            }
        });
    }
    let joined = acc.expect("query has at least one pattern");
    // joins inside a single pattern
    let mut joined = joined;
    for (l, r) in &joins {
        if l.pattern == r.pattern {
            let (li, ri) = (joined.position(l).unwrap(), joined.position(r).unwrap());
            joined.retain(|t| t[li] == t[ri]);
        }
    }
    joined.project(&q.output)
}

/// All maps from `v` nodes to `q` nodes preserving labels (v wildcard
/// matches anything), child edges onto child edges, descendant edges onto
/// downward paths, and v predicates onto textually identical q predicates.
pub fn embed_pattern(v: &TreePattern, q: &TreePattern) -> Vec<Vec<usize>> {
    fn compatible(vn: &PatternNode, qn: &PatternNode) -> bool {
        let label_ok = match &vn.label {
            Label::Wildcard => true,
            Label::Name(l) => matches!(&qn.label, Label::Name(m) if m == l),
        };
        label_ok
            && vn
                .predicate
                .as_ref()
                .is_none_or(|p| qn.predicate.as_ref() == Some(p))
    }
    fn go(
        v: &TreePattern,
        q: &TreePattern,
        vi: usize,
        map: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if vi == v.len() {
            out.push(map.clone());
            return;
        }
        let vn = v.node(vi);
        let cands: Vec<usize> = match vn.parent {
            None => match vn.axis {
                Axis::Child => {
                    if q.root().axis == Axis::Child {
                        vec![0]
                    } else {
                        vec![]
                    }
                }
                Axis::Descendant => (0..q.len()).collect(),
            },
            Some(vp) => {
                let x = map[vp];
                match vn.axis {
                    Axis::Child => q
                        .node(x)
                        .children
                        .iter()
                        .copied()
                        .filter(|&y| q.node(y).axis == Axis::Child)
                        .collect(),
                    Axis::Descendant => q.descendants(x).collect(),
                }
            }
        };
        for y in cands {
            if compatible(vn, q.node(y)) {
                map.push(y);
                go(v, q, vi + 1, map, out);
                map.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(v, q, 0, &mut Vec::with_capacity(v.len()), &mut out);
    out
}

/// Non-wildcard labels, containsWord words and the tokenized words of
/// equality predicates.
pub fn pattern_terms(p: &TreePattern) -> BTreeSet<Term> {
    let mut out = locator_terms(p);
    for n in p.nodes() {
        if let Some(Predicate::Equals(t)) = &n.predicate {
            out.extend(tokenize(t).map(|w| Term::word(&w)));
        }
    }
    out
}

/// Terms every document with a non-empty extent is guaranteed to carry:
/// labels and containsWord words. Words of equality predicates are left out
/// because a node value concatenates several text runs and its tokens need
/// not occur in any single run.
pub fn locator_terms(p: &TreePattern) -> BTreeSet<Term> {
    let mut out = BTreeSet::new();
    for n in p.nodes() {
        if let Label::Name(l) = &n.label {
            out.insert(Term::label(l));
        }
        if let Some(Predicate::ContainsWord(w)) = &n.predicate {
            out.insert(Term::word(w));
        }
    }
    out
}

pub fn label_terms(p: &TreePattern) -> BTreeSet<Term> {
    p.nodes()
        .iter()
        .filter_map(|n| match &n.label {
            Label::Name(l) => Some(Term::label(l)),
            Label::Wildcard => None,
        })
        .collect()
}
