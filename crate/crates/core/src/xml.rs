//! Element trees with interval identifiers.
//!
//! Every element receives a `(start, end)` pair from a single document-order
//! counter that ticks once when the element opens and once when it closes.
//! Ancestorship then reduces to interval nesting. Attributes are normalized
//! into child elements (placed before the element's content) whose text is
//! the attribute value, so labels and attribute names share one mechanism.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum XmlError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("node {0} not found in document")]
    NotFound(NodeId),
}

fn parse_err<T>(offset: usize, message: impl Into<String>) -> Result<T, XmlError> {
    Err(XmlError::Parse {
        offset,
        message: message.into(),
    })
}

/// Structural identifier of an element: document reference plus the
/// open/close counter values.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub doc: Arc<str>,
    pub start: u32,
    pub end: u32,
}

impl NodeId {
    pub fn new(doc: impl Into<Arc<str>>, start: u32, end: u32) -> Self {
        NodeId {
            doc: doc.into(),
            start,
            end,
        }
    }

    /// Strict ancestorship; a node does not contain itself.
    pub fn contains(&self, other: &NodeId) -> bool {
        id_contains(self, other)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.doc, self.start, self.end)
    }
}

pub fn id_contains(a: &NodeId, b: &NodeId) -> bool {
    a.doc == b.doc && a.start < b.start && b.end < a.end
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Child {
    Element(usize),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub label: String,
    pub children: Vec<Child>,
    pub parent: Option<usize>,
    pub start: u32,
    pub end: u32,
}

impl Element {
    pub fn element_children(&self) -> impl Iterator<Item = usize> + '_ {
        self.children.iter().filter_map(|c| match c {
            Child::Element(i) => Some(*i),
            Child::Text(_) => None,
        })
    }
}

/// A parsed document. Elements live in an arena indexed in document order
/// (index 0 is the root), so `start` is strictly increasing with the index.
#[derive(Debug, Clone)]
pub struct Document {
    uri: Arc<str>,
    elements: Vec<Element>,
}

impl PartialEq for Document {
    fn eq(&self, other: &Self) -> bool {
        self.uri == other.uri && self.same_structure(other)
    }
}

impl Document {
    pub fn uri(&self) -> &str {
        &self.uri
    }

    pub fn uri_arc(&self) -> &Arc<str> {
        &self.uri
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn element(&self, idx: usize) -> &Element {
        &self.elements[idx]
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn node_id(&self, idx: usize) -> NodeId {
        let e = &self.elements[idx];
        NodeId {
            doc: self.uri.clone(),
            start: e.start,
            end: e.end,
        }
    }

    /// Arena index of the element carrying `id`.
    pub fn index_of(&self, id: &NodeId) -> Result<usize, XmlError> {
        if *id.doc != *self.uri {
            return Err(XmlError::NotFound(id.clone()));
        }
        let idx = self
            .elements
            .binary_search_by_key(&id.start, |e| e.start)
            .map_err(|_| XmlError::NotFound(id.clone()))?;
        if self.elements[idx].end != id.end {
            return Err(XmlError::NotFound(id.clone()));
        }
        Ok(idx)
    }

    /// Proper descendants of `idx`, in document order.
    pub fn descendants(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let end = self.elements[idx].end;
        (idx + 1..self.elements.len()).take_while(move |&j| self.elements[j].start < end)
    }

    pub fn depth(&self, idx: usize) -> usize {
        let mut d = 0;
        let mut cur = self.elements[idx].parent;
        while let Some(p) = cur {
            d += 1;
            cur = self.elements[p].parent;
        }
        d
    }

    pub fn value_of(&self, idx: usize) -> String {
        let mut out = String::new();
        self.collect_text(idx, &mut out);
        out
    }

    fn collect_text(&self, idx: usize, out: &mut String) {
        for c in &self.elements[idx].children {
            match c {
                Child::Text(t) => out.push_str(t),
                Child::Element(i) => self.collect_text(*i, out),
            }
        }
    }

    pub fn serialize_at(&self, idx: usize) -> String {
        let mut out = String::new();
        self.write_element(idx, &mut out);
        out
    }

    fn write_element(&self, idx: usize, out: &mut String) {
        let e = &self.elements[idx];
        out.push('<');
        out.push_str(&e.label);
        if e.children.is_empty() {
            out.push_str("/>");
            return;
        }
        out.push('>');
        for c in &e.children {
            match c {
                Child::Text(t) => escape_into(t, out),
                Child::Element(i) => self.write_element(*i, out),
            }
        }
        out.push_str("</");
        out.push_str(&e.label);
        out.push('>');
    }

    /// Tree equality ignoring the URI: labels, children order and text runs.
    pub fn same_structure(&self, other: &Document) -> bool {
        fn eq(a: &Document, ai: usize, b: &Document, bi: usize) -> bool {
            let (x, y) = (&a.elements[ai], &b.elements[bi]);
            x.label == y.label
                && x.children.len() == y.children.len()
                && x.children.iter().zip(&y.children).all(|pair| match pair {
                    (Child::Text(s), Child::Text(t)) => s == t,
                    (Child::Element(i), Child::Element(j)) => eq(a, *i, b, *j),
                    _ => false,
                })
        }
        self.elements.len() == other.elements.len() && eq(self, 0, other, 0)
    }

    /// Text runs in document order, across the whole document.
    pub fn text_runs(&self) -> impl Iterator<Item = &str> + '_ {
        self.elements.iter().flat_map(|e| {
            e.children.iter().filter_map(|c| match c {
                Child::Text(t) => Some(t.as_str()),
                Child::Element(_) => None,
            })
        })
    }

    /// Text runs inside the subtree rooted at `idx` (including its own).
    pub fn subtree_text_runs(&self, idx: usize) -> impl Iterator<Item = &str> + '_ {
        std::iter::once(idx)
            .chain(self.descendants(idx))
            .flat_map(move |j| {
                self.elements[j].children.iter().filter_map(|c| match c {
                    Child::Text(t) => Some(t.as_str()),
                    Child::Element(_) => None,
                })
            })
    }
}

fn escape_into(text: &str, out: &mut String) {
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            _ => out.push(ch),
        }
    }
}

pub fn node_value(d: &Document, n: &NodeId) -> Result<String, XmlError> {
    Ok(d.value_of(d.index_of(n)?))
}

pub fn serialize_subtree(d: &Document, n: &NodeId) -> Result<String, XmlError> {
    Ok(d.serialize_at(d.index_of(n)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermKind {
    Label,
    Word,
}

/// Index term: an element/attribute name or a word of text content.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Term {
    pub kind: TermKind,
    pub text: String,
}

impl Term {
    pub fn label(text: &str) -> Self {
        Term {
            kind: TermKind::Label,
            text: text.to_lowercase(),
        }
    }

    pub fn word(text: &str) -> Self {
        Term {
            kind: TermKind::Word,
            text: text.to_lowercase(),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TermKind::Label => write!(f, "label:{}", self.text),
            TermKind::Word => write!(f, "word:{}", self.text),
        }
    }
}

/// Splits on Unicode whitespace, strips leading/trailing non-alphanumerics
/// and lowercases. Empty tokens are dropped.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().filter_map(|w| {
        let t = w.trim_matches(|c: char| !c.is_alphanumeric());
        (!t.is_empty()).then(|| t.to_lowercase())
    })
}

pub fn extract_terms(d: &Document) -> BTreeSet<Term> {
    let mut out: BTreeSet<Term> = d.elements.iter().map(|e| Term::label(&e.label)).collect();
    for run in d.text_runs() {
        out.extend(tokenize(run).map(|w| Term {
            kind: TermKind::Word,
            text: w,
        }));
    }
    out
}

pub fn parse_document(bytes: &[u8], uri: &str) -> Result<Document, XmlError> {
    let text = match std::str::from_utf8(bytes) {
        Ok(t) => t,
        Err(e) => return parse_err(e.valid_up_to(), "invalid UTF-8"),
    };
    if text.trim().is_empty() {
        return parse_err(0, "empty input");
    }
    let tree = roxmltree::Document::parse(text).map_err(|e| XmlError::Parse {
        offset: byte_offset(text, e.pos()),
        message: e.to_string(),
    })?;
    let mut b = Builder {
        counter: 0,
        elements: Vec::new(),
    };
    b.element(tree.root_element(), None);
    Ok(Document {
        uri: Arc::from(uri),
        elements: b.elements,
    })
}

fn byte_offset(text: &str, pos: roxmltree::TextPos) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(pos.row.saturating_sub(1) as usize)
        .map(str::len)
        .sum();
    let col = text[line_start..]
        .char_indices()
        .nth(pos.col.saturating_sub(1) as usize)
        .map_or(text.len() - line_start, |(i, _)| i);
    line_start + col
}

struct Builder {
    counter: u32,
    elements: Vec<Element>,
}

impl Builder {
    fn open(&mut self, label: &str, parent: Option<usize>) -> usize {
        let idx = self.elements.len();
        self.elements.push(Element {
            label: label.to_string(),
            children: Vec::new(),
            parent,
            start: self.counter,
            end: 0,
        });
        self.counter += 1;
        if let Some(p) = parent {
            self.elements[p].children.push(Child::Element(idx));
        }
        idx
    }

    fn close(&mut self, idx: usize) {
        self.elements[idx].end = self.counter;
        self.counter += 1;
    }

    fn element(&mut self, node: roxmltree::Node, parent: Option<usize>) {
        let idx = self.open(node.tag_name().name(), parent);
        for a in node.attributes() {
            let c = self.open(a.name(), Some(idx));
            if !a.value().is_empty() {
                self.elements[c].children.push(Child::Text(a.value().to_string()));
            }
            self.close(c);
        }
        for c in node.children() {
            if c.is_element() {
                self.element(c, Some(idx));
            } else if let Some(t) = c.text().filter(|_| c.is_text()) {
                self.push_text(idx, t);
            }
        }
        self.close(idx);
    }

    fn push_text(&mut self, idx: usize, text: &str) {
        if text.is_empty() {
            return;
        }
        let children = &mut self.elements[idx].children;
        if let Some(Child::Text(prev)) = children.last_mut() {
            prev.push_str(text);
        } else {
            children.push(Child::Text(text.to_string()));
        }
    }
}
