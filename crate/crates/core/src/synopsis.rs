//! Per-document dataguides: one node per distinct label path, with element
//! counts and value/content byte totals. They drive view size estimates.

use std::collections::BTreeSet;

use num_rational::Ratio;
use thiserror::Error;

use crate::pattern::{Axis, TreePattern};
use crate::table::{Ann, ID_BYTES};
use crate::xml::Document;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynopsisError {
    #[error("truncated synopsis encoding at byte {0}")]
    Truncated(usize),
    #[error("invalid UTF-8 label at byte {0}")]
    BadLabel(usize),
    #[error("trailing bytes after synopsis")]
    Trailing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynNode {
    pub label: String,
    pub count: u32,
    pub val_bytes: u32,
    pub cont_bytes: u32,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// Dataguide in preorder; node 0 is the document root path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Synopsis {
    nodes: Vec<SynNode>,
}

impl Synopsis {
    pub fn nodes(&self) -> &[SynNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &SynNode {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Looks up a node by its label path, e.g. `["book", "author"]`.
    pub fn find_path(&self, path: &[&str]) -> Option<&SynNode> {
        let (first, rest) = path.split_first()?;
        if self.nodes.first()?.label != *first {
            return None;
        }
        let mut cur = 0;
        for l in rest {
            cur = *self.nodes[cur]
                .children
                .iter()
                .find(|&&c| self.nodes[c].label == *l)?;
        }
        Some(&self.nodes[cur])
    }

    fn descendants(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack: Vec<usize> = self.nodes[i].children.iter().rev().copied().collect();
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.nodes[n].children.iter().rev());
        }
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_node(0, &mut out);
        out
    }

    fn encode_node(&self, i: usize, out: &mut Vec<u8>) {
        let n = &self.nodes[i];
        out.extend_from_slice(&(n.label.len() as u16).to_be_bytes());
        out.extend_from_slice(n.label.as_bytes());
        out.extend_from_slice(&n.count.to_be_bytes());
        out.extend_from_slice(&n.val_bytes.to_be_bytes());
        out.extend_from_slice(&n.cont_bytes.to_be_bytes());
        out.extend_from_slice(&(n.children.len() as u16).to_be_bytes());
        for &c in &n.children {
            self.encode_node(c, out);
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Synopsis, SynopsisError> {
        let mut r = Reader { bytes, pos: 0 };
        let mut nodes = Vec::new();
        r.node(None, &mut nodes)?;
        if r.pos != bytes.len() {
            return Err(SynopsisError::Trailing);
        }
        Ok(Synopsis { nodes })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], SynopsisError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(SynopsisError::Truncated(self.pos));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, SynopsisError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, SynopsisError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn node(&mut self, parent: Option<usize>, out: &mut Vec<SynNode>) -> Result<usize, SynopsisError> {
        let len = self.u16()? as usize;
        let at = self.pos;
        let label = std::str::from_utf8(self.take(len)?)
            .map_err(|_| SynopsisError::BadLabel(at))?
            .to_string();
        let count = self.u32()?;
        let val_bytes = self.u32()?;
        let cont_bytes = self.u32()?;
        let nchildren = self.u16()?;
        let idx = out.len();
        out.push(SynNode {
            label,
            count,
            val_bytes,
            cont_bytes,
            parent,
            children: Vec::new(),
        });
        for _ in 0..nchildren {
            let c = self.node(Some(idx), out)?;
            out[idx].children.push(c);
        }
        Ok(idx)
    }
}

pub fn build_synopsis(d: &Document) -> Synopsis {
    build_synopsis_truncated(d, None)
}

/// Dataguide keeping only label paths of at most `max_depth + 1` labels
/// (root at depth 0) when a limit is given.
pub fn build_synopsis_truncated(d: &Document, max_depth: Option<usize>) -> Synopsis {
    let mut nodes: Vec<SynNode> = Vec::new();
    let mut syn_of: Vec<Option<usize>> = vec![None; d.len()];
    let mut depth_of: Vec<usize> = vec![0; d.len()];
    for (i, e) in d.elements().iter().enumerate() {
        let (parent_syn, depth) = match e.parent {
            None => (None, 0),
            Some(p) => match syn_of[p] {
                Some(s) => (Some(s), depth_of[p] + 1),
                None => continue,
            },
        };
        if max_depth.is_some_and(|m| depth > m) {
            continue;
        }
        depth_of[i] = depth;
        let existing = parent_syn.and_then(|ps| {
            nodes[ps]
                .children
                .iter()
                .copied()
                .find(|&c| nodes[c].label == e.label)
        });
        let s = match (existing, parent_syn) {
            (Some(s), _) => s,
            (None, None) if !nodes.is_empty() => 0,
            (None, ps) => {
                let idx = nodes.len();
                nodes.push(SynNode {
                    label: e.label.clone(),
                    count: 0,
                    val_bytes: 0,
                    cont_bytes: 0,
                    parent: ps,
                    children: Vec::new(),
                });
                if let Some(ps) = ps {
                    nodes[ps].children.push(idx);
                }
                idx
            }
        };
        syn_of[i] = Some(s);
        let n = &mut nodes[s];
        n.count += 1;
        n.val_bytes += d.value_of(i).len() as u32;
        n.cont_bytes += d.serialize_at(i).len() as u32;
    }
    // Creation order is not preorder when a path first appears after a
    // sibling's subtree; renumber so indices follow the encoding order.
    let mut syn = Synopsis { nodes };
    syn.renumber_preorder();
    syn
}

impl Synopsis {
    fn renumber_preorder(&mut self) {
        let mut order = vec![0usize];
        order.extend(self.descendants(0));
        let mut new_idx = vec![0usize; self.nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            new_idx[old] = new;
        }
        let nodes = order
            .iter()
            .map(|&old| {
                let n = &self.nodes[old];
                SynNode {
                    label: n.label.clone(),
                    count: n.count,
                    val_bytes: n.val_bytes,
                    cont_bytes: n.cont_bytes,
                    parent: n.parent.map(|p| new_idx[p]),
                    children: n.children.iter().map(|&c| new_idx[c]).collect(),
                }
            })
            .collect();
        self.nodes = nodes;
    }
}

/// Serialized size of the synopsis.
pub fn synopsis_bytes(s: &Synopsis) -> u64 {
    s.nodes
        .iter()
        .map(|n| (2 + n.label.len() + 4 + 4 + 4 + 2) as u64)
        .sum()
}

/// Estimated payload bytes a document contributes to the extent of `v`.
///
/// For every embedding of `v` into the dataguide (predicates ignored), taken
/// once per distinct image of the annotated nodes, the row count is taken from the image of the deepest annotated pattern node
/// (first in preorder on ties); id columns cost `rows * ID_BYTES`, val and
/// cont columns their path byte totals scaled by `rows / count`. The exact
/// rational sum is rounded up.
pub fn estimate_contribution(s: &Synopsis, v: &TreePattern) -> u64 {
    if s.is_empty() {
        return 0;
    }
    let annotated: Vec<usize> = (0..v.len()).filter(|&i| !v.node(i).anns.is_empty()).collect();
    let Some(&deepest) = annotated.iter().max_by(|&&a, &&b| {
        v.depth(a).cmp(&v.depth(b)).then(b.cmp(&a))
    }) else {
        return 0;
    };
    let images: BTreeSet<Vec<usize>> = synopsis_embeddings(s, v)
        .into_iter()
        .map(|e| annotated.iter().map(|&n| e[n]).collect())
        .collect();
    let slot = |n: usize| annotated.iter().position(|&a| a == n).unwrap();
    let mut total = Ratio::<u128>::from_integer(0);
    for e in images {
        let rows = s.nodes[e[slot(deepest)]].count as u128;
        for (k, &n) in annotated.iter().enumerate() {
            let sn = &s.nodes[e[k]];
            for a in v.node(n).anns.iter() {
                total += match a {
                    Ann::Id => Ratio::from_integer(rows * ID_BYTES as u128),
                    Ann::Val => Ratio::new(sn.val_bytes as u128 * rows, sn.count as u128),
                    Ann::Cont => Ratio::new(sn.cont_bytes as u128 * rows, sn.count as u128),
                };
            }
        }
    }
    total.ceil().to_integer() as u64
}

/// Maps from pattern nodes to dataguide nodes respecting labels and axes.
pub fn synopsis_embeddings(s: &Synopsis, v: &TreePattern) -> Vec<Vec<usize>> {
    fn go(s: &Synopsis, v: &TreePattern, vi: usize, map: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if vi == v.len() {
            out.push(map.clone());
            return;
        }
        let vn = v.node(vi);
        let cands: Vec<usize> = match (vn.parent, vn.axis) {
            (None, Axis::Child) => vec![0],
            (None, Axis::Descendant) => (0..s.len()).collect(),
            (Some(p), Axis::Child) => s.nodes[map[p]].children.clone(),
            (Some(p), Axis::Descendant) => s.descendants(map[p]),
        };
        for c in cands {
            if vn.label.matches(&s.nodes[c].label) {
                map.push(c);
                go(s, v, vi + 1, map, out);
                map.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(s, v, 0, &mut Vec::new(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::evaluate_pattern;
    use crate::xml::parse_document;

    const D1: &str = "<book><title>AI</title><author>Smith</author><author>Lee</author></book>";

    fn d1() -> Document {
        parse_document(D1.as_bytes(), "d1").unwrap()
    }

    fn pat(s: &str) -> TreePattern {
        TreePattern::parse(s).unwrap()
    }

    #[test]
    fn fixture_dataguide() {
        let s = build_synopsis(&d1());
        let book = s.find_path(&["book"]).unwrap();
        assert_eq!(book.count, 1);
        assert_eq!(book.cont_bytes as usize, D1.len());
        let title = s.find_path(&["book", "title"]).unwrap();
        assert_eq!((title.count, title.val_bytes), (1, 2));
        let author = s.find_path(&["book", "author"]).unwrap();
        assert_eq!((author.count, author.val_bytes), (2, 8));
        assert_eq!(s.len(), 3);

        let a = build_synopsis(&parse_document(b"<a/>", "a").unwrap());
        assert_eq!(a.len(), 1);
        assert_eq!((a.node(0).count, a.node(0).val_bytes), (1, 0));

        let b = build_synopsis(&parse_document(b"<a><b/><b/><b/></a>", "b").unwrap());
        assert_eq!(b.find_path(&["a", "b"]).unwrap().count, 3);
    }

    #[test]
    fn fixture_estimates_match_materialization() {
        let d = d1();
        let s = build_synopsis(&d);
        for (view, expected) in [("(//author {val})", 8), ("(//year {val})", 0), ("(//author {id})", 24)] {
            let v = pat(view);
            let actual = evaluate_pattern(&d, &v).payload_bytes();
            assert_eq!(actual, expected, "materialized {view}");
            assert_eq!(estimate_contribution(&s, &v), expected, "estimated {view}");
        }
    }

    #[test]
    fn wildcard_branch_counted_once() {
        let d = parse_document(b"<a>t<b>u</b><c>v</c></a>", "w").unwrap();
        let v = pat("(/a {val} (/*))");
        assert_eq!(evaluate_pattern(&d, &v).payload_bytes(), 3);
        assert_eq!(estimate_contribution(&build_synopsis(&d), &v), 3);
    }

    #[test]
    fn wire_format() {
        let a = build_synopsis(&parse_document(b"<a/>", "a").unwrap());
        // u16 len + "a" + 3 * u32 + u16 child count
        assert_eq!(synopsis_bytes(&a), 2 + 1 + 12 + 2);
        assert_eq!(a.encode().len() as u64, synopsis_bytes(&a));
        let s = build_synopsis(&d1());
        let bytes = s.encode();
        assert_eq!(bytes.len() as u64, synopsis_bytes(&s));
        let back = Synopsis::decode(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.encode(), bytes);
        assert!(Synopsis::decode(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn preorder_numbering_when_paths_interleave() {
        let d = parse_document(b"<r><a><x/></a><b/><a><y/></a></r>", "d").unwrap();
        let s = build_synopsis(&d);
        let labels: Vec<&str> = s.nodes().iter().map(|n| n.label.as_str()).collect();
        assert_eq!(labels, ["r", "a", "x", "y", "b"]);
        assert_eq!(Synopsis::decode(&s.encode()).unwrap(), s);
    }

    #[test]
    fn truncation_drops_deep_paths() {
        let d = parse_document(b"<r><a><x>t</x></a></r>", "d").unwrap();
        let s = build_synopsis_truncated(&d, Some(1));
        assert_eq!(s.len(), 2);
        assert!(s.find_path(&["r", "a", "x"]).is_none());
    }
}
