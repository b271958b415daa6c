//! Set-semantics tables of id/val/cont values.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::xml::NodeId;

/// Bytes charged for one structural identifier: 4-byte document reference,
/// 4-byte start, 4-byte end.
pub const ID_BYTES: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ann {
    Id,
    Val,
    Cont,
}

impl Ann {
    pub const ALL: [Ann; 3] = [Ann::Id, Ann::Val, Ann::Cont];

    pub fn as_str(self) -> &'static str {
        match self {
            Ann::Id => "id",
            Ann::Val => "val",
            Ann::Cont => "cont",
        }
    }
}

impl fmt::Display for Ann {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Id(NodeId),
    Val(String),
    Cont(String),
}

impl Value {
    pub fn payload_bytes(&self) -> u64 {
        match self {
            Value::Id(_) => ID_BYTES,
            Value::Val(s) | Value::Cont(s) => s.len() as u64,
        }
    }

    pub fn as_id(&self) -> Option<&NodeId> {
        match self {
            Value::Id(id) => Some(id),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Val(s) | Value::Cont(s) => Some(s),
            Value::Id(_) => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Id(id) => serde_json::json!({"doc": &*id.doc, "start": id.start, "end": id.end}),
            Value::Val(s) | Value::Cont(s) => serde_json::Value::String(s.clone()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Id(id) => write!(f, "{id}"),
            Value::Val(s) | Value::Cont(s) => write!(f, "{s:?}"),
        }
    }
}

/// Names one column: which pattern of a query, which pattern node (preorder
/// index) and which annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Column {
    pub pattern: usize,
    pub node: usize,
    pub ann: Ann,
}

impl Column {
    pub fn new(pattern: usize, node: usize, ann: Ann) -> Self {
        Column { pattern, node, ann }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}.n{}.{}", self.pattern, self.node, self.ann)
    }
}

pub type Tuple = Vec<Value>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<Column>,
    pub rows: BTreeSet<Tuple>,
}

impl Table {
    pub fn empty(header: Vec<Column>) -> Self {
        Table {
            header,
            rows: BTreeSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn position(&self, col: &Column) -> Option<usize> {
        self.header.iter().position(|c| c == col)
    }

    /// Total payload: id columns at [`ID_BYTES`], text columns at their
    /// UTF-8 length.
    pub fn payload_bytes(&self) -> u64 {
        self.rows
            .iter()
            .flat_map(|r| r.iter())
            .map(Value::payload_bytes)
            .sum()
    }

    pub fn union_with(&mut self, other: Table) {
        debug_assert_eq!(self.header, other.header);
        self.rows.extend(other.rows);
    }

    /// Projects onto `cols` (which must all exist), deduplicating.
    pub fn project(&self, cols: &[Column]) -> Table {
        let idx: Vec<usize> = cols
            .iter()
            .map(|c| {
                self.position(c)
                    .unwrap_or_else(|| panic!("projection column {c} missing"))
            })
            .collect();
        Table {
            header: cols.to_vec(),
            rows: self
                .rows
                .iter()
                .map(|r| idx.iter().map(|&i| r[i].clone()).collect())
                .collect(),
        }
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&Tuple) -> bool) {
        self.rows.retain(|r| keep(r));
    }

    fn merged_header(&self, other: &Table) -> (Vec<Column>, Vec<usize>) {
        let mut header = self.header.clone();
        let mut extra = Vec::new();
        for (i, c) in other.header.iter().enumerate() {
            if !header.contains(c) {
                header.push(*c);
                extra.push(i);
            }
        }
        (header, extra)
    }

    /// Equality join on pairs of columns (left column, right column).
    /// Columns present on both sides appear once in the output, taking the
    /// left value. An empty `on` list yields the cross product.
    pub fn equi_join(&self, other: &Table, on: &[(Column, Column)]) -> Table {
        let (header, extra) = self.merged_header(other);
        let lk: Vec<usize> = on.iter().map(|(l, _)| self.position(l).unwrap()).collect();
        let rk: Vec<usize> = on.iter().map(|(_, r)| other.position(r).unwrap()).collect();
        let mut buckets: BTreeMap<Vec<&Value>, Vec<&Tuple>> = BTreeMap::new();
        for r in &other.rows {
            buckets
                .entry(rk.iter().map(|&i| &r[i]).collect())
                .or_default()
                .push(r);
        }
        let mut rows = BTreeSet::new();
        for l in &self.rows {
            let key: Vec<&Value> = lk.iter().map(|&i| &l[i]).collect();
            if let Some(matches) = buckets.get(&key) {
                for r in matches {
                    let mut t = l.clone();
                    t.extend(extra.iter().map(|&i| r[i].clone()));
                    rows.insert(t);
                }
            }
        }
        Table { header, rows }
    }

    /// Nested-loop join with an arbitrary predicate over the merged tuple.
    pub fn theta_join(&self, other: &Table, pred: impl Fn(&[Column], &Tuple) -> bool) -> Table {
        let (header, extra) = self.merged_header(other);
        let mut rows = BTreeSet::new();
        for l in &self.rows {
            for r in &other.rows {
                let mut t = l.clone();
                t.extend(extra.iter().map(|&i| r[i].clone()));
                if pred(&header, &t) {
                    rows.insert(t);
                }
            }
        }
        Table { header, rows }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "header": self.header.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
            "rows": self.rows.iter()
                .map(|r| r.iter().map(Value::to_json).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        })
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: Vec<String> = self.header.iter().map(|c| c.to_string()).collect();
        writeln!(f, "{}", head.join("\t"))?;
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            writeln!(f, "{}", cells.join("\t"))?;
        }
        Ok(())
    }
}
