//! Binary graph format, little endian:
//!
//! ```text
//! magic "CPTGRAPH" | version u32
//! strings: count u32, then (len u32, utf-8 bytes)*
//! nodes:   count u32, then (kind u32, token u32, type u32)*   token/type: 0 = none, else string index + 1
//! edges:   count u32, then (source u32, type u8, target u32)*
//! sink_id u32 | parse_error_fraction f64
//! ```
//!
//! Strings are interned in order of first use, so equal graphs produce
//! equal bytes.

use std::collections::HashMap;

use super::graph::{Edge, EdgeType, GraphNode, ProgramGraph};
use crate::error::{Error, Result};

pub const GRAPH_MAGIC: &[u8; 8] = b"CPTGRAPH";
pub const GRAPH_VERSION: u32 = 1;

#[derive(Default)]
struct Interner {
    index: HashMap<String, u32>,
    strings: Vec<String>,
}

impl Interner {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&i) = self.index.get(s) {
            return i;
        }
        let i = self.strings.len() as u32;
        self.index.insert(s.to_string(), i);
        self.strings.push(s.to_string());
        i
    }
}

pub fn serialize_graph(graph: &ProgramGraph) -> Vec<u8> {
    let mut interner = Interner::default();
    let node_rows: Vec<[u32; 3]> = graph
        .nodes
        .iter()
        .map(|n| {
            let kind = interner.intern(&n.kind);
            let token = n.token_text.as_deref().map_or(0, |t| interner.intern(t) + 1);
            let ty = n.variable_type.as_deref().map_or(0, |t| interner.intern(t) + 1);
            [kind, token, ty]
        })
        .collect();

    let mut out = Vec::with_capacity(64 + 12 * node_rows.len() + 9 * graph.edges.len());
    out.extend_from_slice(GRAPH_MAGIC);
    out.extend_from_slice(&GRAPH_VERSION.to_le_bytes());
    out.extend_from_slice(&(interner.strings.len() as u32).to_le_bytes());
    for s in &interner.strings {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    }
    out.extend_from_slice(&(node_rows.len() as u32).to_le_bytes());
    for row in &node_rows {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(graph.edges.len() as u32).to_le_bytes());
    for e in &graph.edges {
        out.extend_from_slice(&e.source.to_le_bytes());
        out.push(e.edge_type.index() as u8);
        out.extend_from_slice(&e.target.to_le_bytes());
    }
    out.extend_from_slice(&graph.sink_id.to_le_bytes());
    out.extend_from_slice(&graph.parse_error_fraction.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::GraphFormat(format!("truncated payload at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// A count whose elements occupy at least `min_size` bytes each.
    fn count(&mut self, min_size: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_size) > self.bytes.len() - self.pos {
            return Err(Error::GraphFormat(format!("truncated payload: count {n} exceeds remaining bytes")));
        }
        Ok(n)
    }
}

pub fn deserialize_graph(bytes: &[u8]) -> Result<ProgramGraph> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != GRAPH_MAGIC {
        return Err(Error::GraphFormat("bad magic".into()));
    }
    let version = r.u32()?;
    if version != GRAPH_VERSION {
        return Err(Error::GraphFormat(format!(
            "version mismatch: found {version}, expected {GRAPH_VERSION}"
        )));
    }
    let n_strings = r.count(4)?;
    let mut strings = Vec::with_capacity(n_strings);
    for _ in 0..n_strings {
        let len = r.u32()? as usize;
        let s = std::str::from_utf8(r.take(len)?).map_err(|e| Error::GraphFormat(e.to_string()))?;
        strings.push(s.to_string());
    }
    let lookup = |i: u32| -> Result<String> {
        strings
            .get(i as usize)
            .cloned()
            .ok_or_else(|| Error::GraphFormat(format!("string index {i} out of range")))
    };
    let optional = |i: u32| -> Result<Option<String>> { if i == 0 { Ok(None) } else { lookup(i - 1).map(Some) } };
    let n_nodes = r.count(12)?;
    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let (k, t, v) = (r.u32()?, r.u32()?, r.u32()?);
        nodes.push(GraphNode {
            kind: lookup(k)?,
            token_text: optional(t)?,
            variable_type: optional(v)?,
        });
    }
    let n_edges = r.count(9)?;
    let mut edges = Vec::with_capacity(n_edges);
    for _ in 0..n_edges {
        let source = r.u32()?;
        let ty = r.u8()?;
        let target = r.u32()?;
        let edge_type = EdgeType::from_index(ty as usize)
            .ok_or_else(|| Error::GraphFormat(format!("unknown edge type {ty}")))?;
        if source as usize >= n_nodes || target as usize >= n_nodes {
            return Err(Error::GraphFormat(format!("edge ({source}, {target}) out of range")));
        }
        edges.push(Edge {
            source,
            edge_type,
            target,
        });
    }
    let sink_id = r.u32()?;
    let parse_error_fraction = r.f64()?;
    if r.pos != bytes.len() {
        return Err(Error::GraphFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    if sink_id as usize >= n_nodes {
        return Err(Error::GraphFormat("sink id out of range".into()));
    }
    Ok(ProgramGraph {
        nodes,
        edges,
        sink_id,
        parse_error_fraction,
    })
}
