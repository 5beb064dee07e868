use std::fmt;

pub const SINK_KIND: &str = "⟨sink⟩";
pub const UNKNOWN_TYPE: &str = "⟨unk⟩";
pub const NUM_EDGE_TYPES: usize = 2 * EdgeKind::ALL.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    Child,
    NextToken,
    LastRead,
    LastWrite,
    ComputedFrom,
    LastLexicalUse,
    ReturnsTo,
    GuardedBy,
    GuardedByNegation,
    ToSink,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 10] = [
        EdgeKind::Child,
        EdgeKind::NextToken,
        EdgeKind::LastRead,
        EdgeKind::LastWrite,
        EdgeKind::ComputedFrom,
        EdgeKind::LastLexicalUse,
        EdgeKind::ReturnsTo,
        EdgeKind::GuardedBy,
        EdgeKind::GuardedByNegation,
        EdgeKind::ToSink,
    ];
}

/// One of the 20 edge types: a base kind, forward or reversed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeType {
    pub kind: EdgeKind,
    pub reversed: bool,
}

impl EdgeType {
    pub const fn forward(kind: EdgeKind) -> Self {
        Self { kind, reversed: false }
    }

    pub fn reverse(self) -> Self {
        Self {
            kind: self.kind,
            reversed: !self.reversed,
        }
    }

    /// Dense index in `0..NUM_EDGE_TYPES`; forward kinds first.
    pub fn index(self) -> usize {
        self.kind as usize + if self.reversed { EdgeKind::ALL.len() } else { 0 }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        let n = EdgeKind::ALL.len();
        (i < 2 * n).then(|| Self {
            kind: EdgeKind::ALL[i % n],
            reversed: i >= n,
        })
    }

    pub fn all() -> impl Iterator<Item = EdgeType> {
        (0..NUM_EDGE_TYPES).map(|i| Self::from_index(i).unwrap())
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.reversed {
            write!(f, "Reversed{:?}", self.kind)
        } else {
            write!(f, "{:?}", self.kind)
        }
    }
}

/// A graph node; its id is its index in [`ProgramGraph::nodes`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphNode {
    pub kind: String,
    /// Source text, for token leaves (leaves with a non-empty span).
    pub token_text: Option<String>,
    /// Canonical declared type, for identifier leaves that resolve to a
    /// declaration.
    pub variable_type: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub source: u32,
    pub edge_type: EdgeType,
    pub target: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgramGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<Edge>,
    pub sink_id: u32,
    pub parse_error_fraction: f64,
}

impl ProgramGraph {
    /// A graph consisting of the sink node alone.
    pub fn sink_only() -> Self {
        Self {
            nodes: vec![GraphNode {
                kind: SINK_KIND.to_string(),
                token_text: None,
                variable_type: None,
            }],
            edges: vec![],
            sink_id: 0,
            parse_error_fraction: 0.0,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges_of(&self, kind: EdgeKind, reversed: bool) -> impl Iterator<Item = &Edge> {
        self.edges
            .iter()
            .filter(move |e| e.edge_type.kind == kind && e.edge_type.reversed == reversed)
    }

    pub fn count_edges(&self, kind: EdgeKind) -> usize {
        self.edges_of(kind, false).count()
    }

    /// Whether the graph is clean enough for training.
    pub fn is_usable(&self, max_parse_error_fraction: f64) -> bool {
        self.parse_error_fraction <= max_parse_error_fraction
    }

    /// Relabels nodes: node `i` becomes `perm[i]`. The sink must map to
    /// itself.
    pub fn permuted(&self, perm: &[u32]) -> ProgramGraph {
        assert_eq!(perm.len(), self.nodes.len());
        assert_eq!(perm[self.sink_id as usize], self.sink_id);
        let mut nodes = self.nodes.clone();
        for (i, n) in self.nodes.iter().enumerate() {
            nodes[perm[i] as usize] = n.clone();
        }
        ProgramGraph {
            nodes,
            edges: self
                .edges
                .iter()
                .map(|e| Edge {
                    source: perm[e.source as usize],
                    edge_type: e.edge_type,
                    target: perm[e.target as usize],
                })
                .collect(),
            sink_id: self.sink_id,
            parse_error_fraction: self.parse_error_fraction,
        }
    }

    /// Checks the structural invariants of a built graph and returns the
    /// first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let n = self.nodes.len();
        let sink = self.sink_id as usize;
        if sink >= n {
            return Err(format!("sink id {sink} out of range {n}"));
        }
        for e in &self.edges {
            if e.source as usize >= n || e.target as usize >= n {
                return Err(format!("edge {e:?} out of range"));
            }
        }

        let mut to_sink = vec![0usize; n];
        for e in self.edges_of(EdgeKind::ToSink, false) {
            if e.target as usize != sink {
                return Err(format!("ToSink edge {e:?} does not target the sink"));
            }
            to_sink[e.source as usize] += 1;
        }
        for (i, &c) in to_sink.iter().enumerate() {
            let want = usize::from(i != sink);
            if c != want {
                return Err(format!("node {i} has {c} outgoing ToSink edges, expected {want}"));
            }
        }

        // Child edges: every non-sink node but one root has one parent,
        // and following parents from any node terminates.
        let mut parent = vec![None; n];
        for e in self.edges_of(EdgeKind::Child, false) {
            if e.source as usize == sink || e.target as usize == sink {
                return Err("Child edge touches the sink".into());
            }
            if parent[e.target as usize].replace(e.source as usize).is_some() {
                return Err(format!("node {} has two parents", e.target));
            }
        }
        let roots = (0..n).filter(|&i| i != sink && parent[i].is_none()).count();
        if n > 1 && roots != 1 {
            return Err(format!("Child edges form {roots} roots"));
        }
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = parent[cur] {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(format!("Child cycle through {start}"));
                }
            }
        }

        // NextToken: a single simple path over token leaves in id order.
        let tokens: Vec<usize> = (0..n)
            .filter(|&i| i != sink && self.nodes[i].token_text.is_some())
            .collect();
        let mut next: Vec<(usize, usize)> = self
            .edges_of(EdgeKind::NextToken, false)
            .map(|e| (e.source as usize, e.target as usize))
            .collect();
        next.sort_unstable();
        let expected: Vec<(usize, usize)> = tokens.windows(2).map(|w| (w[0], w[1])).collect();
        if next != expected {
            return Err("NextToken edges do not chain token leaves in order".into());
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if i == sink {
                continue;
            }
            let is_leaf = parent.iter().all(|p| *p != Some(i));
            if node.token_text.is_some() && !is_leaf {
                return Err(format!("inner node {i} carries token text"));
            }
            if node.variable_type.is_some() && node.kind != "identifier" {
                return Err(format!("non-identifier node {i} carries a type"));
            }
        }

        let mut forward: Vec<(u32, EdgeKind, u32)> = vec![];
        let mut backward: Vec<(u32, EdgeKind, u32)> = vec![];
        for e in &self.edges {
            if e.edge_type.reversed {
                backward.push((e.target, e.edge_type.kind, e.source));
            } else {
                forward.push((e.source, e.edge_type.kind, e.target));
            }
        }
        forward.sort_unstable();
        backward.sort_unstable();
        if forward != backward {
            return Err("forward and reversed edges do not pair up".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_edge_types_and_reversal() {
        let all: Vec<EdgeType> = EdgeType::all().collect();
        assert_eq!(all.len(), 20);
        for (i, t) in all.iter().enumerate() {
            assert_eq!(t.index(), i);
            assert_eq!(t.reverse().reverse(), *t);
            assert_ne!(t.reverse(), *t);
        }
        assert!(EdgeType::from_index(20).is_none());
    }

    #[test]
    fn sink_only_graph_is_valid() {
        ProgramGraph::sink_only().check_invariants().unwrap();
    }
}
