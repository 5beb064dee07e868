//! Program graphs: tree-sitter syntax trees augmented with data-flow,
//! control and sink edges.

mod build;
mod dataset;
mod graph;
mod serialize;

pub use build::{build_graph, canonicalize_type, extract_variable_types, parse_to_ast, source_to_graph};
pub use dataset::{
    index_path, read_graph_dataset, read_graph_index, write_graph_dataset, GraphIndexEntry, GraphRecord,
};
pub use graph::{Edge, EdgeKind, EdgeType, GraphNode, ProgramGraph, NUM_EDGE_TYPES, SINK_KIND, UNKNOWN_TYPE};
pub use serialize::{deserialize_graph, serialize_graph, GRAPH_MAGIC, GRAPH_VERSION};

pub const DEFAULT_MAX_PARSE_ERROR_FRACTION: f64 = 0.2;
