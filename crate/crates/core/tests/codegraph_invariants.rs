use cptag_core::codegraph::{deserialize_graph, serialize_graph, source_to_graph, EdgeKind};

fn snippets() -> Vec<String> {
    serde_json::from_str(include_str!("data/golden_snippets.json")).unwrap()
}

#[test]
fn fifty_snippets() {
    assert_eq!(snippets().len(), 50);
}

#[test]
fn invariants_hold_on_snippet_corpus() {
    for src in &snippets() {
        let g = source_to_graph(src);
        g.check_invariants().unwrap_or_else(|e| panic!("{src:?}: {e}"));
        assert_eq!(g.count_edges(EdgeKind::ToSink), g.num_nodes() - 1);
        assert!((0.0..=1.0).contains(&g.parse_error_fraction));
    }
}

#[test]
fn flow_edges_point_backwards() {
    for src in &snippets() {
        let g = source_to_graph(src);
        for kind in [EdgeKind::LastRead, EdgeKind::LastWrite, EdgeKind::LastLexicalUse] {
            for e in g.edges_of(kind, false) {
                // pre-order ids of leaves follow source order
                assert!(e.source > e.target, "{src:?}: {e:?}");
            }
        }
    }
}

#[test]
fn construction_is_deterministic_and_round_trips() {
    for src in &snippets() {
        let a = serialize_graph(&source_to_graph(src));
        let b = serialize_graph(&source_to_graph(src));
        assert_eq!(a, b, "{src:?}");
        assert_eq!(serialize_graph(&deserialize_graph(&a).unwrap()), a);
    }
}

#[test]
fn malformed_sources_are_flagged() {
    for src in ["int main( { return 0; }", "}}}{{{", "int x = ;"] {
        assert!(source_to_graph(src).parse_error_fraction > 0.0, "{src:?}");
    }
}
