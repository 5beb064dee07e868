use std::collections::{BTreeMap, HashMap};

use tree_sitter::{Node, Parser, Tree};

use super::graph::{Edge, EdgeKind, EdgeType, GraphNode, ProgramGraph, SINK_KIND, UNKNOWN_TYPE};

/// Parses C++ source with the tree-sitter C++ grammar. Error recovery
/// always yields a tree.
pub fn parse_to_ast(source: &str) -> Tree {
    let mut parser = Parser::new();
    parser
        .set_language(&tree_sitter_cpp::LANGUAGE.into())
        .expect("bundled C++ grammar is ABI compatible");
    parser.parse(source, None).expect("parser has a language and no timeout")
}

/// Preprocesses, parses and builds the graph of a raw solution.
pub fn source_to_graph(raw_source: &str) -> ProgramGraph {
    let source = crate::preprocess::preprocess_source(raw_source);
    let tree = parse_to_ast(&source);
    build_graph(&tree, &source)
}

/// Removes whitespace that does not separate two word characters, after
/// collapsing runs.
pub fn canonicalize_type(text: &str) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    let mut out = String::new();
    for w in words {
        let prev = out.chars().last();
        let next = w.chars().next();
        let sep = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
        if !out.is_empty() && sep(prev) && sep(next) {
            out.push(' ');
        }
        out.push_str(w);
    }
    out
}

const GLOBAL_SCOPE: usize = usize::MAX;

/// Pre-order flattening of the syntax tree plus lexical variable
/// resolution.
struct Analysis<'t> {
    source: &'t str,
    nodes: Vec<Node<'t>>,
    parent: Vec<Option<usize>>,
    field: Vec<Option<&'static str>>,
    children: Vec<Vec<usize>>,
    end: Vec<usize>,
    /// Declared name occurrence → canonical type.
    declared: BTreeMap<usize, String>,
    /// Identifier occurrences in source order with their resolution.
    occurrences: Vec<Occurrence>,
}

struct Occurrence {
    node: usize,
    key: (usize, String),
    var_type: Option<String>,
}

impl<'t> Analysis<'t> {
    fn new(tree: &'t Tree, source: &'t str) -> Self {
        let mut nodes = Vec::new();
        let mut parent = Vec::new();
        let mut field = Vec::new();
        let mut stack: Vec<usize> = Vec::new();
        let mut cursor = tree.walk();
        'walk: loop {
            let idx = nodes.len();
            nodes.push(cursor.node());
            parent.push(stack.last().copied());
            field.push(cursor.field_name());
            if cursor.goto_first_child() {
                stack.push(idx);
                continue;
            }
            loop {
                if cursor.goto_next_sibling() {
                    break;
                }
                if !cursor.goto_parent() {
                    break 'walk;
                }
                stack.pop();
            }
        }
        let mut children = vec![Vec::new(); nodes.len()];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(i);
            }
        }
        let mut end = vec![0; nodes.len()];
        for i in (0..nodes.len()).rev() {
            end[i] = children[i].last().map_or(i + 1, |&c| end[c]);
        }
        let mut a = Analysis {
            source,
            nodes,
            parent,
            field,
            children,
            end,
            declared: BTreeMap::new(),
            occurrences: Vec::new(),
        };
        a.collect_declarations();
        a.resolve_occurrences();
        a
    }

    fn kind(&self, i: usize) -> &'static str {
        self.nodes[i].kind()
    }

    fn text(&self, i: usize) -> &'t str {
        &self.source[self.nodes[i].start_byte()..self.nodes[i].end_byte()]
    }

    fn is_leaf(&self, i: usize) -> bool {
        self.children[i].is_empty()
    }

    fn is_token_leaf(&self, i: usize) -> bool {
        self.is_leaf(i) && self.nodes[i].end_byte() > self.nodes[i].start_byte()
    }

    fn child_field(&self, i: usize, name: &str) -> Option<usize> {
        self.children[i].iter().copied().find(|&c| self.field[c] == Some(name))
    }

    fn children_field(&self, i: usize, name: &str) -> Vec<usize> {
        self.children[i]
            .iter()
            .copied()
            .filter(|&c| self.field[c] == Some(name))
            .collect()
    }

    fn ancestors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors(self.parent[i], move |&p| self.parent[p])
    }

    fn scope_of(&self, i: usize) -> usize {
        self.ancestors(i)
            .find(|&a| self.kind(a) == "function_definition")
            .unwrap_or(GLOBAL_SCOPE)
    }

    fn identifiers_in(&self, i: usize) -> Vec<usize> {
        let end = self.subtree_end(i);
        (i..end).filter(|&j| self.kind(j) == "identifier" && self.is_leaf(j)).collect()
    }

    /// One past the last pre-order index inside the subtree rooted at `i`.
    fn subtree_end(&self, i: usize) -> usize {
        self.end[i]
    }

    fn collect_declarations(&mut self) {
        for i in 0..self.nodes.len() {
            let kind = self.kind(i);
            if !matches!(
                kind,
                "declaration" | "parameter_declaration" | "optional_parameter_declaration" | "for_range_loop"
            ) {
                continue;
            }
            let Some(ty) = self.child_field(i, "type") else {
                continue;
            };
            let mut base = canonicalize_type(self.text(ty));
            let is_const = self.children[i]
                .iter()
                .any(|&c| self.kind(c) == "type_qualifier" && self.text(c).trim() == "const");
            if is_const {
                base.push_str(" const");
            }
            for d in self.children_field(i, "declarator") {
                if let Some((name, suffix)) = self.unwrap_declarator(d) {
                    let ty = if suffix.is_empty() { base.clone() } else { format!("{base} {suffix}") };
                    self.declared.insert(name, ty);
                }
            }
        }
    }

    /// Follows declarator wrappers down to the declared identifier,
    /// collecting pointer/reference/array markers outermost first.
    fn unwrap_declarator(&self, mut d: usize) -> Option<(usize, String)> {
        let mut markers: Vec<&str> = Vec::new();
        loop {
            match self.kind(d) {
                "identifier" => return Some((d, markers.join(" "))),
                "init_declarator" | "parenthesized_declarator" => {
                    d = self.child_field(d, "declarator").or_else(|| {
                        self.children[d].iter().copied().find(|&c| self.nodes[c].is_named())
                    })?;
                }
                "pointer_declarator" => {
                    markers.push("*");
                    d = self.child_field(d, "declarator")?;
                }
                "reference_declarator" => {
                    let rvalue = self.children[d].iter().any(|&c| self.kind(c) == "&&");
                    markers.push(if rvalue { "&&" } else { "&" });
                    d = self.children[d].iter().copied().find(|&c| self.nodes[c].is_named())?;
                }
                "array_declarator" => {
                    markers.push("[]");
                    d = self.child_field(d, "declarator")?;
                }
                _ => return None,
            }
        }
    }

    fn resolve_occurrences(&mut self) {
        let mut decls_by_name: HashMap<&str, Vec<(usize, usize)>> = HashMap::new();
        for &d in self.declared.keys() {
            decls_by_name
                .entry(self.text(d))
                .or_default()
                .push((self.scope_of(d), d));
        }
        let mut occurrences = Vec::new();
        for i in 0..self.nodes.len() {
            if self.kind(i) != "identifier" || !self.is_leaf(i) {
                continue;
            }
            let name = self.text(i);
            let scope = self.scope_of(i);
            let candidates = decls_by_name.get(name).map(Vec::as_slice).unwrap_or(&[]);
            let latest_in = |s: usize| candidates.iter().filter(|&&(ds, d)| ds == s && d <= i).map(|&(_, d)| d).last();
            let resolved = if self.declared.contains_key(&i) {
                Some((scope, i))
            } else if let Some(d) = latest_in(scope).filter(|_| scope != GLOBAL_SCOPE) {
                Some((scope, d))
            } else {
                latest_in(GLOBAL_SCOPE).map(|d| (GLOBAL_SCOPE, d))
            };
            occurrences.push(match resolved {
                Some((s, d)) => Occurrence {
                    node: i,
                    key: (s, name.to_string()),
                    var_type: Some(self.declared[&d].clone()),
                },
                None => Occurrence {
                    node: i,
                    key: (GLOBAL_SCOPE, name.to_string()),
                    var_type: None,
                },
            });
        }
        self.occurrences = occurrences;
    }

    /// Climbs from an identifier through subscript/field/deref wrappers;
    /// returns the assignment (or update) expression it is the target of.
    fn assignment_target_of(&self, i: usize) -> Option<usize> {
        let mut cur = i;
        loop {
            let p = self.parent[cur]?;
            match self.kind(p) {
                "subscript_expression" | "field_expression" | "pointer_expression"
                    if self.field[cur] == Some("argument") =>
                {
                    cur = p
                }
                "parenthesized_expression" => cur = p,
                "assignment_expression" if self.field[cur] == Some("left") => return Some(p),
                "update_expression" => return Some(p),
                _ => return None,
            }
        }
    }

    /// (is_read, is_write) of an identifier occurrence.
    fn access(&self, i: usize) -> (bool, bool) {
        if self.declared.contains_key(&i) {
            return (false, true);
        }
        match self.assignment_target_of(i) {
            Some(a) if self.kind(a) == "update_expression" => (true, true),
            Some(a) => {
                let plain = self.children[a]
                    .iter()
                    .any(|&c| self.field[c] == Some("operator") && self.kind(c) == "=");
                (!plain, true)
            }
            None => (true, false),
        }
    }

    /// Nearest enclosing guard of node `i`: (condition node, negated).
    fn guard_of(&self, i: usize) -> Option<(usize, bool)> {
        let mut cur = i;
        while let Some(p) = self.parent[cur] {
            let f = self.field[cur];
            let cond = self.child_field(p, "condition");
            let hit = match (self.kind(p), f) {
                ("if_statement", Some("consequence")) => cond.map(|c| (c, false)),
                ("if_statement", Some("alternative")) => cond.map(|c| (c, true)),
                ("while_statement" | "for_statement" | "do_statement", Some("body")) => cond.map(|c| (c, false)),
                _ => None,
            };
            if hit.is_some() {
                return hit;
            }
            cur = p;
        }
        None
    }
}

/// Builds the augmented program graph of a parsed tree.
pub fn build_graph(tree: &Tree, source: &str) -> ProgramGraph {
    let a = Analysis::new(tree, source);
    let n = a.nodes.len();
    let var_types: HashMap<usize, &Option<String>> = a.occurrences.iter().map(|o| (o.node, &o.var_type)).collect();

    let mut error_nodes = 0usize;
    let mut in_error = vec![false; n];
    for i in 0..n {
        let node = a.nodes[i];
        in_error[i] = node.is_error() || node.is_missing() || a.parent[i].is_some_and(|p| in_error[p]);
        error_nodes += usize::from(in_error[i]);
    }

    let mut nodes: Vec<GraphNode> = (0..n)
        .map(|i| GraphNode {
            kind: a.kind(i).to_string(),
            token_text: a.is_token_leaf(i).then(|| a.text(i).to_string()),
            variable_type: var_types.get(&i).and_then(|t| (*t).clone()),
        })
        .collect();

    let mut forward: Vec<(usize, EdgeKind, usize)> = Vec::new();
    for i in 0..n {
        if let Some(p) = a.parent[i] {
            forward.push((p, EdgeKind::Child, i));
        }
    }
    let tokens: Vec<usize> = (0..n).filter(|&i| a.is_token_leaf(i)).collect();
    for w in tokens.windows(2) {
        forward.push((w[0], EdgeKind::NextToken, w[1]));
    }

    #[derive(Default)]
    struct VarState {
        last_read: Option<usize>,
        last_write: Option<usize>,
        last_use: Option<usize>,
    }
    let mut state: HashMap<&(usize, String), VarState> = HashMap::new();
    for occ in &a.occurrences {
        let (read, write) = a.access(occ.node);
        let st = state.entry(&occ.key).or_default();
        if let Some(u) = st.last_use {
            forward.push((occ.node, EdgeKind::LastLexicalUse, u));
        }
        if let Some(r) = st.last_read {
            forward.push((occ.node, EdgeKind::LastRead, r));
        }
        if let Some(w) = st.last_write {
            forward.push((occ.node, EdgeKind::LastWrite, w));
        }
        if read {
            st.last_read = Some(occ.node);
        }
        if write {
            st.last_write = Some(occ.node);
        }
        st.last_use = Some(occ.node);
    }

    for i in 0..n {
        match a.kind(i) {
            "assignment_expression" => {
                let (Some(left), Some(right)) = (a.child_field(i, "left"), a.child_field(i, "right")) else {
                    continue;
                };
                let targets: Vec<usize> = a
                    .identifiers_in(left)
                    .into_iter()
                    .filter(|&id| a.assignment_target_of(id) == Some(i))
                    .collect();
                for t in targets {
                    for r in a.identifiers_in(right) {
                        forward.push((t, EdgeKind::ComputedFrom, r));
                    }
                }
            }
            "init_declarator" => {
                let (Some(decl), Some(value)) = (a.child_field(i, "declarator"), a.child_field(i, "value")) else {
                    continue;
                };
                if let Some((name, _)) = a.unwrap_declarator(decl) {
                    for r in a.identifiers_in(value) {
                        forward.push((name, EdgeKind::ComputedFrom, r));
                    }
                }
            }
            "return_statement" => {
                if let Some(f) = a
                    .ancestors(i)
                    .find(|&p| matches!(a.kind(p), "function_definition" | "lambda_expression"))
                {
                    forward.push((i, EdgeKind::ReturnsTo, f));
                }
            }
            _ => {}
        }
    }
    for occ in &a.occurrences {
        if let Some((cond, negated)) = a.guard_of(occ.node) {
            let kind = if negated { EdgeKind::GuardedByNegation } else { EdgeKind::GuardedBy };
            forward.push((occ.node, kind, cond));
        }
    }

    let sink = n;
    nodes.push(GraphNode {
        kind: SINK_KIND.to_string(),
        token_text: None,
        variable_type: None,
    });
    for i in 0..n {
        forward.push((i, EdgeKind::ToSink, sink));
    }

    let mut edges: Vec<Edge> = Vec::with_capacity(2 * forward.len());
    for &(s, k, t) in &forward {
        edges.push(Edge {
            source: s as u32,
            edge_type: EdgeType::forward(k),
            target: t as u32,
        });
    }
    for &(s, k, t) in &forward {
        edges.push(Edge {
            source: t as u32,
            edge_type: EdgeType::forward(k).reverse(),
            target: s as u32,
        });
    }

    ProgramGraph {
        nodes,
        edges,
        sink_id: sink as u32,
        parse_error_fraction: if n == 0 { 0.0 } else { error_nodes as f64 / n as f64 },
    }
}

/// Canonical type of every identifier leaf, keyed by pre-order node id;
/// unresolved identifiers map to [`UNKNOWN_TYPE`].
pub fn extract_variable_types(tree: &Tree, source: &str) -> BTreeMap<usize, String> {
    let a = Analysis::new(tree, source);
    a.occurrences
        .iter()
        .map(|o| (o.node, o.var_type.clone().unwrap_or_else(|| UNKNOWN_TYPE.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(src: &str) -> ProgramGraph {
        let g = build_graph(&parse_to_ast(src), src);
        g.check_invariants().unwrap();
        g
    }

    fn find_token(g: &ProgramGraph, text: &str, nth: usize) -> u32 {
        g.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.token_text.as_deref() == Some(text))
            .nth(nth)
            .map(|(i, _)| i as u32)
            .unwrap_or_else(|| panic!("no occurrence {nth} of {text}"))
    }

    fn has(g: &ProgramGraph, s: u32, kind: EdgeKind, t: u32) -> bool {
        g.edges_of(kind, false).any(|e| e.source == s && e.target == t)
    }

    #[test]
    fn root_kind() {
        let t = parse_to_ast("int main(){return 0;}");
        assert_eq!(t.root_node().kind(), "translation_unit");
    }

    #[test]
    fn empty_source_has_no_tokens() {
        let g = graph("");
        assert!(g.nodes.iter().all(|n| n.token_text.is_none()));
        assert_eq!(g.count_edges(EdgeKind::NextToken), 0);
        assert_eq!(g.num_nodes(), 2);
    }

    #[test]
    fn error_recovery_is_flagged() {
        let g = graph("int x = ;");
        assert!(g.parse_error_fraction > 0.0);
        assert_eq!(graph("int x = 1;").parse_error_fraction, 0.0);
    }

    #[test]
    fn assignment_dataflow() {
        let g = graph("int x=1;x=x+1;");
        let decl = find_token(&g, "x", 0);
        let lhs = find_token(&g, "x", 1);
        let rhs = find_token(&g, "x", 2);
        assert!(has(&g, lhs, EdgeKind::LastWrite, decl));
        assert!(has(&g, lhs, EdgeKind::ComputedFrom, rhs));
        assert!(has(&g, lhs, EdgeKind::LastLexicalUse, decl));
        assert!(has(&g, rhs, EdgeKind::LastLexicalUse, lhs));
        assert!(!has(&g, lhs, EdgeKind::LastRead, decl));
    }

    #[test]
    fn single_token_program() {
        let g = graph(";");
        assert_eq!(g.count_edges(EdgeKind::NextToken), 0);
        let kinds: std::collections::BTreeSet<EdgeKind> = g.edges.iter().map(|e| e.edge_type.kind).collect();
        assert_eq!(kinds, [EdgeKind::Child, EdgeKind::ToSink].into_iter().collect());
    }

    #[test]
    fn to_sink_count() {
        let g = graph("int main(){int a; cin>>a; cout<<a*2;}");
        assert_eq!(g.count_edges(EdgeKind::ToSink), g.num_nodes() - 1);
    }

    #[test]
    fn returns_and_guards() {
        let src = "int f(int a){ if (a>0) { a--; } else { a++; } while (a<3) a+=1; return a; }";
        let g = graph(src);
        let ret = g.nodes.iter().position(|n| n.kind == "return_statement").unwrap() as u32;
        let func = g.nodes.iter().position(|n| n.kind == "function_definition").unwrap() as u32;
        assert!(has(&g, ret, EdgeKind::ReturnsTo, func));
        let conds: Vec<u32> = g
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind == "condition_clause")
            .map(|(i, _)| i as u32)
            .collect();
        let dec = find_token(&g, "a", 2);
        let inc = find_token(&g, "a", 3);
        let body = find_token(&g, "a", 5);
        assert!(has(&g, dec, EdgeKind::GuardedBy, conds[0]));
        assert!(has(&g, inc, EdgeKind::GuardedByNegation, conds[0]));
        assert!(has(&g, body, EdgeKind::GuardedBy, conds[1]));
        let in_cond = find_token(&g, "a", 1);
        assert!(!g.edges_of(EdgeKind::GuardedBy, false).any(|e| e.source == in_cond));
    }

    #[test]
    fn variable_types() {
        let src = "int x; x=1;";
        let t = extract_variable_types(&parse_to_ast(src), src);
        assert_eq!(t.values().collect::<Vec<_>>(), ["int", "int"]);

        let src = "vector<int> v;";
        let t = extract_variable_types(&parse_to_ast(src), src);
        assert_eq!(t.values().collect::<Vec<_>>(), ["vector<int>"]);

        let src = "int main(){ y = 2; }";
        let t = extract_variable_types(&parse_to_ast(src), src);
        assert!(t.values().all(|v| v == UNKNOWN_TYPE));
    }

    #[test]
    fn type_markers_are_suffixes() {
        let src = "void f(const string &s, int *p, long long a[]) { s; p; a; }";
        let g = graph(src);
        let ty = |name: &str| g.nodes[find_token(&g, name, 1) as usize].variable_type.clone().unwrap();
        assert_eq!(ty("s"), "string const &");
        assert_eq!(ty("p"), "int *");
        assert_eq!(ty("a"), "long long []");
        assert_eq!(canonicalize_type("vector< pair<int, int> >"), "vector<pair<int,int>>");
        assert_eq!(canonicalize_type("unsigned   long\nlong"), "unsigned long long");
    }

    #[test]
    fn locals_shadow_globals_per_function() {
        let src = "int n; double g(){ double n = 1; return n; } int h(){ return n; }";
        let g = graph(src);
        let in_g = find_token(&g, "n", 2);
        let in_h = find_token(&g, "n", 3);
        assert_eq!(g.nodes[in_g as usize].variable_type.as_deref(), Some("double"));
        assert_eq!(g.nodes[in_h as usize].variable_type.as_deref(), Some("int"));
        assert!(has(&g, in_h, EdgeKind::LastWrite, find_token(&g, "n", 0)));
    }

    #[test]
    fn deterministic() {
        let src = "int main(){ for(int i=0;i<n;i++) s+=a[i]; }";
        assert_eq!(graph(src), graph(src));
    }
}
