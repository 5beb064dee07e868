//! Reference predictors: software metrics or TF-IDF features with one
//! logistic regression per tag.

use std::collections::{BTreeMap, HashMap};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tree_sitter::{Node, Tree};

use crate::codegraph::parse_to_ast;
use crate::error::{Error, Result};
use crate::eval::TagProbabilities;
use crate::preprocess::preprocess_source;

pub const METRIC_NAMES: [&str; 24] = [
    "lines_of_code",
    "token_count",
    "decl_int",
    "decl_float",
    "decl_string",
    "decl_vector_array",
    "decl_map_set",
    "decl_pair_tuple",
    "decl_bool",
    "decl_char",
    "loop_count",
    "max_loop_nesting",
    "conditional_count",
    "function_count",
    "recursion_flag",
    "arithmetic_ops",
    "bitwise_ops",
    "comparison_ops",
    "numeric_literals",
    "string_literals",
    "max_expression_depth",
    "logical_ops",
    "call_count",
    "assignment_count",
];

pub type MetricVector = [f64; 24];

mod m {
    pub const LOC: usize = 0;
    pub const TOKENS: usize = 1;
    pub const DECL: usize = 2;
    pub const LOOPS: usize = 10;
    pub const NESTING: usize = 11;
    pub const CONDITIONALS: usize = 12;
    pub const FUNCTIONS: usize = 13;
    pub const RECURSION: usize = 14;
    pub const ARITHMETIC: usize = 15;
    pub const BITWISE: usize = 16;
    pub const COMPARISON: usize = 17;
    pub const NUMBERS: usize = 18;
    pub const STRINGS: usize = 19;
    pub const EXPR_DEPTH: usize = 20;
    pub const LOGICAL: usize = 21;
    pub const CALLS: usize = 22;
    pub const ASSIGNMENTS: usize = 23;
}

const LOOP_KINDS: [&str; 4] = ["for_statement", "for_range_loop", "while_statement", "do_statement"];

const EXPRESSION_KINDS: [&str; 12] = [
    "binary_expression",
    "unary_expression",
    "update_expression",
    "assignment_expression",
    "conditional_expression",
    "call_expression",
    "subscript_expression",
    "field_expression",
    "parenthesized_expression",
    "cast_expression",
    "pointer_expression",
    "comma_expression",
];

/// Declaration slot (offset from `decl_int`) for a declared type.
fn declaration_class(type_text: &str, is_array: bool) -> Option<usize> {
    if is_array {
        return Some(3);
    }
    let base = type_text.split('<').next().unwrap_or("");
    let base = base.rsplit("::").next().unwrap_or(base);
    let words: Vec<&str> = base
        .split_whitespace()
        .filter(|w| !matches!(*w, "const" | "static" | "constexpr" | "volatile" | "mutable"))
        .collect();
    let last = *words.last()?;
    let class = match last {
        "vector" | "array" | "deque" | "valarray" => 3,
        "map" | "set" | "multimap" | "multiset" | "unordered_map" | "unordered_set" | "unordered_multimap"
        | "unordered_multiset" => 4,
        "pair" | "tuple" => 5,
        "string" | "wstring" => 2,
        "bool" => 6,
        "char" if words.len() == 1 => 7,
        "float" | "double" => 1,
        "int" | "long" | "short" | "unsigned" | "signed" | "size_t" | "int64_t" | "uint64_t" | "int32_t"
        | "uint32_t" | "ll" | "ull" | "lli" => 0,
        "char" => 0,
        _ => return None,
    };
    Some(class)
}

fn operator_class(op: &str) -> Option<usize> {
    match op {
        "+" | "-" | "*" | "/" | "%" | "++" | "--" | "+=" | "-=" | "*=" | "/=" | "%=" => Some(m::ARITHMETIC),
        "&" | "|" | "^" | "~" | "<<" | ">>" | "&=" | "|=" | "^=" | "<<=" | ">>=" | "bitand" | "bitor" | "xor"
        | "compl" => Some(m::BITWISE),
        "==" | "!=" | "<" | ">" | "<=" | ">=" | "<=>" | "not_eq" => Some(m::COMPARISON),
        "&&" | "||" | "!" | "and" | "or" | "not" => Some(m::LOGICAL),
        _ => None,
    }
}

fn text<'a>(node: Node<'_>, source: &'a str) -> &'a str {
    &source[node.byte_range()]
}

fn children(node: Node<'_>) -> Vec<Node<'_>> {
    let mut cursor = node.walk();
    node.children(&mut cursor).collect()
}

fn function_name<'a>(def: Node<'_>, source: &'a str) -> Option<&'a str> {
    let mut d = def.child_by_field_name("declarator")?;
    loop {
        if d.kind() == "function_declarator" {
            let name = d.child_by_field_name("declarator")?;
            let t = text(name, source);
            return Some(t.rsplit("::").next().unwrap_or(t));
        }
        d = d.child_by_field_name("declarator")?;
    }
}

fn calls_name(node: Node<'_>, name: &str, source: &str) -> bool {
    if node.kind() == "call_expression" {
        if let Some(f) = node.child_by_field_name("function") {
            if f.kind() == "identifier" && text(f, source) == name {
                return true;
            }
        }
    }
    children(node).into_iter().any(|c| calls_name(c, name, source))
}

struct Walker<'s> {
    source: &'s str,
    out: MetricVector,
}

impl Walker<'_> {
    /// Returns the expression depth of the subtree.
    fn visit(&mut self, node: Node<'_>, loop_depth: usize) -> usize {
        let kind = node.kind();
        let mut loop_depth = loop_depth;
        if node.child_count() == 0 && node.start_byte() < node.end_byte() && kind != "comment" {
            self.out[m::TOKENS] += 1.0;
        }
        match kind {
            k if LOOP_KINDS.contains(&k) => {
                loop_depth += 1;
                self.out[m::LOOPS] += 1.0;
                self.out[m::NESTING] = self.out[m::NESTING].max(loop_depth as f64);
            }
            "if_statement" | "conditional_expression" | "switch_statement" => self.out[m::CONDITIONALS] += 1.0,
            "function_definition" => {
                self.out[m::FUNCTIONS] += 1.0;
                if let (Some(name), Some(body)) = (function_name(node, self.source), node.child_by_field_name("body")) {
                    if calls_name(body, name, self.source) {
                        self.out[m::RECURSION] = 1.0;
                    }
                }
            }
            "declaration" => self.declaration(node),
            "number_literal" => self.out[m::NUMBERS] += 1.0,
            "string_literal" | "raw_string_literal" => self.out[m::STRINGS] += 1.0,
            "call_expression" => self.out[m::CALLS] += 1.0,
            "assignment_expression" => self.out[m::ASSIGNMENTS] += 1.0,
            _ => {}
        }
        if matches!(
            kind,
            "binary_expression" | "unary_expression" | "update_expression" | "assignment_expression"
        ) {
            if let Some(op) = node.child_by_field_name("operator") {
                if let Some(slot) = operator_class(text(op, self.source)) {
                    self.out[slot] += 1.0;
                }
            }
        }
        let below = children(node)
            .into_iter()
            .map(|c| self.visit(c, loop_depth))
            .max()
            .unwrap_or(0);
        let depth = below + usize::from(EXPRESSION_KINDS.contains(&kind));
        self.out[m::EXPR_DEPTH] = self.out[m::EXPR_DEPTH].max(depth as f64);
        depth
    }

    fn declaration(&mut self, node: Node<'_>) {
        let Some(ty) = node.child_by_field_name("type") else {
            return;
        };
        let type_text = crate::codegraph::canonicalize_type(text(ty, self.source));
        let mut cursor = node.walk();
        for d in node.children_by_field_name("declarator", &mut cursor) {
            let mut inner = d;
            if inner.kind() == "init_declarator" {
                match inner.child_by_field_name("declarator") {
                    Some(x) => inner = x,
                    None => continue,
                }
            }
            if inner.kind() == "function_declarator" {
                continue;
            }
            if let Some(class) = declaration_class(&type_text, inner.kind() == "array_declarator") {
                self.out[m::DECL + class] += 1.0;
            }
        }
    }
}

pub fn metrics_from_tree(tree: &Tree, source: &str) -> MetricVector {
    let mut w = Walker {
        source,
        out: [0.0; 24],
    };
    w.out[m::LOC] = source.lines().count() as f64;
    w.visit(tree.root_node(), 0);
    w.out
}

/// Preprocesses and parses a raw solution, then measures it.
pub fn extract_code_metrics(raw_source: &str) -> MetricVector {
    let source = preprocess_source(raw_source);
    metrics_from_tree(&parse_to_ast(&source), &source)
}

pub fn extract_all_metrics(sources: &[&str]) -> Vec<MetricVector> {
    sources.par_iter().map(|s| extract_code_metrics(s)).collect()
}

pub fn mean_metrics(rows: &[MetricVector]) -> MetricVector {
    let mut out = [0.0; 24];
    if rows.is_empty() {
        return out;
    }
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out.map(|v| v / rows.len() as f64)
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidRecord(e.to_string())
}

/// Feature matrix as CSV: an `id` column followed by one column per metric.
pub fn metrics_csv(ids: &[String], rows: &[MetricVector]) -> Result<String> {
    if ids.len() != rows.len() {
        return Err(Error::LengthMismatch("ids vs metric rows".into()));
    }
    let mut w = csv::Writer::from_writer(vec![]);
    let mut header = vec!["id"];
    header.extend(METRIC_NAMES);
    w.write_record(&header).map_err(csv_err)?;
    for (id, r) in ids.iter().zip(rows) {
        let mut rec = vec![id.clone()];
        rec.extend(r.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::InvalidRecord(e.to_string()))?).expect("utf-8"))
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<(String, MetricVector)>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?.clone();
    if header.len() != 25 || header.iter().skip(1).ne(METRIC_NAMES) {
        return Err(Error::InvalidRecord("metric CSV header does not match the metric list".into()));
    }
    let mut out = vec![];
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let mut v = [0.0; 24];
        for (j, slot) in v.iter_mut().enumerate() {
            *slot = rec[j + 1]
                .parse()
                .map_err(|_| Error::InvalidRecord(format!("bad metric value `{}`", &rec[j + 1])))?;
        }
        out.push((rec[0].to_string(), v));
    }
    Ok(out)
}

/// Word-level TF-IDF with smoothed idf and L2-normalized rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfVectorizer {
    pub vocabulary: Vec<String>,
    pub idf: Vec<f64>,
}

pub type SparseVector = Vec<(usize, f64)>;

impl TfidfVectorizer {
    /// Keeps the `cap` words with the highest document frequency in the
    /// training documents, ties broken by the word.
    pub fn fit(train_documents: &[Vec<String>], cap: usize) -> Result<Self> {
        if train_documents.is_empty() {
            return Err(Error::EmptyInput("TF-IDF training corpus".into()));
        }
        let mut df: HashMap<&str, usize> = HashMap::new();
        for doc in train_documents {
            let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for w in seen {
                *df.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = df.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap);
        let n = train_documents.len() as f64;
        Ok(Self {
            vocabulary: ranked.iter().map(|(w, _)| w.to_string()).collect(),
            idf: ranked.iter().map(|&(_, d)| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn transform(&self, document: &[String]) -> SparseVector {
        let index: HashMap<&str, usize> = self.vocabulary.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
        let mut tf: BTreeMap<usize, f64> = BTreeMap::new();
        for w in document {
            if let Some(&i) = index.get(w.as_str()) {
                *tf.entry(i).or_default() += 1.0;
            }
        }
        let mut v: SparseVector = tf.into_iter().map(|(i, c)| (i, c * self.idf[i])).collect();
        let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, x) in &mut v {
                *x /= norm;
            }
        }
        v
    }

    pub fn transform_dense(&self, document: &[String]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (i, x) in self.transform(document) {
            out[i] = x;
        }
        out
    }
}

/// Column-wise standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::EmptyInput("standardizer rows".into()))?;
        let n = rows.len() as f64;
        let d = first.len();
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale = (0..d)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    pub l2: f64,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            lr: 0.5,
            epochs: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl LogisticModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
    }

    /// Mean BCE plus `l2 / 2 * |w|^2` (bias unpenalized) and its gradient
    /// with respect to `(weights, bias)`.
    pub fn loss_and_gradient(&self, x: &[Vec<f64>], y: &[f64], l2: f64) -> (f64, Vec<f64>, f64) {
        let (data, mut gw, gb) = self.data_loss_and_gradient(x, y);
        let penalty = 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>();
        for (g, w) in gw.iter_mut().zip(&self.weights) {
            *g += l2 * w;
        }
        (data + penalty, gw, gb)
    }

    fn data_loss_and_gradient(&self, x: &[Vec<f64>], y: &[f64]) -> (f64, Vec<f64>, f64) {
        let n = x.len() as f64;
        let mut loss = 0.0;
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = 0.0;
        for (row, &t) in x.iter().zip(y) {
            let z = self.bias + self.weights.iter().zip(row).map(|(w, v)| w * v).sum::<f64>();
            // log(1 + e^z) - t z, stable for large |z|
            loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
            let d = sigmoid(z) - t;
            for (g, v) in gw.iter_mut().zip(row) {
                *g += d * v / n;
            }
            gb += d / n;
        }
        (loss / n, gw, gb)
    }

    /// Full-batch gradient descent with a proximal step for the L2 term.
    pub fn fit(x: &[Vec<f64>], y: &[f64], cfg: &LogisticConfig) -> Self {
        let mut model = Self::zeros(x.first().map_or(0, Vec::len));
        for _ in 0..cfg.epochs {
            let (_, gw, gb) = model.data_loss_and_gradient(x, y);
            for (w, g) in model.weights.iter_mut().zip(gw) {
                *w = (*w - cfg.lr * g) / (1.0 + cfg.lr * cfg.l2);
            }
            model.bias -= cfg.lr * gb;
        }
        model
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Metrics,
    Tfidf,
}

/// One logistic regression per tag over a shared feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearBaseline {
    pub kind: FeatureKind,
    pub tags: Vec<String>,
    pub standardizer: Option<Standardizer>,
    pub models: Vec<LogisticModel>,
}

impl LinearBaseline {
    /// `labels` has one multi-hot row per feature row. Tags whose train
    /// labels are all equal get a constant predictor at the smoothed prior.
    pub fn train(
        kind: FeatureKind,
        tags: &[String],
        features: &[Vec<f64>],
        labels: &[Vec<f64>],
        cfg: &LogisticConfig,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyInput("baseline training set".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::LengthMismatch("features vs labels".into()));
        }
        let standardizer = match kind {
            FeatureKind::Metrics => Some(Standardizer::fit(features)?),
            FeatureKind::Tfidf => None,
        };
        let x: Vec<Vec<f64>> = match &standardizer {
            Some(s) => features.iter().map(|r| s.apply(r)).collect(),
            None => features.to_vec(),
        };
        let models = (0..tags.len())
            .into_par_iter()
            .map(|j| {
                let y: Vec<f64> = labels.iter().map(|r| r[j]).collect();
                let pos = y.iter().filter(|&&v| v > 0.5).count();
                if pos == 0 || pos == y.len() {
                    warn!("tag `{}` has a single train label; using a constant predictor", tags[j]);
                    let prior = (pos as f64 + 0.5) / (y.len() as f64 + 1.0);
                    LogisticModel {
                        weights: vec![0.0; x[0].len()],
                        bias: (prior / (1.0 - prior)).ln(),
                    }
                } else {
                    LogisticModel::fit(&x, &y, cfg)
                }
            })
            .collect();
        Ok(Self {
            kind,
            tags: tags.to_vec(),
            standardizer,
            models,
        })
    }

    pub fn predict(&self, features: &[f64]) -> TagProbabilities {
        let x = match &self.standardizer {
            Some(s) => s.apply(features),
            None => features.to_vec(),
        };
        self.models.iter().map(|m| m.predict(&x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn metric(v: &MetricVector, name: &str) -> f64 {
        v[METRIC_NAMES.iter().position(|n| *n == name).unwrap()]
    }

    #[test]
    fn names_are_unique() {
        let mut n = METRIC_NAMES.to_vec();
        n.sort_unstable();
        n.dedup();
        assert_eq!(n.len(), 24);
    }

    #[test]
    fn single_loop() {
        let v = extract_code_metrics("int main(){for(;;){}}");
        assert_eq!(metric(&v, "loop_count"), 1.0);
        assert_eq!(metric(&v, "max_loop_nesting"), 1.0);
        assert_eq!(metric(&v, "function_count"), 1.0);
    }

    #[test]
    fn empty_unit_is_zero_but_loc() {
        let v = extract_code_metrics("\n\n");
        assert!(v[1..].iter().all(|&x| x == 0.0));
        assert_eq!(extract_code_metrics("")[0], 0.0);
    }

    #[test]
    fn nested_loops() {
        let v = extract_code_metrics("int main(){for(int i=0;i<3;i++){for(int j=0;j<3;j++){}} while(1){}}");
        assert_eq!(metric(&v, "loop_count"), 3.0);
        assert_eq!(metric(&v, "max_loop_nesting"), 2.0);
        assert_eq!(metric(&v, "decl_int"), 2.0);
        assert_eq!(metric(&v, "comparison_ops"), 2.0);
        assert_eq!(metric(&v, "arithmetic_ops"), 2.0);
    }

    #[test]
    fn hand_counted_program() {
        let src = "#include <bits/stdc++.h>\nusing namespace std;\n\
                   int f(int n){ if(n<2) return 1; return n*f(n-1); }\n\
                   int main(){ vector<int> v; map<int,int> m; string s = \"ab\"; double d, e[3]; bool ok = true;\n\
                   char c; pair<int,int> p; int x = (1 + 2) * 3; x ^= 4; if (x && ok) x = f(x); }\n";
        let v = extract_code_metrics(src);
        assert_eq!(metric(&v, "function_count"), 2.0);
        assert_eq!(metric(&v, "recursion_flag"), 1.0);
        assert_eq!(metric(&v, "decl_vector_array"), 2.0);
        assert_eq!(metric(&v, "decl_map_set"), 1.0);
        assert_eq!(metric(&v, "decl_string"), 1.0);
        assert_eq!(metric(&v, "decl_float"), 1.0);
        assert_eq!(metric(&v, "decl_bool"), 1.0);
        assert_eq!(metric(&v, "decl_char"), 1.0);
        assert_eq!(metric(&v, "decl_pair_tuple"), 1.0);
        assert_eq!(metric(&v, "decl_int"), 1.0);
        assert_eq!(metric(&v, "conditional_count"), 2.0);
        assert_eq!(metric(&v, "string_literals"), 1.0);
        assert_eq!(metric(&v, "numeric_literals"), 8.0);
        assert_eq!(metric(&v, "logical_ops"), 1.0);
        assert_eq!(metric(&v, "bitwise_ops"), 1.0);
        assert_eq!(metric(&v, "call_count"), 2.0);
        assert_eq!(metric(&v, "assignment_count"), 2.0);
        // (1 + 2) * 3: binary > parenthesized > binary
        assert_eq!(metric(&v, "max_expression_depth"), 3.0);
        assert_eq!(metric(&v, "recursion_flag"), 1.0);
    }

    #[test]
    fn non_recursive_function() {
        let v = extract_code_metrics("int g(int a){ return a+1; } int main(){ return g(2); }");
        assert_eq!(metric(&v, "recursion_flag"), 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![extract_code_metrics("int main(){int a = 1;}")];
        let text = metrics_csv(&["s1".into()], &rows).unwrap();
        assert!(text.starts_with("id,lines_of_code,token_count,"));
        let back = parse_metrics_csv(&text).unwrap();
        assert_eq!(back, vec![("s1".to_string(), rows[0])]);
        assert!(parse_metrics_csv("id,foo\nx,1\n").is_err());
    }

    fn doc(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn idf_formula() {
        let t = TfidfVectorizer::fit(&[doc("a b"), doc("a")], 10).unwrap();
        assert_eq!(t.vocabulary, vec!["a", "b"]);
        assert_eq!(t.idf[0], 1.0);
        assert!((t.idf[1] - 1.405465).abs() < 1e-6);
        assert!((t.idf[1] - (1.5f64.ln() + 1.0)).abs() < 1e-15);
        assert!(TfidfVectorizer::fit(&[], 10).is_err());
    }

    #[test]
    fn vocabulary_cap_by_document_frequency() {
        let t = TfidfVectorizer::fit(&[doc("x y z"), doc("y z"), doc("z")], 2).unwrap();
        assert_eq!(t.vocabulary, vec!["z", "y"]);
        assert!(t.transform(&doc("x x")).is_empty());
    }

    proptest! {
        #[test]
        fn tfidf_rows_are_unit(docs in prop::collection::vec(prop::collection::vec("[a-e]", 0..8), 1..6)) {
            let t = TfidfVectorizer::fit(&docs, 4).unwrap();
            for d in &docs {
                let v = t.transform(d);
                if !v.is_empty() {
                    let n: f64 = v.iter().map(|(_, x)| x * x).sum();
                    prop_assert!((n.sqrt() - 1.0).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn metrics_are_total_and_nonnegative(src in "[a-z(){};=+<>0-9 \n]{0,80}") {
            let a = extract_code_metrics(&src);
            prop_assert!(a.iter().all(|&x| x >= 0.0 && x.is_finite()));
            prop_assert_eq!(a, extract_code_metrics(&src));
        }
    }

    fn separable() -> (Vec<Vec<f64>>, Vec<f64>) {
        let x = vec![vec![0.0, 1.0], vec![1.0, 2.0], vec![2.0, 0.5], vec![3.0, 1.5], vec![-1.0, 0.0], vec![4.0, 3.0]];
        let y = x.iter().map(|r| if r[0] > 1.5 { 1.0 } else { 0.0 }).collect();
        (x, y)
    }

    #[test]
    fn separable_training_accuracy() {
        let (x, y) = separable();
        let m = LogisticModel::fit(&x, &y, &LogisticConfig { l2: 0.0, lr: 1.0, epochs: 2000 });
        for (r, t) in x.iter().zip(&y) {
            assert_eq!(m.predict(r) > 0.5, *t > 0.5);
        }
    }

    #[test]
    fn heavy_l2_gives_prior() {
        let (x, y) = separable();
        let m = LogisticModel::fit(&x, &y, &LogisticConfig { l2: 1e9, lr: 0.5, epochs: 2000 });
        assert!(m.weights.iter().all(|w| w.abs() < 1e-8));
        let prior = y.iter().sum::<f64>() / y.len() as f64;
        assert!((m.predict(&x[0]) - prior).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = separable();
        let model = LogisticModel {
            weights: vec![0.3, -0.7],
            bias: 0.1,
        };
        let l2 = 0.05;
        let (_, gw, gb) = model.loss_and_gradient(&x, &y, l2);
        let h = 1e-5;
        let loss = |m: &LogisticModel| m.loss_and_gradient(&x, &y, l2).0;
        for j in 0..2 {
            let (mut p, mut q) = (model.clone(), model.clone());
            p.weights[j] += h;
            q.weights[j] -= h;
            let numeric = (loss(&p) - loss(&q)) / (2.0 * h);
            assert!((numeric - gw[j]).abs() / numeric.abs().max(1e-8) < 1e-6);
        }
        let (mut p, mut q) = (model.clone(), model.clone());
        p.bias += h;
        q.bias -= h;
        let numeric = (loss(&p) - loss(&q)) / (2.0 * h);
        assert!((numeric - gb).abs() / numeric.abs().max(1e-8) < 1e-6);
    }

    #[test]
    fn degenerate_tag_gets_constant_predictor() {
        let (x, y) = separable();
        let labels: Vec<Vec<f64>> = y.iter().map(|&t| vec![t, 0.0]).collect();
        let tags = vec!["a".to_string(), "b".to_string()];
        let b = LinearBaseline::train(FeatureKind::Metrics, &tags, &x, &labels, &LogisticConfig::default()).unwrap();
        let p0 = b.predict(&x[0]);
        let p1 = b.predict(&x[5]);
        assert_eq!(p0[1], p1[1]);
        assert!(p0[1] < 0.5);
        assert!(p0[0] < 0.5 && p1[0] > 0.5);
    }
}
