//! Gated graph neural network over program graphs.
//!
//! Node states start from token and variable-type embeddings, exchange
//! edge-type-specific messages for a fixed number of rounds through a
//! shared GRU cell, and the final sink state represents the program.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use cptag_nn::{
    Checkpoint, GruCell, Linear, Mode, ParamId, ParamStore, Result as NnResult, Storage, TagPredictor, Tape,
    Var,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codegraph::{EdgeType, ProgramGraph, NUM_EDGE_TYPES, UNKNOWN_TYPE};
use crate::corpus::TagVocabulary;
use crate::error::{Error, Result};
use crate::eval::{macro_pr_auc, TagProbabilities};
use crate::preprocess::{build_subword_vocab, SubwordVocabulary};
use crate::training::{train_loop, TrainHyper, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GgnnConfig {
    pub hidden_dim: usize,
    pub token_embedding_dim: usize,
    pub type_embedding_dim: usize,
    pub rounds: usize,
    pub dropout: f64,
    /// Target size of the code subword vocabulary.
    pub token_vocab_size: usize,
    /// Number of canonical types kept besides the unknown type.
    pub type_vocab_size: usize,
    pub max_parse_error_fraction: f64,
}

impl Default for GgnnConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            token_embedding_dim: 32,
            type_embedding_dim: 8,
            rounds: 5,
            dropout: 0.2,
            token_vocab_size: 2000,
            type_vocab_size: 64,
            max_parse_error_fraction: crate::codegraph::DEFAULT_MAX_PARSE_ERROR_FRACTION,
        }
    }
}

impl GgnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.token_embedding_dim + self.type_embedding_dim > self.hidden_dim {
            return Err(Error::InvalidRecord(
                "token and type embedding dims exceed the hidden dim".into(),
            ));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidRecord("GGNN needs at least one round".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidRecord(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Node-input vocabularies: subwords of token texts and kind names, and
/// the most frequent canonical variable types (index 0 is unknown).
#[derive(Debug, Clone, PartialEq)]
pub struct CodeVocabulary {
    pub subwords: SubwordVocabulary,
    pub types: Vec<String>,
}

fn node_text(node: &crate::codegraph::GraphNode) -> &str {
    node.token_text.as_deref().unwrap_or(&node.kind)
}

impl CodeVocabulary {
    pub fn build(graphs: &[&ProgramGraph], token_vocab_size: usize, type_vocab_size: usize) -> Result<Self> {
        let texts = || graphs.iter().flat_map(|g| g.nodes.iter().map(node_text));
        let subwords = match build_subword_vocab(texts(), token_vocab_size) {
            Err(Error::VocabularyTooSmall { minimum, .. }) => build_subword_vocab(texts(), minimum)?,
            other => other?,
        };
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for g in graphs {
            for n in &g.nodes {
                if let Some(t) = &n.variable_type {
                    *counts.entry(t).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut types = vec![UNKNOWN_TYPE.to_string()];
        types.extend(ranked.iter().take(type_vocab_size).map(|(t, _)| t.to_string()));
        Ok(Self { subwords, types })
    }

    pub fn type_index(&self, t: Option<&str>) -> usize {
        t.and_then(|t| self.types.iter().position(|x| x == t)).unwrap_or(0)
    }
}

/// A graph converted to embedding lookups and per-edge-type adjacency,
/// with the sink relabeled to the last position.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedGraph {
    /// Nodes other than the sink.
    pub inner_nodes: usize,
    token_ids: Vec<usize>,
    token_owner: Vec<usize>,
    token_weight: Vec<f64>,
    type_owner: Vec<usize>,
    type_ids: Vec<usize>,
    /// Per edge type, (source, target) with the sink as `inner_nodes`.
    edges: Vec<Vec<(usize, usize)>>,
}

/// Nodes whose initial state carries a type embedding.
fn is_identifier(kind: &str) -> bool {
    kind == "identifier"
}

impl PreparedGraph {
    pub fn new(graph: &ProgramGraph, vocab: &CodeVocabulary) -> Self {
        let sink = graph.sink_id as usize;
        let slot = |i: usize| match i.cmp(&sink) {
            std::cmp::Ordering::Less => i,
            std::cmp::Ordering::Equal => graph.nodes.len() - 1,
            std::cmp::Ordering::Greater => i - 1,
        };
        let mut p = PreparedGraph {
            inner_nodes: graph.nodes.len() - 1,
            token_ids: vec![],
            token_owner: vec![],
            token_weight: vec![],
            type_owner: vec![],
            type_ids: vec![],
            edges: vec![vec![]; NUM_EDGE_TYPES],
        };
        for (i, node) in graph.nodes.iter().enumerate() {
            if i == sink {
                continue;
            }
            let mut ids = vocab.subwords.segment_text(node_text(node));
            if ids.is_empty() {
                ids.push(vocab.subwords.unk_id());
            }
            let w = 1.0 / ids.len() as f64;
            for id in ids {
                p.token_ids.push(id as usize);
                p.token_owner.push(slot(i));
                p.token_weight.push(w);
            }
            if node.token_text.is_some() && is_identifier(&node.kind) {
                p.type_owner.push(slot(i));
                p.type_ids.push(vocab.type_index(node.variable_type.as_deref()));
            }
        }
        for e in &graph.edges {
            p.edges[e.edge_type.index()].push((slot(e.source as usize), slot(e.target as usize)));
        }
        p
    }

    pub fn num_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }
}

struct EdgeGroup {
    edge_type: usize,
    src: Vec<usize>,
    local_dst: Vec<usize>,
    degree: Vec<f64>,
}

/// Disjoint union of prepared graphs: all inner nodes in graph order,
/// followed by one sink row per graph.
struct Batch {
    inner: usize,
    graphs: usize,
    token_ids: Vec<usize>,
    token_owner: Vec<usize>,
    token_weight: Vec<f64>,
    type_owner: Vec<usize>,
    type_ids: Vec<usize>,
    groups: Vec<EdgeGroup>,
    /// Global node of every row of the concatenated group messages.
    targets: Vec<usize>,
}

impl Batch {
    fn new(graphs: &[&PreparedGraph]) -> Self {
        let inner: usize = graphs.iter().map(|g| g.inner_nodes).sum();
        let mut b = Batch {
            inner,
            graphs: graphs.len(),
            token_ids: vec![],
            token_owner: vec![],
            token_weight: vec![],
            type_owner: vec![],
            type_ids: vec![],
            groups: vec![],
            targets: vec![],
        };
        let mut offsets = Vec::with_capacity(graphs.len());
        let mut off = 0;
        for g in graphs {
            offsets.push(off);
            off += g.inner_nodes;
        }
        let global = |gi: usize, local: usize| {
            if local == graphs[gi].inner_nodes {
                inner + gi
            } else {
                offsets[gi] + local
            }
        };
        for (gi, g) in graphs.iter().enumerate() {
            b.token_ids.extend(&g.token_ids);
            b.token_owner.extend(g.token_owner.iter().map(|&o| global(gi, o)));
            b.token_weight.extend(&g.token_weight);
            b.type_owner.extend(g.type_owner.iter().map(|&o| global(gi, o)));
            b.type_ids.extend(&g.type_ids);
        }
        for t in 0..NUM_EDGE_TYPES {
            let mut group = EdgeGroup {
                edge_type: t,
                src: vec![],
                local_dst: vec![],
                degree: vec![],
            };
            let mut slot_of: HashMap<usize, usize> = HashMap::new();
            for (gi, g) in graphs.iter().enumerate() {
                for &(s, d) in &g.edges[t] {
                    let d = global(gi, d);
                    let slot = *slot_of.entry(d).or_insert_with(|| {
                        b.targets.push(d);
                        group.degree.push(0.0);
                        group.degree.len() - 1
                    });
                    group.degree[slot] += 1.0;
                    group.src.push(global(gi, s));
                    group.local_dst.push(slot);
                }
            }
            if !group.src.is_empty() {
                b.groups.push(group);
            }
        }
        b
    }

    fn rows(&self) -> usize {
        self.inner + self.graphs
    }
}

/// Messages are summed over incoming edges and the sink has one edge
/// per node, so message weights start small to keep the GRU gates out
/// of saturation.
const MESSAGE_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct GgnnParams {
    pub token_embedding: ParamId,
    pub type_embedding: ParamId,
    /// One transform per edge type, indexed by [`EdgeType::index`].
    pub messages: Vec<Linear>,
    pub gru: GruCell,
    pub sink: ParamId,
    pub head: TagPredictor,
}

#[derive(Debug, Clone)]
pub struct GgnnModel {
    pub config: GgnnConfig,
    pub vocab: CodeVocabulary,
    pub tags: TagVocabulary,
    pub store: ParamStore,
    pub params: GgnnParams,
}

#[derive(Serialize, Deserialize)]
struct GgnnMeta {
    config: GgnnConfig,
    tags: TagVocabulary,
    types: Vec<String>,
    subwords: Vec<String>,
}

impl GgnnModel {
    pub fn new(config: GgnnConfig, vocab: CodeVocabulary, tags: TagVocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = config.hidden_dim;
        let params = GgnnParams {
            token_embedding: store.xavier("ggnn.token_embedding", vocab.subwords.len(), config.token_embedding_dim, &mut rng),
            type_embedding: store.xavier("ggnn.type_embedding", vocab.types.len(), config.type_embedding_dim, &mut rng),
            messages: EdgeType::all()
                .map(|t| Linear {
                    weight: store.uniform(format!("ggnn.message.{}.weight", t.index()), h, h, MESSAGE_INIT_SCALE, &mut rng),
                    bias: store.zeros(format!("ggnn.message.{}.bias", t.index()), 1, h),
                })
                .collect(),
            gru: GruCell::new(&mut store, "ggnn.gru", h, h, &mut rng),
            sink: store.uniform("ggnn.sink", 1, h, 0.1, &mut rng),
            head: TagPredictor::new(&mut store, "ggnn.head", h, tags.len(), config.dropout, &mut rng)?,
        };
        Ok(Self {
            config,
            vocab,
            tags,
            store,
            params,
        })
    }

    pub fn prepare(&self, graph: &ProgramGraph) -> PreparedGraph {
        PreparedGraph::new(graph, &self.vocab)
    }

    fn init_states(&self, tape: &mut Tape, store: &ParamStore, b: &Batch) -> NnResult<Var> {
        let cfg = &self.config;
        let p = &self.params;
        let mut cols = Vec::new();
        let emb = tape.param(store, p.token_embedding);
        let tok = tape.gather_rows(emb, &b.token_ids)?;
        let tok = tape.scale_rows(tok, &b.token_weight)?;
        cols.push(tape.scatter_add_rows(tok, &b.token_owner, b.inner)?);
        let temb = tape.param(store, p.type_embedding);
        let ty = tape.gather_rows(temb, &b.type_ids)?;
        cols.push(tape.scatter_add_rows(ty, &b.type_owner, b.inner)?);
        let pad = cfg.hidden_dim - cfg.token_embedding_dim - cfg.type_embedding_dim;
        if pad > 0 {
            cols.push(tape.zeros(b.inner, pad));
        }
        let inner = tape.concat_cols(&cols)?;
        let sink = tape.param(store, p.sink);
        let sinks = tape.gather_rows(sink, &vec![0; b.graphs])?;
        tape.concat_rows(&[inner, sinks])
    }

    fn round(&self, tape: &mut Tape, store: &ParamStore, b: &Batch, states: Var) -> NnResult<Var> {
        let mut parts = Vec::with_capacity(b.groups.len());
        for g in &b.groups {
            let lin = &self.params.messages[g.edge_type];
            // Σ_u (h_u W + b) = (Σ_u h_u) W + deg · b
            let agg = tape.segment_sum(states, &g.src, &g.local_dst, g.degree.len())?;
            let w = tape.param(store, lin.weight);
            let m = tape.matmul(agg, w)?;
            let bias = tape.param(store, lin.bias);
            parts.push(tape.add_scaled_row(m, bias, &g.degree)?);
        }
        let messages = if parts.is_empty() {
            tape.zeros(b.rows(), self.config.hidden_dim)
        } else {
            let all = tape.concat_rows(&parts)?;
            tape.scatter_add_rows(all, &b.targets, b.rows())?
        };
        self.params.gru.forward(tape, store, messages, states)
    }

    /// Sink states (one row per graph) after all rounds.
    fn forward_sinks(&self, tape: &mut Tape, store: &ParamStore, b: &Batch) -> NnResult<Var> {
        let mut h = self.init_states(tape, store, b)?;
        for _ in 0..self.config.rounds {
            h = self.round(tape, store, b, h)?;
        }
        tape.slice_rows(h, b.inner, b.rows())
    }

    fn forward_probs<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graphs: &[&PreparedGraph],
        mode: Mode,
        rng: &mut R,
    ) -> NnResult<Var> {
        let b = Batch::new(graphs);
        let v = self.forward_sinks(tape, store, &b)?;
        self.params.head.forward(tape, store, v, mode, rng)
    }

    /// Initial state matrix of one graph; the sink row is last.
    pub fn init_node_states(&self, graph: &PreparedGraph) -> Result<ndarray::Array2<f64>> {
        let mut tape = Tape::new();
        let b = Batch::new(&[graph]);
        let h = self.init_states(&mut tape, &self.store, &b)?;
        Ok(tape.value(h).clone())
    }

    /// One simultaneous message round applied to an explicit state matrix.
    pub fn message_round(&self, graph: &PreparedGraph, states: ndarray::Array2<f64>) -> Result<ndarray::Array2<f64>> {
        let mut tape = Tape::new();
        let b = Batch::new(&[graph]);
        let s = tape.constant(states);
        let h = self.round(&mut tape, &self.store, &b, s)?;
        Ok(tape.value(h).clone())
    }

    pub fn solution_vector(&self, graph: &PreparedGraph) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = Batch::new(&[graph]);
        let v = self.forward_sinks(&mut tape, &self.store, &b)?;
        Ok(tape.value(v).iter().copied().collect())
    }

    pub fn solution_vectors(&self, graphs: &[PreparedGraph]) -> Result<Vec<Vec<f64>>> {
        graphs.par_iter().map(|g| self.solution_vector(g)).collect()
    }

    pub fn predict_solution(&self, graph: &PreparedGraph) -> Result<TagProbabilities> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = self.forward_probs(&mut tape, &self.store, &[graph], Mode::Eval, &mut rng)?;
        Ok(tape.value(p).iter().copied().collect())
    }

    pub fn predict_solutions(&self, graphs: &[PreparedGraph]) -> Result<Vec<TagProbabilities>> {
        graphs.par_iter().map(|g| self.predict_solution(g)).collect()
    }

    /// Mean BCE of a batch under `store` (training mode).
    pub fn batch_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graphs: &[&PreparedGraph],
        labels: &[f64],
        rng: &mut R,
    ) -> NnResult<Var> {
        let p = self.forward_probs(tape, store, graphs, Mode::Train, rng)?;
        tape.bce_loss(p, labels)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let meta = GgnnMeta {
            config: self.config.clone(),
            tags: self.tags.clone(),
            types: self.vocab.types.clone(),
            subwords: self.vocab.subwords.tokens().to_vec(),
        };
        Ok(Checkpoint::from_store(
            &self.store,
            self.tags.hash(),
            serde_json::to_string(&meta)?,
            Storage::F64,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.checkpoint()?.save(path)?)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: GgnnMeta = serde_json::from_str(&ckpt.meta)?;
        if meta.tags.hash() != ckpt.vocab_hash {
            return Err(Error::VocabularyMismatch("GGNN checkpoint tag hash".into()));
        }
        let vocab = CodeVocabulary {
            subwords: SubwordVocabulary::from_tokens(meta.subwords)?,
            types: meta.types,
        };
        let mut model = Self::new(meta.config, vocab, meta.tags, 0)?;
        ckpt.restore_into(&mut model.store)?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Fails unless the model was trained against `tags`.
    pub fn check_tags(&self, tags: &TagVocabulary) -> Result<()> {
        if self.tags.hash() != tags.hash() {
            return Err(Error::VocabularyMismatch("GGNN checkpoint".into()));
        }
        Ok(())
    }
}

/// Solution graphs labeled with their problem's tags.
pub struct LabeledGraphs<'a> {
    pub graphs: &'a [PreparedGraph],
    pub labels: &'a [Vec<f64>],
}

pub fn train_ggnn(
    model: &mut GgnnModel,
    train: LabeledGraphs<'_>,
    validation: LabeledGraphs<'_>,
    hyper: &TrainHyper,
) -> Result<TrainOutcome> {
    if train.graphs.len() != train.labels.len() || validation.graphs.len() != validation.labels.len() {
        return Err(Error::LengthMismatch("graphs vs labels".into()));
    }
    let mut store = std::mem::take(&mut model.store);
    let frozen = &*model;
    let val_labels: Vec<Vec<bool>> = validation
        .labels
        .iter()
        .map(|r| r.iter().map(|&x| x > 0.5).collect())
        .collect();
    let outcome = train_loop(
        "ggnn",
        &mut store,
        train.graphs.len(),
        hyper,
        |store, mut ctx| {
            let graphs: Vec<&PreparedGraph> = ctx.items.iter().map(|&i| &train.graphs[i]).collect();
            let labels: Vec<f64> = ctx.items.iter().flat_map(|&i| train.labels[i].iter().copied()).collect();
            let mut tape = Tape::new();
            let loss = frozen.batch_loss(&mut tape, store, &graphs, &labels, &mut ctx.rng)?;
            let value = tape.scalar(loss);
            Ok((value, tape.backward(loss)?))
        },
        |store| {
            if validation.graphs.is_empty() {
                return Ok(None);
            }
            let scores: Vec<Vec<f64>> = validation
                .graphs
                .par_iter()
                .map(|g| {
                    let mut tape = Tape::new();
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    let p = frozen.forward_probs(&mut tape, store, &[g], Mode::Eval, &mut rng)?;
                    Ok(tape.value(p).iter().copied().collect())
                })
                .collect::<Result<_>>()?;
            Ok(macro_pr_auc(&scores, &val_labels))
        },
    );
    model.store = store;
    outcome
}
