//! Transformer encoder over subword-tokenized statements with a
//! first-token readout and tag head.

use std::path::Path;

use cptag_nn::{
    Checkpoint, LayerNorm, Linear, Mode, ParamId, ParamStore, Result as NnResult, Storage, TagPredictor, Tape, Var,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TagVocabulary;
use crate::error::{Error, Result};
use crate::eval::{macro_pr_auc, TagProbabilities};
use crate::preprocess::{latex_to_text, wordpiece_tokenize, SubwordVocabulary};
use crate::training::{train_loop, TrainHyper, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextModelConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
    /// Target size of the statement subword vocabulary.
    pub vocab_size: usize,
}

impl Default for TextModelConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            dim: 128,
            heads: 4,
            ff_dim: 512,
            max_len: 256,
            dropout: 0.1,
            vocab_size: 2000,
        }
    }
}

impl TextModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::InvalidRecord(format!("dim {} not divisible by {} heads", self.dim, self.heads)));
        }
        if self.max_len < 2 {
            return Err(Error::InvalidRecord("max sequence length must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidRecord(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn_norm: LayerNorm,
    pub query: Linear,
    /// Bias-free: a key bias shifts every score of a row equally.
    pub key: ParamId,
    pub value: Linear,
    pub output: Linear,
    pub ff_norm: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

#[derive(Debug, Clone)]
pub struct TextModelParams {
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub layers: Vec<EncoderLayer>,
    pub final_norm: LayerNorm,
    pub head: TagPredictor,
}

#[derive(Debug, Clone)]
pub struct TextModel {
    pub config: TextModelConfig,
    pub vocab: SubwordVocabulary,
    pub tags: TagVocabulary,
    pub store: ParamStore,
    pub params: TextModelParams,
}

#[derive(Serialize, Deserialize)]
struct TextMeta {
    config: TextModelConfig,
    tags: TagVocabulary,
    subword_hash: String,
    subwords: Vec<String>,
}

impl TextModel {
    pub fn new(config: TextModelConfig, vocab: SubwordVocabulary, tags: TagVocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let d = config.dim;
        let layers = (0..config.layers)
            .map(|l| {
                let n = |x: &str| format!("text.layer{l}.{x}");
                EncoderLayer {
                    attn_norm: LayerNorm::new(&mut s, &n("attn_norm"), d),
                    query: Linear::new(&mut s, &n("query"), d, d, &mut rng),
                    key: s.xavier(n("key.weight"), d, d, &mut rng),
                    value: Linear::new(&mut s, &n("value"), d, d, &mut rng),
                    output: Linear::new(&mut s, &n("output"), d, d, &mut rng),
                    ff_norm: LayerNorm::new(&mut s, &n("ff_norm"), d),
                    ff_in: Linear::new(&mut s, &n("ff_in"), d, config.ff_dim, &mut rng),
                    ff_out: Linear::new(&mut s, &n("ff_out"), config.ff_dim, d, &mut rng),
                }
            })
            .collect();
        let params = TextModelParams {
            token_embedding: s.uniform("text.token_embedding", vocab.len(), d, 0.1, &mut rng),
            position_embedding: s.uniform("text.position_embedding", config.max_len, d, 0.1, &mut rng),
            layers,
            final_norm: LayerNorm::new(&mut s, "text.final_norm", d),
            head: TagPredictor::new(&mut s, "text.head", d, tags.len(), config.dropout, &mut rng)?,
        };
        Ok(Self {
            config,
            vocab,
            tags,
            store: s,
            params,
        })
    }

    pub fn tokenize(&self, statement_latex: &str) -> Vec<u32> {
        wordpiece_tokenize(&latex_to_text(statement_latex), &self.vocab, self.config.max_len)
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.len() > self.config.max_len {
            return Err(Error::Sequence(format!("length {} exceeds {}", ids.len(), self.config.max_len)));
        }
        if ids.first() != Some(&self.vocab.cls_id()) {
            return Err(Error::Sequence("sequence must start with [CLS]".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.vocab.len()) {
            return Err(Error::Sequence(format!("token id {bad} outside the vocabulary")));
        }
        Ok(())
    }

    fn attention(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        layer: &EncoderLayer,
        x: Var,
        keep: &[bool],
        maps: &mut Vec<Var>,
    ) -> NnResult<Var> {
        let q = layer.query.forward(tape, store, x)?;
        let wk = tape.param(store, layer.key);
        let k = tape.matmul(x, wk)?;
        let v = layer.value.forward(tape, store, x)?;
        let dh = self.config.dim / self.config.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let (a, b) = (h * dh, (h + 1) * dh);
            let qh = tape.slice_cols(q, a, b)?;
            let kh = tape.slice_cols(k, a, b)?;
            let vh = tape.slice_cols(v, a, b)?;
            let scores = tape.matmul_t(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let weights = tape.softmax_rows_masked(scores, Some(keep));
            maps.push(weights);
            heads.push(tape.matmul(weights, vh)?);
        }
        let cat = tape.concat_cols(&heads)?;
        layer.output.forward(tape, store, cat)
    }

    /// `1 x dim` representation of the first position.
    fn encode(&self, tape: &mut Tape, store: &ParamStore, ids: &[u32], maps: &mut Vec<Var>) -> NnResult<Var> {
        let p = &self.params;
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let keep: Vec<bool> = ids.iter().map(|&i| i != self.vocab.pad_id()).collect();
        let emb = tape.param(store, p.token_embedding);
        let tok = tape.gather_rows(emb, &idx)?;
        let pos_table = tape.param(store, p.position_embedding);
        let pos = tape.slice_rows(pos_table, 0, ids.len())?;
        let mut x = tape.add(tok, pos)?;
        for layer in &p.layers {
            let n = layer.attn_norm.forward(tape, store, x)?;
            let a = self.attention(tape, store, layer, n, &keep, maps)?;
            x = tape.add(x, a)?;
            let n = layer.ff_norm.forward(tape, store, x)?;
            let hidden = layer.ff_in.forward(tape, store, n)?;
            let hidden = tape.gelu(hidden);
            let f = layer.ff_out.forward(tape, store, hidden)?;
            x = tape.add(x, f)?;
        }
        let first = tape.slice_rows(x, 0, 1)?;
        p.final_norm.forward(tape, store, first)
    }

    fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ids: &[u32],
        mode: Mode,
        rng: &mut R,
    ) -> NnResult<Var> {
        let v = self.encode(tape, store, ids, &mut Vec::new())?;
        self.params.head.forward(tape, store, v, mode, rng)
    }

    pub fn encode_statement(&self, ids: &[u32]) -> Result<Vec<f64>> {
        self.check_ids(ids)?;
        let mut tape = Tape::new();
        let v = self.encode(&mut tape, &self.store, ids, &mut Vec::new())?;
        Ok(tape.value(v).iter().copied().collect())
    }

    /// Attention weights of every layer and head, in that order.
    pub fn attention_maps(&self, ids: &[u32]) -> Result<Vec<Array2<f64>>> {
        self.check_ids(ids)?;
        let mut tape = Tape::new();
        let mut maps = Vec::new();
        self.encode(&mut tape, &self.store, ids, &mut maps)?;
        Ok(maps.into_iter().map(|m| tape.value(m).clone()).collect())
    }

    pub fn predict_ids(&self, ids: &[u32]) -> Result<TagProbabilities> {
        self.check_ids(ids)?;
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = self.forward(&mut tape, &self.store, ids, Mode::Eval, &mut rng)?;
        Ok(tape.value(p).iter().copied().collect())
    }

    pub fn predict_statement(&self, statement_latex: &str) -> Result<TagProbabilities> {
        self.predict_ids(&self.tokenize(statement_latex))
    }

    pub fn predict_statements(&self, statements: &[&str]) -> Result<Vec<TagProbabilities>> {
        statements.par_iter().map(|s| self.predict_statement(s)).collect()
    }

    /// Mean BCE over statements (training mode).
    pub fn batch_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sequences: &[&[u32]],
        labels: &[f64],
        rng: &mut R,
    ) -> NnResult<Var> {
        let rows = sequences
            .iter()
            .map(|ids| self.forward(tape, store, ids, Mode::Train, rng))
            .collect::<NnResult<Vec<Var>>>()?;
        let probs = tape.concat_rows(&rows)?;
        tape.bce_loss(probs, labels)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let meta = TextMeta {
            config: self.config.clone(),
            tags: self.tags.clone(),
            subword_hash: hex::encode(self.vocab.hash()),
            subwords: self.vocab.tokens().to_vec(),
        };
        Ok(Checkpoint::from_store(&self.store, self.tags.hash(), serde_json::to_string(&meta)?, Storage::F64))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.checkpoint()?.save(path)?)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: TextMeta = serde_json::from_str(&ckpt.meta)?;
        if meta.tags.hash() != ckpt.vocab_hash {
            return Err(Error::VocabularyMismatch("text checkpoint tag hash".into()));
        }
        let vocab = SubwordVocabulary::from_tokens(meta.subwords)?;
        if hex::encode(vocab.hash()) != meta.subword_hash {
            return Err(Error::VocabularyMismatch("text checkpoint subword vocabulary hash".into()));
        }
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
}

/// Tokenized statements with multi-hot labels.
pub struct LabeledSequences<'a> {
    pub sequences: &'a [Vec<u32>],
    pub labels: &'a [Vec<f64>],
}

pub fn train_textmodel(
    model: &mut TextModel,
    train: LabeledSequences<'_>,
    validation: LabeledSequences<'_>,
    hyper: &TrainHyper,
) -> Result<TrainOutcome> {
    if train.sequences.len() != train.labels.len() || validation.sequences.len() != validation.labels.len() {
        return Err(Error::LengthMismatch("sequences vs labels".into()));
    }
    for ids in train.sequences.iter().chain(validation.sequences) {
        model.check_ids(ids)?;
    }
    let mut store = std::mem::take(&mut model.store);
    let frozen = &*model;
    let val_labels: Vec<Vec<bool>> = validation
        .labels
        .iter()
        .map(|r| r.iter().map(|&x| x > 0.5).collect())
        .collect();
    let outcome = train_loop(
        "text",
        &mut store,
        train.sequences.len(),
        hyper,
        |store, mut ctx| {
            let seqs: Vec<&[u32]> = ctx.items.iter().map(|&i| train.sequences[i].as_slice()).collect();
            let labels: Vec<f64> = ctx.items.iter().flat_map(|&i| train.labels[i].iter().copied()).collect();
            let mut tape = Tape::new();
            let loss = frozen.batch_loss(&mut tape, store, &seqs, &labels, &mut ctx.rng)?;
            let value = tape.scalar(loss);
            Ok((value, tape.backward(loss)?))
        },
        |store| {
            if validation.sequences.is_empty() {
                return Ok(None);
            }
            let scores: Vec<Vec<f64>> = validation
                .sequences
                .par_iter()
                .map(|ids| {
                    let mut tape = Tape::new();
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    let p = frozen.forward(&mut tape, store, ids, Mode::Eval, &mut rng)?;
                    Ok(tape.value(p).iter().copied().collect())
                })
                .collect::<Result<_>>()?;
            Ok(macro_pr_auc(&scores, &val_labels))
        },
    );
    model.store = store;
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::build_subword_vocab;
    use cptag_nn::grad_check;

    const STATEMENTS: [&str; 10] = [
        "sort the array in ascending order",
        "count the nodes of the tree recursively",
        "simulate the process for many steps",
        "print the sum of two numbers",
        "arrange the cards in sorted order",
        "the subtree of every vertex has depth",
        "repeat the operation n times",
        "find the maximum value",
        "rank the players by score order",
        "iterate over all steps and simulate",
    ];
    const LABELS: [[f64; 2]; 10] = [
        [1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0],
        [0.0, 1.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 0.0],
    ];

    fn tags(n: usize) -> TagVocabulary {
        TagVocabulary::new((0..n).map(|i| format!("t{i}")).collect(), vec![1; n]).unwrap()
    }

    fn small(layers: usize, dim: usize, heads: usize) -> TextModel {
        let vocab = build_subword_vocab(STATEMENTS, 120).unwrap();
        let cfg = TextModelConfig {
            layers,
            dim,
            heads,
            ff_dim: 2 * dim,
            max_len: 24,
            dropout: 0.0,
            vocab_size: 120,
        };
        TextModel::new(cfg, vocab, tags(2), 3).unwrap()
    }

    #[test]
    fn config_invariants() {
        assert!(TextModelConfig::default().validate().is_ok());
        assert!(TextModelConfig { heads: 3, ..Default::default() }.validate().is_err());
        assert!(TextModelConfig { max_len: 1, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn output_shape_and_determinism() {
        let m = small(2, 8, 2);
        let ids = m.tokenize(STATEMENTS[0]);
        let v = m.encode_statement(&ids).unwrap();
        assert_eq!(v.len(), 8);
        assert_eq!(v, m.encode_statement(&ids).unwrap());
        let p = m.predict_statement(STATEMENTS[1]).unwrap();
        assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
        assert_eq!(p, m.predict_statement(STATEMENTS[1]).unwrap());
        let empty = m.predict_statement("").unwrap();
        assert_eq!(empty.len(), 2);
    }

    #[test]
    fn padding_is_masked() {
        let m = small(2, 8, 2);
        let ids = m.tokenize(STATEMENTS[2]);
        let base = m.encode_statement(&ids).unwrap();
        let mut padded = ids.clone();
        padded.resize(ids.len() + 5, m.vocab.pad_id());
        let out = m.encode_statement(&padded).unwrap();
        for (a, b) in base.iter().zip(&out) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let m = small(2, 8, 2);
        let mut ids = m.tokenize(STATEMENTS[5]);
        ids.push(m.vocab.pad_id());
        let maps = m.attention_maps(&ids).unwrap();
        assert_eq!(maps.len(), 4);
        for map in maps {
            for row in map.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert_eq!(row[ids.len() - 1], 0.0);
            }
        }
    }

    #[test]
    fn rejects_bad_sequences() {
        let m = small(1, 8, 2);
        assert!(matches!(m.encode_statement(&vec![m.vocab.cls_id(); 25]), Err(Error::Sequence(_))));
        assert!(m.encode_statement(&[m.vocab.cls_id(), 10_000]).is_err());
        assert!(m.encode_statement(&[m.vocab.unk_id()]).is_err());
    }

    #[test]
    fn truncation_ignores_content_beyond_max_len() {
        let m = small(1, 8, 2);
        let long = "word ".repeat(40);
        let a = m.predict_statement(&long).unwrap();
        let b = m.predict_statement(&(long.clone() + " sorted tree steps")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradient_check_single_layer() {
        let mut m = small(1, 8, 2);
        let ids = m.tokenize(STATEMENTS[0]);
        let mut store = std::mem::take(&mut m.store);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let report = grad_check(
            |tape, s| {
                let mut r = ChaCha8Rng::seed_from_u64(0);
                m.batch_loss(tape, s, &[&ids], &[1.0, 0.0], &mut r)
            },
            &mut store,
            1e-4,
            40,
            &mut rng,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_relative_error());
    }

    #[test]
    fn memorization_loss_decreases_deterministically() {
        let run = || {
            let mut m = small(1, 16, 2);
            let seqs: Vec<Vec<u32>> = STATEMENTS.iter().map(|s| m.tokenize(s)).collect();
            let labels: Vec<Vec<f64>> = LABELS.iter().map(|l| l.to_vec()).collect();
            let hyper = TrainHyper { lr: 1e-3, batch_size: 4, max_epochs: 20, patience: 20, seed: 5 };
            let out = train_textmodel(
                &mut m,
                LabeledSequences { sequences: &seqs, labels: &labels },
                LabeledSequences { sequences: &seqs, labels: &labels },
                &hyper,
            )
            .unwrap();
            out.history
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.last().unwrap().train_loss < a[0].train_loss);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = small(1, 8, 2);
        let back = TextModel::from_checkpoint(&Checkpoint::from_bytes(&m.checkpoint().unwrap().to_bytes()).unwrap()).unwrap();
        assert_eq!(back.predict_statement(STATEMENTS[3]).unwrap(), m.predict_statement(STATEMENTS[3]).unwrap());
    }
}
