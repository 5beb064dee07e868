//! Problem-level predictions from sets of solution vectors: attention
//! pooling followed by a tag head, and the per-tag majority vote.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use cptag_nn::rng::substream;
use cptag_nn::{Checkpoint, Mode, ParamId, ParamStore, Result as NnResult, Storage, TagPredictor, Tape, Var};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codegraph::ProgramGraph;
use crate::corpus::TagVocabulary;
use crate::error::{Error, Result};
use crate::eval::{macro_pr_auc, TagProbabilities, ThresholdVector};
use crate::ggnn::GgnnModel;
use crate::training::{train_loop, TrainHyper, TrainOutcome};

pub const DEFAULT_SAMPLE_CAP: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregatorConfig {
    pub hidden_dim: usize,
    pub sample_cap: usize,
    pub dropout: f64,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            sample_cap: DEFAULT_SAMPLE_CAP,
            dropout: 0.2,
        }
    }
}

/// Solution vectors of one problem from a frozen GGNN. Graphs above the
/// parse-error limit are skipped.
pub fn encode_solutions(problem_id: &str, graphs: &[&ProgramGraph], ggnn: &GgnnModel) -> Result<Vec<Vec<f64>>> {
    let usable: Vec<_> = graphs
        .iter()
        .filter(|g| g.is_usable(ggnn.config.max_parse_error_fraction))
        .map(|g| ggnn.prepare(g))
        .collect();
    if usable.is_empty() {
        return Err(Error::NoUsableGraphs(problem_id.to_string()));
    }
    ggnn.solution_vectors(&usable)
}

/// Solution vectors keyed by solution id, tagged with the hash of the
/// GGNN checkpoint that produced them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VectorCache {
    pub ggnn_hash: String,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

const CACHE_MAGIC: &[u8; 8] = b"CPTGVECS";

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::InvalidRecord("truncated solution-vector cache".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::InvalidRecord(e.to_string()))
    }
}

impl VectorCache {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CACHE_MAGIC.to_vec();
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend((s.len() as u32).to_le_bytes());
            out.extend(s.as_bytes());
        };
        put_str(&mut out, &self.ggnn_hash);
        out.extend((self.vectors.len() as u64).to_le_bytes());
        for (id, v) in &self.vectors {
            put_str(&mut out, id);
            out.extend((v.len() as u32).to_le_bytes());
            for x in v {
                out.extend(x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != CACHE_MAGIC {
            return Err(Error::InvalidRecord("not a solution-vector cache".into()));
        }
        let ggnn_hash = r.string()?;
        let count = r.u64()?;
        let mut vectors = BTreeMap::new();
        for _ in 0..count {
            let id = r.string()?;
            let dim = r.u32()? as usize;
            let v = (0..dim)
                .map(|_| Ok(f64::from_le_bytes(r.take(8)?.try_into().unwrap())))
                .collect::<Result<Vec<f64>>>()?;
            vectors.insert(id, v);
        }
        Ok(Self { ggnn_hash, vectors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => e.into(),
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Indices of the solutions a problem contributes in `epoch`: all of
/// them up to `cap`, otherwise a seeded sample in ascending order.
pub fn sample_solutions(count: usize, cap: usize, seed: u64, problem_id: &str, epoch: usize) -> Vec<usize> {
    if count <= cap {
        return (0..count).collect();
    }
    let mut rng = substream(seed, &format!("aggregate/sample/{problem_id}"), &[epoch as u64]);
    let mut idx = rand::seq::index::sample(&mut rng, count, cap).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone)]
pub struct AggregatorParams {
    pub query: ParamId,
    pub projection: ParamId,
    pub head: TagPredictor,
}

#[derive(Debug, Clone)]
pub struct AggregatorModel {
    pub config: AggregatorConfig,
    pub tags: TagVocabulary,
    pub store: ParamStore,
    pub params: AggregatorParams,
}

#[derive(Serialize, Deserialize)]
struct AggregatorMeta {
    config: AggregatorConfig,
    tags: TagVocabulary,
}

fn matrix(vectors: &[Vec<f64>]) -> Result<Array2<f64>> {
    let dim = vectors.first().map(Vec::len).ok_or_else(|| Error::EmptyInput("no solution vectors".into()))?;
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::LengthMismatch("solution vectors differ in length".into()));
    }
    Ok(Array2::from_shape_fn((vectors.len(), dim), |(i, j)| vectors[i][j]))
}

impl AggregatorModel {
    pub fn new(config: AggregatorConfig, tags: TagVocabulary, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = config.hidden_dim;
        let params = AggregatorParams {
            query: store.xavier("aggregate.query", 1, h, &mut rng),
            projection: store.xavier("aggregate.projection", h, h, &mut rng),
            head: TagPredictor::new(&mut store, "aggregate.head", h, tags.len(), config.dropout, &mut rng)?,
        };
        Ok(Self {
            config,
            tags,
            store,
            params,
        })
    }

    /// Returns the pooled `1 x h` vector and the `1 x k` attention weights.
    fn pool(&self, tape: &mut Tape, store: &ParamStore, vectors: Var) -> NnResult<(Var, Var)> {
        let p = tape.param(store, self.params.projection);
        let proj = tape.matmul(vectors, p)?;
        let act = tape.tanh(proj);
        let q = tape.param(store, self.params.query);
        let scores = tape.matmul_t(q, act)?;
        let weights = tape.softmax_rows(scores);
        let pooled = tape.matmul(weights, vectors)?;
        Ok((pooled, weights))
    }

    /// Attention-pooled vector and its weights.
    pub fn attention_pool(&self, vectors: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = matrix(vectors)?;
        let mut tape = Tape::new();
        let v = tape.constant(m);
        let (pooled, weights) = self.pool(&mut tape, &self.store, v)?;
        Ok((tape.value(pooled).iter().copied().collect(), tape.value(weights).iter().copied().collect()))
    }

    fn forward<R: rand::Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        vectors: Array2<f64>,
        mode: Mode,
        rng: &mut R,
    ) -> NnResult<Var> {
        let v = tape.constant(vectors);
        let (pooled, _) = self.pool(tape, store, v)?;
        self.params.head.forward(tape, store, pooled, mode, rng)
    }

    pub fn predict(&self, vectors: &[Vec<f64>]) -> Result<TagProbabilities> {
        let m = matrix(vectors)?;
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = self.forward(&mut tape, &self.store, m, Mode::Eval, &mut rng)?;
        Ok(tape.value(p).iter().copied().collect())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let meta = AggregatorMeta {
            config: self.config.clone(),
            tags: self.tags.clone(),
        };
        Ok(Checkpoint::from_store(&self.store, self.tags.hash(), serde_json::to_string(&meta)?, Storage::F64))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.checkpoint()?.save(path)?)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: AggregatorMeta = serde_json::from_str(&ckpt.meta)?;
        if meta.tags.hash() != ckpt.vocab_hash {
            return Err(Error::VocabularyMismatch("aggregator checkpoint tag hash".into()));
        }
        let mut model = Self::new(meta.config, meta.tags, 0)?;
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

/// Full code-side problem predictor: frozen GGNN vectors of every usable
/// solution, pooled and classified.
pub fn predict_problem_code(
    problem_id: &str,
    graphs: &[&ProgramGraph],
    ggnn: &GgnnModel,
    aggregator: &AggregatorModel,
) -> Result<TagProbabilities> {
    if ggnn.tags.hash() != aggregator.tags.hash() {
        return Err(Error::VocabularyMismatch("GGNN vs aggregator".into()));
    }
    aggregator.predict(&encode_solutions(problem_id, graphs, ggnn)?)
}

/// Solution vectors of one problem with its multi-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemVectors {
    pub problem_id: String,
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

pub fn train_aggregator(
    model: &mut AggregatorModel,
    train: &[ProblemVectors],
    validation: &[ProblemVectors],
    hyper: &TrainHyper,
) -> Result<TrainOutcome> {
    if let Some(p) = train.iter().chain(validation).find(|p| p.vectors.is_empty()) {
        return Err(Error::NoUsableGraphs(p.problem_id.clone()));
    }
    let mut store = std::mem::take(&mut model.store);
    let frozen = &*model;
    let cap = frozen.config.sample_cap;
    let val_labels: Vec<Vec<bool>> = validation
        .iter()
        .map(|p| p.labels.iter().map(|&x| x > 0.5).collect())
        .collect();
    let outcome = train_loop(
        "aggregate",
        &mut store,
        train.len(),
        hyper,
        |store, mut ctx| {
            let mut tape = Tape::new();
            let mut rows = Vec::with_capacity(ctx.items.len());
            let mut labels = Vec::new();
            for &i in ctx.items {
                let p = &train[i];
                let chosen: Vec<Vec<f64>> = sample_solutions(p.vectors.len(), cap, hyper.seed, &p.problem_id, ctx.epoch)
                    .into_iter()
                    .map(|k| p.vectors[k].clone())
                    .collect();
                rows.push(frozen.forward(&mut tape, store, matrix(&chosen)?, Mode::Train, &mut ctx.rng)?);
                labels.extend_from_slice(&p.labels);
            }
            let probs = tape.concat_rows(&rows)?;
            let loss = tape.bce_loss(probs, &labels)?;
            let value = tape.scalar(loss);
            Ok((value, tape.backward(loss)?))
        },
        |store| {
            if validation.is_empty() {
                return Ok(None);
            }
            let scores: Vec<Vec<f64>> = validation
                .par_iter()
                .map(|p| {
                    let mut tape = Tape::new();
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    let out = frozen.forward(&mut tape, store, matrix(&p.vectors)?, Mode::Eval, &mut rng)?;
                    Ok(tape.value(out).iter().copied().collect())
                })
                .collect::<Result<_>>()?;
            Ok(macro_pr_auc(&scores, &val_labels))
        },
    );
    model.store = store;
    outcome
}

/// Per-tag strict-majority vote over binarized solution predictions.
/// Returns the decisions and the positive-vote fractions.
pub fn majority_vote_aggregate(
    predictions: &[TagProbabilities],
    thresholds: &ThresholdVector,
) -> Result<(Vec<bool>, Vec<f64>)> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("no solution predictions to vote".into()));
    }
    let n_tags = thresholds.tags.len();
    if predictions.iter().any(|p| p.len() != n_tags) {
        return Err(Error::LengthMismatch(format!("predictions must have {n_tags} tags")));
    }
    let n = predictions.len();
    let mut decisions = Vec::with_capacity(n_tags);
    let mut fractions = Vec::with_capacity(n_tags);
    for j in 0..n_tags {
        let votes = predictions.iter().filter(|p| p[j] > thresholds.thresholds[j]).count();
        decisions.push(2 * votes > n);
        fractions.push(votes as f64 / n as f64);
    }
    Ok((decisions, fractions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn tags(n: usize) -> TagVocabulary {
        TagVocabulary::new((0..n).map(|i| format!("t{i}")).collect(), vec![1; n]).unwrap()
    }

    fn model(h: usize, n_tags: usize) -> AggregatorModel {
        let cfg = AggregatorConfig {
            hidden_dim: h,
            dropout: 0.0,
            ..AggregatorConfig::default()
        };
        AggregatorModel::new(cfg, tags(n_tags), 4).unwrap()
    }

    fn random_vectors(rng: &mut ChaCha8Rng, k: usize, h: usize) -> Vec<Vec<f64>> {
        (0..k).map(|_| (0..h).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
    }

    #[test]
    fn single_and_identical_vectors_pass_through() {
        let m = model(4, 2);
        let v = vec![0.5, -1.0, 2.0, 0.25];
        let (out, w) = m.attention_pool(&[v.clone()]).unwrap();
        assert_eq!(w, vec![1.0]);
        assert_eq!(out, v);
        let (out, _) = m.attention_pool(&[v.clone(), v.clone(), v.clone()]).unwrap();
        for (a, b) in out.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(m.attention_pool(&[]).is_err());
    }

    proptest! {
        #[test]
        fn pooling_is_a_convex_combination(seed in 0u64..1000, k in 1usize..8) {
            let m = model(4, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vs = random_vectors(&mut rng, k, 4);
            let (out, w) = m.attention_pool(&vs).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for j in 0..4 {
                let lo = vs.iter().map(|v| v[j]).fold(f64::INFINITY, f64::min);
                let hi = vs.iter().map(|v| v[j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out[j] >= lo - 1e-12 && out[j] <= hi + 1e-12);
            }
        }

        #[test]
        fn adding_positive_votes_never_flips_to_negative(votes in proptest::collection::vec(any::<bool>(), 1..12)) {
            let th = ThresholdVector::uniform(&["t".to_string()], 0.5);
            let preds: Vec<Vec<f64>> = votes.iter().map(|&v| vec![if v { 0.9 } else { 0.1 }]).collect();
            let (d, f) = majority_vote_aggregate(&preds, &th).unwrap();
            let mut more = preds.clone();
            more.push(vec![0.9]);
            let (d2, f2) = majority_vote_aggregate(&more, &th).unwrap();
            prop_assert!((0.0..=1.0).contains(&f[0]));
            prop_assert!(!d[0] || d2[0]);
            let k = votes.iter().filter(|&&v| v).count() as f64;
            prop_assert_eq!(f2[0], (k + 1.0) / (votes.len() as f64 + 1.0));
        }
    }

    #[test]
    fn prediction_is_order_free_and_deterministic() {
        let m = model(6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vs = random_vectors(&mut rng, 5, 6);
        let a = m.predict(&vs).unwrap();
        let mut rev = vs.clone();
        rev.reverse();
        let b = m.predict(&rev).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(a, m.predict(&vs).unwrap());
        assert!(a.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn sampling_respects_cap_and_seed() {
        let s = sample_solutions(200, 50, 9, "1A", 0);
        assert_eq!(s.len(), 50);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s, sample_solutions(200, 50, 9, "1A", 0));
        assert_ne!(s, sample_solutions(200, 50, 9, "1A", 1));
        assert_eq!(sample_solutions(3, 50, 9, "1A", 0), vec![0, 1, 2]);
    }

    #[test]
    fn majority_vote_cases() {
        let th = ThresholdVector::uniform(&["t".to_string()], 0.5);
        let (d, f) = majority_vote_aggregate(&[vec![0.9], vec![0.8], vec![0.1]], &th).unwrap();
        assert_eq!((d[0], f[0]), (true, 2.0 / 3.0));
        let (d, f) = majority_vote_aggregate(&[vec![0.9], vec![0.1]], &th).unwrap();
        assert_eq!((d[0], f[0]), (false, 0.5));
        let (d, _) = majority_vote_aggregate(&[vec![0.7]], &th).unwrap();
        assert!(d[0]);
        assert!(majority_vote_aggregate(&[], &th).is_err());
    }

    #[test]
    fn cache_round_trips() {
        let mut c = VectorCache {
            ggnn_hash: "abc".into(),
            ..Default::default()
        };
        c.vectors.insert("s1".into(), vec![0.1, -3.5e-300, f64::MAX]);
        c.vectors.insert("s2".into(), vec![]);
        assert_eq!(VectorCache::from_bytes(&c.to_bytes()).unwrap(), c);
        assert!(VectorCache::from_bytes(&c.to_bytes()[..20]).is_err());
    }

    #[test]
    fn training_learns_a_separable_set_and_keeps_best() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let problems: Vec<ProblemVectors> = (0..24)
            .map(|i| {
                let pos = i % 2 == 0;
                let vectors = (0..3)
                    .map(|_| {
                        let mut v: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.3..0.3)).collect();
                        v[0] += if pos { 1.0 } else { -1.0 };
                        v
                    })
                    .collect();
                ProblemVectors {
                    problem_id: format!("p{i}"),
                    vectors,
                    labels: vec![if pos { 1.0 } else { 0.0 }],
                }
            })
            .collect();
        let mut m = model(4, 1);
        let hyper = TrainHyper {
            lr: 0.05,
            batch_size: 4,
            max_epochs: 30,
            patience: 5,
            seed: 2,
        };
        let out = train_aggregator(&mut m, &problems[..16], &problems[16..], &hyper).unwrap();
        let best = out.history[out.best_epoch].validation_macro_pr_auc.unwrap();
        assert_eq!(best, 1.0);
        let scores: Vec<Vec<f64>> = problems[16..].iter().map(|p| m.predict(&p.vectors).unwrap()).collect();
        let labels: Vec<Vec<bool>> = problems[16..].iter().map(|p| vec![p.labels[0] > 0.5]).collect();
        assert_eq!(macro_pr_auc(&scores, &labels), Some(best));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = model(4, 2);
        let back = AggregatorModel::from_checkpoint(&Checkpoint::from_bytes(&m.checkpoint().unwrap().to_bytes()).unwrap()).unwrap();
        let vs = vec![vec![1.0, 2.0, 3.0, 4.0]];
        assert_eq!(back.predict(&vs).unwrap(), m.predict(&vs).unwrap());
    }
}
