//! Pipeline stages behind the CLI commands. Every stage reads its inputs
//! from and writes its outputs to the work directory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use cptag_core::aggregate::{train_aggregator, AggregatorModel, ProblemVectors, VectorCache};
use cptag_core::baselines::{
    extract_all_metrics, mean_metrics, metrics_csv, parse_metrics_csv, FeatureKind, LinearBaseline, MetricVector,
    TfidfVectorizer,
};
use cptag_core::codegraph::{read_graph_dataset, source_to_graph, write_graph_dataset, GraphRecord};
use cptag_core::corpus::{
    build_tag_vocabulary, chronological_split, dedup_solutions, load_corpus, subsample_solutions, write_corpus,
    Corpus, SplitName, SplitSpec, TagVocabulary,
};
use cptag_core::ensemble::{write_jsonl, Ensemble, EnsemblePrediction, PredictionRecord};
use cptag_core::eval::{
    correlation_csv, evaluate_split, fit_thresholds, per_tag_correlation, suggest_missing_tags, EvalReport,
    TagProbabilities, ThresholdVector,
};
use cptag_core::ggnn::{train_ggnn, CodeVocabulary, GgnnModel, LabeledGraphs};
use cptag_core::preprocess::{build_subword_vocab, latex_to_text, word_tokens};
use cptag_core::synth::synth_corpus;
use cptag_core::textmodel::{train_textmodel, LabeledSequences, TextModel};
use cptag_core::training::history_csv;
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const MANIFEST: &str = "manifest.json";
pub const INGESTED_CORPUS: &str = "corpus";
pub const INGEST_REPORT: &str = "ingest_report.json";
pub const SPLIT_CORPUS: &str = "split/corpus";
pub const SPLIT_SPEC: &str = "split/split.json";
pub const SPLIT_REPORT: &str = "split/report.json";
pub const TAGS: &str = "split/tags.json";
pub const GGNN_CHECKPOINT: &str = "ggnn/model.ckpt";
pub const GGNN_HISTORY: &str = "ggnn/history.csv";
pub const VECTOR_CACHE: &str = "aggregator/vectors.bin";
pub const AGGREGATOR_CHECKPOINT: &str = "aggregator/model.ckpt";
pub const AGGREGATOR_HISTORY: &str = "aggregator/history.csv";
pub const SUBWORDS: &str = "text/subwords.txt";
pub const TEXT_CHECKPOINT: &str = "text/model.ckpt";
pub const TEXT_HISTORY: &str = "text/history.csv";
pub const METRICS_CSV: &str = "baseline/metrics.csv";
pub const METRICS_MODEL: &str = "baseline/metrics_model.json";
pub const TFIDF_MODEL: &str = "baseline/tfidf_model.json";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const CORRELATION: &str = "correlation.csv";
pub const SUGGESTIONS: &str = "suggestions.json";

/// Problem-level models evaluated side by side, plus the solution-level
/// GGNN.
pub const MODELS: [&str; 6] = ["ensemble", "code", "text", "baseline_metrics", "baseline_tfidf", "ggnn_solution"];

pub fn graphs_file(split: SplitName) -> String {
    format!("graphs/{}.graphs", split.as_str())
}

pub fn thresholds_file(model: &str) -> String {
    format!("thresholds/{model}.json")
}

pub fn report_files(model: &str) -> (String, String) {
    (format!("reports/{model}.csv"), format!("reports/{model}.json"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Split,
    GraphBuild,
    TrainGgnn,
    TrainAgg,
    TrainText,
    TrainBaseline,
    FitThresholds,
    Predict(Option<SplitName>),
    Evaluate,
    Correlate,
    Suggest,
    SynthCorpus(Option<PathBuf>),
}

pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Path of an artifact produced by an earlier command.
    pub fn require(&self, rel: &str, producer: &'static str) -> CliResult<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::Missing { path: p, producer })
        }
    }

    /// Output path with its parent directory created.
    pub fn output(&self, rel: &str) -> CliResult<PathBuf> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    pub fn write(&self, rel: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
        fs::write(self.output(rel)?, contents)?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> CliResult<()> {
        self.write(rel, serde_json::to_string_pretty(value)? + "\n")
    }

    pub fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &str, producer: &'static str) -> CliResult<T> {
        let text = fs::read_to_string(self.require(rel, producer)?)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

fn collect_files(dir: &Path, root: &Path, out: &mut Vec<ManifestEntry>) -> CliResult<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect_files(&p, root, out)?;
            continue;
        }
        let rel = p.strip_prefix(root).expect("under root");
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if rel == MANIFEST {
            continue;
        }
        let bytes = fs::read(&p)?;
        out.push(ManifestEntry {
            path: rel,
            bytes: bytes.len() as u64,
            sha256: cptag_core::sha256_hex(&bytes),
        });
    }
    Ok(())
}

/// Hashes every file under the work directory except the manifest.
pub fn write_manifest(ws: &Workspace) -> CliResult<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    collect_files(&ws.root, &ws.root, &mut entries)?;
    ws.write_json(MANIFEST, &entries)?;
    Ok(entries)
}

pub fn run(cfg: &RunConfig, stage: Stage) -> CliResult<()> {
    if let Stage::SynthCorpus(out) = &stage {
        let root = out.clone().unwrap_or_else(|| cfg.paths.corpus_root.clone());
        return synth(cfg, &root);
    }
    let ws = Workspace::new(&cfg.paths.work_dir);
    fs::create_dir_all(&ws.root)?;
    ws.write(RESOLVED_CONFIG, cfg.to_toml())?;
    match stage {
        Stage::Ingest => ingest(cfg, &ws)?,
        Stage::Split => split(cfg, &ws)?,
        Stage::GraphBuild => graph_build(&ws)?,
        Stage::TrainGgnn => train_ggnn_stage(cfg, &ws)?,
        Stage::TrainAgg => train_agg(cfg, &ws)?,
        Stage::TrainText => train_text(cfg, &ws)?,
        Stage::TrainBaseline => train_baseline(cfg, &ws)?,
        Stage::FitThresholds => fit_thresholds_stage(&ws)?,
        Stage::Predict(split) => predict(&ws, split)?,
        Stage::Evaluate => evaluate(&ws)?,
        Stage::Correlate => correlate(&ws)?,
        Stage::Suggest => suggest(cfg, &ws)?,
        Stage::SynthCorpus(_) => unreachable!(),
    }
    write_manifest(&ws)?;
    Ok(())
}

fn synth(cfg: &RunConfig, root: &Path) -> CliResult<()> {
    let corpus = synth_corpus(&cfg.synth);
    write_corpus(&corpus, root)?;
    fs::write(root.join(RESOLVED_CONFIG), cfg.to_toml())?;
    info!(
        "synthetic corpus: {} contests, {} problems, {} solutions in {}",
        corpus.contests.len(),
        corpus.problems.len(),
        corpus.solutions.len(),
        root.display()
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub contests: usize,
    pub problems: usize,
    pub solutions_loaded: usize,
    pub duplicates_removed: usize,
    pub solutions_after_cap: usize,
}

fn ingest(cfg: &RunConfig, ws: &Workspace) -> CliResult<()> {
    let root = &cfg.paths.corpus_root;
    if !root.exists() {
        return Err(CliError::Missing {
            path: root.clone(),
            producer: "synth-corpus",
        });
    }
    let corpus = load_corpus(root)?;
    let (deduped, dedup) = dedup_solutions(&corpus);
    let capped = subsample_solutions(&deduped, cfg.corpus.solution_cap, cfg.seed);
    write_corpus(&capped, &ws.output(INGESTED_CORPUS)?)?;
    let report = IngestReport {
        contests: capped.contests.len(),
        problems: capped.problems.len(),
        solutions_loaded: corpus.solutions.len(),
        duplicates_removed: dedup.removed,
        solutions_after_cap: capped.solutions.len(),
    };
    info!("ingest: {report:?}");
    ws.write_json(INGEST_REPORT, &report)
}

fn split(cfg: &RunConfig, ws: &Workspace) -> CliResult<()> {
    let corpus = load_corpus(&ws.require(INGESTED_CORPUS, "ingest")?)?;
    let [ft, fv, fs] = cfg.corpus.split_fractions;
    let (spec, filtered, report) = chronological_split(&corpus, (ft, fv, fs), cfg.corpus.dedup_threshold)?;
    let tags = build_tag_vocabulary(&filtered, &spec, cfg.corpus.tag_min_frequency)?;
    write_corpus(&filtered, &ws.output(SPLIT_CORPUS)?)?;
    spec.save(&ws.output(SPLIT_SPEC)?)?;
    ws.write_json(SPLIT_REPORT, &report)?;
    tags.save(&ws.output(TAGS)?)?;
    info!("split: {report:?}; {} tags", tags.len());
    Ok(())
}

/// Split corpus, its assignment and the tag vocabulary.
pub struct SplitData {
    pub corpus: Corpus,
    pub spec: SplitSpec,
    pub tags: TagVocabulary,
    pub split_of: HashMap<String, SplitName>,
}

impl SplitData {
    pub fn load(ws: &Workspace) -> CliResult<Self> {
        let corpus = load_corpus(&ws.require(SPLIT_CORPUS, "split")?)?;
        let spec = SplitSpec::load(&ws.require(SPLIT_SPEC, "split")?)?;
        let tags = TagVocabulary::load(&ws.require(TAGS, "split")?)?;
        let split_of = spec.problem_splits(&corpus);
        Ok(Self {
            corpus,
            spec,
            tags,
            split_of,
        })
    }

    pub fn problems_in(&self, split: SplitName) -> impl Iterator<Item = &cptag_core::corpus::Problem> {
        self.corpus.problems.iter().filter(move |p| self.split_of.get(&p.id) == Some(&split))
    }

    pub fn labels(&self) -> BTreeMap<String, Vec<f64>> {
        self.corpus
            .problems
            .iter()
            .map(|p| (p.id.clone(), self.tags.encode(&p.tags)))
            .collect()
    }
}

fn graph_build(ws: &Workspace) -> CliResult<()> {
    let data = SplitData::load(ws)?;
    for split in SplitName::ALL {
        let solutions: Vec<_> = data
            .corpus
            .solutions
            .iter()
            .filter(|s| data.split_of.get(&s.problem_id) == Some(&split))
            .collect();
        let records: Vec<GraphRecord> = solutions
            .par_iter()
            .map(|s| GraphRecord {
                problem_id: s.problem_id.clone(),
                solution_id: s.id.clone(),
                graph: source_to_graph(&s.source),
            })
            .collect();
        let errors = records.iter().filter(|r| r.graph.parse_error_fraction > 0.0).count();
        info!("graph-build {}: {} graphs, {} with parse errors", split.as_str(), records.len(), errors);
        write_graph_dataset(&ws.output(&graphs_file(split))?, &records)?;
    }
    Ok(())
}

pub fn load_graphs(ws: &Workspace, split: SplitName) -> CliResult<Vec<GraphRecord>> {
    Ok(read_graph_dataset(&ws.require(&graphs_file(split), "graph-build")?)?)
}

fn usable<'a>(records: &'a [GraphRecord], max_parse_error_fraction: f64) -> Vec<&'a GraphRecord> {
    records.iter().filter(|r| r.graph.is_usable(max_parse_error_fraction)).collect()
}

fn train_ggnn_stage(cfg: &RunConfig, ws: &Workspace) -> CliResult<()> {
    let data = SplitData::load(ws)?;
    let labels = data.labels();
    let train_all = load_graphs(ws, SplitName::Train)?;
    let val_all = load_graphs(ws, SplitName::Validation)?;
    let limit = cfg.ggnn.max_parse_error_fraction;
    let (train, val) = (usable(&train_all, limit), usable(&val_all, limit));
    let graphs: Vec<_> = train.iter().map(|r| &r.graph).collect();
    let vocab = CodeVocabulary::build(&graphs, cfg.ggnn.token_vocab_size, cfg.ggnn.type_vocab_size)?;
    let mut model = GgnnModel::new(cfg.ggnn.clone(), vocab, data.tags.clone(), cfg.seed)?;
    let prep = |rs: &[&GraphRecord]| -> (Vec<_>, Vec<_>) {
        (
            rs.iter().map(|r| model.prepare(&r.graph)).collect(),
            rs.iter().map(|r| labels[&r.problem_id].clone()).collect(),
        )
    };
    let (tg, tl) = prep(&train);
    let (vg, vl) = prep(&val);
    let outcome = train_ggnn(
        &mut model,
        LabeledGraphs { graphs: &tg, labels: &tl },
        LabeledGraphs { graphs: &vg, labels: &vl },
        &cfg.ggnn_train.hyper(cfg.seed),
    )?;
    info!("train-ggnn: best epoch {}", outcome.best_epoch);
    model.save(&ws.output(GGNN_CHECKPOINT)?)?;
    ws.write(GGNN_HISTORY, history_csv(&outcome.history))
}

fn load_ggnn(ws: &Workspace) -> CliResult<GgnnModel> {
    Ok(GgnnModel::load(&ws.require(GGNN_CHECKPOINT, "train-ggnn")?)?)
}

fn check_tags(data: &SplitData, other: &TagVocabulary, what: &str) -> CliResult<()> {
    if data.tags.hash() != other.hash() {
        return Err(cptag_core::Error::VocabularyMismatch(format!("{what} vs split tag vocabulary")).into());
    }
    Ok(())
}

fn train_agg(cfg: &RunConfig, ws: &Workspace) -> CliResult<()> {
    let data = SplitData::load(ws)?;
    let ggnn = load_ggnn(ws)?;
    check_tags(&data, &ggnn.tags, "GGNN checkpoint")?;
    if cfg.aggregator.hidden_dim != ggnn.config.hidden_dim {
        return Err(CliError::Config(format!(
            "[aggregator] hidden_dim {} does not match the GGNN checkpoint's {}",
            cfg.aggregator.hidden_dim, ggnn.config.hidden_dim
        )));
    }
    let mut cache = VectorCache {
        ggnn_hash: cptag_core::sha256_hex(&fs::read(ws.path(GGNN_CHECKPOINT))?),
        vectors: BTreeMap::new(),
    };
    let labels = data.labels();
    let mut per_split: BTreeMap<SplitName, Vec<ProblemVectors>> = BTreeMap::new();
    for split in SplitName::ALL {
        let records = load_graphs(ws, split)?;
        let records = usable(&records, ggnn.config.max_parse_error_fraction);
        let prepared: Vec<_> = records.iter().map(|r| ggnn.prepare(&r.graph)).collect();
        let vectors = ggnn.solution_vectors(&prepared)?;
        let mut grouped: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
        for (r, v) in records.iter().zip(vectors) {
            grouped.entry(r.problem_id.as_str()).or_default().push(v.clone());
            cache.vectors.insert(r.solution_id.clone(), v);
        }
        per_split.insert(
            split,
            grouped
                .into_iter()
                .map(|(pid, vectors)| ProblemVectors {
                    problem_id: pid.to_string(),
                    vectors,
                    labels: labels[pid].clone(),
                })
                .collect(),
        );
    }
    cache.save(&ws.output(VECTOR_CACHE)?)?;
    let mut model = AggregatorModel::new(cfg.aggregator.clone(), data.tags.clone(), cfg.seed)?;
    let outcome = train_aggregator(
        &mut model,
        &per_split[&SplitName::Train],
        &per_split[&SplitName::Validation],
        &cfg.aggregator_train.hyper(cfg.seed),
    )?;
    info!("train-agg: best epoch {}", outcome.best_epoch);
    model.save(&ws.output(AGGREGATOR_CHECKPOINT)?)?;
    ws.write(AGGREGATOR_HISTORY, history_csv(&outcome.history))
}

fn train_text(cfg: &RunConfig, ws: &Workspace) -> CliResult<()> {
    let data = SplitData::load(ws)?;
    let texts: Vec<String> = data
        .problems_in(SplitName::Train)
        .map(|p| latex_to_text(&p.statement_latex))
        .collect();
    let vocab = build_subword_vocab(texts.iter().map(String::as_str), cfg.text.vocab_size)?;
    vocab.save(&ws.output(SUBWORDS)?)?;
    let mut model = TextModel::new(cfg.text.clone(), vocab, data.tags.clone(), cfg.seed)?;
    let encode = |split| -> (Vec<Vec<u32>>, Vec<Vec<f64>>) {
        data.problems_in(split)
            .map(|p| (model.tokenize(&p.statement_latex), data.tags.encode(&p.tags)))
            .unzip()
    };
    let (ts, tl) = encode(SplitName::Train);
    let (vs, vl) = encode(SplitName::Validation);
    let outcome = train_textmodel(
        &mut model,
        LabeledSequences { sequences: &ts, labels: &tl },
        LabeledSequences { sequences: &vs, labels: &vl },
        &cfg.text_train.hyper(cfg.seed),
    )?;
    info!("train-text: best epoch {}", outcome.best_epoch);
    model.save(&ws.output(TEXT_CHECKPOINT)?)?;
    ws.write(TEXT_HISTORY, history_csv(&outcome.history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfBaseline {
    pub vectorizer: TfidfVectorizer,
    pub model: LinearBaseline,
}

pub fn statement_words(statement_latex: &str) -> Vec<String> {
    word_tokens(&latex_to_text(statement_latex))
}

/// Mean metric vector per problem over its solutions.
fn problem_metrics(corpus: &Corpus, by_solution: &HashMap<String, MetricVector>) -> BTreeMap<String, MetricVector> {
    let mut rows: BTreeMap<String, Vec<MetricVector>> = BTreeMap::new();
    for s in &corpus.solutions {
        if let Some(v) = by_solution.get(&s.id) {
            rows.entry(s.problem_id.clone()).or_default().push(*v);
        }
    }
    rows.into_iter().map(|(k, v)| (k, mean_metrics(&v))).collect()
}

fn train_baseline(cfg: &RunConfig, ws: &Workspace) -> CliResult<()> {
    let data = SplitData::load(ws)?;
    let sources: Vec<&str> = data.corpus.solutions.iter().map(|s| s.source.as_str()).collect();
    let metrics = extract_all_metrics(&sources);
    let ids: Vec<String> = data.corpus.solutions.iter().map(|s| s.id.clone()).collect();
    ws.write(METRICS_CSV, metrics_csv(&ids, &metrics)?)?;
    let by_solution: HashMap<String, MetricVector> = ids.into_iter().zip(metrics).collect();
    let per_problem = problem_metrics(&data.corpus, &by_solution);
    let tags = &data.tags.tags;

    let train: Vec<_> = data.problems_in(SplitName::Train).collect();
    let (x, y): (Vec<Vec<f64>>, Vec<Vec<f64>>) = train
        .iter()
        .filter_map(|p| per_problem.get(&p.id).map(|m| (m.to_vec(), data.tags.encode(&p.tags))))
        .unzip();
    let metrics_model = LinearBaseline::train(FeatureKind::Metrics, tags, &x, &y, &cfg.baseline.logistic)?;
    ws.write_json(METRICS_MODEL, &metrics_model)?;

    let docs: Vec<Vec<String>> = train.iter().map(|p| statement_words(&p.statement_latex)).collect();
    let vectorizer = TfidfVectorizer::fit(&docs, cfg.baseline.tfidf_vocabulary_cap)?;
    let x: Vec<Vec<f64>> = docs.iter().map(|d| vectorizer.transform_dense(d)).collect();
    let y: Vec<Vec<f64>> = train.iter().map(|p| data.tags.encode(&p.tags)).collect();
    let model = LinearBaseline::train(FeatureKind::Tfidf, tags, &x, &y, &cfg.baseline.logistic)?;
    ws.write_json(TFIDF_MODEL, &TfidfBaseline { vectorizer, model })?;
    info!("train-baseline: {} metric rows, {} TF-IDF terms", by_solution.len(), docs.len());
    Ok(())
}

/// Every trained model loaded for inference.
pub struct Models {
    pub data: SplitData,
    pub ggnn: GgnnModel,
    pub aggregator: AggregatorModel,
    pub text: TextModel,
    pub metrics: LinearBaseline,
    pub tfidf: TfidfBaseline,
    pub problem_metrics: BTreeMap<String, MetricVector>,
}

/// Per-model predictions keyed by item id, plus the full ensemble
/// records.
pub struct SplitPredictions {
    pub ensemble: Vec<EnsemblePrediction>,
    pub by_model: BTreeMap<&'static str, BTreeMap<String, TagProbabilities>>,
}

impl Models {
    pub fn load(ws: &Workspace) -> CliResult<Self> {
        let data = SplitData::load(ws)?;
        let ggnn = load_ggnn(ws)?;
        let aggregator = AggregatorModel::load(&ws.require(AGGREGATOR_CHECKPOINT, "train-agg")?)?;
        let text = TextModel::load(&ws.require(TEXT_CHECKPOINT, "train-text")?)?;
        let metrics: LinearBaseline = ws.read_json(METRICS_MODEL, "train-baseline")?;
        let tfidf: TfidfBaseline = ws.read_json(TFIDF_MODEL, "train-baseline")?;
        check_tags(&data, &ggnn.tags, "GGNN checkpoint")?;
        check_tags(&data, &aggregator.tags, "aggregator checkpoint")?;
        check_tags(&data, &text.tags, "text checkpoint")?;
        if metrics.tags != data.tags.tags || tfidf.model.tags != data.tags.tags {
            return Err(cptag_core::Error::VocabularyMismatch("baseline vs split tag vocabulary".into()).into());
        }
        let csv = fs::read_to_string(ws.require(METRICS_CSV, "train-baseline")?)?;
        let by_solution: HashMap<String, MetricVector> = parse_metrics_csv(&csv)?.into_iter().collect();
        let problem_metrics = problem_metrics(&data.corpus, &by_solution);
        Ok(Self {
            data,
            ggnn,
            aggregator,
            text,
            metrics,
            tfidf,
            problem_metrics,
        })
    }

    pub fn predict_split(&self, ws: &Workspace, split: SplitName) -> CliResult<SplitPredictions> {
        let ensemble = Ensemble::new(&self.ggnn, &self.aggregator, &self.text)?;
        let records = load_graphs(ws, split)?;
        let mut graphs: BTreeMap<&str, Vec<&GraphRecord>> = BTreeMap::new();
        for r in &records {
            graphs.entry(r.problem_id.as_str()).or_default().push(r);
        }
        let problems: Vec<_> = self.data.problems_in(split).collect();
        let preds = problems
            .par_iter()
            .map(|p| {
                let gs: Vec<_> = graphs.get(p.id.as_str()).map_or(vec![], |v| v.iter().map(|r| &r.graph).collect());
                ensemble.predict_problem_full(&p.id, &p.statement_latex, &gs)
            })
            .collect::<cptag_core::Result<Vec<_>>>()?;
        let mut by_model: BTreeMap<&'static str, BTreeMap<String, TagProbabilities>> =
            MODELS.iter().map(|m| (*m, BTreeMap::new())).collect();
        for (p, e) in problems.iter().zip(&preds) {
            by_model.get_mut("ensemble").unwrap().insert(p.id.clone(), e.combined.clone());
            by_model.get_mut("text").unwrap().insert(p.id.clone(), e.text.clone());
            if let Some(c) = &e.code {
                by_model.get_mut("code").unwrap().insert(p.id.clone(), c.clone());
            }
            if let Some(m) = self.problem_metrics.get(&p.id) {
                by_model.get_mut("baseline_metrics").unwrap().insert(p.id.clone(), self.metrics.predict(m));
            }
            let x = self.tfidf.vectorizer.transform_dense(&statement_words(&p.statement_latex));
            by_model.get_mut("baseline_tfidf").unwrap().insert(p.id.clone(), self.tfidf.model.predict(&x));
        }
        let usable = usable(&records, self.ggnn.config.max_parse_error_fraction);
        let prepared: Vec<_> = usable.iter().map(|r| self.ggnn.prepare(&r.graph)).collect();
        let solution_preds = self.ggnn.predict_solutions(&prepared)?;
        by_model
            .get_mut("ggnn_solution")
            .unwrap()
            .extend(usable.iter().map(|r| r.solution_id.clone()).zip(solution_preds));
        Ok(SplitPredictions { ensemble: preds, by_model })
    }

    /// Labels of the items a model predicted: problems, or solutions for
    /// the solution-level model.
    pub fn labels_for(&self, predictions: &BTreeMap<String, TagProbabilities>, model: &str) -> BTreeMap<String, Vec<bool>> {
        let problem_of: HashMap<&str, &str> = self
            .data
            .corpus
            .solutions
            .iter()
            .map(|s| (s.id.as_str(), s.problem_id.as_str()))
            .collect();
        let labels = self.data.labels();
        predictions
            .keys()
            .map(|id| {
                let pid = if model == "ggnn_solution" { problem_of[id.as_str()] } else { id.as_str() };
                (id.clone(), labels[pid].iter().map(|&x| x > 0.5).collect())
            })
            .collect()
    }
}

fn fit_thresholds_stage(ws: &Workspace) -> CliResult<()> {
    let models = Models::load(ws)?;
    let preds = models.predict_split(ws, SplitName::Validation)?;
    for (model, p) in &preds.by_model {
        let labels = models.labels_for(p, model);
        let scores: Vec<_> = p.values().cloned().collect();
        let rows: Vec<_> = labels.values().cloned().collect();
        let th = fit_thresholds(&models.data.tags.tags, &scores, &rows)?;
        th.save(&ws.output(&thresholds_file(model))?)?;
    }
    info!("fit-thresholds: {} models", preds.by_model.len());
    Ok(())
}

fn load_thresholds(ws: &Workspace, model: &str) -> CliResult<ThresholdVector> {
    Ok(ThresholdVector::load(&ws.require(&thresholds_file(model), "fit-thresholds")?)?)
}

fn selected_splits(name: Option<SplitName>) -> Vec<SplitName> {
    name.map_or_else(|| SplitName::ALL.to_vec(), |s| vec![s])
}

fn predict(ws: &Workspace, split: Option<SplitName>) -> CliResult<()> {
    let thresholds = load_thresholds(ws, "ensemble")?;
    let models = Models::load(ws)?;
    let tags = &models.data.tags.tags;
    let mut records = Vec::new();
    for s in selected_splits(split) {
        for e in models.predict_split(ws, s)?.ensemble {
            records.push(PredictionRecord::new(&e, tags, &thresholds)?);
        }
    }
    records.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
    let flagged = records.iter().filter(|r| r.text_only).count();
    let mut out = Vec::new();
    write_jsonl(&mut out, &records)?;
    ws.write(PREDICTIONS, out)?;
    info!("predict: {} problems, {} text-only", records.len(), flagged);
    Ok(())
}

fn evaluate(ws: &Workspace) -> CliResult<()> {
    let thresholds: Vec<ThresholdVector> = MODELS.iter().map(|m| load_thresholds(ws, m)).collect::<CliResult<_>>()?;
    let models = Models::load(ws)?;
    let preds = models.predict_split(ws, SplitName::Test)?;
    let mut summary = String::from("model,items,macro_ap,macro_precision,macro_recall,macro_f1\n");
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
    for (model, th) in MODELS.iter().zip(&thresholds) {
        let p = &preds.by_model[model];
        let report = evaluate_split(p, &models.labels_for(p, model), th)?;
        let (csv, json) = report_files(model);
        report.save(&ws.output(&csv)?, &ws.output(&json)?)?;
        summary.push_str(&format!(
            "{model},{},{},{},{},{}\n",
            report.items,
            opt(report.macro_ap),
            opt(report.macro_precision),
            opt(report.macro_recall),
            opt(report.macro_f1)
        ));
        info!("evaluate {model}: macro PR-AUC {:?}", report.macro_ap);
    }
    ws.write("reports/summary.csv", summary)
}

fn correlate(ws: &Workspace) -> CliResult<()> {
    let reports: Vec<EvalReport> = MODELS
        .iter()
        .map(|m| ws.read_json(&report_files(m).1, "evaluate"))
        .collect::<CliResult<_>>()?;
    let tags = TagVocabulary::load(&ws.require(TAGS, "split")?)?;
    let mut names: Vec<String> = MODELS.iter().map(|m| m.to_string()).collect();
    let mut aps: Vec<Vec<Option<f64>>> = reports.iter().map(EvalReport::ap_vector).collect();
    names.push("train_frequency".into());
    aps.push(tags.train_frequency.iter().map(|&f| Some(f as f64)).collect());
    let matrix = per_tag_correlation(&aps)?;
    ws.write(CORRELATION, correlation_csv(&names, &matrix)?)
}

fn suggest(cfg: &RunConfig, ws: &Workspace) -> CliResult<()> {
    let text = fs::read_to_string(ws.require(PREDICTIONS, "predict")?)?;
    let data = SplitData::load(ws)?;
    let tags = &data.tags.tags;
    let mut predictions = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let r: PredictionRecord = serde_json::from_str(line)?;
        let combined = tags
            .iter()
            .map(|t| {
                r.tags
                    .get(t)
                    .map(|s| s.combined)
                    .ok_or_else(|| cptag_core::Error::VocabularyMismatch(format!("prediction lacks tag `{t}`")))
            })
            .collect::<cptag_core::Result<Vec<f64>>>()?;
        predictions.insert(r.problem_id, combined);
    }
    let labels: BTreeMap<String, Vec<bool>> = data
        .labels()
        .into_iter()
        .map(|(k, v)| (k, v.iter().map(|&x| x > 0.5).collect()))
        .collect();
    let suggestions = suggest_missing_tags(&predictions, &labels, tags, cfg.suggest.confidence);
    info!("suggest: {} suggestions", suggestions.len());
    ws.write_json(SUGGESTIONS, &suggestions)
}
