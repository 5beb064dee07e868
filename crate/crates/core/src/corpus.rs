//! Loading, validation, deduplication, chronological splitting and
//! subsampling of the contest/problem/solution corpus.
//!
//! On disk a corpus is a directory with `contests.jsonl`,
//! `problems.jsonl` and `solutions.jsonl`, one JSON record per line.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{latex_to_text, word_tokens};

pub const CONTESTS_FILE: &str = "contests.jsonl";
pub const PROBLEMS_FILE: &str = "problems.jsonl";
pub const SOLUTIONS_FILE: &str = "solutions.jsonl";
pub const DEFAULT_NEAR_DUPLICATE_THRESHOLD: f64 = 0.9;
pub const DEFAULT_SOLUTION_CAP: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contest {
    pub id: String,
    pub start_time: i64,
    pub division: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub contest_id: String,
    pub statement_latex: String,
    pub tags: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Solution {
    pub id: String,
    pub problem_id: String,
    pub submit_time: i64,
    pub source: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub contests: Vec<Contest>,
    pub problems: Vec<Problem>,
    pub solutions: Vec<Solution>,
}

fn read_jsonl<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<Vec<T>> {
    let path = dir.join(name);
    let file = File::open(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.clone()),
        _ => e.into(),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            file: name.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(dir: &Path, name: &str, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads and validates a corpus directory.
pub fn load_corpus(root: &Path) -> Result<Corpus> {
    let corpus = Corpus {
        contests: read_jsonl(root, CONTESTS_FILE)?,
        problems: read_jsonl(root, PROBLEMS_FILE)?,
        solutions: read_jsonl(root, SOLUTIONS_FILE)?,
    };
    corpus.validate()?;
    Ok(corpus)
}

pub fn write_corpus(corpus: &Corpus, root: &Path) -> Result<()> {
    std::fs::create_dir_all(root)?;
    write_jsonl(root, CONTESTS_FILE, &corpus.contests)?;
    write_jsonl(root, PROBLEMS_FILE, &corpus.problems)?;
    write_jsonl(root, SOLUTIONS_FILE, &corpus.solutions)?;
    Ok(())
}

impl Corpus {
    /// Checks id uniqueness, value constraints and references.
    pub fn validate(&self) -> Result<()> {
        let mut contests = HashSet::new();
        for c in &self.contests {
            if !contests.insert(c.id.as_str()) {
                return Err(Error::InvalidRecord(format!("duplicate contest id `{}`", c.id)));
            }
            if c.start_time <= 0 {
                return Err(Error::InvalidRecord(format!("contest `{}` has non-positive start_time", c.id)));
            }
        }
        let mut problems = HashSet::new();
        for p in &self.problems {
            if !problems.insert(p.id.as_str()) {
                return Err(Error::InvalidRecord(format!("duplicate problem id `{}`", p.id)));
            }
            if !contests.contains(p.contest_id.as_str()) {
                return Err(Error::DanglingReference {
                    kind: "problem",
                    id: p.id.clone(),
                    target: "contest",
                    target_id: p.contest_id.clone(),
                });
            }
        }
        let mut solutions = HashSet::new();
        for s in &self.solutions {
            if !solutions.insert(s.id.as_str()) {
                return Err(Error::InvalidRecord(format!("duplicate solution id `{}`", s.id)));
            }
            if !problems.contains(s.problem_id.as_str()) {
                return Err(Error::DanglingReference {
                    kind: "solution",
                    id: s.id.clone(),
                    target: "problem",
                    target_id: s.problem_id.clone(),
                });
            }
            if s.submit_time <= 0 {
                return Err(Error::InvalidRecord(format!("solution `{}` has non-positive submit_time", s.id)));
            }
            if s.source.is_empty() {
                return Err(Error::InvalidRecord(format!("solution `{}` has empty source", s.id)));
            }
        }
        Ok(())
    }

    pub fn problem(&self, id: &str) -> Option<&Problem> {
        self.problems.iter().find(|p| p.id == id)
    }

    /// Solutions grouped by problem id, in corpus order.
    pub fn solutions_by_problem(&self) -> BTreeMap<&str, Vec<&Solution>> {
        let mut map: BTreeMap<&str, Vec<&Solution>> = BTreeMap::new();
        for s in &self.solutions {
            map.entry(s.problem_id.as_str()).or_default().push(s);
        }
        map
    }

    /// Keeps only the listed problems (and their solutions).
    fn retain_problems(&mut self, keep: &HashSet<String>) {
        self.problems.retain(|p| keep.contains(&p.id));
        self.solutions.retain(|s| keep.contains(&s.problem_id));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    pub removed: usize,
}

/// Removes solutions whose raw source bytes hash (SHA-256) to the same
/// value as an earlier submission; the earliest one of each group
/// survives (ties broken by id).
pub fn dedup_solutions(corpus: &Corpus) -> (Corpus, DedupReport) {
    let hashes: Vec<[u8; 32]> = corpus
        .solutions
        .par_iter()
        .map(|s| crate::sha256(s.source.as_bytes()))
        .collect();
    let mut keeper: HashMap<[u8; 32], usize> = HashMap::new();
    for (i, h) in hashes.iter().enumerate() {
        let s = &corpus.solutions[i];
        keeper
            .entry(*h)
            .and_modify(|k| {
                let cur = &corpus.solutions[*k];
                if (s.submit_time, &s.id) < (cur.submit_time, &cur.id) {
                    *k = i;
                }
            })
            .or_insert(i);
    }
    let keep: HashSet<usize> = keeper.into_values().collect();
    let solutions: Vec<Solution> = corpus
        .solutions
        .iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(i))
        .map(|(_, s)| s.clone())
        .collect();
    let removed = corpus.solutions.len() - solutions.len();
    if removed > 0 {
        info!("dedup removed {removed} duplicate solutions");
    }
    (
        Corpus {
            contests: corpus.contests.clone(),
            problems: corpus.problems.clone(),
            solutions,
        },
        DedupReport { removed },
    )
}

/// Statement tokens used for near-duplicate detection.
pub fn statement_token_set(statement_latex: &str) -> BTreeSet<String> {
    word_tokens(&latex_to_text(statement_latex)).into_iter().collect()
}

pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearDuplicate {
    pub first: String,
    pub second: String,
    pub similarity: f64,
}

/// All unordered problem pairs whose statement token sets have Jaccard
/// similarity at least `threshold`. Problems with an empty token set are
/// skipped.
pub fn find_near_duplicate_statements(corpus: &Corpus, threshold: f64) -> Vec<NearDuplicate> {
    let sets: Vec<(&str, BTreeSet<String>)> = corpus
        .problems
        .iter()
        .filter_map(|p| {
            let set = statement_token_set(&p.statement_latex);
            if set.is_empty() {
                warn!("problem `{}` has an empty statement token set; excluded from near-duplicate search", p.id);
                None
            } else {
                Some((p.id.as_str(), set))
            }
        })
        .collect();
    let mut pairs: Vec<NearDuplicate> = (0..sets.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let sets = &sets;
            (i + 1..sets.len()).filter_map(move |j| {
                let sim = jaccard(&sets[i].1, &sets[j].1);
                (sim >= threshold).then(|| {
                    let (a, b) = if sets[i].0 <= sets[j].0 { (sets[i].0, sets[j].0) } else { (sets[j].0, sets[i].0) };
                    NearDuplicate {
                        first: a.to_string(),
                        second: b.to_string(),
                        similarity: sim,
                    }
                })
            })
        })
        .collect();
    pairs.sort_by(|a, b| (&a.first, &a.second).cmp(&(&b.first, &b.second)));
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "validation" => Ok(SplitName::Validation),
            "test" => Ok(SplitName::Test),
            other => Err(Error::InvalidSplit(format!("unknown split `{other}`"))),
        }
    }
}

/// Contest-to-split assignment with the leakage boundaries that were
/// applied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub contests: BTreeMap<String, SplitName>,
    /// Earliest surviving validation submission; train solutions at or
    /// after it were removed.
    pub validation_boundary: Option<i64>,
    /// Earliest surviving test submission; validation solutions at or
    /// after it were removed.
    pub test_boundary: Option<i64>,
    /// Problems removed because a near-duplicate lives in an earlier split.
    pub removed_problems: Vec<String>,
}

impl SplitSpec {
    pub fn split_of_contest(&self, contest_id: &str) -> Option<SplitName> {
        self.contests.get(contest_id).copied()
    }

    /// Split of every problem in `corpus`, keyed by problem id.
    pub fn problem_splits(&self, corpus: &Corpus) -> HashMap<String, SplitName> {
        corpus
            .problems
            .iter()
            .filter_map(|p| self.split_of_contest(&p.contest_id).map(|s| (p.id.clone(), s)))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => e.into(),
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub near_duplicate_problems_removed: usize,
    pub train_solutions_removed: usize,
    pub validation_solutions_removed: usize,
}

/// Assigns contests to splits by start time so that the cumulative
/// problem counts follow `fractions`, isolates near-duplicate statements
/// across splits, and removes solutions that would leak future
/// submissions into earlier splits.
pub fn chronological_split(
    corpus: &Corpus,
    fractions: (f64, f64, f64),
    near_duplicate_threshold: f64,
) -> Result<(SplitSpec, Corpus, SplitReport)> {
    let (ft, fv, fs) = fractions;
    if ft <= 0.0 || fv <= 0.0 || fs <= 0.0 || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSplit(format!(
            "fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    if corpus.contests.len() < 3 {
        return Err(Error::InvalidSplit(format!(
            "need at least 3 contests for 3 splits, got {}",
            corpus.contests.len()
        )));
    }
    let mut contests: Vec<&Contest> = corpus.contests.iter().collect();
    contests.sort_by(|a, b| (a.start_time, &a.id).cmp(&(b.start_time, &b.id)));
    let mut problem_count: HashMap<&str, usize> = HashMap::new();
    for p in &corpus.problems {
        *problem_count.entry(p.contest_id.as_str()).or_default() += 1;
    }
    let total: usize = problem_count.values().sum();

    // Assign by the midpoint of each contest's cumulative problem range.
    let mut names: Vec<SplitName> = Vec::with_capacity(contests.len());
    let mut cumulative = 0usize;
    for c in &contests {
        let n = problem_count.get(c.id.as_str()).copied().unwrap_or(0);
        let mid = if total == 0 {
            (names.len() as f64 + 0.5) / contests.len() as f64
        } else {
            (cumulative as f64 + n as f64 / 2.0) / total as f64
        };
        cumulative += n;
        names.push(if mid < ft {
            SplitName::Train
        } else if mid < ft + fv {
            SplitName::Validation
        } else {
            SplitName::Test
        });
    }
    let count = |names: &[SplitName], s| names.iter().filter(|&&x| x == s).count();
    let m = contests.len();
    let mut k_train = count(&names, SplitName::Train).max(1);
    let mut k_val = count(&names, SplitName::Validation).max(1);
    if k_train + k_val > m - 1 {
        k_val = 1;
        k_train = k_train.min(m - 2);
    }
    for (i, name) in names.iter_mut().enumerate() {
        *name = if i < k_train {
            SplitName::Train
        } else if i < k_train + k_val {
            SplitName::Validation
        } else {
            SplitName::Test
        };
    }
    let assignment: BTreeMap<String, SplitName> = contests
        .iter()
        .zip(&names)
        .map(|(c, n)| (c.id.clone(), *n))
        .collect();

    // Near-duplicate groups: connected components of the similarity
    // graph; members outside the earliest split of their group go.
    let problem_split: HashMap<&str, SplitName> = corpus
        .problems
        .iter()
        .map(|p| (p.id.as_str(), assignment[&p.contest_id]))
        .collect();
    let pairs = find_near_duplicate_statements(corpus, near_duplicate_threshold);
    let mut parent: HashMap<&str, &str> = HashMap::new();
    fn find<'a>(parent: &mut HashMap<&'a str, &'a str>, x: &'a str) -> &'a str {
        let p = *parent.get(x).unwrap_or(&x);
        if p == x {
            return x;
        }
        let root = find(parent, p);
        parent.insert(x, root);
        root
    }
    for pair in &pairs {
        let a = find(&mut parent, pair.first.as_str());
        let b = find(&mut parent, pair.second.as_str());
        if a != b {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            parent.insert(hi, lo);
        }
    }
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for pair in &pairs {
        for id in [pair.first.as_str(), pair.second.as_str()] {
            let root = find(&mut parent, id);
            let g = groups.entry(root).or_default();
            if !g.contains(&id) {
                g.push(id);
            }
        }
    }
    let mut removed_problems: Vec<String> = Vec::new();
    for members in groups.values() {
        let earliest = members.iter().map(|m| problem_split[m]).min().expect("non-empty group");
        removed_problems.extend(
            members
                .iter()
                .filter(|m| problem_split[*m] != earliest)
                .map(|m| m.to_string()),
        );
    }
    removed_problems.sort();
    let removed_set: HashSet<String> = removed_problems.iter().cloned().collect();
    let keep: HashSet<String> = corpus
        .problems
        .iter()
        .filter(|p| !removed_set.contains(&p.id))
        .map(|p| p.id.clone())
        .collect();
    let mut out = corpus.clone();
    out.retain_problems(&keep);

    // Leakage boundaries.
    let split_of_solution = |s: &Solution| problem_split[s.problem_id.as_str()];
    let min_time = |c: &Corpus, split: SplitName| {
        c.solutions
            .iter()
            .filter(|s| split_of_solution(s) == split)
            .map(|s| s.submit_time)
            .min()
    };
    let validation_boundary = min_time(&out, SplitName::Validation);
    let before = out.solutions.len();
    if let Some(vb) = validation_boundary {
        out.solutions
            .retain(|s| split_of_solution(s) != SplitName::Train || s.submit_time < vb);
    }
    let train_removed = before - out.solutions.len();
    let test_boundary = min_time(&out, SplitName::Test);
    let before = out.solutions.len();
    if let Some(tb) = test_boundary {
        out.solutions
            .retain(|s| split_of_solution(s) == SplitName::Test || s.submit_time < tb);
    }
    let validation_removed = before - out.solutions.len();
    let validation_boundary = min_time(&out, SplitName::Validation);

    let report = SplitReport {
        near_duplicate_problems_removed: removed_problems.len(),
        train_solutions_removed: train_removed,
        validation_solutions_removed: validation_removed,
    };
    info!("split: {report:?}");
    Ok((
        SplitSpec {
            contests: assignment,
            validation_boundary,
            test_boundary,
            removed_problems,
        },
        out,
        report,
    ))
}

/// Caps the number of solutions per problem at `cap`, keeping a uniform
/// random subset drawn from a per-problem stream of `seed`.
pub fn subsample_solutions(corpus: &Corpus, cap: usize, seed: u64) -> Corpus {
    assert!(cap >= 1, "solution cap must be at least 1");
    let mut keep: HashSet<&str> = HashSet::new();
    for (problem, sols) in corpus.solutions_by_problem() {
        if sols.len() <= cap {
            keep.extend(sols.iter().map(|s| s.id.as_str()));
            continue;
        }
        let mut ids: Vec<&str> = sols.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        let mut rng = cptag_nn::rng::substream(seed, &format!("subsample/{problem}"), &[]);
        for i in rand::seq::index::sample(&mut rng, ids.len(), cap) {
            keep.insert(ids[i]);
        }
    }
    Corpus {
        contests: corpus.contests.clone(),
        problems: corpus.problems.clone(),
        solutions: corpus
            .solutions
            .iter()
            .filter(|s| keep.contains(s.id.as_str()))
            .cloned()
            .collect(),
    }
}

/// Ordered tag list; every probability vector in the system uses this
/// order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagVocabulary {
    pub tags: Vec<String>,
    pub train_frequency: Vec<usize>,
}

impl TagVocabulary {
    pub fn new(tags: Vec<String>, train_frequency: Vec<usize>) -> Result<Self> {
        let unique: HashSet<&String> = tags.iter().collect();
        if unique.len() != tags.len() {
            return Err(Error::InvalidRecord("duplicate tag in vocabulary".into()));
        }
        if tags.len() != train_frequency.len() {
            return Err(Error::LengthMismatch("tags vs frequencies".into()));
        }
        Ok(Self { tags, train_frequency })
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn index(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }

    /// Multi-hot label vector in vocabulary order.
    pub fn encode(&self, tags: &BTreeSet<String>) -> Vec<f64> {
        self.tags
            .iter()
            .map(|t| if tags.contains(t) { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn hash(&self) -> [u8; 32] {
        crate::sha256(self.tags.join("\n").as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => e.into(),
        })?;
        let v: TagVocabulary = serde_json::from_str(&text)?;
        Self::new(v.tags, v.train_frequency)
    }
}

/// Tags ordered by descending train-split problem frequency, then name,
/// keeping those with at least `min_train_frequency` train problems.
pub fn build_tag_vocabulary(
    corpus: &Corpus,
    split: &SplitSpec,
    min_train_frequency: usize,
) -> Result<TagVocabulary> {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &corpus.problems {
        if split.split_of_contest(&p.contest_id) == Some(SplitName::Train) {
            for t in &p.tags {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|(_, n)| *n >= min_train_frequency)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if ranked.is_empty() {
        return Err(Error::EmptyVocabulary(min_train_frequency));
    }
    TagVocabulary::new(
        ranked.iter().map(|(t, _)| t.to_string()).collect(),
        ranked.iter().map(|(_, n)| *n).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contest(id: &str, t: i64) -> Contest {
        Contest {
            id: id.into(),
            start_time: t,
            division: 2,
        }
    }

    fn problem(id: &str, contest: &str, statement: &str, tags: &[&str]) -> Problem {
        Problem {
            id: id.into(),
            contest_id: contest.into(),
            statement_latex: statement.into(),
            tags: tags.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn solution(id: &str, problem: &str, t: i64, src: &str) -> Solution {
        Solution {
            id: id.into(),
            problem_id: problem.into(),
            submit_time: t,
            source: src.into(),
        }
    }

    fn small() -> Corpus {
        Corpus {
            contests: vec![contest("c1", 100), contest("c2", 200)],
            problems: vec![
                problem("p1", "c1", "a", &["x"]),
                problem("p2", "c1", "b", &[]),
                problem("p3", "c2", "c", &["y"]),
            ],
            solutions: (0..5)
                .map(|i| solution(&format!("s{i}"), ["p1", "p2", "p3"][i % 3], 150 + i as i64, &format!("int v{i};")))
                .collect(),
        }
    }

    #[test]
    fn load_round_trip_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&small(), dir.path()).unwrap();
        let c = load_corpus(dir.path()).unwrap();
        assert_eq!((c.contests.len(), c.problems.len(), c.solutions.len()), (2, 3, 5));
    }

    #[test]
    fn empty_solutions_file_is_fine() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small();
        c.solutions.clear();
        write_corpus(&c, dir.path()).unwrap();
        assert_eq!(load_corpus(dir.path()).unwrap().solutions.len(), 0);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small();
        c.solutions.push(solution("bad", "p404", 10, "x"));
        write_corpus(&c, dir.path()).unwrap();
        let err = load_corpus(dir.path()).unwrap_err().to_string();
        assert!(err.contains("p404"), "{err}");

        write_corpus(&small(), dir.path()).unwrap();
        std::fs::write(dir.path().join(PROBLEMS_FILE), "{\"id\":\"p1\"}\n").unwrap();
        match load_corpus(dir.path()).unwrap_err() {
            Error::Malformed { line, file, .. } => {
                assert_eq!(line, 1);
                assert_eq!(file, PROBLEMS_FILE);
            }
            e => panic!("unexpected {e}"),
        }

        std::fs::remove_file(dir.path().join(CONTESTS_FILE)).unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(Error::MissingFile(_))));
    }

    #[test]
    fn sha256_standard_vector() {
        assert_eq!(
            crate::sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn dedup_keeps_earliest() {
        let mut c = small();
        c.solutions = vec![
            solution("s1", "p1", 5, "int main(){}"),
            solution("s2", "p1", 3, "int main(){}"),
            solution("s3", "p1", 4, "int main(){} "),
        ];
        let (d, report) = dedup_solutions(&c);
        let ids: Vec<&str> = d.solutions.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["s2", "s3"]);
        assert_eq!(report.removed, 1);
    }

    #[test]
    fn jaccard_examples() {
        let a: BTreeSet<String> = (0..10).map(|i| format!("w{i}")).collect();
        let b: BTreeSet<String> = (0..9).map(|i| format!("w{i}")).collect();
        assert_eq!(jaccard(&a, &b), 0.9);
        assert_eq!(jaccard(&a, &a), 1.0);
        let c: BTreeSet<String> = (20..25).map(|i| format!("w{i}")).collect();
        assert_eq!(jaccard(&a, &c), 0.0);
    }

    #[test]
    fn near_duplicates_found_at_threshold() {
        let ten = "w0 w1 w2 w3 w4 w5 w6 w7 w8 w9";
        let nine = "w0 w1 w2 w3 w4 w5 w6 w7 w8";
        let mut c = small();
        c.problems = vec![
            problem("p1", "c1", ten, &[]),
            problem("p2", "c1", nine, &[]),
            problem("p3", "c2", "completely different words", &[]),
            problem("p4", "c2", "$ $ !!", &[]),
        ];
        let pairs = find_near_duplicate_statements(&c, 0.9);
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].first.as_str(), pairs[0].second.as_str()), ("p1", "p2"));
        assert_eq!(pairs[0].similarity, 0.9);
    }

    fn ten_contests() -> Corpus {
        let contests: Vec<Contest> = (0..10).map(|i| contest(&format!("c{i}"), 1000 * (10 - i as i64))).collect();
        let problems = (0..10)
            .map(|i| problem(&format!("p{i}"), &format!("c{i}"), &format!("unique statement number{i} text{i}"), &["t"]))
            .collect();
        let solutions = (0..10)
            .map(|i| solution(&format!("s{i}"), &format!("p{i}"), 1000 * (10 - i as i64) + 10, &format!("int x{i};")))
            .collect();
        Corpus {
            contests,
            problems,
            solutions,
        }
    }

    #[test]
    fn split_is_chronological() {
        let c = ten_contests();
        let (spec, _, _) = chronological_split(&c, (0.6, 0.2, 0.2), 0.9).unwrap();
        let mut by_time: Vec<&Contest> = c.contests.iter().collect();
        by_time.sort_by_key(|c| c.start_time);
        let names: Vec<SplitName> = by_time.iter().map(|c| spec.contests[&c.id]).collect();
        use SplitName::*;
        assert_eq!(names, [Train, Train, Train, Train, Train, Train, Validation, Validation, Test, Test]);
        assert!(chronological_split(&c, (0.5, 0.5, 0.0), 0.9).is_err());
        let mut two = c.clone();
        two.contests.truncate(2);
        two.problems.retain(|p| p.contest_id == "c0" || p.contest_id == "c1");
        two.solutions.retain(|s| s.problem_id == "p0" || s.problem_id == "p1");
        assert!(chronological_split(&two, (0.6, 0.2, 0.2), 0.9).is_err());
    }

    #[test]
    fn train_solution_at_boundary_is_removed() {
        let mut c = ten_contests();
        // c3 (start 7000) is the earliest validation contest: its solution
        // s3 at 7010 is the validation boundary.
        let (spec, _, _) = chronological_split(&c, (0.6, 0.2, 0.2), 0.9).unwrap();
        assert_eq!(spec.contests["c3"], SplitName::Validation);
        c.solutions.push(solution("late", "p9", 7010, "late"));
        c.solutions.push(solution("early", "p9", 7009, "early"));
        let (spec, out, report) = chronological_split(&c, (0.6, 0.2, 0.2), 0.9).unwrap();
        assert_eq!(spec.validation_boundary, Some(7010));
        let ids: HashSet<&str> = out.solutions.iter().map(|s| s.id.as_str()).collect();
        assert!(!ids.contains("late"));
        assert!(ids.contains("early"));
        assert_eq!(report.train_solutions_removed, 1);
    }

    #[test]
    fn cross_split_near_duplicate_removes_later_member() {
        let mut c = ten_contests();
        // p9 is in the earliest (train) contest, p0 in the latest (test).
        c.problems[0].statement_latex = c.problems[9].statement_latex.clone();
        let (spec, out, report) = chronological_split(&c, (0.6, 0.2, 0.2), 0.9).unwrap();
        assert_eq!(spec.removed_problems, vec!["p0".to_string()]);
        assert!(out.problem("p0").is_none());
        assert!(out.problem("p9").is_some());
        assert!(out.solutions.iter().all(|s| s.problem_id != "p0"));
        assert_eq!(report.near_duplicate_problems_removed, 1);
    }

    #[test]
    fn subsample_caps_and_is_deterministic() {
        let mut c = small();
        c.solutions = (0..1500).map(|i| solution(&format!("a{i}"), "p1", 10 + i, &format!("{i}"))).collect();
        c.solutions.extend((0..7).map(|i| solution(&format!("b{i}"), "p2", 10 + i, &format!("b{i}"))));
        let s1 = subsample_solutions(&c, 1000, 42);
        let s2 = subsample_solutions(&c, 1000, 42);
        assert_eq!(s1, s2);
        let counts = s1.solutions_by_problem();
        assert_eq!(counts["p1"].len(), 1000);
        assert_eq!(counts["p2"].len(), 7);
        assert_eq!(subsample_solutions(&s1, 1000, 42), s1);
        assert_ne!(subsample_solutions(&c, 1000, 43), s1);
    }

    #[test]
    fn tag_vocabulary_ordering_and_filtering() {
        let mut c = ten_contests();
        let tags_for = |i: usize| -> Vec<&str> {
            let mut v = vec!["a"];
            if i < 4 {
                v.push("b");
            }
            if i == 0 {
                v.push("c");
            }
            v
        };
        for (i, p) in c.problems.iter_mut().enumerate() {
            p.tags = tags_for(9 - i).iter().map(|s| s.to_string()).collect();
        }
        let (spec, out, _) = chronological_split(&c, (0.6, 0.2, 0.2), 0.9).unwrap();
        let v = build_tag_vocabulary(&out, &spec, 2).unwrap();
        assert_eq!(v.tags, ["a", "b"]);
        assert_eq!(v.train_frequency, [6, 4]);
        assert!(matches!(build_tag_vocabulary(&out, &spec, 100), Err(Error::EmptyVocabulary(100))));
        let dir = tempfile::tempdir().unwrap();
        v.save(&dir.path().join("tags.json")).unwrap();
        assert_eq!(TagVocabulary::load(&dir.path().join("tags.json")).unwrap(), v);
    }
}
