//! Desk-scale synthetic corpora with planted tag signals.
//!
//! The standard corpus tags problems with `loop`, `recursion` and
//! `sorting`; each tag is visible both in every solution (an iterative
//! loop, a self-calling function, a sort invocation) and in the
//! statement wording. The complementary corpus plants `sorting` in code
//! only and `geometry` in statements only.

use std::collections::BTreeSet;

use cptag_nn::rng::substream;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Contest, Corpus, Problem, Solution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Standard,
    Complementary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub contests: usize,
    pub problems_per_contest: usize,
    pub solutions_per_problem: usize,
    pub tag_probability: f64,
    /// Probability of a misleading keyword or look-alike code fragment.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            kind: SynthKind::Standard,
            contests: 30,
            problems_per_contest: 4,
            solutions_per_problem: 3,
            tag_probability: 0.4,
            noise: 0.05,
            seed: 1,
        }
    }
}

pub const STANDARD_TAGS: [&str; 3] = ["loop", "recursion", "sorting"];
pub const COMPLEMENTARY_TAGS: [&str; 2] = ["sorting", "geometry"];

const FILLER: &[&str] = &[
    "given", "integer", "find", "print", "answer", "the", "a", "of", "and", "to", "value", "input", "output",
    "number", "first", "line", "contains", "you", "are", "must", "is", "each", "test", "case", "single",
    "positive", "minimum", "maximum", "possible", "total", "determine", "query", "string", "length", "player",
    "game", "score", "city", "friend", "number", "cost", "consider", "following", "task", "example", "note",
    "that", "can", "in", "from", "with", "for", "it", "not", "all",
];

fn keywords(tag: &str) -> &'static [&'static str] {
    match tag {
        "loop" => &["iterate", "repeatedly", "steps", "simulate", "times", "process", "consecutive", "turn"],
        "recursion" => &["recursive", "subtree", "divide", "nested", "depth", "fractal", "subproblem", "split"],
        "sorting" => &["sorted", "ascending", "order", "rank", "descending", "arrange", "permutation", "smallest"],
        "geometry" => &["polygon", "point", "circle", "angle", "distance", "segment", "triangle", "convex"],
        _ => &[],
    }
}

const VARS: &[&str] = &["a", "b", "c", "x", "y", "val", "cur", "tmp", "res", "best", "cnt", "total"];
const TYPES: &[&str] = &["int", "long long"];
const FUNCS: &[&str] = &["calc", "solve", "go", "work", "eval", "get", "step", "count"];

struct Writer<'r> {
    rng: &'r mut ChaCha8Rng,
    lines: Vec<String>,
    vars: Vec<&'static str>,
}

impl Writer<'_> {
    fn var(&mut self) -> &'static str {
        *self.vars.choose(self.rng).unwrap()
    }

    fn lit(&mut self) -> u32 {
        self.rng.gen_range(1..20)
    }

    fn distractor(&mut self) {
        let (v, w) = (self.var(), self.var());
        let lit = self.lit();
        let line = match self.rng.gen_range(0..7) {
            0 => format!("{v} = {w} + {lit};"),
            1 => format!("{v} = {w} * {lit} - {v};"),
            2 => format!("if ({v} > {w}) {v} = {w};"),
            3 => format!("if ({v} % {lit} == 0) {w} += {lit}; else {w} -= 1;"),
            4 => format!("{v} = max({v}, {w});"),
            5 => format!("swap({v}, {w});"),
            _ => format!("cout << {v} << {w};"),
        };
        self.lines.push(line);
    }

    fn loop_pattern(&mut self) {
        let (v, w) = (self.var(), self.var());
        let lim = self.rng.gen_range(3..50);
        let line = match self.rng.gen_range(0..4) {
            0 => format!("for (int i = 0; i < {lim}; i++) {{ {v} += i; }}"),
            1 => format!("for (int j = {lim}; j > 0; j--) {{ {v} = {v} * 2 % 1000007; {w}++; }}"),
            2 => format!("while ({v} > 1) {{ {v} /= 2; {w}++; }}"),
            _ => format!("int k = 0; do {{ {v} += k; k++; }} while (k < {lim});"),
        };
        self.lines.push(line);
    }

    fn sort_pattern(&mut self) {
        let line = match self.rng.gen_range(0..3) {
            0 => "sort(vec.begin(), vec.end());",
            1 => "sort(vec.rbegin(), vec.rend());",
            _ => "sort(vec.begin(), vec.end(), greater<int>());",
        };
        self.lines.push(line.to_string());
    }

    fn container_noise(&mut self) {
        let line = match self.rng.gen_range(0..2) {
            0 => "reverse(vec.begin(), vec.end());",
            _ => "fill(vec.begin(), vec.end(), 0);",
        };
        self.lines.push(line.to_string());
    }
}

fn recursive_function(rng: &mut ChaCha8Rng, name: &str, ty: &str) -> String {
    match rng.gen_range(0..3) {
        0 => format!("{ty} {name}({ty} p) {{ if (p <= 1) return 1; return {name}(p - 1) * p % 1000007; }}"),
        1 => format!("{ty} {name}({ty} p) {{ if (p < 2) return p; return {name}(p - 1) + {name}(p - 2); }}"),
        _ => format!("{ty} {name}({ty} p, {ty} q) {{ return q == 0 ? p : {name}(q, p % q); }}"),
    }
}

fn helper_function(rng: &mut ChaCha8Rng, name: &str, ty: &str) -> String {
    let lit: u32 = rng.gen_range(2..9);
    match rng.gen_range(0..2) {
        0 => format!("{ty} {name}({ty} p) {{ return p * {lit} + 1; }}"),
        _ => format!("{ty} {name}({ty} p, {ty} q) {{ if (p > q) return p - q; return q - p + {lit}; }}"),
    }
}

/// One C++ solution carrying the code-visible tags in `tags`.
fn solution_source(rng: &mut ChaCha8Rng, tags: &BTreeSet<String>, code_tags: &[&str], noise: f64) -> String {
    let has = |t: &str| tags.contains(t) && code_tags.contains(&t);
    let ty = *TYPES.choose(rng).unwrap();
    let mut funcs: Vec<&str> = FUNCS.to_vec();
    funcs.shuffle(rng);
    let mut header = Vec::new();
    let mut calls = Vec::new();
    if has("recursion") {
        let name = funcs[0];
        let src = recursive_function(rng, name, ty);
        let args = if src.contains(", ") { "a, b" } else { "a" };
        header.push(src);
        calls.push(format!("res = {name}({args});"));
    }
    if rng.gen_bool(0.5) {
        let name = funcs[1];
        let src = helper_function(rng, name, ty);
        let args = if src.contains(", ") { "b, c" } else { "c" };
        header.push(src);
        calls.push(format!("cur = {name}({args});"));
    }
    let mut vars: Vec<&'static str> = VARS.to_vec();
    vars.shuffle(rng);
    vars.truncate(rng.gen_range(2..4));
    for v in ["a", "b", "c", "res", "cur"] {
        if !vars.contains(&v) {
            vars.push(v);
        }
    }
    let mut w = Writer {
        rng,
        lines: vec![],
        vars: vars.clone(),
    };
    let init: Vec<String> = vars.iter().map(|v| format!("{v} = {}", w.rng.gen_range(0..10))).collect();
    w.lines.push(format!("{ty} {};", init.join(", ")));
    w.lines.push("cin >> a >> b;".into());
    let uses_containers = has("sorting") || w.rng.gen_bool(0.5);
    if uses_containers {
        w.lines.push("vector<int> vec = {5, 3, 1, 4};".into());
    }
    let mut body: Vec<Vec<String>> = Vec::new();
    let mut push = |w: &mut Writer, f: &dyn Fn(&mut Writer)| {
        let start = w.lines.len();
        f(w);
        let chunk = w.lines.split_off(start);
        body.push(chunk);
    };
    for _ in 0..w.rng.gen_range(1..4) {
        push(&mut w, &|w| w.distractor());
    }
    if has("loop") {
        push(&mut w, &|w| w.loop_pattern());
    }
    if has("sorting") {
        push(&mut w, &|w| w.sort_pattern());
    }
    if uses_containers && w.rng.gen_bool(noise.max(0.3)) {
        push(&mut w, &|w| w.container_noise());
    }
    for c in calls {
        body.push(vec![c]);
    }
    body.shuffle(w.rng);
    let mut lines = std::mem::take(&mut w.lines);
    lines.extend(body.into_iter().flatten());
    lines.push("cout << res + cur;".into());
    let mut out = String::from("#include <bits/stdc++.h>\nusing namespace std;\n");
    if rng_comment(w.rng) {
        out.push_str("// solution\n");
    }
    for h in header {
        out.push_str(&h);
        out.push('\n');
    }
    out.push_str("int main() {\n");
    for l in lines {
        out.push_str("    ");
        out.push_str(&l);
        out.push('\n');
    }
    out.push_str("    return 0;\n}\n");
    out
}

fn rng_comment(rng: &mut ChaCha8Rng) -> bool {
    rng.gen_bool(0.3)
}

/// Statement LaTeX whose wording reflects the text-visible tags.
fn statement(rng: &mut ChaCha8Rng, tags: &BTreeSet<String>, text_tags: &[&str], noise: f64) -> String {
    let mut words: Vec<String> = (0..rng.gen_range(18..30))
        .map(|_| FILLER.choose(rng).unwrap().to_string())
        .collect();
    for t in text_tags {
        if tags.contains(*t) {
            for _ in 0..rng.gen_range(2..4) {
                words.push(keywords(t).choose(rng).unwrap().to_string());
            }
        }
    }
    for t in text_tags {
        if !tags.contains(*t) && rng.gen_bool(noise) {
            words.push(keywords(t).choose(rng).unwrap().to_string());
        }
    }
    words.shuffle(rng);
    let n = rng.gen_range(2..6);
    format!(
        "{}. The input has $n$ values with $1 \\le n \\le 10^{n}$. \\textbf{{{}}}",
        words.join(" "),
        FILLER.choose(rng).unwrap()
    )
}

pub fn synth_corpus(cfg: &SynthConfig) -> Corpus {
    let (all_tags, code_tags, text_tags): (&[&str], &[&str], &[&str]) = match cfg.kind {
        SynthKind::Standard => (&STANDARD_TAGS, &STANDARD_TAGS, &STANDARD_TAGS),
        SynthKind::Complementary => (&COMPLEMENTARY_TAGS, &["sorting"], &["geometry"]),
    };
    let mut corpus = Corpus::default();
    let mut solution_no = 0;
    for c in 0..cfg.contests {
        let contest_id = format!("{}", 1000 + c);
        let start_time = 1_600_000_000 + c as i64 * 86_400;
        let mut rng = substream(cfg.seed, "synth/contest", &[c as u64]);
        corpus.contests.push(Contest {
            id: contest_id.clone(),
            start_time,
            division: rng.gen_range(1..=3),
        });
        for p in 0..cfg.problems_per_contest {
            let mut rng = substream(cfg.seed, "synth/problem", &[c as u64, p as u64]);
            let problem_id = format!("{contest_id}{}", (b'A' + p as u8) as char);
            let tags: BTreeSet<String> = all_tags
                .iter()
                .filter(|_| rng.gen_bool(cfg.tag_probability))
                .map(|t| t.to_string())
                .collect();
            for s in 0..cfg.solutions_per_problem {
                let mut srng = substream(cfg.seed, "synth/solution", &[c as u64, p as u64, s as u64]);
                corpus.solutions.push(Solution {
                    id: format!("s{solution_no:06}"),
                    problem_id: problem_id.clone(),
                    submit_time: start_time + srng.gen_range(60..7200),
                    source: solution_source(&mut srng, &tags, code_tags, cfg.noise),
                });
                solution_no += 1;
            }
            corpus.problems.push(Problem {
                id: problem_id,
                contest_id: contest_id.clone(),
                statement_latex: statement(&mut rng, &tags, text_tags, cfg.noise),
                tags,
            });
        }
    }
    corpus
}
