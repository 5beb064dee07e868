//! Metrics, threshold fitting, reports, correlation and label audit.
//!
//! A tag is predicted positive iff its score is strictly greater than
//! the tag's threshold, so a threshold of 1.0 never predicts.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-tag scores in [0, 1], in tag-vocabulary order.
pub type TagProbabilities = Vec<f64>;

/// Average precision over descending score groups; equal scores form one
/// group. `None` if there are no positives.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut ap = 0.0;
    for (_, recall_gain, precision) in pr_steps(scores, labels, positives) {
        ap += recall_gain * precision;
    }
    Some(ap)
}

/// (score, recall gain, precision after group) for each tie group.
fn pr_steps(scores: &[f64], labels: &[bool], positives: usize) -> Vec<(f64, f64, f64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut steps = Vec::new();
    let (mut seen, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut group_tp = 0;
        while i < order.len() && scores[order[i]] == s {
            group_tp += usize::from(labels[order[i]]);
            seen += 1;
            i += 1;
        }
        tp += group_tp;
        steps.push((s, group_tp as f64 / positives as f64, tp as f64 / seen as f64));
    }
    steps
}

/// (recall, precision) after each tie group, in descending score order.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return vec![];
    }
    let mut recall = 0.0;
    pr_steps(scores, labels, positives)
        .into_iter()
        .map(|(_, gain, p)| {
            recall += gain;
            (recall, p)
        })
        .collect()
}

/// Precision, recall and F1 from confusion counts. Precision is 1 with
/// no predicted positives, recall is 1 with no actual positives.
pub fn prf_from_counts(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if tp + fp + fn_ == 0 { 1.0 } else { (2 * tp) as f64 / (2 * tp + fp + fn_) as f64 };
    (p, r, f1)
}

pub fn precision_recall_f1(predicted: &[bool], labels: &[bool]) -> (f64, f64, f64) {
    assert_eq!(predicted.len(), labels.len(), "predictions and labels differ in length");
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &l) in predicted.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    prf_from_counts(tp, fp, fn_)
}

/// Candidate thresholds in ascending order: 0, midpoints between
/// consecutive distinct scores, 1.
pub fn threshold_candidates(scores: &[f64]) -> Vec<f64> {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut c = vec![0.0];
    c.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    c.push(1.0);
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

/// Threshold maximizing F1 among the candidates; ties go to the smallest.
/// `None` if there are no positives.
pub fn fit_threshold(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut sorted: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // positives_at_or_below[k] = positives among the k smallest scores
    let mut below = vec![0usize; sorted.len() + 1];
    for (k, &(_, l)) in sorted.iter().enumerate() {
        below[k + 1] = below[k] + usize::from(l);
    }
    let mut best: Option<(f64, f64)> = None;
    for t in threshold_candidates(scores) {
        let k = sorted.partition_point(|&(s, _)| s <= t);
        let predicted = sorted.len() - k;
        let tp = positives - below[k];
        let (_, _, f1) = prf_from_counts(tp, predicted - tp, positives - tp);
        if best.is_none_or(|(_, b)| f1 > b) {
            best = Some((t, f1));
        }
    }
    best.map(|(t, _)| t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVector {
    pub tags: Vec<String>,
    pub thresholds: Vec<f64>,
}

impl ThresholdVector {
    pub fn uniform(tags: &[String], value: f64) -> Self {
        Self {
            tags: tags.to_vec(),
            thresholds: vec![value; tags.len()],
        }
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
        let t: ThresholdVector = serde_json::from_str(&text)?;
        if t.tags.len() != t.thresholds.len() {
            return Err(Error::LengthMismatch("thresholds vs tags".into()));
        }
        Ok(t)
    }

    pub fn decide(&self, scores: &[f64]) -> Vec<bool> {
        scores.iter().zip(&self.thresholds).map(|(s, t)| s > t).collect()
    }
}

fn column<T: Copy>(rows: &[Vec<T>], j: usize) -> Vec<T> {
    rows.iter().map(|r| r[j]).collect()
}

/// Per-tag thresholds fitted on validation rows (one row per item, one
/// column per tag).
pub fn fit_thresholds(tags: &[String], scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<ThresholdVector> {
    check_matrix(tags.len(), scores, labels)?;
    let thresholds = (0..tags.len())
        .map(|j| {
            fit_threshold(&column(scores, j), &column(labels, j)).unwrap_or_else(|| {
                warn!("tag `{}` has no validation positives; threshold set to 1.0", tags[j]);
                1.0
            })
        })
        .collect();
    Ok(ThresholdVector {
        tags: tags.to_vec(),
        thresholds,
    })
}

fn check_matrix(n_tags: usize, scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(format!("{} score rows vs {} label rows", scores.len(), labels.len())));
    }
    if scores.iter().any(|r| r.len() != n_tags) || labels.iter().any(|r| r.len() != n_tags) {
        return Err(Error::LengthMismatch(format!("rows must have {n_tags} tag columns")));
    }
    Ok(())
}

/// Mean AP over tags with at least one positive; `None` if no tag has one.
pub fn macro_pr_auc(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Option<f64> {
    let n_tags = scores.first().map_or(0, Vec::len);
    let aps: Vec<f64> = (0..n_tags)
        .filter_map(|j| pr_auc(&column(scores, j), &column(labels, j)))
        .collect();
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagReport {
    pub tag: String,
    pub support: usize,
    pub ap: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub pr_curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: usize,
    pub tags: Vec<TagReport>,
    pub macro_ap: Option<f64>,
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    pub macro_f1: Option<f64>,
    pub thresholds: ThresholdVector,
}

/// Evaluates predictions keyed by item id against labels with the same
/// keys.
pub fn evaluate_split(
    predictions: &BTreeMap<String, TagProbabilities>,
    labels: &BTreeMap<String, Vec<bool>>,
    thresholds: &ThresholdVector,
) -> Result<EvalReport> {
    if predictions.keys().ne(labels.keys()) {
        let missing = predictions
            .keys()
            .find(|k| !labels.contains_key(*k))
            .or_else(|| labels.keys().find(|k| !predictions.contains_key(*k)));
        return Err(Error::LengthMismatch(format!(
            "prediction and label ids differ (e.g. `{}`)",
            missing.map(String::as_str).unwrap_or("?")
        )));
    }
    let scores: Vec<Vec<f64>> = predictions.values().cloned().collect();
    let label_rows: Vec<Vec<bool>> = labels.values().cloned().collect();
    let n_tags = thresholds.tags.len();
    check_matrix(n_tags, &scores, &label_rows)?;

    let mut tags = Vec::with_capacity(n_tags);
    for j in 0..n_tags {
        let s = column(&scores, j);
        let l = column(&label_rows, j);
        let decided: Vec<bool> = s.iter().map(|&x| x > thresholds.thresholds[j]).collect();
        let (precision, recall, f1) = precision_recall_f1(&decided, &l);
        let support = l.iter().filter(|&&x| x).count();
        if support == 0 {
            warn!("tag `{}` has no positives in the evaluated split; excluded from macro averages", thresholds.tags[j]);
        }
        tags.push(TagReport {
            tag: thresholds.tags[j].clone(),
            support,
            ap: pr_auc(&s, &l),
            precision,
            recall,
            f1,
            threshold: thresholds.thresholds[j],
            pr_curve: pr_curve(&s, &l),
        });
    }
    let supported: Vec<&TagReport> = tags.iter().filter(|t| t.support > 0).collect();
    let mean = |f: &dyn Fn(&TagReport) -> f64| {
        (!supported.is_empty()).then(|| supported.iter().map(|t| f(t)).sum::<f64>() / supported.len() as f64)
    };
    Ok(EvalReport {
        items: scores.len(),
        macro_ap: mean(&|t| t.ap.unwrap_or(0.0)),
        macro_precision: mean(&|t| t.precision),
        macro_recall: mean(&|t| t.recall),
        macro_f1: mean(&|t| t.f1),
        tags,
        thresholds: thresholds.clone(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

impl EvalReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["tag", "support", "ap", "precision", "recall", "f1", "threshold"])
            .map_err(csv_err)?;
        for t in &self.tags {
            w.write_record([
                t.tag.clone(),
                t.support.to_string(),
                fmt_opt(t.ap),
                format!("{:.6}", t.precision),
                format!("{:.6}", t.recall),
                format!("{:.6}", t.f1),
                format!("{:.6}", t.threshold),
            ])
            .map_err(csv_err)?;
        }
        w.write_record([
            "macro".to_string(),
            self.tags.iter().map(|t| t.support).sum::<usize>().to_string(),
            fmt_opt(self.macro_ap),
            fmt_opt(self.macro_precision),
            fmt_opt(self.macro_recall),
            fmt_opt(self.macro_f1),
            String::new(),
        ])
        .map_err(csv_err)?;
        Ok(String::from_utf8(w.into_inner().map_err(|e| Error::InvalidRecord(e.to_string()))?).expect("utf-8"))
    }

    pub fn save(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()?)?;
        std::fs::write(json_path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Per-tag AP in report order.
    pub fn ap_vector(&self) -> Vec<Option<f64>> {
        self.tags.iter().map(|t| t.ap).collect()
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::InvalidRecord(format!("csv: {e}"))
}

/// Pearson correlation; `None` if either input has zero variance or
/// fewer than two points.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson matrix between models' per-tag AP lists. Tags undefined for
/// either model of a pair are dropped for that pair. The diagonal is 1.
pub fn per_tag_correlation(aps: &[Vec<Option<f64>>]) -> Result<Vec<Vec<Option<f64>>>> {
    if aps.len() < 2 {
        return Err(Error::EmptyInput("correlation needs at least two models".into()));
    }
    let n_tags = aps[0].len();
    if aps.iter().any(|a| a.len() != n_tags) {
        return Err(Error::LengthMismatch("models have different tag counts".into()));
    }
    let m = aps.len();
    let mut out = vec![vec![None; m]; m];
    for i in 0..m {
        out[i][i] = Some(1.0);
        for j in i + 1..m {
            let (x, y): (Vec<f64>, Vec<f64>) = aps[i]
                .iter()
                .zip(&aps[j])
                .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
                .unzip();
            let r = pearson(&x, &y);
            out[i][j] = r;
            out[j][i] = r;
        }
    }
    Ok(out)
}

pub fn correlation_csv(names: &[String], matrix: &[Vec<Option<f64>>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (name, row) in names.iter().zip(matrix) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| fmt_opt(*v)));
        w.write_record(&rec).map_err(csv_err)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::InvalidRecord(e.to_string()))?).expect("utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub problem_id: String,
    pub tag: String,
    pub probability: f64,
}

/// Confident predictions for tags a problem does not carry, most
/// confident first.
pub fn suggest_missing_tags(
    predictions: &BTreeMap<String, TagProbabilities>,
    labels: &BTreeMap<String, Vec<bool>>,
    tags: &[String],
    confidence: f64,
) -> Vec<Suggestion> {
    let mut out = Vec::new();
    for (problem, probs) in predictions {
        let present = labels.get(problem);
        for (j, &p) in probs.iter().enumerate() {
            let labeled = present.is_some_and(|l| l[j]);
            if p >= confidence && !labeled {
                out.push(Suggestion {
                    problem_id: problem.clone(),
                    tag: tags[j].clone(),
                    probability: p,
                });
            }
        }
    }
    out.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then_with(|| a.problem_id.cmp(&b.problem_id))
            .then_with(|| a.tag.cmp(&b.tag))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_examples() {
        let ap = pr_auc(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
        assert!((ap - (0.5 + 2.0 / 3.0 * 0.5)).abs() < 1e-15);
        assert_eq!(pr_auc(&[0.9, 0.8, 0.1], &[true, true, false]), Some(1.0));
        let ap = pr_auc(&[0.5; 5], &[true, false, true, false, false]).unwrap();
        assert!((ap - 0.4).abs() < 1e-15);
        assert_eq!(pr_auc(&[0.3, 0.2], &[false, false]), None);
    }

    #[test]
    fn prf_examples() {
        let (p, r, f) = precision_recall_f1(&[true, true, true, false], &[true, true, false, true]);
        assert!((p - 2.0 / 3.0).abs() < 1e-15 && (r - 2.0 / 3.0).abs() < 1e-15 && (f - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(precision_recall_f1(&[false, false], &[true, false]), (1.0, 0.0, 0.0));
        assert_eq!(precision_recall_f1(&[true, false], &[true, false]), (1.0, 1.0, 1.0));
    }

    #[test]
    fn threshold_examples() {
        let t = fit_threshold(&[0.9, 0.4, 0.2], &[true, true, false]).unwrap();
        assert!((t - 0.3).abs() < 1e-12);
        assert_eq!(fit_threshold(&[0.9, 0.4, 0.2], &[true, true, true]), Some(0.0));
        assert_eq!(fit_threshold(&[0.9, 0.4], &[false, false]), None);
        let t = fit_thresholds(&["a".into()], &[vec![0.2], vec![0.3]], &[vec![false], vec![false]]).unwrap();
        assert_eq!(t.thresholds, [1.0]);
    }

    fn report(preds: &[(&str, Vec<f64>)], labels: &[(&str, Vec<bool>)], th: &ThresholdVector) -> Result<EvalReport> {
        let p = preds.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        let l = labels.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        evaluate_split(&p, &l, th)
    }

    #[test]
    fn evaluate_examples() {
        let th = ThresholdVector::uniform(&["a".into()], 0.65);
        let r = report(
            &[("1", vec![0.9]), ("2", vec![0.8]), ("3", vec![0.7]), ("4", vec![0.6])],
            &[("1", vec![true]), ("2", vec![false]), ("3", vec![true]), ("4", vec![false])],
            &th,
        )
        .unwrap();
        assert!((r.macro_ap.unwrap() - 0.8333333333333333).abs() < 1e-12);

        let th = ThresholdVector::uniform(&["a".into(), "b".into()], 1.0);
        let r = report(
            &[("1", vec![0.9, 0.2]), ("2", vec![0.1, 0.3])],
            &[("1", vec![true, false]), ("2", vec![false, false])],
            &th,
        )
        .unwrap();
        assert_eq!(r.macro_ap, Some(1.0));
        assert_eq!(r.tags[0].recall, 0.0);
        assert_eq!(r.macro_recall, Some(0.0));
        assert!(r.to_csv().unwrap().lines().last().unwrap().starts_with("macro,1,"));

        let err = report(&[("1", vec![0.9, 0.2])], &[("x", vec![true, false])], &th).unwrap_err();
        assert!(err.to_string().contains('1'));
    }

    #[test]
    fn correlation_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
        let m = per_tag_correlation(&[
            vec![Some(0.1), Some(0.5), None, Some(0.9)],
            vec![Some(0.2), Some(0.4), Some(0.3), Some(0.8)],
        ])
        .unwrap();
        assert_eq!(m[0][0], Some(1.0));
        assert_eq!(m[0][1], m[1][0]);
        assert!(per_tag_correlation(&[vec![Some(1.0)]]).is_err());
    }

    #[test]
    fn suggestions() {
        let tags = vec!["a".to_string(), "b".to_string()];
        let preds = [("p".to_string(), vec![0.95, 0.97])].into_iter().collect();
        let labels = [("p".to_string(), vec![false, true])].into_iter().collect();
        let s = suggest_missing_tags(&preds, &labels, &tags, 0.9);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].tag, "a");
    }
}
