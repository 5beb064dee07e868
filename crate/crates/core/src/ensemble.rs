//! Element-wise maximum of code-side and text-side problem predictions.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::aggregate::{predict_problem_code, AggregatorModel};
use crate::codegraph::ProgramGraph;
use crate::error::{Error, Result};
use crate::eval::{TagProbabilities, ThresholdVector};
use crate::ggnn::GgnnModel;
use crate::textmodel::TextModel;

pub fn ensemble_max(code: &[f64], text: &[f64]) -> Result<TagProbabilities> {
    if code.len() != text.len() {
        return Err(Error::LengthMismatch(format!("code {} vs text {}", code.len(), text.len())));
    }
    Ok(code.iter().zip(text).map(|(a, b)| a.max(*b)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub problem_id: String,
    /// `None` when the problem has no usable solutions.
    pub code: Option<TagProbabilities>,
    pub text: TagProbabilities,
    pub combined: TagProbabilities,
    pub text_only: bool,
}

/// The three trained members sharing one tag vocabulary.
pub struct Ensemble<'a> {
    pub ggnn: &'a GgnnModel,
    pub aggregator: &'a AggregatorModel,
    pub text: &'a TextModel,
}

impl<'a> Ensemble<'a> {
    pub fn new(ggnn: &'a GgnnModel, aggregator: &'a AggregatorModel, text: &'a TextModel) -> Result<Self> {
        let h = ggnn.tags.hash();
        if aggregator.tags.hash() != h {
            return Err(Error::VocabularyMismatch("GGNN vs aggregator".into()));
        }
        if text.tags.hash() != h {
            return Err(Error::VocabularyMismatch("GGNN vs text model".into()));
        }
        Ok(Self { ggnn, aggregator, text })
    }

    pub fn tags(&self) -> &[String] {
        &self.ggnn.tags.tags
    }

    pub fn predict_problem_full(
        &self,
        problem_id: &str,
        statement_latex: &str,
        graphs: &[&ProgramGraph],
    ) -> Result<EnsemblePrediction> {
        let text = self.text.predict_statement(statement_latex)?;
        let code = match predict_problem_code(problem_id, graphs, self.ggnn, self.aggregator) {
            Ok(p) => Some(p),
            Err(Error::NoUsableGraphs(_)) => None,
            Err(e) => return Err(e),
        };
        let combined = match &code {
            Some(c) => ensemble_max(c, &text)?,
            None => text.clone(),
        };
        Ok(EnsemblePrediction {
            problem_id: problem_id.to_string(),
            text_only: code.is_none(),
            code,
            text,
            combined,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagScores {
    pub code: Option<f64>,
    pub text: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub problem_id: String,
    pub text_only: bool,
    pub tags: std::collections::BTreeMap<String, TagScores>,
    pub suggested: Vec<String>,
}

impl PredictionRecord {
    pub fn new(pred: &EnsemblePrediction, tags: &[String], thresholds: &ThresholdVector) -> Result<Self> {
        if tags.len() != pred.combined.len() || thresholds.tags != tags {
            return Err(Error::VocabularyMismatch("prediction record tag order".into()));
        }
        let decided = thresholds.decide(&pred.combined);
        Ok(Self {
            problem_id: pred.problem_id.clone(),
            text_only: pred.text_only,
            tags: tags
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    let s = TagScores {
                        code: pred.code.as_ref().map(|c| c[j]),
                        text: pred.text[j],
                        combined: pred.combined[j],
                    };
                    (t.clone(), s)
                })
                .collect(),
            suggested: tags.iter().zip(decided).filter(|(_, d)| *d).map(|(t, _)| t.clone()).collect(),
        })
    }
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[PredictionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        assert_eq!(ensemble_max(&[0.2, 0.9], &[0.5, 0.1]).unwrap(), vec![0.5, 0.9]);
        assert!(matches!(ensemble_max(&[0.2], &[0.5, 0.1]), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn record_lists_suggested_tags() {
        let tags = vec!["a".to_string(), "b".to_string()];
        let pred = EnsemblePrediction {
            problem_id: "1A".into(),
            code: None,
            text: vec![0.7, 0.2],
            combined: vec![0.7, 0.2],
            text_only: true,
        };
        let th = ThresholdVector::uniform(&tags, 0.5);
        let r = PredictionRecord::new(&pred, &tags, &th).unwrap();
        assert_eq!(r.suggested, vec!["a"]);
        assert_eq!(r.tags["b"].code, None);
        let mut buf = vec![];
        write_jsonl(&mut buf, &[r]).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert!(line.ends_with('\n') && line.contains("\"text_only\":true"));
    }

    fn probs(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n)
    }

    proptest! {
        #[test]
        fn max_laws(a in probs(6), b in probs(6), c in probs(6)) {
            let ab = ensemble_max(&a, &b).unwrap();
            prop_assert_eq!(&ab, &ensemble_max(&b, &a).unwrap());
            prop_assert_eq!(ensemble_max(&a, &a).unwrap(), a.clone());
            prop_assert_eq!(
                ensemble_max(&ab, &c).unwrap(),
                ensemble_max(&a, &ensemble_max(&b, &c).unwrap()).unwrap()
            );
            for i in 0..6 {
                prop_assert!(ab[i] >= a[i] && ab[i] >= b[i]);
            }
        }

        #[test]
        fn monotone_in_each_input(a in probs(4), b in probs(4), i in 0usize..4, bump in 0.0f64..1.0) {
            let before = ensemble_max(&a, &b).unwrap();
            let mut a2 = a.clone();
            a2[i] = (a2[i] + bump).min(1.0);
            let after = ensemble_max(&a2, &b).unwrap();
            prop_assert!(after[i] >= before[i]);
        }
    }
}
