//! Per (model, subject) fingerprint vectors and cosine geometry.
//!
//! Fingerprints are built from the validation split only and stored
//! L2-normalized (or as the zero vector when the raw aggregate is zero).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::FingerprintStrategy;
use crate::error::{Error, Result};
use crate::ingest::{Dataset, PredictionSet};
use crate::jsonl;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintVector {
    pub model_id: String,
    pub subject_id: String,
    pub strategy: FingerprintStrategy,
    pub vector: Vec<f64>,
}

impl FingerprintVector {
    /// Wraps `raw`, normalizing it to unit length.
    pub fn normalized(
        model_id: impl Into<String>,
        subject_id: impl Into<String>,
        strategy: FingerprintStrategy,
        mut raw: Vec<f64>,
    ) -> Self {
        let norm = l2_norm(&raw);
        if norm > 0.0 {
            raw.iter_mut().for_each(|x| *x /= norm);
        }
        FingerprintVector {
            model_id: model_id.into(),
            subject_id: subject_id.into(),
            strategy,
            vector: raw,
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn is_zero(&self) -> bool {
        self.vector.iter().all(|&x| x == 0.0)
    }
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Concatenated one-hot blocks of the model's validation answers, questions
/// ordered by id. A missing answer contributes an all-zero block.
pub fn answer_pattern_fingerprint(
    predictions: &PredictionSet,
    dataset: &Dataset,
    model_id: &str,
    subject_id: &str,
) -> Result<FingerprintVector> {
    let qs = dataset
        .subject(subject_id)
        .ok_or_else(|| Error::Input(format!("unknown subject {subject_id}")))?;
    if qs.validation.is_empty() {
        return Err(Error::Input(format!(
            "subject {subject_id} has no validation questions to fingerprint"
        )));
    }
    let dim: usize = qs.validation.iter().map(|q| q.choices.len()).sum();
    let mut raw = vec![0.0; dim];
    let mut offset = 0;
    for q in &qs.validation {
        if let Some(choice) = predictions.choice(model_id, subject_id, &q.question_id) {
            // validated at load
            let idx = q.choice_index(choice).expect("prediction among choices");
            raw[offset + idx] = 1.0;
        }
        offset += q.choices.len();
    }
    Ok(FingerprintVector::normalized(
        model_id,
        subject_id,
        FingerprintStrategy::AnswerPattern,
        raw,
    ))
}

/// One line of an embedding file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub model_id: String,
    pub subject_id: String,
    pub question_id: String,
    pub vector: Vec<f64>,
}

/// Per-response embeddings grouped by (model, subject), each group sorted
/// by question id.
/// Embeddings of one (model, subject) cell: (question id, vector) pairs.
type ResponseGroup = Vec<(String, Vec<f64>)>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    groups: BTreeMap<(String, String), ResponseGroup>,
}

impl EmbeddingIndex {
    pub fn from_records(records: Vec<EmbeddingRecord>) -> Result<Self> {
        Self::build(records.into_iter().map(|r| (0, r)).collect(), None)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::build(jsonl::read_records(path)?, Some(path))
    }

    fn build(records: Vec<(usize, EmbeddingRecord)>, path: Option<&Path>) -> Result<Self> {
        let err = |line: usize, msg: String| match path {
            Some(p) => Error::record(p, line, msg),
            None => Error::Input(msg),
        };
        let mut dim = None;
        let mut groups: BTreeMap<(String, String), ResponseGroup> = BTreeMap::new();
        for (line, rec) in records {
            let d = *dim.get_or_insert(rec.vector.len());
            if rec.vector.len() != d {
                return Err(err(
                    line,
                    format!(
                        "embedding for {}/{}/{} has dimension {}, expected {d}",
                        rec.model_id,
                        rec.subject_id,
                        rec.question_id,
                        rec.vector.len()
                    ),
                ));
            }
            if rec.vector.iter().any(|x| !x.is_finite()) {
                return Err(err(line, "embedding has non-finite components".into()));
            }
            groups
                .entry((rec.model_id, rec.subject_id))
                .or_default()
                .push((rec.question_id, rec.vector));
        }
        for (key, rows) in groups.iter_mut() {
            rows.sort_by(|a, b| a.0.cmp(&b.0));
            if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(err(
                    0,
                    format!("duplicate embedding for {}/{}/{}", key.0, key.1, w[0].0),
                ));
            }
        }
        Ok(EmbeddingIndex {
            dim: dim.unwrap_or(0),
            groups,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Drops every record that is not a validation question of `dataset`.
    pub fn restrict_to_validation(mut self, dataset: &Dataset) -> Self {
        for ((_, subject), rows) in self.groups.iter_mut() {
            let Some(qs) = dataset.subject(subject) else {
                rows.clear();
                continue;
            };
            rows.retain(|(qid, _)| {
                qs.validation
                    .binary_search_by(|q| q.question_id.as_str().cmp(qid))
                    .is_ok()
            });
        }
        self.groups.retain(|_, rows| !rows.is_empty());
        self
    }

    pub fn responses(&self, model_id: &str, subject_id: &str) -> Option<&[(String, Vec<f64>)]> {
        self.groups
            .get(&(model_id.to_string(), subject_id.to_string()))
            .map(Vec::as_slice)
    }
}

/// Mean of the model's per-response embeddings on a subject, normalized.
pub fn external_embedding_fingerprint(
    embeddings: &EmbeddingIndex,
    model_id: &str,
    subject_id: &str,
) -> Result<FingerprintVector> {
    let rows = embeddings
        .responses(model_id, subject_id)
        .filter(|r| !r.is_empty())
        .ok_or_else(|| {
            Error::Input(format!(
                "no embeddings for model {model_id} on subject {subject_id}"
            ))
        })?;
    let mut mean = vec![0.0; embeddings.dim()];
    for (_, v) in rows {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = rows.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(FingerprintVector::normalized(
        model_id,
        subject_id,
        FingerprintStrategy::ExternalEmbedding,
        mean,
    ))
}

/// `1 - cos(a, b)`, clamped to `[0, 2]`. A zero vector is at distance 1
/// from everything.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(1.0);
    }
    let cos = (dot / (na * nb).sqrt()).clamp(-1.0, 1.0);
    Ok((1.0 - cos).clamp(0.0, 2.0))
}

/// Fingerprints for every pool model on every subject: subject -> model -> vector.
pub type FingerprintSet = BTreeMap<String, BTreeMap<String, FingerprintVector>>;

/// Builds fingerprints for the whole pool with the chosen strategy.
/// `embeddings` is required for [`FingerprintStrategy::ExternalEmbedding`].
pub fn build_fingerprints(
    predictions: &PredictionSet,
    dataset: &Dataset,
    strategy: FingerprintStrategy,
    embeddings: Option<&EmbeddingIndex>,
) -> Result<FingerprintSet> {
    use rayon::prelude::*;

    let subjects: Vec<&str> = dataset.subject_ids().collect();
    let rows: Vec<(String, BTreeMap<String, FingerprintVector>)> = subjects
        .par_iter()
        .map(|&subject| {
            let mut row = BTreeMap::new();
            for model in predictions.pool().ids() {
                let fp = match strategy {
                    FingerprintStrategy::AnswerPattern => {
                        answer_pattern_fingerprint(predictions, dataset, model, subject)?
                    }
                    FingerprintStrategy::ExternalEmbedding => {
                        let emb = embeddings.ok_or_else(|| {
                            Error::Input(
                                "external_embedding fingerprints need an embedding file".into(),
                            )
                        })?;
                        external_embedding_fingerprint(emb, model, subject)?
                    }
                };
                row.insert(model.clone(), fp);
            }
            Ok((subject.to_string(), row))
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{PredictionRecord, QuestionRecord, Split};

    fn dataset(n_val: usize) -> Dataset {
        let recs = (0..n_val)
            .map(|i| QuestionRecord {
                question_id: format!("q{i}"),
                subject_id: "s".into(),
                split: Split::Validation,
                choices: ["A", "B", "C", "D"].map(String::from).to_vec(),
                correct_choice: "A".into(),
                question: None,
                choice_texts: None,
            })
            .collect();
        Dataset::from_records(recs).unwrap()
    }

    fn preds(sheets: &[(&str, &[&str])]) -> Vec<PredictionRecord> {
        sheets
            .iter()
            .flat_map(|(m, answers)| {
                answers.iter().enumerate().map(move |(i, a)| PredictionRecord {
                    model_id: m.to_string(),
                    subject_id: "s".into(),
                    question_id: format!("q{i}"),
                    predicted_choice: a.to_string(),
                    raw_response: None,
                })
            })
            .collect()
    }

    #[test]
    fn one_hot_blocks() {
        let ds = dataset(2);
        let set = PredictionSet::from_records(preds(&[("m", &["A", "C"])]), &ds).unwrap();
        let fp = answer_pattern_fingerprint(&set, &ds, "m", "s").unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert_eq!(fp.vector, vec![h, 0.0, 0.0, 0.0, 0.0, 0.0, h, 0.0]);
        assert!((l2_norm(&fp.vector) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_and_disjoint_sheets() {
        let ds = dataset(3);
        let set = PredictionSet::from_records(
            preds(&[("a", &["A", "B", "C"]), ("b", &["A", "B", "C"]), ("c", &["B", "C", "D"])]),
            &ds,
        )
        .unwrap();
        let fa = answer_pattern_fingerprint(&set, &ds, "a", "s").unwrap();
        let fb = answer_pattern_fingerprint(&set, &ds, "b", "s").unwrap();
        let fc = answer_pattern_fingerprint(&set, &ds, "c", "s").unwrap();
        assert_eq!(fa.vector, fb.vector);
        assert!(cosine_distance(&fa.vector, &fb.vector).unwrap().abs() < 1e-12);
        assert_eq!(cosine_distance(&fa.vector, &fc.vector).unwrap(), 1.0);
    }

    #[test]
    fn missing_model_is_zero_vector() {
        let ds = dataset(2);
        let set = PredictionSet::from_records(preds(&[("a", &["A", "B"])]), &ds).unwrap();
        let fp = answer_pattern_fingerprint(&set, &ds, "ghost", "s").unwrap();
        assert!(fp.is_zero());
        assert_eq!(cosine_distance(&fp.vector, &fp.vector).unwrap(), 1.0);
    }

    #[test]
    fn embedding_mean_then_normalize() {
        let rec = |q: &str, v: Vec<f64>| EmbeddingRecord {
            model_id: "m".into(),
            subject_id: "s".into(),
            question_id: q.into(),
            vector: v,
        };
        let idx =
            EmbeddingIndex::from_records(vec![rec("q1", vec![1.0, 0.0]), rec("q0", vec![0.0, 1.0])])
                .unwrap();
        let fp = external_embedding_fingerprint(&idx, "m", "s").unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((fp.vector[0] - h).abs() < 1e-12);
        assert!((fp.vector[1] - h).abs() < 1e-12);

        let single = EmbeddingIndex::from_records(vec![rec("q0", vec![3.0, 4.0])]).unwrap();
        let fp = external_embedding_fingerprint(&single, "m", "s").unwrap();
        assert_eq!(fp.vector, vec![0.6, 0.8]);

        assert!(external_embedding_fingerprint(&single, "m", "other").is_err());
        assert!(EmbeddingIndex::from_records(vec![rec("q0", vec![1.0]), rec("q1", vec![1.0, 2.0])])
            .is_err());
    }

    #[test]
    fn distance_examples() {
        assert_eq!(cosine_distance(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
        let d = cosine_distance(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((d - 0.292_893_218_813_452_5).abs() < 1e-12);
        assert!(cosine_distance(&[1.0], &[1.0, 0.0]).is_err());
        assert_eq!(cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
    }
}
