//! Domain data model and loaders for question manifests, prediction logs
//! and discipline maps.
//!
//! All indexes are sorted (`BTreeMap`, id-sorted vectors) so that permuting
//! the lines of an input file yields an identical in-memory index.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Validation,
    Test,
}

/// One multiple-choice question. `question` and `choice_texts` are optional
/// and only needed when prompting live models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub subject_id: String,
    pub split: Split,
    pub choices: Vec<String>,
    pub correct_choice: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choice_texts: Option<Vec<String>>,
}

impl QuestionRecord {
    fn check(&self) -> std::result::Result<(), String> {
        let who = format!("{}/{}", self.subject_id, self.question_id);
        if self.choices.len() < 2 {
            return Err(format!("{who}: needs at least 2 choices"));
        }
        for (i, c) in self.choices.iter().enumerate() {
            if self.choices[..i].contains(c) {
                return Err(format!("{who}: duplicate choice {c:?}"));
            }
        }
        if !self.choices.contains(&self.correct_choice) {
            return Err(format!(
                "{who}: correct_choice {:?} not in choices {:?}",
                self.correct_choice, self.choices
            ));
        }
        if let Some(texts) = &self.choice_texts {
            if texts.len() != self.choices.len() {
                return Err(format!("{who}: choice_texts length differs from choices"));
            }
        }
        Ok(())
    }

    pub fn choice_index(&self, label: &str) -> Option<usize> {
        self.choices.iter().position(|c| c == label)
    }
}

/// Questions of one subject, each split sorted by `question_id`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SubjectQuestions {
    pub validation: Vec<QuestionRecord>,
    pub test: Vec<QuestionRecord>,
}

impl SubjectQuestions {
    pub fn split(&self, split: Split) -> &[QuestionRecord] {
        match split {
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn get(&self, question_id: &str) -> Option<&QuestionRecord> {
        [&self.validation, &self.test].into_iter().find_map(|qs| {
            qs.binary_search_by(|q| q.question_id.as_str().cmp(question_id))
                .ok()
                .map(|i| &qs[i])
        })
    }

    pub fn len(&self) -> usize {
        self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    subjects: BTreeMap<String, SubjectQuestions>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub validation: usize,
    pub test: usize,
}

impl Dataset {
    /// Builds an index from question records, enforcing every record invariant.
    pub fn from_records(records: Vec<QuestionRecord>) -> Result<Self> {
        Self::build(records.into_iter().map(|r| (0, r)).collect(), None)
    }

    fn build(records: Vec<(usize, QuestionRecord)>, path: Option<&Path>) -> Result<Self> {
        let err = |line: usize, msg: String| match path {
            Some(p) => Error::record(p, line, msg),
            None => Error::Input(msg),
        };
        let mut subjects: BTreeMap<String, SubjectQuestions> = BTreeMap::new();
        for (line, rec) in records {
            rec.check().map_err(|m| err(line, m))?;
            let entry = subjects.entry(rec.subject_id.clone()).or_default();
            match rec.split {
                Split::Validation => entry.validation.push(rec),
                Split::Test => entry.test.push(rec),
            }
        }
        for (subject, qs) in subjects.iter_mut() {
            qs.validation.sort_by(|a, b| a.question_id.cmp(&b.question_id));
            qs.test.sort_by(|a, b| a.question_id.cmp(&b.question_id));
            let mut ids: Vec<&str> = qs
                .validation
                .iter()
                .chain(&qs.test)
                .map(|q| q.question_id.as_str())
                .collect();
            ids.sort_unstable();
            if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
                return Err(err(
                    0,
                    format!("duplicate question id {subject}/{}", w[0]),
                ));
            }
        }
        Ok(Dataset { subjects })
    }

    pub fn subjects(&self) -> &BTreeMap<String, SubjectQuestions> {
        &self.subjects
    }

    pub fn subject(&self, subject_id: &str) -> Option<&SubjectQuestions> {
        self.subjects.get(subject_id)
    }

    pub fn subject_ids(&self) -> impl Iterator<Item = &str> {
        self.subjects.keys().map(String::as_str)
    }

    pub fn question(&self, subject_id: &str, question_id: &str) -> Option<&QuestionRecord> {
        self.subjects.get(subject_id)?.get(question_id)
    }

    pub fn counts(&self) -> BTreeMap<&str, SplitCounts> {
        self.subjects
            .iter()
            .map(|(s, qs)| {
                (
                    s.as_str(),
                    SplitCounts {
                        validation: qs.validation.len(),
                        test: qs.test.len(),
                    },
                )
            })
            .collect()
    }

    pub fn totals(&self) -> SplitCounts {
        self.counts()
            .values()
            .fold(SplitCounts::default(), |acc, c| SplitCounts {
                validation: acc.validation + c.validation,
                test: acc.test + c.test,
            })
    }

    /// All records in canonical order (subject, split, question id).
    pub fn records(&self) -> impl Iterator<Item = &QuestionRecord> {
        self.subjects
            .values()
            .flat_map(|qs| qs.validation.iter().chain(&qs.test))
    }
}

/// Loads a question manifest. Duplicate ids and invalid answer keys are
/// load errors.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let records: Vec<(usize, QuestionRecord)> = jsonl::read_records(path)?;
    let mut seen: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for (line, rec) in &records {
        if let Some(first) = seen.insert((&rec.subject_id, &rec.question_id), *line) {
            return Err(Error::record(
                path,
                *line,
                format!(
                    "duplicate question {}/{} (first seen on line {first})",
                    rec.subject_id, rec.question_id
                ),
            ));
        }
    }
    Dataset::build(records, Some(path))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub model_id: String,
    pub subject_id: String,
    pub question_id: String,
    pub predicted_choice: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    #[serde(default)]
    pub params: String,
    #[serde(default)]
    pub notes: String,
}

/// The models under consideration, in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelPool {
    model_ids: Vec<String>,
    pub metadata: BTreeMap<String, ModelMeta>,
}

impl ModelPool {
    pub fn new<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut model_ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        if model_ids.is_empty() {
            return Err(Error::Input("model pool is empty".into()));
        }
        model_ids.sort();
        if let Some(w) = model_ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Input(format!("duplicate model id {}", w[0])));
        }
        Ok(ModelPool {
            model_ids,
            metadata: BTreeMap::new(),
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn len(&self) -> usize {
        self.model_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model_ids.is_empty()
    }

    pub fn contains(&self, model_id: &str) -> bool {
        self.model_ids
            .binary_search_by(|m| m.as_str().cmp(model_id))
            .is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub choice: String,
    pub raw_response: Option<String>,
}

type SubjectAnswers = BTreeMap<String, Prediction>;

/// Predictions indexed model -> subject -> question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionSet {
    pool: ModelPool,
    answers: BTreeMap<String, BTreeMap<String, SubjectAnswers>>,
}

impl PredictionSet {
    /// Cross-validates records against `dataset`. Unknown questions,
    /// out-of-range choices and duplicates are errors.
    pub fn from_records(records: Vec<PredictionRecord>, dataset: &Dataset) -> Result<Self> {
        Self::build(records.into_iter().map(|r| (0, r)).collect(), dataset, None)
    }

    fn build(
        records: Vec<(usize, PredictionRecord)>,
        dataset: &Dataset,
        path: Option<&Path>,
    ) -> Result<Self> {
        let err = |line: usize, msg: String| match path {
            Some(p) => Error::record(p, line, msg),
            None => Error::Input(msg),
        };
        let mut answers: BTreeMap<String, BTreeMap<String, SubjectAnswers>> = BTreeMap::new();
        for (line, rec) in records {
            let Some(question) = dataset.question(&rec.subject_id, &rec.question_id) else {
                return Err(err(
                    line,
                    format!(
                        "model {} references unknown question {}/{}",
                        rec.model_id, rec.subject_id, rec.question_id
                    ),
                ));
            };
            if question.choice_index(&rec.predicted_choice).is_none() {
                return Err(err(
                    line,
                    format!(
                        "model {} predicted {:?} for {}/{}, not among choices {:?}",
                        rec.model_id,
                        rec.predicted_choice,
                        rec.subject_id,
                        rec.question_id,
                        question.choices
                    ),
                ));
            }
            let slot = answers
                .entry(rec.model_id.clone())
                .or_default()
                .entry(rec.subject_id.clone())
                .or_default();
            if slot.contains_key(&rec.question_id) {
                return Err(err(
                    line,
                    format!(
                        "duplicate prediction by model {} for {}/{}",
                        rec.model_id, rec.subject_id, rec.question_id
                    ),
                ));
            }
            slot.insert(
                rec.question_id,
                Prediction {
                    choice: rec.predicted_choice,
                    raw_response: rec.raw_response,
                },
            );
        }
        let pool = ModelPool::new(answers.keys().cloned())?;
        Ok(PredictionSet { pool, answers })
    }

    pub fn pool(&self) -> &ModelPool {
        &self.pool
    }

    pub fn get(&self, model_id: &str, subject_id: &str, question_id: &str) -> Option<&Prediction> {
        self.answers.get(model_id)?.get(subject_id)?.get(question_id)
    }

    pub fn choice(&self, model_id: &str, subject_id: &str, question_id: &str) -> Option<&str> {
        self.get(model_id, subject_id, question_id)
            .map(|p| p.choice.as_str())
    }

    pub fn subject_answers(&self, model_id: &str, subject_id: &str) -> Option<&SubjectAnswers> {
        self.answers.get(model_id)?.get(subject_id)
    }

    /// Every model's answer to one question, keyed by model id.
    pub fn votes(&self, subject_id: &str, question_id: &str) -> BTreeMap<&str, &str> {
        self.pool
            .ids()
            .iter()
            .filter_map(|m| {
                self.choice(m, subject_id, question_id)
                    .map(|c| (m.as_str(), c))
            })
            .collect()
    }

    /// Records in canonical order (model, subject, question).
    pub fn records(&self) -> Vec<PredictionRecord> {
        let mut out = Vec::new();
        for (model, subjects) in &self.answers {
            for (subject, qs) in subjects {
                for (qid, p) in qs {
                    out.push(PredictionRecord {
                        model_id: model.clone(),
                        subject_id: subject.clone(),
                        question_id: qid.clone(),
                        predicted_choice: p.choice.clone(),
                        raw_response: p.raw_response.clone(),
                    });
                }
            }
        }
        out
    }

    /// Fraction of each subject's questions (both splits) answered per model.
    pub fn completeness(&self, dataset: &Dataset) -> Completeness {
        let mut cells = BTreeMap::new();
        for model in self.pool.ids() {
            let row: BTreeMap<String, f64> = dataset
                .subjects()
                .iter()
                .map(|(subject, qs)| {
                    let answered = self
                        .subject_answers(model, subject)
                        .map_or(0, |a| a.len());
                    let frac = if qs.is_empty() {
                        1.0
                    } else {
                        answered as f64 / qs.len() as f64
                    };
                    (subject.clone(), frac)
                })
                .collect();
            cells.insert(model.clone(), row);
        }
        Completeness { cells }
    }
}

/// model -> subject -> fraction of questions answered, in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Completeness {
    pub cells: BTreeMap<String, BTreeMap<String, f64>>,
}

impl Completeness {
    pub fn incomplete(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.cells.iter().flat_map(|(m, row)| {
            row.iter()
                .filter(|(_, &f)| f < 1.0)
                .map(move |(s, &f)| (m.as_str(), s.as_str(), f))
        })
    }
}

/// Loads a prediction log and checks it against `dataset`. Incomplete
/// coverage is reported with a warning, not an error.
pub fn load_predictions(path: &Path, dataset: &Dataset) -> Result<(PredictionSet, Completeness)> {
    let records: Vec<(usize, PredictionRecord)> = jsonl::read_records(path)?;
    let set = PredictionSet::build(records, dataset, Some(path))?;
    let completeness = set.completeness(dataset);
    for (model, subject, frac) in completeness.incomplete() {
        warn!("model {model} answered {:.1}% of subject {subject}", frac * 100.0);
    }
    Ok((set, completeness))
}

/// Fraction of `subject_id`'s validation questions `model_id` answered
/// correctly. Missing predictions count as incorrect.
pub fn validation_accuracy(
    predictions: &PredictionSet,
    dataset: &Dataset,
    model_id: &str,
    subject_id: &str,
) -> Result<f64> {
    let qs = dataset
        .subject(subject_id)
        .ok_or_else(|| Error::Input(format!("unknown subject {subject_id}")))?;
    split_accuracy(predictions, model_id, &qs.validation).ok_or_else(|| {
        Error::Input(format!(
            "subject {subject_id} has no validation questions; cannot weight models"
        ))
    })
}

/// Accuracy of one model over a list of questions; `None` if the list is empty.
pub fn split_accuracy(
    predictions: &PredictionSet,
    model_id: &str,
    questions: &[QuestionRecord],
) -> Option<f64> {
    if questions.is_empty() {
        return None;
    }
    let correct = count_correct(predictions, model_id, questions);
    Some(correct as f64 / questions.len() as f64)
}

pub(crate) fn count_correct(
    predictions: &PredictionSet,
    model_id: &str,
    questions: &[QuestionRecord],
) -> usize {
    questions
        .iter()
        .filter(|q| {
            predictions.choice(model_id, &q.subject_id, &q.question_id)
                == Some(q.correct_choice.as_str())
        })
        .count()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct DisciplineRecord {
    subject_id: String,
    discipline_id: String,
}

/// subject -> discipline. Every subject of a dataset must be mapped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DisciplineMap {
    entries: BTreeMap<String, String>,
}

impl DisciplineMap {
    pub fn new(entries: BTreeMap<String, String>) -> Self {
        DisciplineMap { entries }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (line, rec) in jsonl::read_records::<DisciplineRecord>(path)? {
            match entries.get(&rec.subject_id) {
                Some(prev) if prev != &rec.discipline_id => {
                    return Err(Error::record(
                        path,
                        line,
                        format!(
                            "subject {} mapped to both {prev} and {}",
                            rec.subject_id, rec.discipline_id
                        ),
                    ))
                }
                _ => {
                    entries.insert(rec.subject_id, rec.discipline_id);
                }
            }
        }
        Ok(DisciplineMap { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let records: Vec<DisciplineRecord> = self
            .entries
            .iter()
            .map(|(s, d)| DisciplineRecord {
                subject_id: s.clone(),
                discipline_id: d.clone(),
            })
            .collect();
        jsonl::write_records(path, &records)
    }

    pub fn discipline_of(&self, subject_id: &str) -> Option<&str> {
        self.entries.get(subject_id).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    /// Errors if any subject of `dataset` has no discipline entry.
    pub fn check_covers(&self, dataset: &Dataset) -> Result<()> {
        let missing: Vec<&str> = dataset
            .subject_ids()
            .filter(|s| !self.entries.contains_key(*s))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Input(format!(
                "subjects without a discipline entry: {}",
                missing.join(", ")
            )))
        }
    }
}
