//! Weighted voting on test questions, the single-model and majority-vote
//! baselines, and evaluation reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{count_correct, Dataset, DisciplineMap, PredictionSet, QuestionRecord, Split};
use crate::select::SubjectEnsemble;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTally {
    pub subject_id: String,
    pub question_id: String,
    /// Score per choice, in the question's choice order.
    pub scores: Vec<(String, f64)>,
    pub winner: String,
}

/// Sums member weights per choice and returns the argmax. Ties go to the
/// choice listed first. Members without a vote contribute nothing.
pub fn weighted_vote(
    ensemble: &SubjectEnsemble,
    question: &QuestionRecord,
    votes: &BTreeMap<&str, &str>,
) -> Result<VoteTally> {
    let mut scores: Vec<(String, f64)> = question.choices.iter().map(|c| (c.clone(), 0.0)).collect();
    let mut any = false;
    for member in &ensemble.members {
        let Some(choice) = votes.get(member.model_id.as_str()) else {
            continue;
        };
        let idx = question.choice_index(choice).ok_or_else(|| {
            Error::Input(format!(
                "model {} voted {choice:?} on {}/{}, not a choice",
                member.model_id, question.subject_id, question.question_id
            ))
        })?;
        scores[idx].1 += member.weight;
        any = true;
    }
    if !any {
        return Err(Error::EmptyVote {
            subject_id: question.subject_id.clone(),
            question_id: question.question_id.clone(),
        });
    }
    let winner = argmax_first(scores.iter().map(|(_, s)| *s));
    Ok(VoteTally {
        subject_id: question.subject_id.clone(),
        question_id: question.question_id.clone(),
        winner: scores[winner].0.clone(),
        scores,
    })
}

fn argmax_first<T: PartialOrd + Copy>(values: impl Iterator<Item = T>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(0, |(i, _)| i)
}

/// subject -> question -> answer; `None` is an abstention (scored wrong).
pub type Answers = BTreeMap<String, BTreeMap<String, Option<String>>>;

/// Ensemble answers for every test question. A question on which no member
/// answered is an abstention.
pub fn predict_all(
    ensembles: &BTreeMap<String, SubjectEnsemble>,
    predictions: &PredictionSet,
    dataset: &Dataset,
) -> Result<Answers> {
    let subjects: Vec<(&String, _)> = dataset
        .subjects()
        .iter()
        .filter(|(_, qs)| !qs.test.is_empty())
        .collect();
    let rows: Vec<(String, BTreeMap<String, Option<String>>)> = subjects
        .par_iter()
        .map(|(subject, qs)| {
            let ensemble = ensembles
                .get(*subject)
                .ok_or_else(|| Error::Input(format!("no ensemble for subject {subject}")))?;
            let mut row = BTreeMap::new();
            for q in &qs.test {
                let votes = predictions.votes(subject, &q.question_id);
                let answer = match weighted_vote(ensemble, q, &votes) {
                    Ok(t) => Some(t.winner),
                    Err(Error::EmptyVote { .. }) => None,
                    Err(e) => return Err(e),
                };
                row.insert(q.question_id.clone(), answer);
            }
            Ok(((*subject).clone(), row))
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().collect())
}

/// One model's own test answers.
pub fn single_model_answers(predictions: &PredictionSet, dataset: &Dataset, model_id: &str) -> Answers {
    dataset
        .subjects()
        .iter()
        .filter(|(_, qs)| !qs.test.is_empty())
        .map(|(s, qs)| {
            let row = qs
                .test
                .iter()
                .map(|q| {
                    (
                        q.question_id.clone(),
                        predictions.choice(model_id, s, &q.question_id).map(str::to_string),
                    )
                })
                .collect();
            (s.clone(), row)
        })
        .collect()
}

fn best_model_on(predictions: &PredictionSet, dataset: &Dataset, split: Split) -> String {
    let mut best: Option<(&str, usize)> = None;
    for model in predictions.pool().ids() {
        let correct: usize = dataset
            .subjects()
            .values()
            .map(|qs| count_correct(predictions, model, qs.split(split)))
            .sum();
        // pool ids are sorted, so strict > keeps the smaller id on ties
        match best {
            Some((_, b)) if correct <= b => {}
            _ => best = Some((model, correct)),
        }
    }
    best.expect("pool is never empty").0.to_string()
}

/// Best single model by pooled test accuracy.
pub fn baseline_bsm(predictions: &PredictionSet, dataset: &Dataset) -> (String, Answers) {
    let model = best_model_on(predictions, dataset, Split::Test);
    let answers = single_model_answers(predictions, dataset, &model);
    (model, answers)
}

/// Best single model by pooled validation accuracy across all subjects.
pub fn baseline_bsmov(predictions: &PredictionSet, dataset: &Dataset) -> (String, Answers) {
    let model = best_model_on(predictions, dataset, Split::Validation);
    let answers = single_model_answers(predictions, dataset, &model);
    (model, answers)
}

/// Plurality vote over the whole pool with equal weights; ties go to the
/// earliest choice.
pub fn mvoting_answer(question: &QuestionRecord, votes: &BTreeMap<&str, &str>) -> Option<String> {
    let mut counts = vec![0usize; question.choices.len()];
    for choice in votes.values() {
        if let Some(i) = question.choice_index(choice) {
            counts[i] += 1;
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return None;
    }
    Some(question.choices[argmax_first(counts.iter().copied())].clone())
}

pub fn baseline_mvoting(predictions: &PredictionSet, dataset: &Dataset) -> Answers {
    dataset
        .subjects()
        .iter()
        .filter(|(_, qs)| !qs.test.is_empty())
        .map(|(s, qs)| {
            let row = qs
                .test
                .iter()
                .map(|q| {
                    let votes = predictions.votes(s, &q.question_id);
                    (q.question_id.clone(), mvoting_answer(q, &votes))
                })
                .collect();
            (s.clone(), row)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "BSM")]
    Bsm,
    #[serde(rename = "BSMoV")]
    Bsmov,
    #[serde(rename = "MVoting")]
    MVoting,
    #[serde(rename = "DFPE")]
    Dfpe,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Bsm, Method::Bsmov, Method::MVoting, Method::Dfpe];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bsm => "BSM",
            Method::Bsmov => "BSMoV",
            Method::MVoting => "MVoting",
            Method::Dfpe => "DFPE",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How per-discipline accuracy combines the discipline's subjects.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisciplineAggregation {
    /// Correct answers over questions, pooled across the discipline's subjects.
    #[default]
    Pooled,
    /// Unweighted mean of the discipline's subject accuracies.
    SubjectMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_model: Option<String>,
    pub correct: usize,
    pub total: usize,
    pub overall_accuracy: f64,
    pub subject_accuracy: BTreeMap<String, f64>,
    pub per_discipline: BTreeMap<String, f64>,
    /// Unweighted mean of `per_discipline`.
    pub discipline_accuracy_mean: f64,
}

/// Scores a set of answers against the test split.
pub fn score_answers(
    method: Method,
    answers: &Answers,
    dataset: &Dataset,
    disciplines: &DisciplineMap,
    aggregation: DisciplineAggregation,
) -> Result<MethodReport> {
    disciplines.check_covers(dataset)?;
    let mut subject_counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (subject, qs) in dataset.subjects() {
        if qs.test.is_empty() {
            continue;
        }
        let row = answers.get(subject);
        let correct = qs
            .test
            .iter()
            .filter(|q| {
                row.and_then(|r| r.get(&q.question_id))
                    .and_then(Option::as_deref)
                    == Some(q.correct_choice.as_str())
            })
            .count();
        subject_counts.insert(subject.clone(), (correct, qs.test.len()));
    }

    let correct: usize = subject_counts.values().map(|c| c.0).sum();
    let total: usize = subject_counts.values().map(|c| c.1).sum();
    let subject_accuracy: BTreeMap<String, f64> = subject_counts
        .iter()
        .map(|(s, (c, t))| (s.clone(), *c as f64 / *t as f64))
        .collect();

    let mut grouped: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in subject_counts.keys() {
        let d = disciplines.discipline_of(s).expect("coverage checked");
        grouped.entry(d).or_default().push(s);
    }
    let per_discipline: BTreeMap<String, f64> = grouped
        .into_iter()
        .map(|(d, subjects)| {
            let acc = match aggregation {
                DisciplineAggregation::Pooled => {
                    let (c, t) = subjects.iter().fold((0, 0), |(c, t), s| {
                        let (sc, st) = subject_counts[*s];
                        (c + sc, t + st)
                    });
                    c as f64 / t as f64
                }
                DisciplineAggregation::SubjectMean => {
                    subjects.iter().map(|s| subject_accuracy[*s]).sum::<f64>() / subjects.len() as f64
                }
            };
            (d.to_string(), acc)
        })
        .collect();
    let discipline_accuracy_mean = if per_discipline.is_empty() {
        0.0
    } else {
        per_discipline.values().sum::<f64>() / per_discipline.len() as f64
    };

    Ok(MethodReport {
        method,
        selected_model: None,
        correct,
        total,
        overall_accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        subject_accuracy,
        per_discipline,
        discipline_accuracy_mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participation {
    pub per_subject: BTreeMap<String, usize>,
    pub mean: f64,
    pub min: usize,
    pub max: usize,
    /// member count -> number of subjects with that many members.
    pub histogram: BTreeMap<usize, usize>,
}

pub fn participation_stats(ensembles: &BTreeMap<String, SubjectEnsemble>) -> Participation {
    let per_subject: BTreeMap<String, usize> = ensembles
        .iter()
        .map(|(s, e)| (s.clone(), e.members.len()))
        .collect();
    let mut histogram = BTreeMap::new();
    for &n in per_subject.values() {
        *histogram.entry(n).or_insert(0) += 1;
    }
    let n = per_subject.len();
    Participation {
        mean: if n == 0 {
            0.0
        } else {
            per_subject.values().sum::<usize>() as f64 / n as f64
        },
        min: per_subject.values().copied().min().unwrap_or(0),
        max: per_subject.values().copied().max().unwrap_or(0),
        per_subject,
        histogram,
    }
}

/// Symmetric count of subjects in which each pair of models are both
/// ensemble members. The diagonal is zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cooccurrence {
    pub models: Vec<String>,
    pub counts: Vec<Vec<u32>>,
}

impl Cooccurrence {
    pub fn get(&self, a: &str, b: &str) -> Option<u32> {
        let i = self.models.iter().position(|m| m == a)?;
        let j = self.models.iter().position(|m| m == b)?;
        Some(self.counts[i][j])
    }

    /// Square CSV table with model-id headers.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model");
        for m in &self.models {
            out.push(',');
            out.push_str(m);
        }
        out.push('\n');
        for (m, row) in self.models.iter().zip(&self.counts) {
            out.push_str(m);
            for c in row {
                write!(out, ",{c}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

pub fn cooccurrence_matrix(ensembles: &BTreeMap<String, SubjectEnsemble>, pool: &[String]) -> Cooccurrence {
    let index: BTreeMap<&str, usize> = pool.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
    let n = pool.len();
    let mut counts = vec![vec![0u32; n]; n];
    for e in ensembles.values() {
        let members: Vec<usize> = e.member_ids().filter_map(|m| index.get(m).copied()).collect();
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                counts[i][j] += 1;
                counts[j][i] += 1;
            }
        }
    }
    Cooccurrence {
        models: pool.to_vec(),
        counts,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub discipline_aggregation: DisciplineAggregation,
    /// In table order: BSM, BSMoV, MVoting, DFPE.
    pub methods: Vec<MethodReport>,
    pub participation: Participation,
    pub cooccurrence: Cooccurrence,
}

impl EvalReport {
    pub fn method(&self, method: Method) -> &MethodReport {
        self.methods
            .iter()
            .find(|m| m.method == method)
            .expect("every method is reported")
    }
}

/// DFPE and all baselines on the test split, plus participation and
/// co-occurrence statistics.
pub fn evaluate(
    predictions: &PredictionSet,
    dataset: &Dataset,
    disciplines: &DisciplineMap,
    ensembles: &BTreeMap<String, SubjectEnsemble>,
    aggregation: DisciplineAggregation,
) -> Result<EvalReport> {
    disciplines.check_covers(dataset)?;
    let (bsm_model, bsm) = baseline_bsm(predictions, dataset);
    let (bsmov_model, bsmov) = baseline_bsmov(predictions, dataset);
    let mvoting = baseline_mvoting(predictions, dataset);
    let dfpe = predict_all(ensembles, predictions, dataset)?;

    let score = |m, a: &Answers| score_answers(m, a, dataset, disciplines, aggregation);
    let mut methods = vec![
        score(Method::Bsm, &bsm)?,
        score(Method::Bsmov, &bsmov)?,
        score(Method::MVoting, &mvoting)?,
        score(Method::Dfpe, &dfpe)?,
    ];
    methods[0].selected_model = Some(bsm_model);
    methods[1].selected_model = Some(bsmov_model);

    Ok(EvalReport {
        discipline_aggregation: aggregation,
        methods,
        participation: participation_stats(ensembles),
        cooccurrence: cooccurrence_matrix(ensembles, predictions.pool().ids()),
    })
}

/// Human-readable report: a method table (Model | Accuracy |
/// Discipline-Accuracy) followed by a per-discipline table with an Average row.
pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    writeln!(out, "{:<10} {:>9} {:>20}", "Model", "Accuracy", "Discipline-Accuracy").unwrap();
    for m in &report.methods {
        writeln!(
            out,
            "{:<10} {:>9.3} {:>20.3}",
            m.method.name(),
            m.overall_accuracy,
            m.discipline_accuracy_mean
        )
        .unwrap();
    }
    out.push('\n');

    let disciplines: BTreeSet<&String> = report
        .methods
        .iter()
        .flat_map(|m| m.per_discipline.keys())
        .collect();
    let width = disciplines.iter().map(|d| d.len()).max().unwrap_or(0).max(10);
    write!(out, "{:<width$}", "Discipline").unwrap();
    for m in &report.methods {
        write!(out, " {:>8}", m.method.name()).unwrap();
    }
    out.push('\n');
    for d in &disciplines {
        write!(out, "{:<width$}", d).unwrap();
        for m in &report.methods {
            match m.per_discipline.get(*d) {
                Some(v) => write!(out, " {v:>8.3}").unwrap(),
                None => write!(out, " {:>8}", "-").unwrap(),
            }
        }
        out.push('\n');
    }
    write!(out, "{:<width$}", "Average").unwrap();
    for m in &report.methods {
        write!(out, " {:>8.3}", m.discipline_accuracy_mean).unwrap();
    }
    out.push('\n');

    out.push('\n');
    let p = &report.participation;
    writeln!(
        out,
        "models per subject: mean {:.2}, min {}, max {}",
        p.mean, p.min, p.max
    )
    .unwrap();
    for m in &report.methods {
        if let Some(sel) = &m.selected_model {
            writeln!(out, "{} selects {}", m.method.name(), sel).unwrap();
        }
    }
    out
}
