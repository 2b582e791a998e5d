//! Synthetic model pools with controllable accuracy and correlated errors.
//!
//! Each subject draws from its own ChaCha stream, so subjects can be
//! generated in parallel and the output depends only on the spec.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, DisciplineMap, PredictionRecord, PredictionSet, QuestionRecord, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationGroup {
    /// Model indices (0-based).
    pub members: Vec<usize>,
    /// Probability that a wrong member copies the group's shared wrong answer.
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPoolSpec {
    pub n_models: usize,
    pub n_subjects: usize,
    pub validation_per_subject: usize,
    pub test_per_subject: usize,
    #[serde(default = "default_choices")]
    pub choices_per_question: usize,
    /// model x subject accuracies. Takes precedence over `accuracy_range`.
    #[serde(default)]
    pub accuracy_matrix: Option<Vec<Vec<f64>>>,
    /// Draw each cell uniformly from `[lo, hi]` when no matrix is given.
    #[serde(default)]
    pub accuracy_range: Option<[f64; 2]>,
    /// Models outside every group answer independently.
    #[serde(default)]
    pub correlation_groups: Vec<CorrelationGroup>,
    #[serde(default = "default_disciplines")]
    pub n_disciplines: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_choices() -> usize {
    4
}

fn default_disciplines() -> usize {
    4
}

/// Stream id reserved for drawing the accuracy matrix.
const ACCURACY_STREAM: u64 = u64::MAX;

impl SyntheticPoolSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Open {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// `n_groups` contiguous, near-equal groups sharing wrong answers with
    /// probability `rho`.
    pub fn contiguous_groups(n_models: usize, n_groups: usize, rho: f64) -> Vec<CorrelationGroup> {
        let n_groups = n_groups.clamp(1, n_models.max(1));
        (0..n_groups)
            .map(|g| CorrelationGroup {
                members: (0..n_models).filter(|m| m * n_groups / n_models == g).collect(),
                rho,
            })
            .collect()
    }

    pub fn model_id(i: usize) -> String {
        format!("model_{i:02}")
    }

    pub fn subject_id(k: usize) -> String {
        format!("subject_{k:02}")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_models == 0 || self.n_subjects == 0 {
            return bad("n_models and n_subjects must be positive".into());
        }
        if self.choices_per_question < 2 || self.choices_per_question > 26 {
            return bad("choices_per_question must be in 2..=26".into());
        }
        if self.validation_per_subject == 0 {
            return bad("validation_per_subject must be positive".into());
        }
        if self.n_disciplines == 0 {
            return bad("n_disciplines must be positive".into());
        }
        match (&self.accuracy_matrix, self.accuracy_range) {
            (Some(m), _) => {
                if m.len() != self.n_models || m.iter().any(|row| row.len() != self.n_subjects) {
                    return bad(format!(
                        "accuracy_matrix must be {} x {}",
                        self.n_models, self.n_subjects
                    ));
                }
                if m.iter().flatten().any(|a| !(0.0..=1.0).contains(a)) {
                    return bad("accuracies must lie in [0, 1]".into());
                }
            }
            (None, Some([lo, hi])) => {
                if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                    return bad(format!("accuracy_range [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1"));
                }
            }
            (None, None) => return bad("give accuracy_matrix or accuracy_range".into()),
        }
        let mut seen = vec![false; self.n_models];
        for g in &self.correlation_groups {
            if !(0.0..=1.0).contains(&g.rho) {
                return bad(format!("rho must lie in [0, 1], got {}", g.rho));
            }
            for &m in &g.members {
                if m >= self.n_models {
                    return bad(format!("group member {m} out of range"));
                }
                if std::mem::replace(&mut seen[m], true) {
                    return bad(format!("model {m} is in more than one correlation group"));
                }
            }
        }
        Ok(())
    }

    /// The accuracy matrix, drawing it from the seed if only a range is given.
    pub fn accuracy(&self) -> Vec<Vec<f64>> {
        if let Some(m) = &self.accuracy_matrix {
            return m.clone();
        }
        let [lo, hi] = self.accuracy_range.unwrap_or([0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(ACCURACY_STREAM);
        (0..self.n_models)
            .map(|_| {
                (0..self.n_subjects)
                    .map(|_| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
                    .collect()
            })
            .collect()
    }

    fn labels(&self) -> Vec<String> {
        (0..self.choices_per_question)
            .map(|i| char::from(b'A' + i as u8).to_string())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPool {
    pub dataset: Dataset,
    pub predictions: PredictionSet,
    pub disciplines: DisciplineMap,
    pub accuracy: Vec<Vec<f64>>,
}

fn wrong_choice(rng: &mut ChaCha8Rng, n_choices: usize, correct: usize) -> usize {
    let k = rng.gen_range(0..n_choices - 1);
    if k >= correct {
        k + 1
    } else {
        k
    }
}

/// Generates a dataset and prediction log from `spec`.
///
/// Per question: a uniformly drawn correct answer; each model is right with
/// its (model, subject) accuracy; a wrong model in a correlation group
/// copies the group's shared wrong draw with probability `rho`, otherwise
/// picks a wrong answer uniformly.
pub fn generate(spec: &SyntheticPoolSpec) -> Result<SyntheticPool> {
    spec.validate()?;
    let accuracy = spec.accuracy();
    let labels = spec.labels();
    let c = labels.len();

    let mut group_of: Vec<Option<usize>> = vec![None; spec.n_models];
    for (g, group) in spec.correlation_groups.iter().enumerate() {
        for &m in &group.members {
            group_of[m] = Some(g);
        }
    }

    let per_subject: Vec<(Vec<QuestionRecord>, Vec<PredictionRecord>)> = (0..spec.n_subjects)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(k as u64);
            let subject = SyntheticPoolSpec::subject_id(k);
            let mut questions = Vec::new();
            let mut preds = Vec::new();
            let splits = [
                (Split::Validation, "v", spec.validation_per_subject),
                (Split::Test, "t", spec.test_per_subject),
            ];
            for (split, prefix, count) in splits {
                for l in 0..count {
                    let qid = format!("{prefix}{l:04}");
                    let correct = rng.gen_range(0..c);
                    let shared: Vec<usize> = spec
                        .correlation_groups
                        .iter()
                        .map(|_| wrong_choice(&mut rng, c, correct))
                        .collect();
                    for (m, acc_row) in accuracy.iter().enumerate() {
                        let answer = if rng.gen_bool(acc_row[k]) {
                            correct
                        } else {
                            match group_of[m] {
                                Some(g) if rng.gen_bool(spec.correlation_groups[g].rho) => shared[g],
                                _ => wrong_choice(&mut rng, c, correct),
                            }
                        };
                        preds.push(PredictionRecord {
                            model_id: SyntheticPoolSpec::model_id(m),
                            subject_id: subject.clone(),
                            question_id: qid.clone(),
                            predicted_choice: labels[answer].clone(),
                            raw_response: Some(labels[answer].clone()),
                        });
                    }
                    questions.push(QuestionRecord {
                        question_id: qid,
                        subject_id: subject.clone(),
                        split,
                        choices: labels.clone(),
                        correct_choice: labels[correct].clone(),
                        question: None,
                        choice_texts: None,
                    });
                }
            }
            (questions, preds)
        })
        .collect();

    let (questions, preds): (Vec<_>, Vec<_>) = per_subject.into_iter().unzip();
    let dataset = Dataset::from_records(questions.into_iter().flatten().collect())?;
    let predictions = PredictionSet::from_records(preds.into_iter().flatten().collect(), &dataset)?;
    let disciplines = DisciplineMap::new(
        (0..spec.n_subjects)
            .map(|k| {
                (
                    SyntheticPoolSpec::subject_id(k),
                    format!("discipline_{:02}", k % spec.n_disciplines),
                )
            })
            .collect(),
    );
    Ok(SyntheticPool {
        dataset,
        predictions,
        disciplines,
        accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyDeviation {
    pub model_id: String,
    pub subject_id: String,
    pub expected: f64,
    pub observed: f64,
    pub questions: usize,
    /// Binomial standard error `sqrt(p (1 - p) / n)`.
    pub sigma: f64,
    pub flagged: bool,
}

/// Number of standard errors beyond which a cell is flagged.
pub const DEVIATION_SIGMAS: f64 = 4.0;

/// Compares empirical per-cell accuracy (both splits) with the spec.
pub fn empirical_accuracy_check(pool: &SyntheticPool, spec: &SyntheticPoolSpec) -> Vec<AccuracyDeviation> {
    let mut out = Vec::new();
    for m in 0..spec.n_models {
        let model = SyntheticPoolSpec::model_id(m);
        for k in 0..spec.n_subjects {
            let subject = SyntheticPoolSpec::subject_id(k);
            let Some(qs) = pool.dataset.subject(&subject) else { continue };
            let all: Vec<&QuestionRecord> = qs.validation.iter().chain(&qs.test).collect();
            let correct = all
                .iter()
                .filter(|q| {
                    pool.predictions.choice(&model, &subject, &q.question_id)
                        == Some(q.correct_choice.as_str())
                })
                .count();
            let n = all.len();
            let p = pool.accuracy[m][k];
            let observed = correct as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            let dev = (observed - p).abs();
            out.push(AccuracyDeviation {
                model_id: model.clone(),
                subject_id: subject,
                expected: p,
                observed,
                questions: n,
                sigma,
                flagged: dev > DEVIATION_SIGMAS * sigma + 1e-12,
            });
        }
    }
    out
}

/// Model accuracies evenly spaced from `lo` (first model) to `hi` (last
/// model), identical on every subject.
pub fn spaced_accuracy(n_models: usize, n_subjects: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..n_models)
        .map(|i| {
            let t = if n_models > 1 { i as f64 / (n_models - 1) as f64 } else { 1.0 };
            vec![lo + (hi - lo) * t; n_subjects]
        })
        .collect()
}

/// Default pool: 10 models spaced from 0.55 to 0.75 accuracy, 20 subjects
/// of 200 validation and 40 test questions, 3 correlated groups at
/// `rho = 0.9`. The large validation split keeps accuracy estimates tight
/// enough for the exponential weights to help.
pub fn default_spec(seed: u64) -> SyntheticPoolSpec {
    SyntheticPoolSpec {
        n_models: 10,
        n_subjects: 20,
        validation_per_subject: 200,
        test_per_subject: 40,
        choices_per_question: 4,
        accuracy_matrix: Some(spaced_accuracy(10, 20, 0.55, 0.75)),
        accuracy_range: None,
        correlation_groups: SyntheticPoolSpec::contiguous_groups(10, 3, 0.9),
        n_disciplines: 4,
        seed,
    }
}

/// Shuffled copy of the pool's prediction records, for order-independence checks.
pub fn shuffled_records(pool: &SyntheticPool, seed: u64) -> Vec<PredictionRecord> {
    let mut recs = pool.predictions.records();
    recs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    recs
}

/// Per-model accuracy summary keyed by model id, over one split.
pub fn split_accuracy_table(pool: &SyntheticPool, split: Split) -> BTreeMap<String, f64> {
    pool.predictions
        .pool()
        .ids()
        .iter()
        .map(|m| {
            let (mut c, mut t) = (0usize, 0usize);
            for qs in pool.dataset.subjects().values() {
                for q in qs.split(split) {
                    t += 1;
                    if pool.predictions.choice(m, &q.subject_id, &q.question_id)
                        == Some(q.correct_choice.as_str())
                    {
                        c += 1;
                    }
                }
            }
            (m.clone(), if t == 0 { 0.0 } else { c as f64 / t as f64 })
        })
        .collect()
}
