#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use dfpe::ingest::{Dataset, QuestionRecord};
use dfpe::pipeline::Inputs;
use dfpe::simulate::SyntheticPool;
use serde_json::Value;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn small_inputs() -> Inputs {
    Inputs::load(
        &fixture("dataset.jsonl"),
        &fixture("predictions.jsonl"),
        Some(&fixture("disciplines.jsonl")),
        None,
    )
    .unwrap()
}

pub fn pool10_inputs() -> Inputs {
    Inputs::load(
        &fixture("pool10_dataset.jsonl"),
        &fixture("pool10_predictions.jsonl"),
        None,
        None,
    )
    .unwrap()
}

pub fn expected(name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

pub fn synthetic_inputs(pool: SyntheticPool) -> Inputs {
    Inputs {
        dataset: pool.dataset,
        predictions: pool.predictions,
        disciplines: Some(pool.disciplines),
        embeddings: None,
    }
}

/// Validation accuracy by scanning the raw records, independent of the
/// library's per-subject indexes.
pub fn count_accuracy(inputs: &Inputs, model: &str, subject: &str) -> f64 {
    let val: Vec<&QuestionRecord> = inputs
        .dataset
        .records()
        .filter(|q| q.subject_id == subject && q.split == dfpe::ingest::Split::Validation)
        .collect();
    let truth: BTreeMap<&str, &str> = val
        .iter()
        .map(|q| (q.question_id.as_str(), q.correct_choice.as_str()))
        .collect();
    let hits = inputs
        .predictions
        .records()
        .iter()
        .filter(|r| r.model_id == model && r.subject_id == subject)
        .filter(|r| truth.get(r.question_id.as_str()) == Some(&r.predicted_choice.as_str()))
        .count();
    hits as f64 / val.len() as f64
}

/// Highest validation accuracy on `subject`, smallest id on ties.
pub fn best_validation_model(inputs: &Inputs, subject: &str) -> String {
    let mut best: Option<(String, f64)> = None;
    for m in inputs.predictions.pool().ids() {
        let a = count_accuracy(inputs, m, subject);
        if best.as_ref().is_none_or(|(_, b)| a > *b) {
            best = Some((m.clone(), a));
        }
    }
    best.unwrap().0
}

/// Plurality over `voters`, ties to the earliest choice, `None` when nobody voted.
pub fn plurality(dataset: &Dataset, inputs: &Inputs, subject: &str, qid: &str, voters: &[String]) -> Option<String> {
    let q = dataset.question(subject, qid).unwrap();
    let mut counts = vec![0usize; q.choices.len()];
    let mut any = false;
    for m in voters {
        if let Some(c) = inputs.predictions.choice(m, subject, qid) {
            counts[q.choices.iter().position(|x| x == c).unwrap()] += 1;
            any = true;
        }
    }
    if !any {
        return None;
    }
    let max = *counts.iter().max().unwrap();
    Some(q.choices[counts.iter().position(|&c| c == max).unwrap()].clone())
}

fn cos_dist(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - (dot / (na * nb)).clamp(-1.0, 1.0)).clamp(0.0, 2.0)
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    parent[x] = r;
    r
}

/// Reference DBSCAN: union-find over core-core edges, each border point
/// attached to the adjacent component whose smallest core index is lowest,
/// everything else noise. Returns (clusters, noise) as index sets.
pub fn brute_dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> (BTreeSet<BTreeSet<usize>>, BTreeSet<usize>) {
    let n = points.len();
    let d: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| cos_dist(&points[i], &points[j])).collect())
        .collect();
    let adj = |i: usize, j: usize| i == j || d[i][j] <= eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| adj(i, j)).count() >= min_pts).collect();

    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in 0..n {
            if core[i] && core[j] && adj(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    // root -> smallest core index in that component
    let mut members: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for i in (0..n).filter(|&i| core[i]) {
        let r = find(&mut parent, i);
        members.entry(r).or_default().insert(i);
    }
    let first_core: BTreeMap<usize, usize> = members
        .iter()
        .map(|(r, m)| (*r, *m.iter().next().unwrap()))
        .collect();
    let mut noise = BTreeSet::new();
    for i in (0..n).filter(|&i| !core[i]) {
        let owner = (0..n)
            .filter(|&j| core[j] && adj(i, j))
            .map(|j| find(&mut parent, j))
            .min_by_key(|r| first_core[r]);
        match owner {
            Some(r) => {
                members.get_mut(&r).unwrap().insert(i);
            }
            None => {
                noise.insert(i);
            }
        }
    }
    (members.into_values().collect(), noise)
}
