//! DBSCAN over fingerprints with cosine distance.
//!
//! Points are processed in lexicographic model-id order, which fixes
//! cluster numbering and border-point assignment.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::{cosine_distance, FingerprintVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Cluster(usize),
    Noise,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    pub subject_id: String,
    pub labels: BTreeMap<String, Label>,
}

impl Clustering {
    /// label -> members. Noise points are not included.
    pub fn clusters(&self) -> BTreeMap<usize, BTreeSet<String>> {
        let mut out: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
        for (model, label) in &self.labels {
            if let Label::Cluster(c) = label {
                out.entry(*c).or_default().insert(model.clone());
            }
        }
        out
    }

    pub fn noise(&self) -> BTreeSet<String> {
        self.labels
            .iter()
            .filter(|(_, l)| **l == Label::Noise)
            .map(|(m, _)| m.clone())
            .collect()
    }

    pub fn label_of(&self, model_id: &str) -> Option<Label> {
        self.labels.get(model_id).copied()
    }

    /// Member sets with labels forgotten, for comparing partitions.
    pub fn partition(&self) -> BTreeSet<BTreeSet<String>> {
        let mut parts: BTreeSet<BTreeSet<String>> = self.clusters().into_values().collect();
        for m in self.noise() {
            parts.insert(BTreeSet::from([m]));
        }
        parts
    }
}

/// Pairwise cosine distances between fingerprints, in the given order.
pub fn distance_matrix(points: &[&FingerprintVector]) -> Result<Vec<Vec<f64>>> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = cosine_distance(&points[i].vector, &points[j].vector)?;
            d[i][j] = v;
            d[j][i] = v;
        }
        if points[i].is_zero() {
            // zero vectors are at distance 1 even from themselves
            d[i][i] = 1.0;
        }
    }
    Ok(d)
}

fn canonical(fingerprints: &[FingerprintVector]) -> Result<Vec<&FingerprintVector>> {
    let first = fingerprints
        .first()
        .ok_or_else(|| Error::Input("dbscan needs at least one fingerprint".into()))?;
    let mut points: Vec<&FingerprintVector> = fingerprints.iter().collect();
    points.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    for p in &points {
        if p.dim() != first.dim() {
            return Err(Error::DimensionMismatch {
                left: first.dim(),
                right: p.dim(),
            });
        }
        if p.subject_id != first.subject_id {
            return Err(Error::Input(format!(
                "dbscan input mixes subjects {} and {}",
                first.subject_id, p.subject_id
            )));
        }
    }
    if let Some(w) = points.windows(2).find(|w| w[0].model_id == w[1].model_id) {
        return Err(Error::Input(format!(
            "duplicate fingerprint for model {}",
            w[0].model_id
        )));
    }
    Ok(points)
}

/// Density-based clustering. A point is core when at least `min_pts`
/// points (itself included) lie within `eps`; clusters are grown
/// breadth-first from cores; leftover points are noise.
pub fn dbscan(fingerprints: &[FingerprintVector], eps: f64, min_pts: usize) -> Result<Clustering> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("dbscan eps must be > 0, got {eps}")));
    }
    if min_pts < 1 {
        return Err(Error::Config("dbscan min_pts must be >= 1".into()));
    }
    let points = canonical(fingerprints)?;
    let n = points.len();
    let dist = distance_matrix(&points)?;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| i == j || dist[i][j] <= eps).collect())
        .collect();
    let is_core = |i: usize| neighbors[i].len() >= min_pts;

    let mut labels: Vec<Option<Label>> = vec![None; n];
    let mut next = 0;
    for start in 0..n {
        if labels[start].is_some() {
            continue;
        }
        if !is_core(start) {
            labels[start] = Some(Label::Noise);
            continue;
        }
        let cluster = next;
        next += 1;
        labels[start] = Some(Label::Cluster(cluster));
        let mut queue: VecDeque<usize> = neighbors[start].iter().copied().collect();
        while let Some(p) = queue.pop_front() {
            match labels[p] {
                Some(Label::Cluster(_)) => continue,
                Some(Label::Noise) => {
                    // previously rejected as a seed; now a border point
                    labels[p] = Some(Label::Cluster(cluster));
                }
                None => {
                    labels[p] = Some(Label::Cluster(cluster));
                }
            }
            if is_core(p) {
                queue.extend(neighbors[p].iter().copied());
            }
        }
    }

    Ok(Clustering {
        subject_id: points[0].subject_id.clone(),
        labels: points
            .iter()
            .zip(labels)
            .map(|(p, l)| (p.model_id.clone(), l.expect("every point labeled")))
            .collect(),
    })
}

/// Turns each noise point into its own cluster. New labels follow the
/// existing ones in model-id order.
pub fn promote_noise_to_singletons(c: &Clustering) -> Clustering {
    let mut next = c.clusters().keys().max().map_or(0, |m| m + 1);
    let labels = c
        .labels
        .iter()
        .map(|(m, l)| {
            let l = match l {
                Label::Noise => {
                    next += 1;
                    Label::Cluster(next - 1)
                }
                other => *other,
            };
            (m.clone(), l)
        })
        .collect();
    Clustering {
        subject_id: c.subject_id.clone(),
        labels,
    }
}

/// Text dump of the distance matrix and labels, for debugging.
pub fn debug_dump(fingerprints: &[FingerprintVector], clustering: &Clustering) -> Result<String> {
    let points = canonical(fingerprints)?;
    let dist = distance_matrix(&points)?;
    let mut out = String::new();
    writeln!(out, "# subject {}", clustering.subject_id).unwrap();
    write!(out, "model").unwrap();
    for p in &points {
        write!(out, "\t{}", p.model_id).unwrap();
    }
    writeln!(out, "\tlabel").unwrap();
    for (i, p) in points.iter().enumerate() {
        write!(out, "{}", p.model_id).unwrap();
        for d in &dist[i] {
            write!(out, "\t{d:.6}").unwrap();
        }
        let label = match clustering.label_of(&p.model_id) {
            Some(Label::Cluster(c)) => c.to_string(),
            Some(Label::Noise) => "noise".into(),
            None => "-".into(),
        };
        writeln!(out, "\t{label}").unwrap();
    }
    Ok(out)
}
