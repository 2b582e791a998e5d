//! Per-subject quantile filtering, cluster representatives and exponential
//! accuracy weights.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{dbscan, promote_noise_to_singletons, Clustering, Label};
use crate::config::{FilterOrder, RunConfig};
use crate::error::{Error, Result};
use crate::fingerprint::{FingerprintSet, FingerprintVector};
use crate::ingest::{validation_accuracy, Dataset, PredictionSet};

/// Slack for `floor(q * (n - 1))` so that e.g. `q = 0.29, n = 101` lands on
/// index 29 despite `0.29 * 100 = 28.999999999999996`.
const INDEX_SLACK: f64 = 1e-9;

/// Lower (type-1) empirical quantile: the sorted element at index
/// `floor(q * (n - 1))`. The result is always one of the inputs.
pub fn quantile_threshold(alphas: &[f64], q: f64) -> Result<f64> {
    if alphas.is_empty() {
        return Err(Error::Input("quantile of an empty list".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("quantile q must lie in [0, 1], got {q}")));
    }
    let mut sorted = alphas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = (q * (sorted.len() - 1) as f64 + INDEX_SLACK).floor() as usize;
    Ok(sorted[idx.min(sorted.len() - 1)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub threshold: f64,
    pub survivors: BTreeSet<String>,
}

/// Keeps models whose accuracy reaches the q-quantile threshold. The best
/// model always survives.
pub fn filter_models(alphas: &BTreeMap<String, f64>, q: f64) -> Result<FilterOutcome> {
    let values: Vec<f64> = alphas.values().copied().collect();
    let threshold = quantile_threshold(&values, q)?;
    let survivors = alphas
        .iter()
        .filter(|(_, &a)| a >= threshold)
        .map(|(m, _)| m.clone())
        .collect();
    Ok(FilterOutcome {
        threshold,
        survivors,
    })
}

/// For every cluster with a surviving member, the member with the highest
/// accuracy (ties go to the smallest model id). Noise members are never
/// representatives; promote them first.
pub fn select_representatives(
    clustering: &Clustering,
    alphas: &BTreeMap<String, f64>,
    survivors: &BTreeSet<String>,
) -> Result<BTreeMap<usize, String>> {
    let mut reps: BTreeMap<usize, (String, f64)> = BTreeMap::new();
    for (model, label) in &clustering.labels {
        let Label::Cluster(c) = label else { continue };
        if !survivors.contains(model) {
            continue;
        }
        let alpha = *alphas
            .get(model)
            .ok_or_else(|| Error::Input(format!("no accuracy for model {model}")))?;
        // labels iterate in model-id order, so strict > keeps the smaller id on ties
        match reps.get(c) {
            Some((_, best)) if alpha <= *best => {}
            _ => {
                reps.insert(*c, (model.clone(), alpha));
            }
        }
    }
    if reps.is_empty() {
        return Err(Error::NoRepresentative(clustering.subject_id.clone()));
    }
    Ok(reps.into_iter().map(|(c, (m, _))| (c, m)).collect())
}

/// Softmax of `gamma * alpha` over the given models.
pub fn exp_weights<'a, I>(models: I, alphas: &BTreeMap<String, f64>, gamma: f64) -> Result<BTreeMap<String, f64>>
where
    I: IntoIterator<Item = &'a String>,
{
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::Config(format!("gamma must be finite and >= 0, got {gamma}")));
    }
    let mut scaled = BTreeMap::new();
    for m in models {
        let a = *alphas
            .get(m)
            .ok_or_else(|| Error::Input(format!("no accuracy for model {m}")))?;
        scaled.insert(m.clone(), gamma * a);
    }
    if scaled.is_empty() {
        return Err(Error::Input("cannot weight an empty representative set".into()));
    }
    // subtracting the max leaves the ratios unchanged and keeps exp() bounded
    let max = scaled.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: BTreeMap<String, f64> = scaled
        .into_iter()
        .map(|(m, s)| (m, (s - max).exp()))
        .collect();
    let total: f64 = raw.values().sum();
    Ok(raw.into_iter().map(|(m, w)| (m, w / total)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub model_id: String,
    pub alpha: f64,
    /// `exp(gamma * alpha)`.
    pub weight_raw: f64,
    /// Normalized weight; members' weights sum to 1.
    pub weight: f64,
}

/// The ensemble chosen for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEnsemble {
    pub subject_id: String,
    pub threshold: f64,
    /// Members in model-id order.
    pub members: Vec<EnsembleMember>,
    /// Final (noise-promoted) cluster label of every clustered model.
    pub cluster_of: BTreeMap<String, usize>,
    /// Validation accuracy of every pool model.
    pub alphas: BTreeMap<String, f64>,
}

impl SubjectEnsemble {
    pub fn member(&self, model_id: &str) -> Option<&EnsembleMember> {
        self.members.iter().find(|m| m.model_id == model_id)
    }

    pub fn member_ids(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(|m| m.model_id.as_str())
    }
}

fn cluster_models(
    fingerprints: &BTreeMap<String, FingerprintVector>,
    models: &BTreeSet<String>,
    subject_id: &str,
    config: &RunConfig,
) -> Result<Clustering> {
    let points: Vec<FingerprintVector> = models
        .iter()
        .map(|m| {
            fingerprints.get(m).cloned().ok_or_else(|| {
                Error::Input(format!("no fingerprint for model {m} on subject {subject_id}"))
            })
        })
        .collect::<Result<_>>()?;
    let raw = dbscan(&points, config.dbscan_eps, config.dbscan_min_pts)?;
    Ok(promote_noise_to_singletons(&raw))
}

/// Filter, cluster, pick representatives and weight them, for one subject.
pub fn build_subject_ensemble(
    subject_id: &str,
    predictions: &PredictionSet,
    dataset: &Dataset,
    fingerprints: &BTreeMap<String, FingerprintVector>,
    config: &RunConfig,
) -> Result<SubjectEnsemble> {
    config.validate()?;
    let alphas: BTreeMap<String, f64> = predictions
        .pool()
        .ids()
        .iter()
        .map(|m| Ok((m.clone(), validation_accuracy(predictions, dataset, m, subject_id)?)))
        .collect::<Result<_>>()?;
    let all: BTreeSet<String> = alphas.keys().cloned().collect();

    let (filter, clustering) = match config.filter_order {
        FilterOrder::FilterThenCluster => {
            let filter = filter_models(&alphas, config.quantile_q)?;
            let clustering = cluster_models(fingerprints, &filter.survivors, subject_id, config)?;
            (filter, clustering)
        }
        FilterOrder::ClusterThenFilter => {
            let clustering = cluster_models(fingerprints, &all, subject_id, config)?;
            (filter_models(&alphas, config.quantile_q)?, clustering)
        }
    };

    let reps = select_representatives(&clustering, &alphas, &filter.survivors)?;
    let weights = exp_weights(reps.values(), &alphas, config.gamma)?;
    let members = weights
        .into_iter()
        .map(|(model_id, weight)| {
            let alpha = alphas[&model_id];
            EnsembleMember {
                weight_raw: (config.gamma * alpha).exp(),
                model_id,
                alpha,
                weight,
            }
        })
        .collect();
    let cluster_of = clustering
        .labels
        .iter()
        .filter_map(|(m, l)| match l {
            Label::Cluster(c) => Some((m.clone(), *c)),
            Label::Noise => None,
        })
        .collect();

    Ok(SubjectEnsemble {
        subject_id: subject_id.to_string(),
        threshold: filter.threshold,
        members,
        cluster_of,
        alphas,
    })
}

/// Ensembles for every subject of the dataset, built in parallel.
pub fn build_ensembles(
    predictions: &PredictionSet,
    dataset: &Dataset,
    fingerprints: &FingerprintSet,
    config: &RunConfig,
) -> Result<BTreeMap<String, SubjectEnsemble>> {
    let subjects: Vec<&str> = dataset.subject_ids().collect();
    let built: Vec<SubjectEnsemble> = subjects
        .par_iter()
        .map(|&s| {
            let fps = fingerprints
                .get(s)
                .ok_or_else(|| Error::Input(format!("no fingerprints for subject {s}")))?;
            build_subject_ensemble(s, predictions, dataset, fps, config)
        })
        .collect::<Result<_>>()?;
    Ok(built.into_iter().map(|e| (e.subject_id.clone(), e)).collect())
}
