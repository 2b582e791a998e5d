//! End-to-end composition: fingerprints, ensembles, evaluation.

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::{FingerprintStrategy, RunConfig};
use crate::error::Result;
use crate::fingerprint::{build_fingerprints, EmbeddingIndex, FingerprintSet};
use crate::ingest::{load_dataset, load_predictions, Dataset, DisciplineMap, PredictionSet};
use crate::select::{build_ensembles, SubjectEnsemble};
use crate::vote::{evaluate, DisciplineAggregation, EvalReport};

/// Everything loaded from disk that a run needs.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub dataset: Dataset,
    pub predictions: PredictionSet,
    pub disciplines: Option<DisciplineMap>,
    pub embeddings: Option<EmbeddingIndex>,
}

impl Inputs {
    pub fn load(
        dataset: &Path,
        predictions: &Path,
        disciplines: Option<&Path>,
        embeddings: Option<&Path>,
    ) -> Result<Self> {
        let dataset = load_dataset(dataset)?;
        let (predictions, _) = load_predictions(predictions, &dataset)?;
        let disciplines = disciplines.map(DisciplineMap::load).transpose()?;
        if let Some(d) = &disciplines {
            d.check_covers(&dataset)?;
        }
        let embeddings = embeddings
            .map(EmbeddingIndex::load)
            .transpose()?
            .map(|e| e.restrict_to_validation(&dataset));
        Ok(Inputs {
            dataset,
            predictions,
            disciplines,
            embeddings,
        })
    }

    /// Discipline map, or one discipline per subject when none was given.
    pub fn disciplines_or_identity(&self) -> DisciplineMap {
        self.disciplines.clone().unwrap_or_else(|| {
            DisciplineMap::new(
                self.dataset
                    .subject_ids()
                    .map(|s| (s.to_string(), s.to_string()))
                    .collect(),
            )
        })
    }

    pub fn fingerprints(&self, strategy: FingerprintStrategy) -> Result<FingerprintSet> {
        build_fingerprints(
            &self.predictions,
            &self.dataset,
            strategy,
            self.embeddings.as_ref(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub ensembles: BTreeMap<String, SubjectEnsemble>,
    pub report: EvalReport,
}

/// Builds ensembles with `config` from precomputed fingerprints and
/// evaluates them.
pub fn run_with_fingerprints(
    inputs: &Inputs,
    fingerprints: &FingerprintSet,
    config: &RunConfig,
    aggregation: DisciplineAggregation,
) -> Result<RunOutput> {
    config.validate()?;
    let ensembles = build_ensembles(&inputs.predictions, &inputs.dataset, fingerprints, config)?;
    let report = evaluate(
        &inputs.predictions,
        &inputs.dataset,
        &inputs.disciplines_or_identity(),
        &ensembles,
        aggregation,
    )?;
    Ok(RunOutput { ensembles, report })
}

pub fn run(inputs: &Inputs, config: &RunConfig, aggregation: DisciplineAggregation) -> Result<RunOutput> {
    config.validate()?;
    let fingerprints = inputs.fingerprints(config.fingerprint_strategy)?;
    run_with_fingerprints(inputs, &fingerprints, config, aggregation)
}
