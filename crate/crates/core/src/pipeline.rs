//! Corpus identification run: manifest records through to a relation graph.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tracing::info;

use crate::cooccurrence::{build_graph, count_occurrences, OccurrenceCounts, RelationGraph};
use crate::dictionary::EntityDictionary;
use crate::error::{Error, Result};
use crate::identification::{identify_corpus, IdentificationResult, DEFAULT_LAMBDA2};
use crate::ingestion::{
    apply_constraints, dedupe, detect_batch, DetectionFailure, FaceObservation, ImageRecord, SearchSpace,
};
use crate::provider::FaceProvider;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub lambda2: f64,
    pub workers: usize,
    /// Collapse captures of identical content to the earliest one.
    pub dedupe: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            lambda2: DEFAULT_LAMBDA2,
            workers: 4,
            dedupe: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub manifest_records: usize,
    pub admitted: usize,
    pub after_dedupe: usize,
    pub faces: usize,
    pub failed_images: usize,
    pub matched_images: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationRun {
    pub observations: Vec<FaceObservation>,
    pub failures: Vec<DetectionFailure>,
    pub results: Vec<IdentificationResult>,
    pub stats: RunStats,
}

pub fn run_identification(
    records: &[ImageRecord],
    space: &SearchSpace,
    provider: &dyn FaceProvider,
    dictionary: &EntityDictionary,
    config: &RunConfig,
) -> Result<IdentificationRun> {
    if dictionary.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    if provider.embedding_dim() != dictionary.embedding_dim() {
        return Err(Error::dim(dictionary.embedding_dim(), provider.embedding_dim()));
    }
    let admitted = apply_constraints(records, space);
    let images = if config.dedupe {
        dedupe(&admitted)
    } else {
        admitted.clone()
    };
    let batch = detect_batch(&images, provider, config.workers)?;
    let keys: Vec<_> = images.iter().map(ImageRecord::key).collect();
    let results = identify_corpus(&keys, &batch.observations, dictionary, config.lambda2)?;
    let stats = RunStats {
        manifest_records: records.len(),
        admitted: admitted.len(),
        after_dedupe: images.len(),
        faces: batch.observations.len(),
        failed_images: batch.failures.len(),
        matched_images: results.iter().filter(|r| !r.recognized.is_empty()).count(),
    };
    info!(?stats, "identification run finished");
    Ok(IdentificationRun {
        observations: batch.observations,
        failures: batch.failures,
        results,
        stats,
    })
}

/// Counts and graph for a finished run.
pub fn relation_graph(
    results: &[IdentificationResult],
    names: &BTreeMap<String, String>,
    min_edge_weight: u64,
) -> (OccurrenceCounts, RelationGraph) {
    let counts = count_occurrences(results);
    let graph = build_graph(&counts, names, min_edge_weight);
    (counts, graph)
}
