//! Most-similar-entity lookup gated by the identification threshold λ2.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calibration::CALIBRATED_LAMBDA2;
use crate::dictionary::EntityDictionary;
use crate::embedding::{cosine_similarity, FaceEmbedding};
use crate::error::{Error, Result};
use crate::ingestion::{FaceObservation, ImageKey};
use crate::persist;

pub const DEFAULT_LAMBDA2: f64 = CALIBRATED_LAMBDA2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recognition {
    #[serde(rename = "id")]
    pub entity_id: String,
    pub similarity: f64,
}

/// Entities recognized in one image; each entity appears at most once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResult {
    #[serde(flatten)]
    pub image: ImageKey,
    /// Sorted by entity id; `similarity` is the best over the image's faces.
    #[serde(rename = "entities")]
    pub recognized: Vec<Recognition>,
    #[serde(rename = "unmatched_count")]
    pub unmatched_face_count: usize,
}

impl IdentificationResult {
    pub fn contains(&self, entity_id: &str) -> bool {
        self.recognized.iter().any(|r| r.entity_id == entity_id)
    }
}

/// Best-matching dictionary entry for `face`, if its similarity reaches `lambda2`.
/// Equal similarities resolve to the smallest entity id.
pub fn identify_face(face: &FaceEmbedding, dictionary: &EntityDictionary, lambda2: f64) -> Result<Option<Recognition>> {
    if dictionary.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    if face.dim() != dictionary.embedding_dim() {
        return Err(Error::dim(dictionary.embedding_dim(), face.dim()));
    }
    let mut best: Option<(&str, f64)> = None;
    for (id, entry) in dictionary.entries() {
        let sim = cosine_similarity(face, &entry.embedding)?;
        if best.is_none_or(|(_, b)| sim > b) {
            best = Some((id, sim));
        }
    }
    Ok(best
        .filter(|(_, sim)| *sim >= lambda2)
        .map(|(id, similarity)| Recognition {
            entity_id: id.to_string(),
            similarity,
        }))
}

/// Identifies every observed face and aggregates per image.
///
/// `images` lists the images searched, so that images without any face still
/// get a (empty) result; images that only appear in `observations` are
/// included too. Results are ordered by image key.
pub fn identify_corpus(
    images: &[ImageKey],
    observations: &[FaceObservation],
    dictionary: &EntityDictionary,
    lambda2: f64,
) -> Result<Vec<IdentificationResult>> {
    if dictionary.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    let mut per_image: BTreeMap<ImageKey, (BTreeMap<String, f64>, usize)> =
        images.iter().map(|k| (k.clone(), (BTreeMap::new(), 0))).collect();
    for obs in observations {
        let slot = per_image.entry(obs.image.clone()).or_default();
        match identify_face(&obs.embedding, dictionary, lambda2)? {
            Some(r) => {
                let best = slot.0.entry(r.entity_id).or_insert(r.similarity);
                *best = best.max(r.similarity);
            }
            None => slot.1 += 1,
        }
    }
    Ok(per_image
        .into_iter()
        .map(|(image, (recognized, unmatched))| IdentificationResult {
            image,
            recognized: recognized
                .into_iter()
                .map(|(entity_id, similarity)| Recognition { entity_id, similarity })
                .collect(),
            unmatched_face_count: unmatched,
        })
        .collect())
}

pub fn results_to_jsonl(results: &[IdentificationResult]) -> String {
    persist::to_jsonl(results)
}

pub fn results_from_jsonl(text: &str) -> Result<Vec<IdentificationResult>> {
    persist::from_jsonl(text, "results")
}
