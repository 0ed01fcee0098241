//! Embedding manifests and verification pair files.
//!
//! An embedding manifest starts with a header line `{"embedding_dim": d}`
//! followed by one JSON line per face with at least an `id` (or `face_id`)
//! and an `embedding`. Face observations and sample-set faces both fit.
//! A pair file holds `{"id_a": .., "id_b": .., "same_person": bool}` lines
//! that reference manifest ids.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::VerificationPair;
use crate::embedding::FaceEmbedding;
use crate::error::{Error, Result};
use crate::ingestion::FaceObservation;
use crate::persist;
use crate::provider::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub embedding_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationLine {
    pub id: String,
    pub url: String,
    pub timestamp: crate::ingestion::ArchiveTimestamp,
    pub face_index: usize,
    #[serde(rename = "box")]
    pub bounding_box: BoundingBox,
    pub embedding: FaceEmbedding,
}

impl From<&FaceObservation> for ObservationLine {
    fn from(o: &FaceObservation) -> Self {
        Self {
            id: o.id(),
            url: o.image.url.clone(),
            timestamp: o.image.timestamp,
            face_index: o.face_index,
            bounding_box: o.bounding_box,
            embedding: o.embedding.clone(),
        }
    }
}

impl From<ObservationLine> for FaceObservation {
    fn from(l: ObservationLine) -> Self {
        FaceObservation {
            image: crate::ingestion::ImageKey {
                url: l.url,
                timestamp: l.timestamp,
            },
            face_index: l.face_index,
            bounding_box: l.bounding_box,
            embedding: l.embedding,
        }
    }
}

pub fn observations_to_jsonl(embedding_dim: usize, observations: &[FaceObservation]) -> String {
    let mut out = persist::to_jsonl([ManifestHeader { embedding_dim }]);
    out.push_str(&persist::to_jsonl(observations.iter().map(ObservationLine::from)));
    out
}

pub fn observations_from_jsonl(text: &str) -> Result<(usize, Vec<FaceObservation>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: ManifestHeader = serde_json::from_str(
        lines
            .next()
            .ok_or_else(|| Error::Parse("empty embedding manifest".into()))?,
    )
    .map_err(|e| Error::Parse(format!("embedding manifest header: {e}")))?;
    let mut out = Vec::new();
    for (i, l) in lines.enumerate() {
        let line: ObservationLine =
            serde_json::from_str(l).map_err(|e| Error::Parse(format!("observation {}: {e}", i + 1)))?;
        if line.embedding.dim() != header.embedding_dim {
            return Err(Error::dim(header.embedding_dim, line.embedding.dim()));
        }
        out.push(line.into());
    }
    Ok((header.embedding_dim, out))
}

#[derive(Deserialize)]
struct AnyEmbeddingLine {
    #[serde(alias = "face_id")]
    id: String,
    embedding: FaceEmbedding,
}

/// Id → embedding lookup over a manifest of any flavour.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    pub embedding_dim: usize,
    pub embeddings: BTreeMap<String, FaceEmbedding>,
}

impl EmbeddingIndex {
    /// Lines without an `embedding` key (headers) are skipped; a header's
    /// `embedding_dim`, if present, must match every embedding.
    pub fn parse(text: &str) -> Result<Self> {
        let mut declared: Option<usize> = None;
        let mut embeddings = BTreeMap::new();
        for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let value: serde_json::Value =
                serde_json::from_str(l).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
            if value.get("embedding").is_none() {
                if let Some(d) = value.get("embedding_dim").and_then(|d| d.as_u64()) {
                    declared = Some(d as usize);
                }
                continue;
            }
            let line: AnyEmbeddingLine =
                serde_json::from_value(value).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
            if embeddings.insert(line.id.clone(), line.embedding).is_some() {
                return Err(Error::Parse(format!("duplicate embedding id {}", line.id)));
            }
        }
        let dim = match (declared, embeddings.values().next()) {
            (Some(d), _) => d,
            (None, Some(e)) => e.dim(),
            (None, None) => return Err(Error::EmptySet("embedding manifest has no embeddings")),
        };
        if let Some(e) = embeddings.values().find(|e| e.dim() != dim) {
            return Err(Error::dim(dim, e.dim()));
        }
        Ok(Self {
            embedding_dim: dim,
            embeddings,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&persist::read_to_string(path)?)
    }

    pub fn get(&self, id: &str) -> Result<&FaceEmbedding> {
        self.embeddings
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("embedding {id}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id_a: String,
    pub id_b: String,
    pub same_person: bool,
}

pub fn parse_pairs(text: &str) -> Result<Vec<PairRecord>> {
    persist::from_jsonl(text, "pairs")
}

pub fn resolve_pairs(records: &[PairRecord], index: &EmbeddingIndex) -> Result<Vec<VerificationPair>> {
    records
        .iter()
        .map(|r| VerificationPair::new(index.get(&r.id_a)?.clone(), index.get(&r.id_b)?.clone(), r.same_person))
        .collect()
}
