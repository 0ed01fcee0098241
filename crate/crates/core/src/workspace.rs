//! On-disk curation workspace shared by the CLI and the HTTP service.
//!
//! ```text
//! <root>/samples/<entity>.jsonl   one sample set per entity
//! <root>/crops/                   face crop images
//! <root>/session.json             current strategy and λ1
//! <root>/dictionary.jsonl         latest built dictionary
//! <root>/results.jsonl            latest identification run
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dictionary::{select_target, EntityDictionary, SampleSet, TargetStrategy, DEFAULT_LAMBDA1};
use crate::embedding::cosine_similarity;
use crate::error::{Error, Result};
use crate::identification::{results_from_jsonl, IdentificationResult};
use crate::persist;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub strategy: TargetStrategy,
    pub lambda1: f64,
}

impl Default for Session {
    fn default() -> Self {
        Self {
            strategy: TargetStrategy::Mean,
            lambda1: DEFAULT_LAMBDA1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySummary {
    pub entity_id: String,
    pub display_name: String,
    pub sample_count: usize,
    pub reference_set: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceListing {
    pub face_id: String,
    /// Under the service's `/crops/` mount; absent when no crop was saved.
    pub crop_url: Option<String>,
    pub similarity: f64,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Opens an existing workspace: the sample directory must exist.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let ws = Self::new(root);
        if !ws.samples_dir().is_dir() {
            return Err(Error::NotFound(format!(
                "workspace {} (expected a samples/ directory; run `archface gather --workspace {}` first)",
                ws.root.display(),
                ws.root.display()
            )));
        }
        Ok(ws)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn samples_dir(&self) -> PathBuf {
        self.root.join("samples")
    }

    pub fn crops_dir(&self) -> PathBuf {
        self.root.join("crops")
    }

    pub fn session_path(&self) -> PathBuf {
        self.root.join("session.json")
    }

    pub fn dictionary_path(&self) -> PathBuf {
        self.root.join("dictionary.jsonl")
    }

    pub fn results_path(&self) -> PathBuf {
        self.root.join("results.jsonl")
    }

    /// File name for an entity id, with path separators replaced.
    pub fn sample_set_path(&self, entity_id: &str) -> PathBuf {
        let safe: String = entity_id
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        self.samples_dir().join(format!("{safe}.jsonl"))
    }

    /// All sample sets keyed by entity id.
    pub fn load_sample_sets(&self) -> Result<BTreeMap<String, SampleSet>> {
        let dir = self.samples_dir();
        let mut sets = BTreeMap::new();
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let set = SampleSet::load(&path)?;
            sets.insert(set.entity_id().to_string(), set);
        }
        Ok(sets)
    }

    pub fn load_sample_set(&self, entity_id: &str) -> Result<SampleSet> {
        let path = self.sample_set_path(entity_id);
        if !path.is_file() {
            return Err(Error::NotFound(format!("entity {entity_id}")));
        }
        let set = SampleSet::load(&path)?;
        if set.entity_id() != entity_id {
            return Err(Error::NotFound(format!("entity {entity_id}")));
        }
        Ok(set)
    }

    pub fn save_sample_set(&self, set: &SampleSet) -> Result<()> {
        set.save(&self.sample_set_path(set.entity_id()))
    }

    pub fn load_session(&self) -> Result<Session> {
        let path = self.session_path();
        if !path.exists() {
            return Ok(Session::default());
        }
        serde_json::from_str(&persist::read_to_string(&path)?)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn save_session(&self, session: &Session) -> Result<()> {
        let json = serde_json::to_string_pretty(session).expect("session serializes");
        persist::write_atomic(&self.session_path(), json.as_bytes())
    }

    pub fn load_results(&self) -> Result<Vec<IdentificationResult>> {
        let path = self.results_path();
        if !path.is_file() {
            return Err(Error::NotFound("identification run (no results.jsonl)".into()));
        }
        results_from_jsonl(&persist::read_to_string(&path)?)
    }

    pub fn entity_summaries(&self) -> Result<Vec<EntitySummary>> {
        Ok(self
            .load_sample_sets()?
            .into_values()
            .map(|s| EntitySummary {
                entity_id: s.entity_id().to_string(),
                display_name: s.display_name().to_string(),
                sample_count: s.len(),
                reference_set: s.reference_face_id().is_some(),
            })
            .collect())
    }

    /// Faces of one entity with their similarity to the target of the
    /// session's strategy, most similar first. Before a reference face is
    /// chosen the mean target is used, so the list can guide that choice.
    pub fn face_listing(&self, entity_id: &str) -> Result<Vec<FaceListing>> {
        let set = self.load_sample_set(entity_id)?;
        let mut strategy = self.load_session()?.strategy;
        if strategy == TargetStrategy::Reference && set.reference_face_id().is_none() {
            strategy = TargetStrategy::Mean;
        }
        let target = select_target(&set, strategy)?;
        let mut faces = set
            .faces()
            .iter()
            .map(|f| {
                Ok(FaceListing {
                    face_id: f.face_id.clone(),
                    crop_url: f.crop.as_ref().map(|c| format!("/crops/{}", c.trim_start_matches('/'))),
                    similarity: cosine_similarity(&f.embedding, &target.embedding)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        faces.sort_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then_with(|| a.face_id.cmp(&b.face_id))
        });
        Ok(faces)
    }

    /// Marks `face_id` as the entity's reference face and persists the set.
    pub fn set_reference(&self, entity_id: &str, face_id: &str) -> Result<SampleSet> {
        let set = self.load_sample_set(entity_id)?.set_reference(face_id)?;
        self.save_sample_set(&set)?;
        Ok(set)
    }

    /// Display names: the dictionary's when present, otherwise the sample sets'.
    pub fn entity_names(&self) -> Result<BTreeMap<String, String>> {
        let dict = self.dictionary_path();
        if dict.is_file() {
            return Ok(EntityDictionary::load(&dict)?.names());
        }
        if !self.samples_dir().is_dir() {
            return Ok(BTreeMap::new());
        }
        Ok(self
            .load_sample_sets()?
            .into_iter()
            .map(|(id, s)| (id, s.display_name().to_string()))
            .collect())
    }
}
