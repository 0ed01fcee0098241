//! Per-entity sample faces, their cleansing, and the mean-vector dictionary.
//!
//! Web-gathered samples for a person also depict other people. Each sample is
//! compared against a target vector (the mean of all samples, or a reference
//! face picked by an analyst) and dropped when its similarity falls below λ1.
//! Every surviving set is then summarized by its mean embedding.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::calibration::CALIBRATED_LAMBDA1;
use crate::embedding::{cosine_similarity, mean_embedding, FaceEmbedding};
use crate::entity_source::EntityRecord;
use crate::error::{Error, Result};
use crate::persist;
use crate::provider::FaceProvider;

/// Upper bound on sample images consumed per entity.
pub const DEFAULT_SAMPLE_BUDGET: usize = 100;
/// Default cleansing threshold.
pub const DEFAULT_LAMBDA1: f64 = CALIBRATED_LAMBDA1;
pub const DICTIONARY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFace {
    pub face_id: String,
    pub entity_id: String,
    pub embedding: FaceEmbedding,
    pub source_image: String,
    /// Whether this face really depicts the entity; only in annotated sets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<bool>,
    /// Face crop path relative to the workspace crop directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    entity_id: String,
    display_name: String,
    faces: Vec<SampleFace>,
    reference_face_id: Option<String>,
}

impl SampleSet {
    pub fn new(entity_id: impl Into<String>, display_name: impl Into<String>, faces: Vec<SampleFace>) -> Result<Self> {
        let entity_id = entity_id.into();
        let mut ids = BTreeSet::new();
        for f in &faces {
            if !ids.insert(f.face_id.as_str()) {
                return Err(Error::Config(format!("duplicate face id {}", f.face_id)));
            }
        }
        if let Some(f) = faces.first() {
            if let Some(other) = faces.iter().find(|g| g.embedding.dim() != f.embedding.dim()) {
                return Err(Error::dim(f.embedding.dim(), other.embedding.dim()));
            }
        }
        Ok(Self {
            entity_id,
            display_name: display_name.into(),
            faces,
            reference_face_id: None,
        })
    }

    pub fn entity_id(&self) -> &str {
        &self.entity_id
    }

    pub fn display_name(&self) -> &str {
        &self.display_name
    }

    pub fn faces(&self) -> &[SampleFace] {
        &self.faces
    }

    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn reference_face_id(&self) -> Option<&str> {
        self.reference_face_id.as_deref()
    }

    pub fn face(&self, face_id: &str) -> Option<&SampleFace> {
        self.faces.iter().find(|f| f.face_id == face_id)
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.faces.first().map(|f| f.embedding.dim())
    }

    /// Marks `face_id` as the analyst-chosen reference face.
    pub fn set_reference(mut self, face_id: &str) -> Result<Self> {
        if self.face(face_id).is_none() {
            return Err(Error::NotFound(format!("face {face_id} in entity {}", self.entity_id)));
        }
        self.reference_face_id = Some(face_id.to_string());
        Ok(self)
    }

    /// Copies ground-truth labels from `labels` (face id → is the entity).
    pub fn annotate(&mut self, labels: &HashMap<String, bool>) {
        for f in &mut self.faces {
            if let Some(&gt) = labels.get(&f.face_id) {
                f.ground_truth = Some(gt);
            }
        }
    }

    pub fn is_annotated(&self) -> bool {
        !self.faces.is_empty() && self.faces.iter().all(|f| f.ground_truth.is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetStrategy {
    /// Mean of all sample embeddings; needs no supervision.
    Mean,
    /// A single analyst-selected reference face.
    Reference,
}

impl fmt::Display for TargetStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetStrategy::Mean => "mean",
            TargetStrategy::Reference => "reference",
        })
    }
}

impl FromStr for TargetStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(TargetStrategy::Mean),
            "reference" => Ok(TargetStrategy::Reference),
            _ => Err(Error::Config(format!(
                "unknown strategy {s:?} (expected mean or reference)"
            ))),
        }
    }
}

/// The vector samples are compared against during cleansing.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub strategy: TargetStrategy,
    pub embedding: FaceEmbedding,
    /// Set for the reference strategy.
    pub reference_face_id: Option<String>,
}

pub fn select_target(set: &SampleSet, strategy: TargetStrategy) -> Result<Target> {
    if set.is_empty() {
        return Err(Error::EmptySampleSet(set.entity_id.clone()));
    }
    match strategy {
        TargetStrategy::Mean => Ok(Target {
            strategy,
            embedding: mean_embedding(set.faces.iter().map(|f| &f.embedding))?,
            reference_face_id: None,
        }),
        TargetStrategy::Reference => {
            let id = set
                .reference_face_id
                .as_deref()
                .ok_or_else(|| Error::MissingReference(set.entity_id.clone()))?;
            let face = set
                .face(id)
                .ok_or_else(|| Error::NotFound(format!("reference face {id}")))?;
            Ok(Target {
                strategy,
                embedding: face.embedding.clone(),
                reference_face_id: Some(id.to_string()),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub entity_id: String,
    pub kept: Vec<String>,
    pub removed: Vec<String>,
    pub strategy: TargetStrategy,
    pub threshold: f64,
}

impl FilterReport {
    /// The unfiltered baseline: every face kept.
    pub fn keep_all(set: &SampleSet, strategy: TargetStrategy) -> Self {
        Self {
            entity_id: set.entity_id.clone(),
            kept: set.faces.iter().map(|f| f.face_id.clone()).collect(),
            removed: Vec::new(),
            strategy,
            threshold: -1.0,
        }
    }
}

/// Keeps a face iff its similarity to the target is at least `lambda1`.
///
/// Faces identical to the target (and the reference face itself) count as
/// similarity exactly 1, so they survive any `lambda1` up to 1 and, being
/// duplicates of the target, thresholds above 1 as well.
pub fn filter_features(set: &SampleSet, target: &Target, lambda1: f64) -> Result<FilterReport> {
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for face in &set.faces {
        let is_target =
            face.embedding == target.embedding || target.reference_face_id.as_deref() == Some(face.face_id.as_str());
        let similarity = cosine_similarity(&face.embedding, &target.embedding)?;
        if is_target || similarity >= lambda1 {
            kept.push(face.face_id.clone());
        } else {
            removed.push(face.face_id.clone());
        }
    }
    Ok(FilterReport {
        entity_id: set.entity_id.clone(),
        kept,
        removed,
        strategy: target.strategy,
        threshold: lambda1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub kept: usize,
    pub true_kept: usize,
    pub true_total: usize,
    /// Set when precision or recall had a zero denominator and was reported as 1.0.
    pub degenerate: bool,
}

impl FilterMetrics {
    pub fn from_counts(kept: usize, true_kept: usize, true_total: usize) -> Self {
        let mut degenerate = false;
        let mut ratio = |num: usize, den: usize| {
            if den == 0 {
                degenerate = true;
                1.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(true_kept, kept);
        let recall = ratio(true_kept, true_total);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            kept,
            true_kept,
            true_total,
            degenerate,
        }
    }

    /// Pools counts over several entities (micro average).
    pub fn pooled<'a>(parts: impl IntoIterator<Item = &'a FilterMetrics>) -> Self {
        let (mut k, mut tk, mut tt) = (0, 0, 0);
        for m in parts {
            k += m.kept;
            tk += m.true_kept;
            tt += m.true_total;
        }
        Self::from_counts(k, tk, tt)
    }
}

/// Precision, recall and F1 of a cleansing report against ground-truth labels.
pub fn evaluate_filtering(report: &FilterReport, set: &SampleSet) -> Result<FilterMetrics> {
    let mut labels = HashMap::with_capacity(set.faces.len());
    for f in &set.faces {
        let gt = f
            .ground_truth
            .ok_or_else(|| Error::Config(format!("face {} has no ground-truth annotation", f.face_id)))?;
        labels.insert(f.face_id.as_str(), gt);
    }
    let mut true_kept = 0;
    for id in &report.kept {
        match labels.get(id.as_str()) {
            Some(true) => true_kept += 1,
            Some(false) => {}
            None => return Err(Error::NotFound(format!("face {id} in entity {}", set.entity_id))),
        }
    }
    let true_total = labels.values().filter(|gt| **gt).count();
    let metrics = FilterMetrics::from_counts(report.kept.len(), true_kept, true_total);
    if metrics.degenerate {
        warn!(entity = %set.entity_id, "degenerate filter evaluation (empty kept or positive set)");
    }
    Ok(metrics)
}

/// A filter report plus its metrics when the set carries annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPreview {
    pub report: FilterReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<FilterMetrics>,
}

/// Target selection, filtering and (if annotated) evaluation in one step.
pub fn preview_filter(set: &SampleSet, strategy: TargetStrategy, lambda1: f64) -> Result<FilterPreview> {
    let target = select_target(set, strategy)?;
    let report = filter_features(set, &target, lambda1)?;
    let metrics = if set.is_annotated() {
        Some(evaluate_filtering(&report, set)?)
    } else {
        None
    };
    Ok(FilterPreview { report, metrics })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub display_name: String,
    pub embedding: FaceEmbedding,
    pub sample_count: usize,
}

/// Settings a dictionary was built with, stored in its file header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryConfig {
    pub lambda1: f64,
    pub strategy: TargetStrategy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityDictionary {
    embedding_dim: usize,
    entries: BTreeMap<String, DictionaryEntry>,
    pub config: Option<DictionaryConfig>,
}

#[derive(Serialize, Deserialize)]
struct DictionaryHeader {
    version: u32,
    embedding_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<DictionaryConfig>,
}

#[derive(Serialize, Deserialize)]
struct DictionaryLine {
    entity_id: String,
    display_name: String,
    sample_count: usize,
    embedding: FaceEmbedding,
}

impl EntityDictionary {
    pub fn new(embedding_dim: usize) -> Self {
        Self {
            embedding_dim,
            entries: BTreeMap::new(),
            config: None,
        }
    }

    pub fn insert(&mut self, entity_id: impl Into<String>, entry: DictionaryEntry) -> Result<()> {
        if entry.embedding.dim() != self.embedding_dim {
            return Err(Error::dim(self.embedding_dim, entry.embedding.dim()));
        }
        if entry.sample_count == 0 {
            return Err(Error::Config("dictionary entries need at least one sample".into()));
        }
        self.entries.insert(entity_id.into(), entry);
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    /// Entries in ascending entity-id order.
    pub fn entries(&self) -> &BTreeMap<String, DictionaryEntry> {
        &self.entries
    }

    pub fn get(&self, entity_id: &str) -> Option<&DictionaryEntry> {
        self.entries.get(entity_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> BTreeMap<String, String> {
        self.entries
            .iter()
            .map(|(id, e)| (id.clone(), e.display_name.clone()))
            .collect()
    }

    /// Header line followed by one line per entity, in id order.
    pub fn to_jsonl(&self) -> String {
        let header = DictionaryHeader {
            version: DICTIONARY_FORMAT_VERSION,
            embedding_dim: self.embedding_dim,
            config: self.config.clone(),
        };
        let mut out = persist::to_jsonl([header]);
        out.push_str(&persist::to_jsonl(self.entries.iter().map(|(id, e)| DictionaryLine {
            entity_id: id.clone(),
            display_name: e.display_name.clone(),
            sample_count: e.sample_count,
            embedding: e.embedding.clone(),
        })));
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: DictionaryHeader = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| Error::Parse("empty dictionary file".into()))?,
        )
        .map_err(|e| Error::Parse(format!("dictionary header: {e}")))?;
        if header.version != DICTIONARY_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported dictionary version {}",
                header.version
            )));
        }
        let mut dict = EntityDictionary::new(header.embedding_dim);
        dict.config = header.config;
        for (i, line) in lines.enumerate() {
            let l: DictionaryLine =
                serde_json::from_str(line).map_err(|e| Error::Parse(format!("dictionary entry {}: {e}", i + 1)))?;
            dict.insert(
                l.entity_id,
                DictionaryEntry {
                    display_name: l.display_name,
                    embedding: l.embedding,
                    sample_count: l.sample_count,
                },
            )?;
        }
        Ok(dict)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&persist::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::write_atomic(path, self.to_jsonl().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryBuild {
    pub dictionary: EntityDictionary,
    /// Entities left without any kept face, omitted from the dictionary.
    pub dropped: Vec<String>,
}

/// Averages each entity's kept faces into its dictionary vector.
///
/// `names` overrides the display names carried by the sets. Entities whose
/// kept set is empty are dropped and listed in the result.
pub fn build_dictionary(
    filtered: &[(SampleSet, FilterReport)],
    names: &BTreeMap<String, String>,
) -> Result<DictionaryBuild> {
    if filtered.is_empty() {
        return Err(Error::EmptySet("no sample sets to build a dictionary from"));
    }
    let dim = filtered
        .iter()
        .find_map(|(s, _)| s.embedding_dim())
        .ok_or(Error::EmptyDictionary)?;
    let mut dictionary = EntityDictionary::new(dim);
    let mut dropped = BTreeSet::new();
    for (set, report) in filtered {
        if report.entity_id != set.entity_id {
            return Err(Error::Config(format!(
                "filter report for {} paired with sample set {}",
                report.entity_id, set.entity_id
            )));
        }
        let kept: BTreeSet<&str> = report.kept.iter().map(String::as_str).collect();
        let faces: Vec<&FaceEmbedding> = set
            .faces
            .iter()
            .filter(|f| kept.contains(f.face_id.as_str()))
            .map(|f| &f.embedding)
            .collect();
        if faces.is_empty() {
            warn!(entity = %set.entity_id, "all samples filtered out; entity dropped");
            dropped.insert(set.entity_id.clone());
            continue;
        }
        let display_name = names
            .get(&set.entity_id)
            .cloned()
            .unwrap_or_else(|| set.display_name.clone());
        dictionary.insert(
            set.entity_id.clone(),
            DictionaryEntry {
                display_name,
                embedding: mean_embedding(faces.iter().copied())?,
                sample_count: faces.len(),
            },
        )?;
    }
    if dictionary.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    Ok(DictionaryBuild {
        dictionary,
        dropped: dropped.into_iter().collect(),
    })
}

/// A candidate sample image for one entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleImage {
    /// Sort key and provenance name (the file name).
    pub name: String,
    pub locator: String,
}

/// Where sample images for an entity come from.
pub trait SampleImageSource: Send + Sync {
    /// At most `k` images for `entity`, in a stable order.
    fn images(&self, entity: &EntityRecord, k: usize) -> Result<Vec<SampleImage>>;
}

/// `<root>/<entity_id>/*`, ordered by file name. Hidden files are ignored.
#[derive(Debug, Clone)]
pub struct LocalDirectorySource {
    pub root: PathBuf,
}

impl SampleImageSource for LocalDirectorySource {
    fn images(&self, entity: &EntityRecord, k: usize) -> Result<Vec<SampleImage>> {
        let dir = self.root.join(&entity.entity_id);
        let mut images = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') || !entry.path().is_file() {
                continue;
            }
            images.push(SampleImage {
                locator: entry.path().to_string_lossy().into_owned(),
                name,
            });
        }
        images.sort_by(|a, b| a.name.cmp(&b.name));
        images.truncate(k);
        Ok(images)
    }
}

/// Downloads the URLs listed for an entity into a cache directory.
///
/// The list file has one `<entity_id> <url>` pair per line. Failed downloads
/// are logged and skipped.
#[derive(Debug, Clone)]
pub struct UrlListSource {
    pub urls: BTreeMap<String, Vec<String>>,
    pub cache_dir: PathBuf,
}

impl UrlListSource {
    pub fn load(list: &Path, cache_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut urls: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, line) in persist::read_to_string(list)?.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (entity, url) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| Error::Parse(format!("{}:{}: expected `<entity_id> <url>`", list.display(), i + 1)))?;
            urls.entry(entity.to_string()).or_default().push(url.trim().to_string());
        }
        Ok(Self {
            urls,
            cache_dir: cache_dir.into(),
        })
    }
}

impl SampleImageSource for UrlListSource {
    fn images(&self, entity: &EntityRecord, k: usize) -> Result<Vec<SampleImage>> {
        let Some(urls) = self.urls.get(&entity.entity_id) else {
            return Ok(Vec::new());
        };
        let dir = self.cache_dir.join(&entity.entity_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(30))
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        let mut images = Vec::new();
        for (i, url) in urls.iter().take(k).enumerate() {
            let base = url
                .rsplit('/')
                .next()
                .filter(|s| !s.is_empty())
                .unwrap_or("image")
                .split(['?', '#'])
                .next()
                .unwrap_or("image");
            let name = format!("{i:04}-{base}");
            let path = dir.join(&name);
            let fetched = client
                .get(url)
                .send()
                .and_then(|r| r.error_for_status())
                .and_then(|r| r.bytes());
            match fetched {
                Ok(bytes) => {
                    if let Err(e) = std::fs::write(&path, &bytes) {
                        warn!(%url, error = %e, "cannot cache sample image");
                        continue;
                    }
                    images.push(SampleImage {
                        name,
                        locator: path.to_string_lossy().into_owned(),
                    });
                }
                Err(e) => warn!(%url, error = %e, "sample image download failed"),
            }
        }
        Ok(images)
    }
}

/// Collects sample faces for `entity` from at most `k` images.
///
/// Every face of every image is kept, not just the most prominent one;
/// cleansing removes the other people. Images the provider cannot process
/// are skipped. Faces are ordered by (image name, face index).
pub fn gather_samples(
    entity: &EntityRecord,
    source: &dyn SampleImageSource,
    provider: &dyn FaceProvider,
    k: usize,
) -> Result<SampleSet> {
    let mut images = source.images(entity, k)?;
    images.sort_by(|a, b| a.name.cmp(&b.name));
    images.truncate(k);
    let mut faces = Vec::new();
    for image in &images {
        let detected = match provider.detect(&image.locator) {
            Ok(d) => d,
            Err(e) => {
                warn!(entity = %entity.entity_id, image = %image.name, error = %e, "skipping sample image");
                continue;
            }
        };
        for (index, face) in detected.into_iter().enumerate() {
            if face.embedding.dim() != provider.embedding_dim() {
                warn!(image = %image.name, "provider returned wrong embedding dimension");
                continue;
            }
            faces.push(SampleFace {
                face_id: format!("{}/{}#{index}", entity.entity_id, image.name),
                entity_id: entity.entity_id.clone(),
                embedding: face.embedding,
                source_image: image.locator.clone(),
                ground_truth: None,
                crop: face.crop,
            });
        }
    }
    if faces.is_empty() {
        return Err(Error::EmptySampleSet(entity.entity_id.clone()));
    }
    SampleSet::new(entity.entity_id.clone(), entity.display_name.clone(), faces)
}

/// [`gather_samples`] for many entities in parallel; results follow input order.
pub fn gather_all(
    entities: &[EntityRecord],
    source: &dyn SampleImageSource,
    provider: &dyn FaceProvider,
    k: usize,
) -> Vec<Result<SampleSet>> {
    entities
        .par_iter()
        .map(|e| gather_samples(e, source, provider, k))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct SampleSetHeader {
    entity_id: String,
    display_name: String,
    #[serde(default)]
    reference_face_id: Option<String>,
}

impl SampleSet {
    /// Header line (entity and reference) followed by one line per face.
    pub fn to_jsonl(&self) -> String {
        let mut out = persist::to_jsonl([SampleSetHeader {
            entity_id: self.entity_id.clone(),
            display_name: self.display_name.clone(),
            reference_face_id: self.reference_face_id.clone(),
        }]);
        out.push_str(&persist::to_jsonl(&self.faces));
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: SampleSetHeader = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| Error::Parse("empty sample set file".into()))?,
        )
        .map_err(|e| Error::Parse(format!("sample set header: {e}")))?;
        let faces = lines
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse(format!("sample face {}: {e}", i + 1))))
            .collect::<Result<Vec<SampleFace>>>()?;
        let set = SampleSet::new(header.entity_id, header.display_name, faces)?;
        match header.reference_face_id {
            Some(id) => set.set_reference(&id),
            None => Ok(set),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&persist::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::write_atomic(path, self.to_jsonl().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::normalize;
    use crate::synthetic::{at_similarity, random_unit, rng};
    use proptest::prelude::*;

    fn face(id: &str, v: FaceEmbedding, gt: Option<bool>) -> SampleFace {
        SampleFace {
            face_id: id.into(),
            entity_id: "Q1".into(),
            embedding: v,
            source_image: format!("{id}.jpg"),
            ground_truth: gt,
            crop: None,
        }
    }

    fn set_of(vs: &[&[f64]]) -> SampleSet {
        let faces = vs
            .iter()
            .enumerate()
            .map(|(i, v)| face(&format!("f{i}"), normalize(v).unwrap(), None))
            .collect();
        SampleSet::new("Q1", "One", faces).unwrap()
    }

    #[test]
    fn duplicate_face_ids_rejected() {
        let v = normalize(&[1.0, 0.0]).unwrap();
        assert!(SampleSet::new("Q1", "x", vec![face("a", v.clone(), None), face("a", v, None)]).is_err());
    }

    #[test]
    fn singleton_targets() {
        let set = set_of(&[&[0.3, 0.4]]).set_reference("f0").unwrap();
        let e = &set.faces()[0].embedding;
        assert_eq!(&select_target(&set, TargetStrategy::Mean).unwrap().embedding, e);
        assert_eq!(&select_target(&set, TargetStrategy::Reference).unwrap().embedding, e);
    }

    #[test]
    fn mean_and_reference_targets() {
        let set = set_of(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let mean = select_target(&set, TargetStrategy::Mean).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((mean.embedding.values()[0] - h).abs() < 1e-12);
        assert!(matches!(
            select_target(&set, TargetStrategy::Reference),
            Err(Error::MissingReference(_))
        ));
        let set = set.set_reference("f1").unwrap();
        let r = select_target(&set, TargetStrategy::Reference).unwrap();
        assert_eq!(r.embedding, set.faces()[1].embedding);
    }

    #[test]
    fn set_reference_semantics() {
        let set = set_of(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let once = set.clone().set_reference("f1").unwrap();
        assert_eq!(once.reference_face_id(), Some("f1"));
        assert_eq!(once.clone().set_reference("f1").unwrap(), once);
        assert!(matches!(set.set_reference("nope"), Err(Error::NotFound(_))));
    }

    #[test]
    fn filter_domain_extremes() {
        let set = set_of(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.2], &[1.0, 0.0]]);
        let target = Target {
            strategy: TargetStrategy::Mean,
            embedding: normalize(&[1.0, 0.0]).unwrap(),
            reference_face_id: None,
        };
        let all = filter_features(&set, &target, -1.0).unwrap();
        assert_eq!(all.kept.len(), 4);
        let none = filter_features(&set, &target, 1.0 + 1e-9).unwrap();
        assert_eq!(none.kept, vec!["f0", "f3"]);
        assert_eq!(none.removed, vec!["f1", "f2"]);
    }

    #[test]
    fn reference_face_is_always_kept() {
        let set = set_of(&[&[1.0, 0.0], &[0.1, 1.0], &[0.3, 0.7]])
            .set_reference("f2")
            .unwrap();
        let target = select_target(&set, TargetStrategy::Reference).unwrap();
        for lambda in [-1.0, 0.0, 0.9, 0.999999, 1.0, 1.5] {
            let r = filter_features(&set, &target, lambda).unwrap();
            assert!(r.kept.contains(&"f2".to_string()), "lambda {lambda}");
        }
    }

    #[test]
    fn separated_set_filters_exactly() {
        let mut r = rng(21);
        let centre = random_unit(&mut r, 64);
        let faces: Vec<_> = (0..30)
            .map(|i| {
                let genuine = i % 3 != 0;
                let sim = if genuine { 0.9 } else { 0.3 };
                face(&format!("f{i:02}"), at_similarity(&mut r, &centre, sim), Some(genuine))
            })
            .collect();
        let set = SampleSet::new("Q1", "One", faces).unwrap();
        let target = Target {
            strategy: TargetStrategy::Reference,
            embedding: centre,
            reference_face_id: None,
        };
        let report = filter_features(&set, &target, DEFAULT_LAMBDA1).unwrap();
        let m = evaluate_filtering(&report, &set).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        assert_eq!(report.removed.len(), 10);
    }

    #[test]
    fn metrics_degenerate_and_missing_annotation() {
        let m = FilterMetrics::from_counts(0, 0, 5);
        assert!(m.degenerate);
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 0.0, 0.0));
        let set = set_of(&[&[1.0, 0.0]]);
        let report = FilterReport::keep_all(&set, TargetStrategy::Mean);
        assert!(evaluate_filtering(&report, &set).is_err());
    }

    #[test]
    fn dictionary_drops_emptied_entities() {
        let a = set_of(&[&[1.0, 0.0]]);
        let mut b = set_of(&[&[0.0, 1.0]]);
        b.entity_id = "Q2".into();
        let ra = FilterReport::keep_all(&a, TargetStrategy::Mean);
        let rb = FilterReport {
            entity_id: "Q2".into(),
            kept: vec![],
            removed: vec!["f0".into()],
            strategy: TargetStrategy::Mean,
            threshold: 0.9,
        };
        let built = build_dictionary(&[(a.clone(), ra.clone()), (b.clone(), rb.clone())], &BTreeMap::new()).unwrap();
        assert_eq!(built.dictionary.len(), 1);
        assert_eq!(built.dropped, vec!["Q2"]);
        assert_eq!(built.dictionary.get("Q1").unwrap().embedding, a.faces()[0].embedding);
        assert!(matches!(
            build_dictionary(&[(b, rb)], &BTreeMap::new()),
            Err(Error::EmptyDictionary)
        ));
        assert!(matches!(
            build_dictionary(&[], &BTreeMap::new()),
            Err(Error::EmptySet(_))
        ));
    }

    #[test]
    fn file_formats_roundtrip() {
        let set = set_of(&[&[1.0, 2.0], &[0.5, -1.0]]).set_reference("f1").unwrap();
        assert_eq!(SampleSet::from_jsonl(&set.to_jsonl()).unwrap(), set);
        let report = FilterReport::keep_all(&set, TargetStrategy::Reference);
        let mut built = build_dictionary(&[(set, report)], &BTreeMap::new()).unwrap().dictionary;
        built.config = Some(DictionaryConfig {
            lambda1: 0.757,
            strategy: TargetStrategy::Reference,
        });
        let text = built.to_jsonl();
        assert!(
            text.starts_with(r#"{"version":1,"embedding_dim":2,"config":{"lambda1":0.757,"strategy":"reference"}}"#)
        );
        let back = EntityDictionary::from_jsonl(&text).unwrap();
        assert_eq!(back, built);
        assert_eq!(back.to_jsonl(), text);
    }

    fn random_set() -> impl Strategy<Value = (SampleSet, Vec<f64>)> {
        (any::<u64>(), 1usize..25).prop_map(|(seed, n)| {
            let mut r = rng(seed);
            let faces = (0..n)
                .map(|i| face(&format!("f{i}"), random_unit(&mut r, 6), None))
                .collect();
            let set = SampleSet::new("Q1", "x", faces).unwrap();
            let target = random_unit(&mut r, 6).values().to_vec();
            (set, target)
        })
    }

    proptest! {
        #[test]
        fn filter_partitions_and_is_monotone((set, t) in random_set(), l1 in -1.0f64..1.0, l2 in -1.0f64..1.0) {
            let target = Target { strategy: TargetStrategy::Mean, embedding: normalize(&t).unwrap(), reference_face_id: None };
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            let a = filter_features(&set, &target, lo).unwrap();
            let b = filter_features(&set, &target, hi).unwrap();
            prop_assert_eq!(a.kept.len() + a.removed.len(), set.len());
            let all: BTreeSet<_> = a.kept.iter().chain(&a.removed).collect();
            prop_assert_eq!(all.len(), set.len());
            let kept_lo: BTreeSet<_> = a.kept.iter().collect();
            prop_assert!(b.kept.iter().all(|id| kept_lo.contains(id)));
        }

        #[test]
        fn dictionary_is_order_independent(seeds in prop::collection::vec(any::<u64>(), 1..8)) {
            let mut pairs = Vec::new();
            for (i, seed) in seeds.iter().enumerate() {
                let mut r = rng(*seed);
                let faces: Vec<_> = (0..3).map(|j| SampleFace { entity_id: format!("E{i}"), ..face(&format!("f{j}"), random_unit(&mut r, 5), None) }).collect();
                let set = SampleSet::new(format!("E{i}"), "x", faces).unwrap();
                let report = FilterReport::keep_all(&set, TargetStrategy::Mean);
                pairs.push((set, report));
            }
            let forward = build_dictionary(&pairs, &BTreeMap::new()).unwrap();
            pairs.reverse();
            let backward = build_dictionary(&pairs, &BTreeMap::new()).unwrap();
            prop_assert_eq!(forward, backward);
        }
    }
}
