//! Archive corpus manifests and the search space that restricts them.
//!
//! A manifest is a plain-text index with one image per line:
//!
//! ```text
//! <url> <14-digit capture timestamp> <mime> <content digest> <locator>
//! ```
//!
//! Malformed lines are collected as rejects instead of failing the parse.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::embedding::FaceEmbedding;
use crate::error::{Error, Result};
use crate::provider::{BoundingBox, FaceProvider};

pub const MIME_JPEG: &str = "image/jpeg";
pub const MIME_PNG: &str = "image/png";
pub const MIME_GIF: &str = "image/gif";

/// Capture time in the 14-digit `YYYYMMDDhhmmss` archive convention (UTC).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ArchiveTimestamp(NaiveDateTime);

impl ArchiveTimestamp {
    pub fn datetime(&self) -> NaiveDateTime {
        self.0
    }

    /// First and last second of `year`.
    pub fn year_bounds(year: i32) -> Result<(Self, Self)> {
        let start = format!("{year:04}0101000000").parse()?;
        let end = format!("{year:04}1231235959").parse()?;
        Ok((start, end))
    }
}

impl FromStr for ArchiveTimestamp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() != 14 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::Parse(format!("bad timestamp {s:?}")));
        }
        NaiveDateTime::parse_from_str(s, "%Y%m%d%H%M%S")
            .map(ArchiveTimestamp)
            .map_err(|_| Error::Parse(format!("bad timestamp {s:?}")))
    }
}

impl fmt::Display for ArchiveTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y%m%d%H%M%S"))
    }
}

impl Serialize for ArchiveTimestamp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ArchiveTimestamp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Identity of one archived image: the same URL captured at two times is two images.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ImageKey {
    pub url: String,
    pub timestamp: ArchiveTimestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub url: String,
    pub domain: String,
    pub capture_timestamp: ArchiveTimestamp,
    pub mime: String,
    pub content_digest: String,
    pub locator: String,
}

impl ImageRecord {
    pub fn new(
        url: &str,
        capture_timestamp: ArchiveTimestamp,
        mime: &str,
        content_digest: &str,
        locator: &str,
    ) -> Result<Self> {
        let parsed = url::Url::parse(url).map_err(|_| Error::Parse(format!("bad url {url:?}")))?;
        let host = parsed
            .host_str()
            .filter(|h| !h.is_empty())
            .ok_or_else(|| Error::Parse(format!("bad url {url:?}: no host")))?;
        if !mime.contains('/') {
            return Err(Error::Parse(format!("bad mime {mime:?}")));
        }
        Ok(Self {
            url: url.to_string(),
            domain: registrable_domain(host),
            capture_timestamp,
            mime: mime.to_ascii_lowercase(),
            content_digest: content_digest.to_string(),
            locator: locator.to_string(),
        })
    }

    pub fn key(&self) -> ImageKey {
        ImageKey {
            url: self.url.clone(),
            timestamp: self.capture_timestamp,
        }
    }
}

/// Last two labels of `host` (`www.welt.de` → `welt.de`). No public-suffix
/// list is consulted, so multi-label suffixes such as `co.uk` are not handled.
pub fn registrable_domain(host: &str) -> String {
    let host = host.trim_end_matches('.').to_ascii_lowercase();
    if host.parse::<std::net::IpAddr>().is_ok() {
        return host;
    }
    let labels: Vec<&str> = host.split('.').collect();
    labels[labels.len().saturating_sub(2)..].join(".")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestReject {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedManifest {
    pub records: Vec<ImageRecord>,
    pub rejects: Vec<ManifestReject>,
}

fn parse_line(line: &str) -> std::result::Result<ImageRecord, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let [url, timestamp, mime, digest, locator] = fields[..] else {
        return Err(format!("expected 5 fields, found {}", fields.len()));
    };
    let timestamp: ArchiveTimestamp = timestamp.parse().map_err(|_| "bad timestamp".to_string())?;
    ImageRecord::new(url, timestamp, mime, digest, locator).map_err(|e| match e {
        Error::Parse(m) => m,
        other => other.to_string(),
    })
}

/// Parses manifest text. Blank lines are skipped; every other line yields
/// either a record or a reject.
pub fn parse_manifest_str(text: &str) -> ParsedManifest {
    let mut out = ParsedManifest::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok(r) => out.records.push(r),
            Err(reason) => out.rejects.push(ManifestReject { line: i + 1, reason }),
        }
    }
    out
}

pub fn parse_manifest(path: &Path) -> Result<ParsedManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_manifest_str(&text))
}

/// Maps a short format name (`jpeg`, `jpg`, `png`, `gif`) or a MIME type to a MIME type.
pub fn format_to_mime(format: &str) -> Result<String> {
    let f = format.trim().to_ascii_lowercase();
    match f.as_str() {
        "jpeg" | "jpg" => Ok(MIME_JPEG.into()),
        "png" => Ok(MIME_PNG.into()),
        "gif" => Ok(MIME_GIF.into()),
        m if m.starts_with("image/") => Ok(f),
        _ => Err(Error::Config(format!("unknown image format {format:?}"))),
    }
}

/// Which archived images are searched: domains, declared formats and capture dates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    allowed_domains: BTreeSet<String>,
    allowed_formats: BTreeSet<String>,
    start: ArchiveTimestamp,
    end: ArchiveTimestamp,
}

impl SearchSpace {
    /// `formats` accepts short names or MIME types. GIF is refused: animated
    /// and decorative GIFs are a common spam source.
    pub fn new<D, F>(domains: D, formats: F, start: ArchiveTimestamp, end: ArchiveTimestamp) -> Result<Self>
    where
        D: IntoIterator,
        D::Item: AsRef<str>,
        F: IntoIterator,
        F::Item: AsRef<str>,
    {
        if start > end {
            return Err(Error::Config(format!("date range start {start} is after end {end}")));
        }
        let allowed_formats = formats
            .into_iter()
            .map(|f| format_to_mime(f.as_ref()))
            .collect::<Result<BTreeSet<_>>>()?;
        if allowed_formats.contains(MIME_GIF) {
            return Err(Error::Config("image/gif is excluded by the format policy".into()));
        }
        let allowed_domains = domains
            .into_iter()
            .map(|d| d.as_ref().trim().trim_end_matches('.').to_ascii_lowercase())
            .collect();
        Ok(Self {
            allowed_domains,
            allowed_formats,
            start,
            end,
        })
    }

    /// JPEG and PNG captured during `year`.
    pub fn for_year<D>(domains: D, year: i32) -> Result<Self>
    where
        D: IntoIterator,
        D::Item: AsRef<str>,
    {
        let (start, end) = ArchiveTimestamp::year_bounds(year)?;
        Self::new(domains, ["jpeg", "png"], start, end)
    }

    pub fn allowed_domains(&self) -> &BTreeSet<String> {
        &self.allowed_domains
    }

    pub fn allowed_formats(&self) -> &BTreeSet<String> {
        &self.allowed_formats
    }

    pub fn date_range(&self) -> (ArchiveTimestamp, ArchiveTimestamp) {
        (self.start, self.end)
    }

    pub fn admits_domain(&self, r: &ImageRecord) -> bool {
        self.allowed_domains.contains(&r.domain)
    }

    pub fn admits_format(&self, r: &ImageRecord) -> bool {
        self.allowed_formats.contains(&r.mime)
    }

    pub fn admits_date(&self, r: &ImageRecord) -> bool {
        self.start <= r.capture_timestamp && r.capture_timestamp <= self.end
    }

    pub fn admits(&self, r: &ImageRecord) -> bool {
        self.admits_domain(r) && self.admits_format(r) && self.admits_date(r)
    }
}

/// Records inside `space`, in input order.
pub fn apply_constraints(records: &[ImageRecord], space: &SearchSpace) -> Vec<ImageRecord> {
    records.iter().filter(|r| space.admits(r)).cloned().collect()
}

/// One record per content digest, keeping the earliest capture. Survivors keep
/// the position of the first record seen with their digest.
pub fn dedupe(records: &[ImageRecord]) -> Vec<ImageRecord> {
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut out: Vec<ImageRecord> = Vec::new();
    for r in records {
        match slot.get(r.content_digest.as_str()) {
            Some(&i) => {
                if r.capture_timestamp < out[i].capture_timestamp {
                    out[i] = r.clone();
                }
            }
            None => {
                slot.insert(&r.content_digest, out.len());
                out.push(r.clone());
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceObservation {
    pub image: ImageKey,
    pub face_index: usize,
    pub bounding_box: BoundingBox,
    pub embedding: FaceEmbedding,
}

impl FaceObservation {
    /// Stable identifier used in embedding manifests and pair files.
    pub fn id(&self) -> String {
        format!("{}/{}#{}", self.image.timestamp, self.image.url, self.face_index)
    }
}

/// Runs the detector/embedder on one image.
pub fn detect_and_embed(record: &ImageRecord, provider: &dyn FaceProvider) -> Result<Vec<FaceObservation>> {
    let faces = provider.detect(&record.locator)?;
    let dim = provider.embedding_dim();
    faces
        .into_iter()
        .enumerate()
        .map(|(face_index, face)| {
            if face.embedding.dim() != dim {
                return Err(Error::dim(dim, face.embedding.dim()));
            }
            Ok(FaceObservation {
                image: record.key(),
                face_index,
                bounding_box: face.bounding_box,
                embedding: face.embedding,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFailure {
    pub image: ImageKey,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchDetection {
    /// Sorted by image key, then face index.
    pub observations: Vec<FaceObservation>,
    /// Images (sorted by key) the provider could not process.
    pub failures: Vec<DetectionFailure>,
}

/// Runs [`detect_and_embed`] over `records` on at most `workers` threads.
/// Failed images are recorded and skipped; output order never depends on
/// completion order.
pub fn detect_batch(records: &[ImageRecord], provider: &dyn FaceProvider, workers: usize) -> Result<BatchDetection> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let results: Vec<(ImageKey, Result<Vec<FaceObservation>>)> = pool.install(|| {
        records
            .par_iter()
            .map(|r| (r.key(), detect_and_embed(r, provider)))
            .collect()
    });
    let mut out = BatchDetection::default();
    for (image, result) in results {
        match result {
            Ok(obs) => out.observations.extend(obs),
            Err(e) => {
                warn!(url = %image.url, timestamp = %image.timestamp, error = %e, "skipping image");
                out.failures.push(DetectionFailure {
                    image,
                    message: e.to_string(),
                });
            }
        }
    }
    out.observations
        .sort_by(|a, b| a.image.cmp(&b.image).then(a.face_index.cmp(&b.face_index)));
    out.failures.sort_by(|a, b| a.image.cmp(&b.image));
    Ok(out)
}
