//! Face detector/embedder providers.
//!
//! A provider maps an image locator to the faces found in it, each with a
//! bounding box and an embedding. Detection and embedding models live outside
//! this crate; two providers are bundled:
//!
//! * [`ScriptedProvider`] replays recorded outputs (tests, demos).
//! * [`ExternalProcessProvider`] talks to a separately installed program over
//!   a line protocol: one locator per request line on stdin, one JSON line per
//!   response on stdout, either `[{"box":[x,y,w,h],"embedding":[...]}, ...]`
//!   or `{"error":"..."}`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::embedding::FaceEmbedding;
use crate::error::{Error, Result};

/// Pixel rectangle `[x, y, w, h]`; width and height are positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[i64; 4]")]
pub struct BoundingBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl BoundingBox {
    pub fn new(x: i64, y: i64, w: i64, h: i64) -> Result<Self> {
        if w <= 0 || h <= 0 {
            return Err(Error::Parse(format!("bounding box {w}x{h} must have positive size")));
        }
        Ok(Self { x, y, w, h })
    }
}

impl TryFrom<[i64; 4]> for BoundingBox {
    type Error = Error;
    fn try_from([x, y, w, h]: [i64; 4]) -> Result<Self> {
        Self::new(x, y, w, h)
    }
}

impl From<BoundingBox> for [i64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// One face as reported by a provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedFace {
    #[serde(rename = "box")]
    pub bounding_box: BoundingBox,
    pub embedding: FaceEmbedding,
    /// Path of a face crop image written by the provider, if it makes them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<String>,
}

pub trait FaceProvider: Send + Sync {
    /// Dimension of every embedding this provider returns.
    fn embedding_dim(&self) -> usize;

    /// Faces in the image at `locator`, in the provider's order. An image
    /// without faces is an empty list; an unreadable image is [`Error::Decode`].
    fn detect(&self, locator: &str) -> Result<Vec<DetectedFace>>;
}

/// A provider response line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProviderResponse {
    Faces(Vec<DetectedFace>),
    Error { error: String },
}

impl ProviderResponse {
    fn into_result(self, locator: &str) -> Result<Vec<DetectedFace>> {
        match self {
            ProviderResponse::Faces(f) => Ok(f),
            ProviderResponse::Error { error } => Err(Error::Decode {
                locator: locator.to_string(),
                message: error,
            }),
        }
    }
}

/// Replays a fixed locator → response script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedProvider {
    embedding_dim: usize,
    images: BTreeMap<String, ProviderResponse>,
}

impl ScriptedProvider {
    pub fn new(embedding_dim: usize) -> Self {
        Self {
            embedding_dim,
            images: BTreeMap::new(),
        }
    }

    /// Loads a script file: `{"embedding_dim": d, "images": {locator: response}}`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let script: Self = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        for faces in script.images.values() {
            if let ProviderResponse::Faces(faces) = faces {
                if let Some(f) = faces.iter().find(|f| f.embedding.dim() != script.embedding_dim) {
                    return Err(Error::dim(script.embedding_dim, f.embedding.dim()));
                }
            }
        }
        Ok(script)
    }

    pub fn insert(&mut self, locator: impl Into<String>, faces: Vec<DetectedFace>) -> &mut Self {
        self.images.insert(locator.into(), ProviderResponse::Faces(faces));
        self
    }

    pub fn insert_error(&mut self, locator: impl Into<String>, message: impl Into<String>) -> &mut Self {
        self.images
            .insert(locator.into(), ProviderResponse::Error { error: message.into() });
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }
}

impl FaceProvider for ScriptedProvider {
    fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    fn detect(&self, locator: &str) -> Result<Vec<DetectedFace>> {
        match self.images.get(locator) {
            Some(response) => response.clone().into_result(locator),
            None => Err(Error::Decode {
                locator: locator.to_string(),
                message: "not in provider script".into(),
            }),
        }
    }
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Worker {
    fn round_trip(&mut self, locator: &str) -> Result<Vec<DetectedFace>> {
        let decode = |message: String| Error::Decode {
            locator: locator.to_string(),
            message,
        };
        writeln!(self.stdin, "{locator}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| decode(format!("writing to provider: {e}")))?;
        let mut line = String::new();
        let n = self
            .stdout
            .read_line(&mut line)
            .map_err(|e| decode(format!("reading from provider: {e}")))?;
        if n == 0 {
            return Err(decode("provider process closed its output".into()));
        }
        let response: ProviderResponse =
            serde_json::from_str(line.trim_end()).map_err(|e| decode(format!("bad provider response: {e}")))?;
        response.into_result(locator)
    }
}

/// Runs `instances` copies of an external detector/embedder program.
///
/// Requests to one process are serialized; concurrent callers spread over
/// the instances.
pub struct ExternalProcessProvider {
    embedding_dim: usize,
    workers: Vec<Mutex<Worker>>,
    next: AtomicUsize,
}

impl ExternalProcessProvider {
    pub fn spawn(program: &str, args: &[String], embedding_dim: usize, instances: usize) -> Result<Self> {
        let workers = (0..instances.max(1))
            .map(|_| {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::io(program, e))?;
                let stdin = child.stdin.take().expect("stdin was piped");
                let stdout = BufReader::new(child.stdout.take().expect("stdout was piped"));
                Ok(Mutex::new(Worker { child, stdin, stdout }))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            embedding_dim,
            workers,
            next: AtomicUsize::new(0),
        })
    }
}

impl FaceProvider for ExternalProcessProvider {
    fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    fn detect(&self, locator: &str) -> Result<Vec<DetectedFace>> {
        if locator.contains(['\n', '\r']) {
            return Err(Error::Decode {
                locator: locator.to_string(),
                message: "locator contains a line break".into(),
            });
        }
        let start = self.next.fetch_add(1, Ordering::Relaxed);
        let n = self.workers.len();
        for offset in 0..n {
            if let Ok(mut w) = self.workers[(start + offset) % n].try_lock() {
                return w.round_trip(locator);
            }
        }
        let mut w = self.workers[start % n].lock().unwrap_or_else(|p| p.into_inner());
        w.round_trip(locator)
    }
}

impl Drop for ExternalProcessProvider {
    fn drop(&mut self) {
        for w in &mut self.workers {
            let w = w.get_mut().unwrap_or_else(|p| p.into_inner());
            let _ = w.child.kill();
            let _ = w.child.wait();
        }
    }
}
