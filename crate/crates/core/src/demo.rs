//! A small deterministic scenario: four persons, annotated sample sets, a
//! scripted detector and a twelve-image archive manifest with a few records
//! that the 2013 / welt.de / JPEG+PNG search space rejects.
//!
//! Recognized persons per admitted image:
//!
//! ```text
//! 01 A B     04 B C      07 (no faces)    10 (undecodable)
//! 02 A B C   05 A A      08 A D           11 B D
//! 03 A       06 unknown  09 C unknown     12 A B D
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use crate::dictionary::{build_dictionary, preview_filter, EntityDictionary, SampleFace, SampleSet, TargetStrategy};
use crate::embedding::{normalize, FaceEmbedding};
use crate::error::Result;
use crate::identification::results_to_jsonl;
use crate::ingestion::{parse_manifest_str, SearchSpace};
use crate::persist;
use crate::pipeline::{run_identification, RunConfig};
use crate::provider::{BoundingBox, DetectedFace, ScriptedProvider};
use crate::synthetic::{self, at_similarity};
use crate::workspace::{Session, Workspace};

pub const DEMO_DIM: usize = 16;
pub const DEMO_DOMAIN: &str = "welt.de";
pub const DEMO_YEAR: i32 = 2013;

/// (entity id, display name)
pub const DEMO_ENTITIES: [(&str, &str); 4] = [
    ("Q1", "Anna Adler"),
    ("Q2", "Bernd Bauer"),
    ("Q3", "Clara Cremer"),
    ("Q4", "Dieter Dorn"),
];

#[derive(Debug, Clone, Copy)]
enum Face {
    Known(usize),
    Unknown(usize),
}

enum Script {
    Faces(&'static [Face]),
    Undecodable,
}

use Face::{Known, Unknown};

/// (file stem, capture timestamp, mime, detector output)
const IMAGES: [(&str, &str, &str, Script); 15] = [
    (
        "01",
        "20130105101500",
        "image/jpeg",
        Script::Faces(&[Known(0), Known(1)]),
    ),
    (
        "02",
        "20130211083000",
        "image/jpeg",
        Script::Faces(&[Known(0), Known(1), Known(2)]),
    ),
    ("03", "20130301120000", "image/png", Script::Faces(&[Known(0)])),
    (
        "04",
        "20130415090000",
        "image/jpeg",
        Script::Faces(&[Known(1), Known(2)]),
    ),
    (
        "05",
        "20130520170000",
        "image/jpeg",
        Script::Faces(&[Known(0), Known(0)]),
    ),
    ("06", "20130603110000", "image/png", Script::Faces(&[Unknown(0)])),
    ("07", "20130704143000", "image/jpeg", Script::Faces(&[])),
    (
        "08",
        "20130812101010",
        "image/jpeg",
        Script::Faces(&[Known(0), Known(3)]),
    ),
    (
        "09",
        "20130909090909",
        "image/jpeg",
        Script::Faces(&[Known(2), Unknown(1)]),
    ),
    ("10", "20131010101010", "image/jpeg", Script::Undecodable),
    (
        "11",
        "20131111111111",
        "image/png",
        Script::Faces(&[Known(1), Known(3)]),
    ),
    (
        "12",
        "20131231235959",
        "image/jpeg",
        Script::Faces(&[Known(0), Known(1), Known(3)]),
    ),
    // Outside the search space.
    (
        "spam",
        "20130601000000",
        "image/gif",
        Script::Faces(&[Known(0), Known(1)]),
    ),
    (
        "old",
        "20121231235959",
        "image/jpeg",
        Script::Faces(&[Known(2), Known(3)]),
    ),
    (
        "other",
        "20130601000000",
        "image/jpeg",
        Script::Faces(&[Known(0), Known(2)]),
    ),
];

pub struct Scenario {
    pub manifest: String,
    pub provider: ScriptedProvider,
    pub sample_sets: Vec<SampleSet>,
    pub dictionary: EntityDictionary,
    pub names: BTreeMap<String, String>,
    pub space: SearchSpace,
}

fn basis(i: usize) -> FaceEmbedding {
    let mut v = vec![0.0; DEMO_DIM];
    v[i] = 1.0;
    normalize(&v).expect("basis vector")
}

fn bbox(i: usize) -> BoundingBox {
    BoundingBox::new(20 + 60 * i as i64, 30, 48, 48).expect("positive size")
}

/// Builds the scenario for `seed`; every output is a pure function of the seed.
pub fn scripted_scenario(seed: u64) -> Result<Scenario> {
    let mut rng = synthetic::rng(seed);
    let names: BTreeMap<String, String> = DEMO_ENTITIES
        .iter()
        .map(|(id, name)| (id.to_string(), name.to_string()))
        .collect();

    // Six genuine faces around the person's axis, two faces of a neighbour.
    let mut sample_sets = Vec::new();
    for (e, (id, name)) in DEMO_ENTITIES.iter().enumerate() {
        let mut faces = Vec::new();
        for j in 0..8 {
            let genuine = j < 6;
            let axis = if genuine { e } else { (e + 1) % DEMO_ENTITIES.len() };
            let s = if j == 0 { 0.99 } else { rng.random_range(0.85..0.95) };
            faces.push(SampleFace {
                face_id: format!("{id}/{j:02}.jpg#0"),
                entity_id: id.to_string(),
                embedding: at_similarity(&mut rng, &basis(axis), s),
                source_image: format!("samples/{id}/{j:02}.jpg"),
                ground_truth: Some(genuine),
                crop: Some(format!("{id}/{j:02}.png")),
            });
        }
        sample_sets.push(SampleSet::new(*id, *name, faces)?.set_reference(&format!("{id}/00.jpg#0"))?);
    }

    let filtered = sample_sets
        .iter()
        .map(|s| {
            Ok((
                s.clone(),
                preview_filter(s, TargetStrategy::Reference, crate::dictionary::DEFAULT_LAMBDA1)?.report,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let dictionary = build_dictionary(&filtered, &names)?.dictionary;
    let entries: Vec<FaceEmbedding> = dictionary.entries().values().map(|e| e.embedding.clone()).collect();

    let mut provider = ScriptedProvider::new(DEMO_DIM);
    let mut manifest = String::new();
    for (stem, timestamp, mime, script) in IMAGES.iter() {
        let host = if *stem == "other" { "www.bild.de" } else { "www.welt.de" };
        let ext = if mime.ends_with("png") {
            "png"
        } else if mime.ends_with("gif") {
            "gif"
        } else {
            "jpg"
        };
        let locator = format!("archive/{stem}.{ext}");
        manifest.push_str(&format!(
            "http://{host}/politik/{stem}.{ext} {timestamp} {mime} sha1:{stem} {locator}\n"
        ));
        match script {
            Script::Undecodable => {
                provider.insert_error(locator, "truncated image data");
            }
            Script::Faces(faces) => {
                let detected = faces
                    .iter()
                    .enumerate()
                    .map(|(i, f)| {
                        let embedding = match f {
                            Known(e) => {
                                let s = rng.random_range(0.93..0.99);
                                at_similarity(&mut rng, &entries[*e], s)
                            }
                            Unknown(k) => basis(8 + k),
                        };
                        DetectedFace {
                            bounding_box: bbox(i),
                            embedding,
                            crop: None,
                        }
                    })
                    .collect();
                provider.insert(locator, detected);
            }
        }
    }

    Ok(Scenario {
        manifest,
        provider,
        sample_sets,
        dictionary,
        names,
        space: SearchSpace::for_year([DEMO_DOMAIN], DEMO_YEAR)?,
    })
}

/// Writes a ready-to-serve workspace plus the scenario inputs:
/// `manifest.txt`, `provider.json`, samples, placeholder crops, the
/// dictionary and the identification results.
pub fn write_demo_workspace(root: &Path, seed: u64) -> Result<Scenario> {
    let scenario = scripted_scenario(seed)?;
    let ws = Workspace::new(root);
    std::fs::create_dir_all(ws.samples_dir()).map_err(|e| crate::Error::io(ws.samples_dir(), e))?;
    for set in &scenario.sample_sets {
        ws.save_sample_set(set)?;
        for face in set.faces() {
            if let Some(crop) = &face.crop {
                let path = ws.crops_dir().join(crop);
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
                }
                // A 1x1 PNG stands in for the real crop.
                persist::write_atomic(&path, PLACEHOLDER_PNG)?;
            }
        }
    }
    ws.save_session(&Session {
        strategy: TargetStrategy::Reference,
        lambda1: crate::dictionary::DEFAULT_LAMBDA1,
    })?;
    scenario.dictionary.save(&ws.dictionary_path())?;
    persist::write_atomic(&root.join("manifest.txt"), scenario.manifest.as_bytes())?;
    persist::write_atomic(&root.join("provider.json"), scenario.provider.to_json().as_bytes())?;
    let records = parse_manifest_str(&scenario.manifest).records;
    let run = run_identification(
        &records,
        &scenario.space,
        &scenario.provider,
        &scenario.dictionary,
        &RunConfig::default(),
    )?;
    persist::write_atomic(&ws.results_path(), results_to_jsonl(&run.results).as_bytes())?;
    Ok(scenario)
}

const PLACEHOLDER_PNG: &[u8] = &[
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00, 0x00,
    0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00, 0x00, 0x1f, 0x15, 0xc4, 0x89, 0x00, 0x00, 0x00, 0x0d, 0x49,
    0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0xf8, 0xcf, 0xc0, 0xf0, 0x1f, 0x00, 0x05, 0x00, 0x01, 0xff, 0x89, 0x99, 0x3d,
    0x1d, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82,
];
