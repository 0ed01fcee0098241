//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use archface_core::calibration::{
    best_threshold, best_threshold_scored, kfold_calibrate, ScoredPair, VerificationPair,
};
use archface_core::cooccurrence::{
    build_graph, count_occurrences, export_graph, import_graph_json, EntityPair, GraphFormat,
};
use archface_core::demo::{scripted_scenario, write_demo_workspace};
use archface_core::dictionary::{
    evaluate_filtering, preview_filter, DictionaryEntry, EntityDictionary, FilterReport, SampleFace, SampleSet,
    TargetStrategy, DEFAULT_LAMBDA1,
};
use archface_core::embedding::{cosine_similarity, mean_embedding, FaceEmbedding};
use archface_core::identification::{identify_face, IdentificationResult, Recognition};
use archface_core::ingestion::{apply_constraints, parse_manifest_str, ImageKey, SearchSpace, MIME_GIF};
use archface_core::loss::{cross_entropy, ProbabilityDistribution};
use archface_core::pipeline::{relation_graph, run_identification, RunConfig};
use archface_core::synthetic::{self, at_similarity, random_unit, GaussianClasses, PairDistribution};
use archface_core::toy::{
    extract_features, train_toy_representation, Matrix, ToyRepresentationModel, ToyTrainingConfig,
};
use archface_core::workspace::Workspace;
use rand::Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn loss_and_mean() -> Check {
    let perfect = ProbabilityDistribution::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let target = ProbabilityDistribution::one_hot(0, 4).unwrap();
    let uniform = ProbabilityDistribution::new(vec![0.25; 4]).unwrap();
    let zero = cross_entropy(&perfect, &target).unwrap();
    let ln4 = cross_entropy(&uniform, &target).unwrap();
    ensure(zero.abs() <= 1e-9, || format!("perfect prediction loss {zero}"))?;
    ensure((ln4 - 4f64.ln()).abs() <= 1e-9, || format!("uniform loss {ln4}"))?;

    let mut rng = synthetic::rng(1);
    let mut worst = 0f64;
    for _ in 0..1000 {
        let dim = rng.random_range(1..=32);
        let n = rng.random_range(1..=20);
        let set: Vec<FaceEmbedding> = (0..n).map(|_| random_unit(&mut rng, dim)).collect();
        let Ok(got) = mean_embedding(&set) else { continue };
        let mut avg = vec![0.0; dim];
        for e in &set {
            for (a, v) in avg.iter_mut().zip(e.values()) {
                *a += v / n as f64;
            }
        }
        let norm = avg.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (g, a) in got.values().iter().zip(&avg) {
            worst = worst.max((g - a / norm).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("mean embedding deviates by {worst:e}"))?;
    Ok(format!("max mean deviation {worst:.1e}"))
}

fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

fn gradient_check() -> Check {
    let mut rng = synthetic::rng(2);
    let h = 1e-5;
    let mut worst = 0f64;
    for _ in 0..100 {
        let (input, hidden, classes) = (
            rng.random_range(2..=6),
            rng.random_range(2..=5),
            rng.random_range(2..=4),
        );
        let model = ToyRepresentationModel {
            projection: random_matrix(&mut rng, input, hidden),
            classifier: random_matrix(&mut rng, hidden, classes),
            classes,
            loss_history: Vec::new(),
        };
        let samples: Vec<(Vec<f64>, usize)> = (0..rng.random_range(1..=6))
            .map(|_| {
                (
                    (0..input).map(|_| rng.random_range(-2.0..2.0)).collect(),
                    rng.random_range(0..classes),
                )
            })
            .collect();
        let (_, grads) = model.loss_and_gradients(&samples);
        for which in 0..2 {
            let len = if which == 0 {
                model.projection.data.len()
            } else {
                model.classifier.data.len()
            };
            for i in 0..len {
                let shifted = |delta: f64| {
                    let mut m = model.clone();
                    let w = if which == 0 {
                        &mut m.projection.data[i]
                    } else {
                        &mut m.classifier.data[i]
                    };
                    *w += delta;
                    m.loss(&samples)
                };
                let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
                let analytic = if which == 0 {
                    grads.projection.data[i]
                } else {
                    grads.classifier.data[i]
                };
                let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    ensure(worst <= 1e-4, || format!("relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.1e}"))
}

fn clustering() -> Check {
    let data = GaussianClasses {
        classes: 3,
        per_class: 40,
        input_dim: 10,
        separation: 4.0,
        noise: 1.0,
        seed: 5,
    };
    let model = train_toy_representation(&data.sample(1), &ToyTrainingConfig::default()).map_err(|e| e.to_string())?;
    let features: Vec<(FaceEmbedding, usize)> = data
        .sample(2)
        .iter()
        .map(|(x, y)| (extract_features(&model, x).unwrap(), *y))
        .collect();
    let (mut intra, mut ni, mut inter, mut ne) = (0.0, 0, 0.0, 0);
    for (i, (a, la)) in features.iter().enumerate() {
        for (b, lb) in &features[i + 1..] {
            let s = cosine_similarity(a, b).unwrap();
            if la == lb {
                intra += s;
                ni += 1;
            } else {
                inter += s;
                ne += 1;
            }
        }
    }
    let margin = intra / ni as f64 - inter / ne as f64;
    ensure(margin >= 0.2, || format!("margin {margin:.3}"))?;
    Ok(format!("intra - inter = {margin:.3}"))
}

fn midpoint_oracle(pairs: &[ScoredPair]) -> (f64, f64) {
    let mut sims: Vec<f64> = pairs.iter().map(|p| p.similarity).collect();
    sims.sort_by(f64::total_cmp);
    sims.dedup();
    let mut candidates = vec![(sims[0] - 1e-6).max(-1.0)];
    candidates.extend(sims.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.push(sims[sims.len() - 1] + 1e-6);
    let mut best = (candidates[0], -1.0);
    for t in candidates {
        let acc = pairs.iter().filter(|p| (p.similarity >= t) == p.same_person).count() as f64 / pairs.len() as f64;
        if acc > best.1 {
            best = (t, acc);
        }
    }
    best
}

fn calibration() -> Check {
    let pairs = PairDistribution {
        positive_mean: 0.85,
        positive_std: 0.03,
        negative_mean: 0.40,
        negative_std: 0.08,
        positives: 300,
        negatives: 300,
        dim: 32,
    }
    .generate(42);
    let r = kfold_calibrate(&pairs, 10, 42).map_err(|e| e.to_string())?;
    ensure(r.mean_accuracy >= 0.99, || format!("mean accuracy {}", r.mean_accuracy))?;
    ensure(r.threshold_std <= 0.03, || format!("threshold std {}", r.threshold_std))?;

    let mut rng = synthetic::rng(3);
    let mut instances = 0;
    for n in 1..=100 {
        for _ in 0..5 {
            let coarse = rng.random_bool(0.3);
            let scored: Vec<ScoredPair> = (0..n)
                .map(|_| {
                    let s: f64 = rng.random_range(-1.0..1.0);
                    ScoredPair {
                        similarity: if coarse { (s * 4.0).round() / 4.0 } else { s },
                        same_person: rng.random_bool(0.5),
                    }
                })
                .collect();
            let fit = best_threshold_scored(&scored);
            let (t, acc) = midpoint_oracle(&scored);
            ensure(fit.accuracy == acc && (fit.threshold - t).abs() < 1e-12, || {
                format!("n={n}: {fit:?} vs ({t}, {acc})")
            })?;
            instances += 1;
        }
        // The same check through embeddings.
        let dim = 8;
        let pairs: Vec<VerificationPair> = (0..n)
            .map(|_| {
                let a = random_unit(&mut rng, dim);
                let s = rng.random_range(-0.9..0.99);
                let b = at_similarity(&mut rng, &a, s);
                VerificationPair::new(a, b, rng.random_bool(0.5)).unwrap()
            })
            .collect();
        let scored: Vec<ScoredPair> = pairs
            .iter()
            .map(|p| ScoredPair {
                similarity: p.similarity(),
                same_person: p.same_person,
            })
            .collect();
        let fit = best_threshold(&pairs).map_err(|e| e.to_string())?;
        let (t, acc) = midpoint_oracle(&scored);
        ensure(fit.accuracy == acc && (fit.threshold - t).abs() < 1e-12, || {
            format!("pairs n={n}")
        })?;
        instances += 1;
    }
    Ok(format!(
        "accuracy {:.4}, threshold {:.4} ± {:.4}; {instances} sweep instances",
        r.mean_accuracy, r.mean_threshold, r.threshold_std
    ))
}

fn crawled_set(seed: u64, genuine: usize, impostors: usize) -> SampleSet {
    let mut rng = synthetic::rng(seed);
    let dim = 64;
    let centre = random_unit(&mut rng, dim);
    let companion = random_unit(&mut rng, dim);
    let mut faces = Vec::new();
    for i in 0..genuine + impostors {
        let genuine_face = i < genuine;
        let embedding = if genuine_face {
            let s = if i == 0 { 0.99 } else { rng.random_range(0.80..0.95) };
            at_similarity(&mut rng, &centre, s)
        } else if rng.random_bool(0.85) {
            let s = rng.random_range(0.80..0.95);
            at_similarity(&mut rng, &companion, s)
        } else {
            random_unit(&mut rng, dim)
        };
        faces.push(SampleFace {
            face_id: format!("E/{i:04}.jpg#0"),
            entity_id: "E".into(),
            embedding,
            source_image: format!("{i:04}.jpg"),
            ground_truth: Some(genuine_face),
            crop: None,
        });
    }
    SampleSet::new("E", "Entity", faces)
        .unwrap()
        .set_reference("E/0000.jpg#0")
        .unwrap()
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn table_composition() -> Check {
    let set = crawled_set(1, 669, 331);
    let none =
        evaluate_filtering(&FilterReport::keep_all(&set, TargetStrategy::Mean), &set).map_err(|e| e.to_string())?;
    let row = (round3(none.precision), round3(none.recall), round3(none.f1));
    ensure(row == (0.669, 1.0, 0.802), || format!("no-filter row {row:?}"))?;
    for seed in 0..5 {
        let set = crawled_set(seed, 669, 331);
        let none = evaluate_filtering(&FilterReport::keep_all(&set, TargetStrategy::Mean), &set).unwrap();
        let mean = preview_filter(&set, TargetStrategy::Mean, DEFAULT_LAMBDA1)
            .unwrap()
            .metrics
            .unwrap();
        let reference = preview_filter(&set, TargetStrategy::Reference, DEFAULT_LAMBDA1)
            .unwrap()
            .metrics
            .unwrap();
        ensure(reference.f1 > none.f1, || {
            format!("seed {seed}: F1 reference {} <= none {}", reference.f1, none.f1)
        })?;
        ensure(mean.recall < reference.recall, || {
            format!(
                "seed {seed}: recall mean {} >= reference {}",
                mean.recall, reference.recall
            )
        })?;
    }
    Ok(format!(
        "no filtering {:.3}/{:.3}/{:.3}; ordering holds on 5 seeds",
        row.0, row.1, row.2
    ))
}

fn identification() -> Check {
    let mut rng = synthetic::rng(4);
    let mut ties = 0;
    for instance in 0..10_000 {
        let dim = rng.random_range(2..=16);
        let size = rng.random_range(1..=20);
        let mut entries: Vec<FaceEmbedding> = (0..size).map(|_| random_unit(&mut rng, dim)).collect();
        let query = if rng.random_bool(0.6) {
            let (e, s) = (rng.random_range(0..size), rng.random_range(0.5..1.0));
            at_similarity(&mut rng, &entries[e], s)
        } else {
            random_unit(&mut rng, dim)
        };
        let tie = rng.random_bool(0.2) && size >= 2;
        if tie {
            // Copy the best entry to another id so two entries score equally.
            let best = (0..size)
                .max_by(|&a, &b| {
                    cosine_similarity(&query, &entries[a])
                        .unwrap()
                        .total_cmp(&cosine_similarity(&query, &entries[b]).unwrap())
                })
                .unwrap();
            let other = (best + rng.random_range(1..size)) % size;
            entries[other] = entries[best].clone();
            ties += 1;
        }
        let mut d = EntityDictionary::new(dim);
        for (i, e) in entries.iter().enumerate() {
            d.insert(
                format!("E{i:02}"),
                DictionaryEntry {
                    display_name: String::new(),
                    embedding: e.clone(),
                    sample_count: 1,
                },
            )
            .unwrap();
        }
        let lambda2 = if rng.random_bool(0.5) {
            0.833
        } else {
            rng.random_range(-1.0..1.0)
        };
        let mut scan: Vec<(String, f64)> = entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let dot: f64 = query.values().iter().zip(e.values()).map(|(a, b)| a * b).sum();
                (format!("E{i:02}"), dot.clamp(-1.0, 1.0))
            })
            .collect();
        scan.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let expected = scan.into_iter().next().filter(|(_, s)| *s >= lambda2);
        let got = identify_face(&query, &d, lambda2)
            .map_err(|e| e.to_string())?
            .map(|r| (r.entity_id, r.similarity));
        ensure(got == expected, || {
            format!("instance {instance}: {got:?} vs {expected:?}")
        })?;
    }
    Ok(format!("10000 instances, {ties} with duplicated entries"))
}

fn ingestion() -> Check {
    let hosts = ["www.welt.de", "welt.de", "img.bild.de", "www.spiegel.de", "example.com"];
    let mimes = ["image/jpeg", "image/png", "image/gif", "image/webp"];
    let mut rng = synthetic::rng(5);
    let mut text = String::new();
    for i in 0..10_000 {
        let host = hosts[rng.random_range(0..hosts.len())];
        let mime = mimes[rng.random_range(0..mimes.len())];
        let ts = format!(
            "{}{:02}{:02}{:02}{:02}{:02}",
            rng.random_range(2012..=2014),
            rng.random_range(1..=12),
            rng.random_range(1..=28),
            rng.random_range(0..24),
            rng.random_range(0..60),
            rng.random_range(0..60)
        );
        text.push_str(&format!("http://{host}/img/{i}.jpg {ts} {mime} sha1:{i} warc/{i}\n"));
    }
    for (name, ts, mime) in [
        ("first.jpg", "20130101000000", "image/jpeg"),
        ("last.png", "20131231235959", "image/png"),
        ("before.jpg", "20121231235959", "image/jpeg"),
        ("after.png", "20140101000000", "image/png"),
        ("spam.gif", "20130601000000", "image/gif"),
    ] {
        text.push_str(&format!(
            "http://www.welt.de/{name} {ts} {mime} sha1:{name} warc/{name}\n"
        ));
    }
    let parsed = parse_manifest_str(&text);
    ensure(parsed.rejects.is_empty(), || {
        format!("{} rejected lines", parsed.rejects.len())
    })?;
    let space = SearchSpace::for_year(["welt.de"], 2013).map_err(|e| e.to_string())?;
    let got: Vec<String> = apply_constraints(&parsed.records, &space)
        .into_iter()
        .map(|r| r.url)
        .collect();
    let expected: Vec<String> = text
        .lines()
        .filter(|l| {
            let f: Vec<&str> = l.split(' ').collect();
            let host = f[0].trim_start_matches("http://").split('/').next().unwrap();
            (host == "welt.de" || host.ends_with(".welt.de"))
                && (f[2] == "image/jpeg" || f[2] == "image/png")
                && ("20130101000000"..="20131231235959").contains(&f[1])
        })
        .map(|l| l.split(' ').next().unwrap().to_string())
        .collect();
    ensure(got == expected, || {
        format!("{} admitted vs {} expected", got.len(), expected.len())
    })?;
    ensure(got.iter().all(|u| !u.ends_with(".gif")), || "GIF admitted".into())?;
    for must in ["http://www.welt.de/first.jpg", "http://www.welt.de/last.png"] {
        ensure(got.iter().any(|u| u == must), || format!("{must} excluded"))?;
    }
    let (start, end) = space.date_range();
    ensure(SearchSpace::new(["welt.de"], [MIME_GIF], start, end).is_err(), || {
        "GIF search space accepted".into()
    })?;
    Ok(format!("{} of {} records admitted", got.len(), parsed.records.len()))
}

fn random_corpus<R: Rng>(rng: &mut R, n: usize, universe: usize) -> Vec<IdentificationResult> {
    (0..n)
        .map(|i| {
            let k = rng.random_range(0..=5.min(universe));
            let ids: BTreeSet<String> = (0..k)
                .map(|_| format!("P{:02}", rng.random_range(0..universe)))
                .collect();
            IdentificationResult {
                image: ImageKey {
                    url: format!("http://welt.de/{i}.jpg"),
                    timestamp: "20130101000000".parse().unwrap(),
                },
                recognized: ids
                    .into_iter()
                    .map(|id| Recognition {
                        entity_id: id,
                        similarity: 0.9,
                    })
                    .collect(),
                unmatched_face_count: 0,
            }
        })
        .collect()
}

fn cooccurrence() -> Check {
    let mut rng = synthetic::rng(6);
    let results = random_corpus(&mut rng, 500, 15);
    let counts = count_occurrences(&results);
    let universe: Vec<String> = (0..15).map(|i| format!("P{i:02}")).collect();
    for a in &universe {
        let single = results.iter().filter(|r| r.contains(a)).count() as u64;
        ensure(counts.singles.get(a).copied().unwrap_or(0) == single, || {
            format!("single {a}")
        })?;
        for b in &universe {
            if a >= b {
                continue;
            }
            let joint = results.iter().filter(|r| r.contains(a) && r.contains(b)).count() as u64;
            let got = counts.joints.get(&EntityPair::new(a, b).unwrap()).copied().unwrap_or(0);
            ensure(got == joint, || format!("joint {a}/{b}: {got} vs {joint}"))?;
        }
    }
    for c in 0..100 {
        let n = rng.random_range(0..200);
        let universe = rng.random_range(1..10);
        let corpus = random_corpus(&mut rng, n, universe);
        let counts = catch_unwind(|| count_occurrences(&corpus)).map_err(|_| format!("corpus {c}: invariant fired"))?;
        for (pair, &n) in &counts.joints {
            ensure(
                n <= counts.singles[pair.first()].min(counts.singles[pair.second()]),
                || format!("corpus {c}"),
            )?;
        }
    }
    let names: BTreeMap<String, String> = universe
        .iter()
        .map(|id| (id.clone(), format!("Person \"{id}\" & co")))
        .collect();
    let graph = build_graph(&counts, &names, 1);
    let json = export_graph(&graph, GraphFormat::Json);
    let back = import_graph_json(&json).map_err(|e| e.to_string())?;
    ensure(back == graph && export_graph(&back, GraphFormat::Json) == json, || {
        "JSON round trip differs".into()
    })?;
    Ok(format!("{} nodes, {} edges", graph.nodes.len(), graph.edges.len()))
}

fn end_to_end() -> Check {
    let config = RunConfig::default();
    ensure(config.lambda2 == 0.833, || {
        format!("default lambda2 {}", config.lambda2)
    })?;
    let mut outputs = Vec::new();
    for workers in [1, 4] {
        let s = scripted_scenario(2013).map_err(|e| e.to_string())?;
        let records = parse_manifest_str(&s.manifest).records;
        let run = run_identification(
            &records,
            &s.space,
            &s.provider,
            &s.dictionary,
            &RunConfig { workers, ..config },
        )
        .map_err(|e| e.to_string())?;
        let (_, graph) = relation_graph(&run.results, &s.names, 1);
        outputs.push((
            graph.clone(),
            export_graph(&graph, GraphFormat::GraphMl),
            export_graph(&graph, GraphFormat::Json),
        ));
    }
    ensure(outputs[0].1 == outputs[1].1 && outputs[0].2 == outputs[1].2, || {
        "exports differ between runs".into()
    })?;
    let graph = &outputs[0].0;
    let nodes: Vec<(&str, u64)> = graph.nodes.iter().map(|n| (n.id.as_str(), n.weight)).collect();
    let edges: Vec<(&str, &str, u64)> = graph
        .edges
        .iter()
        .map(|e| (e.source.as_str(), e.target.as_str(), e.weight))
        .collect();
    // Hand count over the twelve scripted images.
    let expected_nodes = [("Q1", 6), ("Q2", 5), ("Q3", 3), ("Q4", 3)];
    let expected_edges = [
        ("Q1", "Q2", 3),
        ("Q1", "Q3", 1),
        ("Q1", "Q4", 2),
        ("Q2", "Q3", 2),
        ("Q2", "Q4", 2),
    ];
    ensure(nodes == expected_nodes, || format!("nodes {nodes:?}"))?;
    ensure(edges == expected_edges, || format!("edges {edges:?}"))?;
    Ok(format!(
        "{} GraphML bytes, {} JSON bytes, stable",
        outputs[0].1.len(),
        outputs[0].2.len()
    ))
}

fn json<T: serde::Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).unwrap()
}

fn service_parity() -> Check {
    use axum::body::Body;
    use axum::http::Request;
    use http_body_util::BodyExt;
    use tower::ServiceExt;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_demo_workspace(dir.path(), 2013).map_err(|e| e.to_string())?;
    let ws = Workspace::open(dir.path()).map_err(|e| e.to_string())?;
    let app = archface_service::router(dir.path(), None);
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let call = |method: &str, uri: &str, body: Option<String>| -> (u16, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        if body.is_some() {
            req = req.header("content-type", "application/json");
        }
        let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
        rt.block_on(async {
            let resp = app.clone().oneshot(req).await.unwrap();
            let status = resp.status().as_u16();
            (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
        })
    };
    let mut checked = 0;
    let mut expect = |what: &str, got: (u16, Vec<u8>), want: Vec<u8>| {
        checked += 1;
        ensure(got.0 == 200 && got.1 == want, || format!("{what}: status {}", got.0))
    };

    expect(
        "GET /api/entities",
        call("GET", "/api/entities", None),
        json(&ws.entity_summaries().unwrap()),
    )?;
    expect(
        "GET /api/session",
        call("GET", "/api/session", None),
        json(&ws.load_session().unwrap()),
    )?;
    for id in ws.load_sample_sets().unwrap().keys() {
        let uri = format!("/api/entities/{id}/faces");
        expect(&uri, call("GET", &uri, None), json(&ws.face_listing(id).unwrap()))?;
        let uri = format!("/api/entities/{id}/filter-preview");
        for (strategy, lambda1) in [
            (TargetStrategy::Mean, 0.757),
            (TargetStrategy::Reference, 0.757),
            (TargetStrategy::Reference, 0.9),
        ] {
            let set = ws.load_sample_set(id).unwrap();
            let body = format!(r#"{{"strategy":"{strategy}","lambda1":{lambda1}}}"#);
            expect(
                &uri,
                call("POST", &uri, Some(body)),
                json(&preview_filter(&set, strategy, lambda1).unwrap()),
            )?;
        }
    }
    let (_, graph) = relation_graph(&ws.load_results().unwrap(), &ws.entity_names().unwrap(), 1);
    expect(
        "GET /api/graph",
        call("GET", "/api/graph", None),
        export_graph(&graph, GraphFormat::Json),
    )?;

    let got = call(
        "POST",
        "/api/entities/Q2/reference",
        Some(r#"{"face_id":"Q2/05.jpg#0"}"#.into()),
    );
    let reloaded = ws.load_sample_set("Q2").unwrap();
    ensure(reloaded.reference_face_id() == Some("Q2/05.jpg#0"), || {
        "reference not persisted".into()
    })?;
    let want = serde_json::to_vec(&archface_service::ReferenceResponse {
        entity_id: "Q2".into(),
        reference_face_id: "Q2/05.jpg#0".into(),
    })
    .unwrap();
    expect("POST /api/entities/Q2/reference", got, want)?;
    Ok(format!("{checked} responses identical to library output"))
}

/// (name, runtime bound in seconds, check)
type Criterion = (&'static str, u64, fn() -> Check);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("cross-entropy and mean embedding", 1, loss_and_mean),
        ("gradient check", 5, gradient_check),
        ("feature clustering", 30, clustering),
        ("threshold calibration", 10, calibration),
        ("filtering composition and ordering", 5, table_composition),
        ("identification oracle", 10, identification),
        ("ingestion constraints", 2, ingestion),
        ("co-occurrence oracle", 5, cooccurrence),
        ("end-to-end scripted run", 10, end_to_end),
        ("service/library parity", 10, service_parity),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > Duration::from_secs(limit) => Err(format!("{detail}; too slow")),
            other => other,
        };
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{status} {name} [{:.2}s / {limit}s] {detail}", elapsed.as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
