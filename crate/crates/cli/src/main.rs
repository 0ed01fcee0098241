use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use archface_core::calibration::{kfold_calibrate, DEFAULT_FOLDS};
use archface_core::cooccurrence::{export_graph, GraphFormat};
use archface_core::dictionary::{
    build_dictionary, evaluate_filtering, gather_all, preview_filter, DictionaryConfig, EntityDictionary,
    FilterMetrics, FilterReport, LocalDirectorySource, SampleImageSource, TargetStrategy, UrlListSource,
    DEFAULT_SAMPLE_BUDGET,
};
use archface_core::embedding_manifest::{observations_to_jsonl, parse_pairs, resolve_pairs, EmbeddingIndex};
use archface_core::entity_source::{
    fetch_entities, rank_and_truncate, EntityQuery, EntityRecord, EntitySource, EntitySourceConfig,
    DEFAULT_ENTITY_LIMIT, DEFAULT_MIN_BIRTH_YEAR, DEFAULT_PAGE_VIEW_YEAR,
};
use archface_core::identification::{results_from_jsonl, results_to_jsonl, DEFAULT_LAMBDA2};
use archface_core::ingestion::{format_to_mime, parse_manifest, ArchiveTimestamp, SearchSpace};
use archface_core::persist;
use archface_core::pipeline::{relation_graph, run_identification, RunConfig};
use archface_core::provider::{ExternalProcessProvider, FaceProvider, ScriptedProvider};
use archface_core::workspace::{Session, Workspace};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Parser)]
#[command(
    name = "archface",
    version,
    about = "Find and relate known persons in web-archive images"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select persons of interest from a knowledge base, ranked by page views.
    Entities(EntitiesArgs),
    /// Collect sample faces for each selected person into a workspace.
    Gather(GatherArgs),
    /// Mark one sample face as an entity's reference.
    Reference(ReferenceArgs),
    /// Preview cleansing of the sample sets and remember the settings.
    Filter(FilterArgs),
    /// Precision, recall and F1 of the cleansing strategies on annotated samples.
    EvalFilter(EvalFilterArgs),
    /// Build the entity dictionary from the cleansed sample sets.
    BuildDict(BuildDictArgs),
    /// Calibrate a verification threshold with k-fold cross-validation.
    Calibrate(CalibrateArgs),
    /// Identify dictionary persons in archived images.
    Identify(IdentifyArgs),
    /// Build the co-occurrence graph from identification results.
    Graph(GraphArgs),
    /// Serve the curation API and UI for a workspace.
    Serve(ServeArgs),
    /// Write a small synthetic workspace with manifest and detector script.
    Demo(DemoArgs),
}

#[derive(Args)]
struct EntitiesArgs {
    /// Occupation name from the source config (e.g. politician) or an item id.
    #[arg(long)]
    occupation: String,
    /// SPARQL endpoint URL (e.g. https://query.wikidata.org/sparql) or path
    /// to a recorded JSON result.
    #[arg(long)]
    source: String,
    /// Source config with language, occupation ids and query template.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MIN_BIRTH_YEAR)]
    min_birth_year: i32,
    #[arg(long, visible_alias = "views-year", default_value_t = DEFAULT_PAGE_VIEW_YEAR)]
    page_view_year: i32,
    #[arg(long, default_value_t = DEFAULT_ENTITY_LIMIT)]
    limit: usize,
    /// Output JSONL file (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    /// Replay a recorded detector script.
    #[value(alias = "synthetic")]
    Scripted,
    /// Run a detector/embedder program speaking the line protocol.
    External,
}

#[derive(Args)]
struct ProviderArgs {
    #[arg(long, value_enum, default_value = "scripted")]
    provider: ProviderKind,
    /// Script file for the scripted provider.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Command line of the external provider, e.g. "python3 embed.py".
    #[arg(long)]
    command: Option<String>,
    /// Embedding dimension of the external provider.
    #[arg(long)]
    embedding_dim: Option<usize>,
    /// Number of external provider processes.
    #[arg(long, default_value_t = 1)]
    instances: usize,
}

impl ProviderArgs {
    fn build(&self, default_dim: usize) -> Result<Box<dyn FaceProvider>> {
        match self.provider {
            ProviderKind::Scripted => {
                let path = self
                    .script
                    .as_ref()
                    .context("--script is required for the scripted provider")?;
                Ok(Box::new(ScriptedProvider::load(path)?))
            }
            ProviderKind::External => {
                let command = self
                    .command
                    .as_ref()
                    .context("--command is required for the external provider")?;
                let mut parts = command.split_whitespace().map(str::to_string);
                let program = parts.next().context("--command is empty")?;
                let args: Vec<String> = parts.collect();
                let dim = self.embedding_dim.unwrap_or(default_dim);
                Ok(Box::new(ExternalProcessProvider::spawn(
                    &program,
                    &args,
                    dim,
                    self.instances,
                )?))
            }
        }
    }
}

#[derive(Args)]
struct GatherArgs {
    /// Entities JSONL as written by `archface entities`.
    #[arg(long)]
    entities: PathBuf,
    #[arg(long)]
    workspace: PathBuf,
    /// Directory with one sub-directory of images per entity id.
    #[arg(long, conflicts_with = "url_list")]
    images_dir: Option<PathBuf>,
    /// File of `<entity_id> <url>` lines to download.
    #[arg(long)]
    url_list: Option<PathBuf>,
    /// Download cache for --url-list (default: <workspace>/downloads).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Maximum number of images per entity.
    #[arg(long, default_value_t = DEFAULT_SAMPLE_BUDGET)]
    k: usize,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Args)]
struct ReferenceArgs {
    #[arg(long)]
    workspace: PathBuf,
    #[arg(long)]
    entity: String,
    #[arg(long)]
    face: String,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    workspace: PathBuf,
    /// mean or reference (default: the session's).
    #[arg(long)]
    strategy: Option<TargetStrategy>,
    /// Cleansing threshold (default: the session's).
    #[arg(long, allow_hyphen_values = true)]
    lambda1: Option<f64>,
    /// Only this entity.
    #[arg(long)]
    entity: Option<String>,
}

#[derive(Args)]
struct EvalFilterArgs {
    #[arg(long)]
    workspace: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    lambda1: Option<f64>,
    /// JSONL of `{"face_id": .., "genuine": bool}` annotations.
    #[arg(long, visible_alias = "labels")]
    annotations: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BuildDictArgs {
    #[arg(long)]
    workspace: PathBuf,
    #[arg(long)]
    strategy: Option<TargetStrategy>,
    #[arg(long, allow_hyphen_values = true)]
    lambda1: Option<f64>,
    /// Output file (default: <workspace>/dictionary.jsonl).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// JSONL of `{"id_a", "id_b", "same_person"}`.
    #[arg(long)]
    pairs: PathBuf,
    /// Embedding manifest with the referenced ids.
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct IdentifyArgs {
    /// Manifest of `<url> <timestamp> <mime> <digest> <locator>` lines.
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated registrable domains, e.g. welt.de,bild.de.
    #[arg(long, value_delimiter = ',', required = true)]
    domains: Vec<String>,
    /// Comma-separated formats (jpeg, png or MIME types).
    #[arg(long, value_delimiter = ',', default_value = "jpeg,png")]
    formats: Vec<String>,
    /// Whole calendar year of captures.
    #[arg(long, conflicts_with_all = ["from", "to"])]
    year: Option<i32>,
    /// First capture timestamp (14 digits).
    #[arg(long, requires = "to")]
    from: Option<String>,
    /// Last capture timestamp (14 digits).
    #[arg(long, requires = "from")]
    to: Option<String>,
    #[arg(long)]
    dictionary: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LAMBDA2, allow_hyphen_values = true)]
    lambda2: f64,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Keep repeated captures of identical content.
    #[arg(long)]
    no_dedupe: bool,
    /// Results JSONL (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write every detected face as an embedding manifest.
    #[arg(long)]
    observations: Option<PathBuf>,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    results: PathBuf,
    /// Dictionary whose display names label the nodes.
    #[arg(long)]
    dictionary: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: GraphFormat,
    #[arg(long, default_value_t = 1)]
    min_edge_weight: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    workspace: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Address to bind; anything but loopback exposes an unauthenticated API.
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    /// UI bundle directory (default: <workspace>/ui).
    #[arg(long)]
    ui: Option<PathBuf>,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2013)]
    seed: u64,
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => persist::write_atomic(path, bytes)?,
        None => std::io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn entities(args: EntitiesArgs) -> Result<()> {
    let config = match &args.config {
        Some(path) => EntitySourceConfig::load(path)?,
        None => EntitySourceConfig::default(),
    };
    let query = EntityQuery::new(args.occupation, args.min_birth_year, args.page_view_year, args.limit)?;
    let records = fetch_entities(&query, &EntitySource::parse(&args.source), &config)?;
    let ranked = rank_and_truncate(records, query.limit());
    eprintln!("{} entities selected", ranked.len());
    write_output(args.out.as_deref(), persist::to_jsonl(&ranked).as_bytes())
}

fn gather(args: GatherArgs) -> Result<()> {
    let entities: Vec<EntityRecord> = persist::read_jsonl(&args.entities)?;
    let ws = Workspace::new(&args.workspace);
    std::fs::create_dir_all(ws.samples_dir()).with_context(|| format!("creating {}", ws.samples_dir().display()))?;
    let source: Box<dyn SampleImageSource> = match (&args.images_dir, &args.url_list) {
        (Some(dir), None) => Box::new(LocalDirectorySource { root: dir.clone() }),
        (None, Some(list)) => Box::new(UrlListSource::load(
            list,
            args.cache.clone().unwrap_or_else(|| args.workspace.join("downloads")),
        )?),
        _ => bail!("pass exactly one of --images-dir or --url-list"),
    };
    let provider = args.provider.build(archface_core::embedding::DEFAULT_EMBEDDING_DIM)?;
    let mut written = 0;
    for (entity, result) in entities
        .iter()
        .zip(gather_all(&entities, source.as_ref(), provider.as_ref(), args.k))
    {
        match result {
            Ok(set) => {
                ws.save_sample_set(&set)?;
                eprintln!("{}: {} faces", entity.entity_id, set.len());
                written += 1;
            }
            Err(e) => eprintln!("{}: skipped ({e})", entity.entity_id),
        }
    }
    eprintln!(
        "{written} of {} sample sets written to {}",
        entities.len(),
        ws.samples_dir().display()
    );
    Ok(())
}

fn reference(args: ReferenceArgs) -> Result<()> {
    let ws = Workspace::open(&args.workspace)?;
    ws.set_reference(&args.entity, &args.face)?;
    eprintln!("{}: reference face {}", args.entity, args.face);
    Ok(())
}

fn resolve_session(ws: &Workspace, strategy: Option<TargetStrategy>, lambda1: Option<f64>) -> Result<Session> {
    let session = ws.load_session()?;
    Ok(Session {
        strategy: strategy.unwrap_or(session.strategy),
        lambda1: lambda1.unwrap_or(session.lambda1),
    })
}

fn filter(args: FilterArgs) -> Result<()> {
    let ws = Workspace::open(&args.workspace)?;
    let session = resolve_session(&ws, args.strategy, args.lambda1)?;
    let sets = match &args.entity {
        Some(id) => vec![ws.load_sample_set(id)?],
        None => ws.load_sample_sets()?.into_values().collect(),
    };
    let mut out = std::io::stdout().lock();
    for set in &sets {
        let preview = preview_filter(set, session.strategy, session.lambda1)?;
        serde_json::to_writer(&mut out, &preview)?;
        writeln!(out)?;
    }
    ws.save_session(&session)?;
    Ok(())
}

#[derive(Deserialize)]
struct Label {
    face_id: String,
    genuine: bool,
}

fn eval_filter(args: EvalFilterArgs) -> Result<()> {
    let ws = Workspace::open(&args.workspace)?;
    let lambda1 = resolve_session(&ws, None, args.lambda1)?.lambda1;
    let labels: Option<HashMap<String, bool>> = match &args.annotations {
        Some(path) => Some(
            persist::read_jsonl::<Label>(path)?
                .into_iter()
                .map(|l| (l.face_id, l.genuine))
                .collect(),
        ),
        None => None,
    };
    let mut rows: BTreeMap<&str, Vec<FilterMetrics>> = BTreeMap::new();
    let mut evaluated = 0;
    for mut set in ws.load_sample_sets()?.into_values() {
        if let Some(labels) = &labels {
            set.annotate(labels);
        }
        if !set.is_annotated() {
            eprintln!("{}: not fully annotated, skipped", set.entity_id());
            continue;
        }
        evaluated += 1;
        let keep_all = FilterReport::keep_all(&set, TargetStrategy::Mean);
        rows.entry("no filtering")
            .or_default()
            .push(evaluate_filtering(&keep_all, &set)?);
        rows.entry("mean vector").or_default().push(
            preview_filter(&set, TargetStrategy::Mean, lambda1)?
                .metrics
                .expect("annotated"),
        );
        match preview_filter(&set, TargetStrategy::Reference, lambda1) {
            Ok(p) => rows
                .entry("reference vector")
                .or_default()
                .push(p.metrics.expect("annotated")),
            Err(e) => eprintln!("{}: reference strategy skipped ({e})", set.entity_id()),
        }
    }
    if evaluated == 0 {
        bail!("no annotated sample sets in {}", args.workspace.display());
    }
    let order = ["no filtering", "mean vector", "reference vector"];
    let pooled: Vec<(&str, FilterMetrics)> = order
        .iter()
        .filter_map(|name| rows.get(name).map(|m| (*name, FilterMetrics::pooled(m))))
        .collect();
    if args.json {
        let map: BTreeMap<&str, &FilterMetrics> = pooled.iter().map(|(n, m)| (*n, m)).collect();
        println!("{}", serde_json::to_string_pretty(&map)?);
    } else {
        println!("{evaluated} entities, lambda1 = {lambda1}");
        println!("{:<18} {:>9} {:>9} {:>9}", "method", "precision", "recall", "F1");
        for (name, m) in &pooled {
            println!("{name:<18} {:>9.3} {:>9.3} {:>9.3}", m.precision, m.recall, m.f1);
        }
    }
    Ok(())
}

fn build_dict(args: BuildDictArgs) -> Result<()> {
    let ws = Workspace::open(&args.workspace)?;
    let session = resolve_session(&ws, args.strategy, args.lambda1)?;
    let mut filtered = Vec::new();
    let mut names = BTreeMap::new();
    for set in ws.load_sample_sets()?.into_values() {
        let report = preview_filter(&set, session.strategy, session.lambda1)
            .with_context(|| format!("filtering {}", set.entity_id()))?
            .report;
        names.insert(set.entity_id().to_string(), set.display_name().to_string());
        filtered.push((set, report));
    }
    let mut build = build_dictionary(&filtered, &names)?;
    build.dictionary.config = Some(DictionaryConfig {
        lambda1: session.lambda1,
        strategy: session.strategy,
    });
    let out = args.out.unwrap_or_else(|| ws.dictionary_path());
    build.dictionary.save(&out)?;
    for id in &build.dropped {
        eprintln!("{id}: no samples left after cleansing, dropped");
    }
    eprintln!("{} entries written to {}", build.dictionary.len(), out.display());
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let index = EmbeddingIndex::load(&args.embeddings)?;
    let records = parse_pairs(&persist::read_to_string(&args.pairs)?)?;
    let pairs = resolve_pairs(&records, &index)?;
    let result = kfold_calibrate(&pairs, args.folds, args.seed)?;
    eprintln!("{} pairs, {} folds", pairs.len(), result.fold_count);
    for (i, (t, acc)) in result
        .per_fold_thresholds
        .iter()
        .zip(&result.per_fold_accuracies)
        .enumerate()
    {
        eprintln!("fold {:>2}: threshold {t:.4}  accuracy {acc:.4}", i + 1);
    }
    eprintln!(
        "threshold {:.4} (std {:.4}), accuracy {:.4}",
        result.mean_threshold, result.threshold_std, result.mean_accuracy
    );
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn identify(args: IdentifyArgs) -> Result<()> {
    let dictionary = EntityDictionary::load(&args.dictionary)?;
    let formats = args
        .formats
        .iter()
        .map(|f| format_to_mime(f))
        .collect::<Result<Vec<_>, _>>()?;
    let (start, end) = match (args.year, &args.from, &args.to) {
        (Some(year), _, _) => ArchiveTimestamp::year_bounds(year)?,
        (None, Some(from), Some(to)) => (from.parse()?, to.parse()?),
        _ => bail!("pass --year or both --from and --to"),
    };
    let space = SearchSpace::new(&args.domains, formats, start, end)?;
    let manifest = parse_manifest(&args.manifest)?;
    for reject in &manifest.rejects {
        eprintln!("{}:{}: {}", args.manifest.display(), reject.line, reject.reason);
    }
    let provider = args.provider.build(dictionary.embedding_dim())?;
    let config = RunConfig {
        lambda2: args.lambda2,
        workers: args.workers,
        dedupe: !args.no_dedupe,
    };
    let run = run_identification(&manifest.records, &space, provider.as_ref(), &dictionary, &config)?;
    let s = run.stats;
    eprintln!(
        "{} records, {} in search space, {} after dedupe, {} faces, {} images with known persons, {} failed",
        s.manifest_records, s.admitted, s.after_dedupe, s.faces, s.matched_images, s.failed_images
    );
    if let Some(path) = &args.observations {
        persist::write_atomic(
            path,
            observations_to_jsonl(dictionary.embedding_dim(), &run.observations).as_bytes(),
        )?;
    }
    write_output(args.out.as_deref(), results_to_jsonl(&run.results).as_bytes())
}

fn graph(args: GraphArgs) -> Result<()> {
    let results = results_from_jsonl(&persist::read_to_string(&args.results)?)?;
    let names = match &args.dictionary {
        Some(path) => EntityDictionary::load(path)?.names(),
        None => BTreeMap::new(),
    };
    let (_, graph) = relation_graph(&results, &names, args.min_edge_weight);
    eprintln!("{} nodes, {} edges", graph.nodes.len(), graph.edges.len());
    write_output(args.out.as_deref(), &export_graph(&graph, args.format))
}

fn serve(args: ServeArgs) -> Result<()> {
    let config = archface_service::ServeConfig {
        workspace: args.workspace,
        addr: SocketAddr::new(args.bind, args.port),
        ui_dir: args.ui,
    };
    eprintln!("serving {} on http://{}", config.workspace.display(), config.addr);
    tokio::runtime::Runtime::new()?.block_on(archface_service::serve(config))?;
    Ok(())
}

fn demo(args: DemoArgs) -> Result<()> {
    archface_core::demo::write_demo_workspace(&args.out, args.seed)?;
    eprintln!("demo workspace written to {}", args.out.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();
    match cli.command {
        Command::Entities(a) => entities(a),
        Command::Gather(a) => gather(a),
        Command::Reference(a) => reference(a),
        Command::Filter(a) => filter(a),
        Command::EvalFilter(a) => eval_filter(a),
        Command::BuildDict(a) => build_dict(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Identify(a) => identify(a),
        Command::Graph(a) => graph(a),
        Command::Serve(a) => serve(a),
        Command::Demo(a) => demo(a),
    }
}
