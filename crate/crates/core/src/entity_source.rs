//! Persons of interest from a SPARQL knowledge base, ranked by page views.
//!
//! Two backends: a live SPARQL-over-HTTP endpoint and a fixture file holding a
//! recorded `application/sparql-results+json` response. Both go through the
//! same parser and constraint filter, so a fixture reproduces a live run bit
//! for bit.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use reqwest::header::{ACCEPT, USER_AGENT};
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};

pub const DEFAULT_MIN_BIRTH_YEAR: i32 = 1920;
pub const DEFAULT_ENTITY_LIMIT: usize = 100;
pub const DEFAULT_PAGE_VIEW_YEAR: i32 = 2016;
/// Earliest year for which the knowledge base has page-view data.
pub const FIRST_PAGE_VIEW_YEAR: i32 = 2015;

const QUERY_TEMPLATE: &str = include_str!("../assets/entity_query.rq");
const SOURCE_CONFIG: &str = include_str!("../assets/entity_source.json");
const CLIENT_USER_AGENT: &str = concat!("archface/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityQuery {
    occupation: String,
    min_birth_year: i32,
    page_view_year: i32,
    limit: usize,
}

impl EntityQuery {
    pub fn new(occupation: impl Into<String>, min_birth_year: i32, page_view_year: i32, limit: usize) -> Result<Self> {
        let occupation = occupation.into();
        if occupation.trim().is_empty() {
            return Err(Error::Config("occupation must not be empty".into()));
        }
        if limit == 0 {
            return Err(Error::Config("entity limit must be at least 1".into()));
        }
        Ok(Self {
            occupation,
            min_birth_year,
            page_view_year,
            limit,
        })
    }

    /// Query with the default birth-year cutoff, view year and limit.
    pub fn for_occupation(occupation: impl Into<String>) -> Result<Self> {
        Self::new(
            occupation,
            DEFAULT_MIN_BIRTH_YEAR,
            DEFAULT_PAGE_VIEW_YEAR,
            DEFAULT_ENTITY_LIMIT,
        )
    }

    pub fn occupation(&self) -> &str {
        &self.occupation
    }

    pub fn min_birth_year(&self) -> i32 {
        self.min_birth_year
    }

    pub fn page_view_year(&self) -> i32 {
        self.page_view_year
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    /// Whether `record` is admissible: born strictly after the cutoff year.
    pub fn admits(&self, record: &EntityRecord) -> bool {
        record.birth_year > self.min_birth_year
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: String,
    pub display_name: String,
    pub page_views: u64,
    pub birth_year: i32,
}

/// Occupation codes and language edition used to instantiate the query template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySourceConfig {
    pub language: String,
    pub occupations: BTreeMap<String, String>,
    #[serde(default = "default_template")]
    pub query_template: String,
}

fn default_template() -> String {
    QUERY_TEMPLATE.to_string()
}

impl Default for EntitySourceConfig {
    fn default() -> Self {
        serde_json::from_str(SOURCE_CONFIG).expect("bundled entity source config is valid")
    }
}

impl EntitySourceConfig {
    /// Loads a JSON config; a `query_template_file` key is resolved relative
    /// to the config file and overrides the bundled template.
    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct OnDisk {
            language: String,
            occupations: BTreeMap<String, String>,
            query_template_file: Option<PathBuf>,
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: OnDisk = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let query_template = match raw.query_template_file {
            Some(file) => {
                let file = path.parent().unwrap_or(Path::new(".")).join(file);
                std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?
            }
            None => default_template(),
        };
        Ok(Self {
            language: raw.language,
            occupations: raw.occupations,
            query_template,
        })
    }

    /// Knowledge-base identifier for `occupation`; identifiers pass through.
    pub fn occupation_code(&self, occupation: &str) -> String {
        self.occupations
            .get(&occupation.to_lowercase())
            .cloned()
            .unwrap_or_else(|| occupation.to_string())
    }

    pub fn render_query(&self, query: &EntityQuery) -> String {
        self.query_template
            .replace("{{occupation_qid}}", &self.occupation_code(&query.occupation))
            .replace("{{min_birth_year}}", &query.min_birth_year.to_string())
            .replace("{{language}}", &self.language)
            .replace("{{page_view_year}}", &query.page_view_year.to_string())
            .replace("{{limit}}", &query.limit.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntitySource {
    Endpoint(String),
    Fixture(PathBuf),
}

impl EntitySource {
    /// `http://` and `https://` strings are endpoints, anything else a fixture path.
    pub fn parse(s: &str) -> Self {
        if s.starts_with("http://") || s.starts_with("https://") {
            EntitySource::Endpoint(s.to_string())
        } else {
            EntitySource::Fixture(PathBuf::from(s))
        }
    }
}

/// Blocking SPARQL client that keeps at most one request in flight.
pub struct SparqlClient {
    endpoint: String,
    http: reqwest::blocking::Client,
    in_flight: Mutex<()>,
    attempts: u32,
    base_delay: Duration,
}

impl SparqlClient {
    pub fn new(endpoint: impl Into<String>) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            endpoint: endpoint.into(),
            http,
            in_flight: Mutex::new(()),
            attempts: 3,
            base_delay: Duration::from_millis(500),
        })
    }

    pub fn with_retry(mut self, attempts: u32, base_delay: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.base_delay = base_delay;
        self
    }

    /// Runs `sparql` and returns the raw response body. Transport errors and
    /// non-success statuses are retried with exponential backoff.
    pub fn query(&self, sparql: &str) -> Result<String> {
        let _guard = self.in_flight.lock().unwrap_or_else(|p| p.into_inner());
        let mut url = url::Url::parse(&self.endpoint)
            .map_err(|e| Error::Config(format!("bad endpoint {}: {e}", self.endpoint)))?;
        url.query_pairs_mut()
            .append_pair("query", sparql)
            .append_pair("format", "json");
        let mut last_error = String::new();
        for attempt in 0..self.attempts {
            if attempt > 0 {
                std::thread::sleep(self.base_delay * 2u32.pow(attempt - 1));
            }
            let response = self
                .http
                .get(url.clone())
                .header(ACCEPT, "application/sparql-results+json")
                .header(USER_AGENT, CLIENT_USER_AGENT)
                .send();
            match response {
                Ok(r) if r.status().is_success() => {
                    return r.text().map_err(|e| Error::Parse(format!("response body: {e}")));
                }
                Ok(r) => last_error = format!("HTTP {}", r.status()),
                Err(e) => last_error = e.to_string(),
            }
            warn!(endpoint = %self.endpoint, attempt = attempt + 1, error = %last_error, "SPARQL request failed");
        }
        Err(Error::SourceUnavailable {
            attempts: self.attempts,
            message: last_error,
        })
    }
}

#[derive(Deserialize)]
struct SparqlResults {
    results: SparqlBindings,
}

#[derive(Deserialize)]
struct SparqlBindings {
    bindings: Vec<BTreeMap<String, SparqlTerm>>,
}

#[derive(Deserialize)]
struct SparqlTerm {
    value: String,
}

fn term<'a>(row: &'a BTreeMap<String, SparqlTerm>, var: &str, index: usize) -> Result<&'a str> {
    row.get(var)
        .map(|t| t.value.as_str())
        .ok_or_else(|| Error::Parse(format!("result row {index} has no ?{var} binding")))
}

/// `http://www.wikidata.org/entity/Q567` → `Q567`.
fn local_id(iri: &str) -> &str {
    iri.rsplit(['/', '#']).next().unwrap_or(iri)
}

fn parse_year(value: &str) -> Option<i32> {
    let (sign, rest) = match value.as_bytes().first() {
        Some(b'-') => (-1, &value[1..]),
        Some(b'+') => (1, &value[1..]),
        _ => (1, value),
    };
    let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
    digits.parse::<i32>().ok().map(|y| sign * y)
}

fn parse_views(value: &str) -> Option<u64> {
    value.parse::<u64>().ok().or_else(|| {
        value
            .parse::<f64>()
            .ok()
            .filter(|v| *v >= 0.0 && v.fract() == 0.0)
            .map(|v| v as u64)
    })
}

/// Parses a SPARQL JSON result into entity records.
///
/// Rows need `?person`, `?views` and `?birth`; `?personLabel` falls back to
/// the identifier. Repeated persons keep their first row.
pub fn parse_sparql_results(body: &str) -> Result<Vec<EntityRecord>> {
    Ok(parse_rows(body)?.into_iter().map(|(r, _)| r).collect())
}

/// Records paired with the local id of their `?occupation` binding, if any.
fn parse_rows(body: &str) -> Result<Vec<(EntityRecord, Option<String>)>> {
    let parsed: SparqlResults = serde_json::from_str(body).map_err(|e| Error::Parse(format!("SPARQL JSON: {e}")))?;
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (i, row) in parsed.results.bindings.iter().enumerate() {
        let entity_id = local_id(term(row, "person", i)?).to_string();
        let views = term(row, "views", i)?;
        let page_views =
            parse_views(views).ok_or_else(|| Error::Parse(format!("row {i}: bad page view count {views:?}")))?;
        let birth = term(row, "birth", i)?;
        let birth_year = parse_year(birth).ok_or_else(|| Error::Parse(format!("row {i}: bad birth date {birth:?}")))?;
        if !seen.insert(entity_id.clone()) {
            continue;
        }
        let display_name = row
            .get("personLabel")
            .map(|t| t.value.clone())
            .unwrap_or_else(|| entity_id.clone());
        let occupation = row.get("occupation").map(|t| local_id(&t.value).to_string());
        rows.push((
            EntityRecord {
                entity_id,
                display_name,
                page_views,
                birth_year,
            },
            occupation,
        ));
    }
    Ok(rows)
}

/// Fetches and filters the persons matching `query`.
///
/// Rows whose `?occupation` binding names a different occupation, and
/// persons born in or before `min_birth_year`, are dropped.
pub fn fetch_entities(
    query: &EntityQuery,
    source: &EntitySource,
    config: &EntitySourceConfig,
) -> Result<Vec<EntityRecord>> {
    if let EntitySource::Endpoint(_) = source {
        if query.page_view_year < FIRST_PAGE_VIEW_YEAR {
            warn!(
                year = query.page_view_year,
                "page views are only available from {FIRST_PAGE_VIEW_YEAR}"
            );
        }
    }
    let body = match source {
        EntitySource::Fixture(path) => std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
        EntitySource::Endpoint(url) => SparqlClient::new(url.clone())?.query(&config.render_query(query))?,
    };
    let wanted = config.occupation_code(&query.occupation);
    Ok(parse_rows(&body)?
        .into_iter()
        .filter(|(_, occ)| {
            occ.as_deref()
                .is_none_or(|o| o == wanted || o.eq_ignore_ascii_case(&query.occupation))
        })
        .map(|(r, _)| r)
        .filter(|r| query.admits(r))
        .collect())
}

/// Sorts by page views (descending, ties by id ascending) and keeps the top `limit`.
pub fn rank_and_truncate(mut records: Vec<EntityRecord>, limit: usize) -> Vec<EntityRecord> {
    records.sort_by(|a, b| {
        b.page_views
            .cmp(&a.page_views)
            .then_with(|| a.entity_id.cmp(&b.entity_id))
    });
    records.truncate(limit);
    records
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, views: u64) -> EntityRecord {
        EntityRecord {
            entity_id: id.into(),
            display_name: id.into(),
            page_views: views,
            birth_year: 1950,
        }
    }

    #[test]
    fn query_validation() {
        assert!(EntityQuery::new("politician", 1920, 2016, 0).is_err());
        assert!(EntityQuery::new(" ", 1920, 2016, 10).is_err());
        let q = EntityQuery::for_occupation("actor").unwrap();
        assert_eq!((q.min_birth_year(), q.page_view_year(), q.limit()), (1920, 2016, 100));
    }

    #[test]
    fn rank_examples() {
        let out = rank_and_truncate(vec![rec("a", 10), rec("b", 30), rec("c", 20)], 2);
        let views: Vec<_> = out.iter().map(|r| r.page_views).collect();
        assert_eq!(views, [30, 20]);
        let tied = rank_and_truncate(vec![rec("Q9", 5), rec("Q1", 5), rec("Q5", 5)], 10);
        let ids: Vec<_> = tied.iter().map(|r| r.entity_id.as_str()).collect();
        assert_eq!(ids, ["Q1", "Q5", "Q9"]);
    }

    #[test]
    fn render_substitutes_every_placeholder() {
        let q = EntityQuery::new("politician", 1920, 2016, 100).unwrap();
        let text = EntitySourceConfig::default().render_query(&q);
        assert!(!text.contains("{{"));
        assert!(text.contains("wd:Q82955"));
        assert!(text.contains("https://de.wikipedia.org/"));
        assert!(text.contains("LIMIT 100"));
    }

    #[test]
    fn parse_results() {
        let body = r#"{"head":{"vars":["person","personLabel","birth","views"]},
          "results":{"bindings":[
            {"person":{"type":"uri","value":"http://www.wikidata.org/entity/Q567"},
             "personLabel":{"type":"literal","value":"Angela Merkel"},
             "birth":{"type":"literal","value":"1954-07-17T00:00:00Z"},
             "views":{"type":"literal","value":"1200"}},
            {"person":{"type":"uri","value":"http://www.wikidata.org/entity/Q2"},
             "birth":{"type":"literal","value":"-0044-01-01T00:00:00Z"},
             "views":{"type":"literal","value":"7.0"}}
          ]}}"#;
        let records = parse_sparql_results(body).unwrap();
        assert_eq!(records[0].entity_id, "Q567");
        assert_eq!(records[0].birth_year, 1954);
        assert_eq!(records[1].display_name, "Q2");
        assert_eq!(records[1].birth_year, -44);
        assert_eq!(records[1].page_views, 7);
    }

    #[test]
    fn malformed_results_are_parse_errors() {
        assert!(matches!(parse_sparql_results("not json"), Err(Error::Parse(_))));
        let missing = r#"{"results":{"bindings":[{"person":{"value":"Q1"}}]}}"#;
        assert!(matches!(parse_sparql_results(missing), Err(Error::Parse(_))));
        let bad_views = r#"{"results":{"bindings":[{"person":{"value":"Q1"},
            "views":{"value":"many"},"birth":{"value":"1950"}}]}}"#;
        assert!(matches!(parse_sparql_results(bad_views), Err(Error::Parse(_))));
    }

    #[test]
    fn source_parse() {
        assert_eq!(
            EntitySource::parse("https://query.wikidata.org/sparql"),
            EntitySource::Endpoint("https://query.wikidata.org/sparql".into())
        );
        assert_eq!(
            EntitySource::parse("fixtures/p.json"),
            EntitySource::Fixture("fixtures/p.json".into())
        );
    }
}
