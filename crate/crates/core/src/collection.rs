//! E-R test collections built from relational tables.
//!
//! Columns of a relational table are entity types and its rows are entity tuples.
//! The key column (the table's main entity) is detected heuristically; pairing it
//! with one or two other linked columns yields a query stub for a human editor and
//! one tuple judgment per fully linked row. Tables are sampled across topic areas
//! with a title-similarity cap so that near-duplicate lists are not selected twice.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::normalize_token;

#[derive(Debug, Error)]
pub enum CollectionError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Format { path: String, line: usize, reason: String },
    #[error("{path}: {reason}")]
    Table { path: String, reason: String },
    #[error("query {query_id}: judgment tuple has {found} entities, query expects {expected}")]
    Arity {
        query_id: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate query id {query_id}")]
    DuplicateQuery { query_id: String },
    #[error("{path}:{line}: judgment for unknown query {query_id}")]
    UnknownQuery {
        path: String,
        line: usize,
        query_id: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CollectionError + '_ {
    move |source| CollectionError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Cell {
    #[serde(default)]
    pub text: String,
    #[serde(rename = "entity", default, skip_serializing_if = "Option::is_none")]
    pub entity_id: Option<String>,
}

impl Cell {
    pub fn is_empty(&self) -> bool {
        self.text.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub header: String,
    /// Fraction of non-empty cells that carry an entity link. Recomputed on load.
    #[serde(default)]
    pub cells_linked_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTable {
    pub table_id: String,
    pub page_title: String,
    #[serde(default)]
    pub topic_area: String,
    #[serde(default)]
    pub section_title: String,
    #[serde(default)]
    pub intro_text: String,
    pub columns: Vec<ColumnSpec>,
    pub rows: Vec<Vec<Cell>>,
}

impl SourceTable {
    /// Checks row widths and links, and fills in `cells_linked_ratio`.
    pub fn normalize(mut self) -> Result<Self, String> {
        if self.table_id.is_empty() {
            return Err("empty table_id".into());
        }
        let width = self.columns.len();
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != width {
                return Err(format!("row {i} has {} cells, expected {width}", row.len()));
            }
            for cell in row {
                if let Some(e) = &cell.entity_id {
                    if e.is_empty() || e.chars().any(|c| c.is_whitespace() || c == '|') {
                        return Err(format!("row {i}: invalid entity id {e:?}"));
                    }
                }
            }
        }
        for c in 0..width {
            let (mut non_empty, mut linked) = (0usize, 0usize);
            for row in &self.rows {
                if !row[c].is_empty() {
                    non_empty += 1;
                    linked += usize::from(row[c].entity_id.is_some());
                }
            }
            self.columns[c].cells_linked_ratio = if non_empty == 0 {
                0.0
            } else {
                linked as f64 / non_empty as f64
            };
        }
        Ok(self)
    }

    fn column(&self, c: usize) -> impl Iterator<Item = &Cell> {
        self.rows.iter().map(move |r| &r[c])
    }
}

pub fn load_table(path: impl AsRef<Path>) -> Result<SourceTable, CollectionError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    let table_err = |reason: String| CollectionError::Table {
        path: path.display().to_string(),
        reason,
    };
    let table: SourceTable = serde_json::from_str(&raw).map_err(|e| table_err(e.to_string()))?;
    table.normalize().map_err(table_err)
}

/// Loads every `*.json` table in `dir`, in file-name order.
pub fn load_tables_dir(dir: impl AsRef<Path>) -> Result<Vec<SourceTable>, CollectionError> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut seen = HashSet::new();
    let mut tables = Vec::with_capacity(paths.len());
    for p in paths {
        let t = load_table(&p)?;
        if !seen.insert(t.table_id.clone()) {
            return Err(CollectionError::Table {
                path: p.display().to_string(),
                reason: format!("duplicate table_id {}", t.table_id),
            });
        }
        tables.push(t);
    }
    Ok(tables)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyColumnConfig {
    pub min_unique_ratio: f64,
    pub min_avg_length: f64,
    pub max_avg_length: f64,
    pub min_non_empty_ratio: f64,
}

impl Default for KeyColumnConfig {
    fn default() -> Self {
        KeyColumnConfig {
            min_unique_ratio: 0.8,
            min_avg_length: 3.0,
            max_avg_length: 200.0,
            min_non_empty_ratio: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub key_column: KeyColumnConfig,
    /// Minimum linked fraction for every participating column.
    pub min_linked_ratio: f64,
    /// Tuple arity of generated queries (2 or 3).
    pub arity: usize,
    /// Maximum title Jaccard similarity between sampled tables (exclusive).
    pub max_similarity: f64,
    /// Rows shown per annotation stub.
    pub stub_rows: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            key_column: KeyColumnConfig::default(),
            min_linked_ratio: 0.8,
            arity: 2,
            max_similarity: 0.7,
            stub_rows: 5,
        }
    }
}

/// Uniqueness, length and fill statistics of one column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnProfile {
    pub unique_ratio: f64,
    pub avg_length: f64,
    pub non_empty_ratio: f64,
}

pub fn column_profile(table: &SourceTable, c: usize) -> ColumnProfile {
    let values: Vec<&str> = table
        .column(c)
        .filter(|cell| !cell.is_empty())
        .map(|cell| cell.text.trim())
        .collect();
    if values.is_empty() {
        return ColumnProfile {
            unique_ratio: 0.0,
            avg_length: 0.0,
            non_empty_ratio: 0.0,
        };
    }
    let distinct: HashSet<&str> = values.iter().copied().collect();
    let chars: usize = values.iter().map(|v| v.chars().count()).sum();
    ColumnProfile {
        unique_ratio: distinct.len() as f64 / values.len() as f64,
        avg_length: chars as f64 / values.len() as f64,
        non_empty_ratio: values.len() as f64 / table.rows.len() as f64,
    }
}

/// Leftmost column that is mostly unique, mostly filled and of plausible text length.
pub fn detect_key_column(table: &SourceTable, config: &KeyColumnConfig) -> Option<usize> {
    if table.columns.len() < 2 || table.rows.len() < 2 {
        return None;
    }
    (0..table.columns.len()).find(|&c| {
        let p = column_profile(table, c);
        p.unique_ratio >= config.min_unique_ratio
            && p.avg_length >= config.min_avg_length
            && p.avg_length <= config.max_avg_length
            && p.non_empty_ratio >= config.min_non_empty_ratio
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub nl_text: String,
    /// Odd positions are entity types, even positions relationship types.
    pub components: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_table: Option<String>,
}

impl QueryRecord {
    /// Number of entities in an answer tuple.
    pub fn arity(&self) -> usize {
        self.components.len().div_ceil(2)
    }

    pub fn entity_types(&self) -> impl Iterator<Item = &str> {
        self.components.iter().step_by(2).map(String::as_str)
    }

    pub fn relationship_types(&self) -> impl Iterator<Item = &str> {
        self.components.iter().skip(1).step_by(2).map(String::as_str)
    }
}

/// `RELink_P_<n>` for pair queries, `RELink_T_<n>` for triples.
pub fn query_id_for(arity: usize, n: usize) -> String {
    let tag = if arity == 3 { 'T' } else { 'P' };
    format!("RELink_{tag}_{n:03}")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QrelRecord {
    pub query_id: String,
    pub tuple: Vec<String>,
}

/// Editor payload for writing the natural-language need of a generated query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationStub {
    pub query_id: String,
    pub table_id: String,
    pub page_title: String,
    pub section_title: String,
    pub topic_area: String,
    pub intro_text: String,
    pub headers: Vec<String>,
    pub entity_columns: Vec<String>,
    pub sample_rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Judgments {
    pub stub: QueryRecord,
    pub qrels: Vec<QrelRecord>,
    pub skipped_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerationError {
    #[error("column {column} out of range")]
    BadColumn { column: usize },
    #[error("expected 1 or 2 non-key columns, got {0}")]
    BadArity(usize),
    #[error("column {header:?} has only {ratio:.2} of its cells linked (need {required:.2})")]
    InsufficientLinks { header: String, ratio: f64, required: f64 },
}

/// Judgments for the key column paired with `other_cols`, one per fully linked row.
///
/// The stub carries column headers as provisional entity types and empty
/// relationship slots for the editor.
pub fn generate_judgments(
    table: &SourceTable,
    key_col: usize,
    other_cols: &[usize],
    query_id: &str,
    min_linked_ratio: f64,
) -> Result<Judgments, GenerationError> {
    if other_cols.is_empty() || other_cols.len() > 2 {
        return Err(GenerationError::BadArity(other_cols.len()));
    }
    let cols: Vec<usize> = std::iter::once(key_col).chain(other_cols.iter().copied()).collect();
    for &c in &cols {
        let Some(spec) = table.columns.get(c) else {
            return Err(GenerationError::BadColumn { column: c });
        };
        if spec.cells_linked_ratio < min_linked_ratio {
            return Err(GenerationError::InsufficientLinks {
                header: spec.header.clone(),
                ratio: spec.cells_linked_ratio,
                required: min_linked_ratio,
            });
        }
    }
    let mut components = Vec::with_capacity(2 * cols.len() - 1);
    for (i, &c) in cols.iter().enumerate() {
        if i > 0 {
            components.push(String::new());
        }
        components.push(table.columns[c].header.clone());
    }
    let stub = QueryRecord {
        query_id: query_id.to_owned(),
        nl_text: String::new(),
        components,
        source_table: Some(table.table_id.clone()),
    };
    let mut qrels = Vec::new();
    let mut skipped_rows = 0;
    for row in &table.rows {
        let tuple: Option<Vec<String>> = cols.iter().map(|&c| row[c].entity_id.clone()).collect();
        match tuple {
            Some(tuple) => qrels.push(QrelRecord {
                query_id: query_id.to_owned(),
                tuple,
            }),
            None => skipped_rows += 1,
        }
    }
    Ok(Judgments {
        stub,
        qrels,
        skipped_rows,
    })
}

/// Key column plus the leftmost non-key columns meeting the link threshold.
pub fn select_columns(table: &SourceTable, config: &GeneratorConfig) -> Option<(usize, Vec<usize>)> {
    let key = detect_key_column(table, &config.key_column)?;
    if table.columns[key].cells_linked_ratio < config.min_linked_ratio {
        return None;
    }
    let others: Vec<usize> = (0..table.columns.len())
        .filter(|&c| c != key && table.columns[c].cells_linked_ratio >= config.min_linked_ratio)
        .take(config.arity.saturating_sub(1))
        .collect();
    (others.len() + 1 == config.arity).then_some((key, others))
}

pub fn annotation_stub(table: &SourceTable, query_id: &str, cols: &[usize], max_rows: usize) -> AnnotationStub {
    AnnotationStub {
        query_id: query_id.to_owned(),
        table_id: table.table_id.clone(),
        page_title: table.page_title.clone(),
        section_title: table.section_title.clone(),
        topic_area: table.topic_area.clone(),
        intro_text: table.intro_text.clone(),
        headers: table.columns.iter().map(|c| c.header.clone()).collect(),
        entity_columns: cols.iter().map(|&c| table.columns[c].header.clone()).collect(),
        sample_rows: table
            .rows
            .iter()
            .take(max_rows)
            .map(|r| cols.iter().map(|&c| r[c].text.clone()).collect())
            .collect(),
    }
}

fn title_tokens(title: &str) -> BTreeSet<String> {
    title
        .split_whitespace()
        .map(normalize_token)
        .filter(|t| !t.is_empty())
        .collect()
}

/// Jaccard similarity of the token sets of two titles; 0 when both are empty.
pub fn jaccard_title_similarity(title_a: &str, title_b: &str) -> f64 {
    let a = title_tokens(title_a);
    let b = title_tokens(title_b);
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOutcome {
    /// Indices into the input, in admission order.
    pub selected: Vec<usize>,
    /// Candidates rejected for being too similar to an admitted title.
    pub rejected_similar: usize,
    pub requested: usize,
}

impl SampleOutcome {
    pub fn shortfall(&self) -> usize {
        self.requested - self.selected.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("target count must be positive")]
pub struct ZeroTarget;

/// Round-robin over topic areas (sorted by name), each visited in seeded-shuffle
/// order. A candidate is admitted only if its title similarity to every admitted
/// title is below `max_similarity`.
pub fn stratified_sample(
    tables: &[SourceTable],
    target_count: usize,
    max_similarity: f64,
    seed: u64,
) -> Result<SampleOutcome, ZeroTarget> {
    if target_count == 0 {
        return Err(ZeroTarget);
    }
    let mut areas: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in tables.iter().enumerate() {
        areas.entry(t.topic_area.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queues: Vec<VecDeque<usize>> = areas
        .into_values()
        .map(|mut members| {
            members.shuffle(&mut rng);
            members.into()
        })
        .collect();
    let titles: Vec<BTreeSet<String>> = tables.iter().map(|t| title_tokens(&t.page_title)).collect();
    let similar = |a: &BTreeSet<String>, b: &BTreeSet<String>| {
        let union = a.union(b).count();
        union > 0 && a.intersection(b).count() as f64 / union as f64 >= max_similarity
    };
    let mut selected: Vec<usize> = Vec::new();
    let mut rejected_similar = 0;
    'rounds: loop {
        let mut admitted_any = false;
        for queue in &mut queues {
            if selected.len() == target_count {
                break 'rounds;
            }
            while let Some(c) = queue.pop_front() {
                if selected.iter().any(|&s| similar(&titles[s], &titles[c])) {
                    rejected_similar += 1;
                    continue;
                }
                selected.push(c);
                admitted_any = true;
                break;
            }
        }
        if !admitted_any {
            break;
        }
    }
    Ok(SampleOutcome {
        selected,
        rejected_similar,
        requested: target_count,
    })
}

fn check_id_scheme(q: &QueryRecord) -> Result<(), String> {
    let n = q.components.len();
    if n < 3 || n.is_multiple_of(2) {
        return Err(format!("{} components; need an odd count of at least 3", n));
    }
    let expected = if q.query_id.starts_with("RELink_P_") {
        Some(3)
    } else if q.query_id.starts_with("RELink_T_") {
        Some(5)
    } else {
        None
    };
    match expected {
        Some(e) if e != n => Err(format!("id {} implies {e} components, found {n}", q.query_id)),
        _ => Ok(()),
    }
}

pub fn read_queries<R: BufRead>(reader: R, path: &str) -> Result<Vec<QueryRecord>, CollectionError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CollectionError::Io {
            path: path.into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let format = |reason: String| CollectionError::Format {
            path: path.into(),
            line: i + 1,
            reason,
        };
        let q: QueryRecord = serde_json::from_str(&line).map_err(|e| format(e.to_string()))?;
        check_id_scheme(&q).map_err(format)?;
        if !seen.insert(q.query_id.clone()) {
            return Err(CollectionError::DuplicateQuery { query_id: q.query_id });
        }
        out.push(q);
    }
    Ok(out)
}

/// Reads `<query_id> 0 <e1|e2|...> <relevance>` lines; zero-relevance lines are dropped.
pub fn read_qrels<R: BufRead>(reader: R, path: &str) -> Result<Vec<QrelRecord>, CollectionError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CollectionError::Io {
            path: path.into(),
            source,
        })?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let format = |reason: String| CollectionError::Format {
            path: path.into(),
            line: i + 1,
            reason,
        };
        if fields.len() != 4 {
            return Err(format(format!("expected 4 fields, found {}", fields.len())));
        }
        let relevance: i64 = fields[3]
            .parse()
            .map_err(|_| format(format!("bad relevance {:?}", fields[3])))?;
        let tuple: Vec<String> = fields[2].split('|').map(str::to_owned).collect();
        if tuple.iter().any(String::is_empty) {
            return Err(format(format!("empty entity in tuple {:?}", fields[2])));
        }
        if relevance > 0 {
            out.push(QrelRecord {
                query_id: fields[0].to_owned(),
                tuple,
            });
        }
    }
    Ok(out)
}

pub fn write_qrels<W: Write>(mut w: W, qrels: &[QrelRecord]) -> io::Result<()> {
    for q in qrels {
        writeln!(w, "{} 0 {} 1", q.query_id, q.tuple.join("|"))?;
    }
    Ok(())
}

pub fn write_queries<W: Write>(mut w: W, queries: &[QueryRecord]) -> io::Result<()> {
    for q in queries {
        writeln!(w, "{}", serde_json::to_string(q).expect("queries serialize"))?;
    }
    Ok(())
}

/// Loads and cross-validates a query file and its judgments.
pub fn load_qc(
    queries_path: impl AsRef<Path>,
    qrels_path: impl AsRef<Path>,
) -> Result<(Vec<QueryRecord>, Vec<QrelRecord>), CollectionError> {
    let (qp, rp) = (queries_path.as_ref(), qrels_path.as_ref());
    let qf = fs::File::open(qp).map_err(io_err(qp))?;
    let queries = read_queries(io::BufReader::new(qf), &qp.display().to_string())?;
    let rf = fs::File::open(rp).map_err(io_err(rp))?;
    let qrels_path = rp.display().to_string();
    let qrels = read_qrels(io::BufReader::new(rf), &qrels_path)?;
    let arity: HashMap<&str, usize> = queries.iter().map(|q| (q.query_id.as_str(), q.arity())).collect();
    for (i, r) in qrels.iter().enumerate() {
        match arity.get(r.query_id.as_str()) {
            None => {
                return Err(CollectionError::UnknownQuery {
                    path: qrels_path,
                    line: i + 1,
                    query_id: r.query_id.clone(),
                })
            }
            Some(&n) if n != r.tuple.len() => {
                return Err(CollectionError::Arity {
                    query_id: r.query_id.clone(),
                    expected: n,
                    found: r.tuple.len(),
                })
            }
            _ => {}
        }
    }
    Ok((queries, qrels))
}

/// One column of the statistics report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArityStats {
    pub total_queries: usize,
    /// Characters of the natural-language query.
    pub avg_query_length: f64,
    /// Characters per entity-type component.
    pub avg_entity_type_length: f64,
    /// Characters per relationship-type component.
    pub avg_relationship_type_length: f64,
    pub unique_entity_types: usize,
    pub unique_relationship_types: usize,
    pub entity_type_occurrences: usize,
    pub relationship_type_occurrences: usize,
    pub avg_judgments: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub two_entity: ArityStats,
    pub three_entity: ArityStats,
    pub all: ArityStats,
}

fn normalize_type(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn mean(sum: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}

fn arity_stats<'a>(queries: impl Iterator<Item = &'a QueryRecord>, judged: &HashMap<&str, usize>) -> ArityStats {
    let (mut n, mut nl_chars, mut judgments) = (0, 0, 0);
    let (mut e_chars, mut e_count, mut r_chars, mut r_count) = (0, 0, 0, 0);
    let mut entity_types = HashSet::new();
    let mut relationship_types = HashSet::new();
    for q in queries {
        n += 1;
        nl_chars += q.nl_text.chars().count();
        judgments += judged.get(q.query_id.as_str()).copied().unwrap_or(0);
        for e in q.entity_types() {
            e_chars += e.chars().count();
            e_count += 1;
            entity_types.insert(normalize_type(e));
        }
        for r in q.relationship_types() {
            r_chars += r.chars().count();
            r_count += 1;
            relationship_types.insert(normalize_type(r));
        }
    }
    ArityStats {
        total_queries: n,
        avg_query_length: mean(nl_chars, n),
        avg_entity_type_length: mean(e_chars, e_count),
        avg_relationship_type_length: mean(r_chars, r_count),
        unique_entity_types: entity_types.len(),
        unique_relationship_types: relationship_types.len(),
        entity_type_occurrences: e_count,
        relationship_type_occurrences: r_count,
        avg_judgments: mean(judgments, n),
    }
}

/// Per-arity and overall query statistics. Lengths are in characters; judgments
/// are distinct tuples per query.
pub fn collection_stats(queries: &[QueryRecord], qrels: &[QrelRecord]) -> StatsReport {
    let mut distinct: HashSet<(&str, &[String])> = HashSet::new();
    let mut judged: HashMap<&str, usize> = HashMap::new();
    for r in qrels {
        if distinct.insert((r.query_id.as_str(), r.tuple.as_slice())) {
            *judged.entry(r.query_id.as_str()).or_default() += 1;
        }
    }
    StatsReport {
        two_entity: arity_stats(queries.iter().filter(|q| q.arity() == 2), &judged),
        three_entity: arity_stats(queries.iter().filter(|q| q.arity() == 3), &judged),
        all: arity_stats(queries.iter(), &judged),
    }
}

impl StatsReport {
    /// Tab-separated table: one row per statistic, columns 2-entity, 3-entity, all.
    pub fn to_tsv(&self) -> String {
        let cols = [&self.two_entity, &self.three_entity, &self.all];
        let mut out = String::from("statistic\t2-entity\t3-entity\tall\n");
        let mut row = |name: &str, f: &dyn Fn(&ArityStats) -> String| {
            out.push_str(name);
            for c in cols {
                out.push('\t');
                out.push_str(&f(c));
            }
            out.push('\n');
        };
        row("total_queries", &|s| s.total_queries.to_string());
        row("avg_query_length_chars", &|s| format!("{:.1}", s.avg_query_length));
        row("avg_entity_type_length_chars", &|s| {
            format!("{:.1}", s.avg_entity_type_length)
        });
        row("avg_relationship_type_length_chars", &|s| {
            format!("{:.1}", s.avg_relationship_type_length)
        });
        row("unique_entity_types", &|s| s.unique_entity_types.to_string());
        row("unique_relationship_types", &|s| {
            s.unique_relationship_types.to_string()
        });
        row("avg_relevant_judgments", &|s| format!("{:.1}", s.avg_judgments));
        out
    }
}
