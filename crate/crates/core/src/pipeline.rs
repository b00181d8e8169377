//! End-to-end stages shared by the command-line tool and the test suites.

use std::collections::{HashMap, HashSet};
use std::io::{self, BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collection::{
    annotation_stub, generate_judgments, query_id_for, select_columns, stratified_sample, AnnotationStub,
    GeneratorConfig, QrelRecord, QueryRecord, SampleOutcome, SourceTable, ZeroTarget,
};
use crate::corpus::{ingest_corpus, segment_sentences, AnnotatedDocument, CorpusError, IngestConfig};
use crate::erindex::IndexConfig;
use crate::extraction::{extract_document, ExtractionConfig, ExtractionStats, ExtractionUnit};
use crate::retrieval::{emit_features, parse_query, search_all, write_run, QueryError, RelationalQuery, ScoringConfig};

/// Every tunable of the toolkit in one serializable document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub ingest: IngestConfig,
    pub extraction: ExtractionConfig,
    pub index: IndexConfig,
    pub scoring: ScoringConfig,
    pub generator: GeneratorConfig,
    pub seed: u64,
    /// Input and output paths of the command that produced this config.
    pub paths: std::collections::BTreeMap<String, String>,
}

/// Extraction output for a document collection.
#[derive(Debug, Default)]
pub struct Extraction {
    pub units: Vec<ExtractionUnit>,
    pub stats: ExtractionStats,
    pub documents: usize,
    /// Records skipped in skip-on-error mode.
    pub skipped: Vec<CorpusError>,
}

/// Segments and extracts documents in parallel; units keep document order.
pub fn extract_documents(docs: &[AnnotatedDocument], ingest: &IngestConfig, config: &ExtractionConfig) -> Extraction {
    let per_doc: Vec<(Vec<ExtractionUnit>, ExtractionStats)> = docs
        .par_iter()
        .map(|d| {
            let sentences = segment_sentences(d, &ingest.tokenizer);
            extract_document(d, &sentences, config)
        })
        .collect();
    let mut out = Extraction {
        documents: docs.len(),
        ..Default::default()
    };
    for (units, stats) in per_doc {
        out.units.extend(units);
        out.stats += stats;
    }
    out
}

/// Ingests a corpus file and extracts all units.
pub fn extract_corpus(
    path: impl AsRef<Path>,
    ingest: &IngestConfig,
    config: &ExtractionConfig,
) -> Result<Extraction, CorpusError> {
    let mut corpus = ingest_corpus(path, ingest)?;
    let docs = corpus.by_ref().collect::<Result<Vec<_>, _>>()?;
    let mut out = extract_documents(&docs, ingest, config);
    out.skipped = corpus.take_errors();
    Ok(out)
}

pub fn write_unit_dump<W: Write>(mut w: W, units: &[ExtractionUnit]) -> io::Result<()> {
    for u in units {
        writeln!(w, "{}", u.to_json_line())?;
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
#[error("line {line}: {reason}")]
pub struct DumpError {
    pub line: usize,
    pub reason: String,
}

/// Reads an extraction dump, re-deriving each unit id from its content.
pub fn read_unit_dump<R: BufRead>(reader: R) -> Result<Vec<ExtractionUnit>, DumpError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let err = |reason: String| DumpError { line: i + 1, reason };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let u: ExtractionUnit = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if u.key.entities().len() != u.kind.arity() || u.key.entities().iter().any(String::is_empty) {
            return Err(err(format!("{} unit with key {}", u.kind, u.key)));
        }
        if u.kind.arity() == 2 && u.key.0[0] == u.key.0[1] {
            return Err(err(format!("pair key {} repeats an entity", u.key)));
        }
        let expected = crate::extraction::unit_id(&u.doc_id, u.sent_index, u.kind, &u.key);
        if expected != u.unit_id {
            return Err(err(format!("unit_id {} does not match its content", u.unit_id)));
        }
        out.push(u);
    }
    Ok(out)
}

/// Parses query records; malformed ones are returned separately.
pub fn parse_queries(records: &[QueryRecord], config: &EngineConfig) -> (Vec<RelationalQuery>, Vec<QueryError>) {
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for r in records {
        match parse_query(r, &config.ingest.tokenizer, config.scoring.orientation) {
            Ok(q) => ok.push(q),
            Err(e) => bad.push(e),
        }
    }
    (ok, bad)
}

/// Run file text and, if requested, LETOR feature text for a batch of queries.
pub struct SearchOutput {
    pub run: String,
    pub features: String,
    pub tuples_per_query: Vec<(String, usize)>,
}

pub fn search_to_run(
    index: &crate::erindex::ERIndex,
    queries: &[RelationalQuery],
    scoring: &ScoringConfig,
    tag: &str,
    relevant: Option<&HashMap<String, HashSet<Vec<String>>>>,
) -> Result<SearchOutput, QueryError> {
    let results = search_all(index, queries, scoring);
    let mut run = Vec::new();
    let mut features = Vec::new();
    let mut counts = Vec::with_capacity(queries.len());
    for (q, res) in queries.iter().zip(results) {
        let tuples = res?;
        write_run(&mut run, &q.query_id, &tuples, scoring.run_depth, tag).expect("in-memory write");
        let labels = relevant.map(|r| r.get(&q.query_id).cloned().unwrap_or_default());
        emit_features(&mut features, &q.query_id, &tuples, labels.as_ref()).expect("in-memory write");
        counts.push((q.query_id.clone(), tuples.len()));
    }
    Ok(SearchOutput {
        run: String::from_utf8(run).expect("utf-8"),
        features: String::from_utf8(features).expect("utf-8"),
        tuples_per_query: counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingReport {
    pub tables_read: usize,
    pub eligible: usize,
    pub ineligible: Vec<String>,
    pub requested: usize,
    pub selected: Vec<String>,
    pub rejected_similar: usize,
    pub shortfall: usize,
    pub skipped_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCollection {
    pub queries: Vec<QueryRecord>,
    pub qrels: Vec<QrelRecord>,
    pub stubs: Vec<AnnotationStub>,
    pub report: SamplingReport,
}

/// Filters tables to those with a linked key column and enough linked columns,
/// samples them across topic areas, and generates stubs and judgments.
pub fn generate_collection(
    tables: &[SourceTable],
    target_count: usize,
    seed: u64,
    config: &GeneratorConfig,
) -> Result<GeneratedCollection, ZeroTarget> {
    let mut eligible: Vec<(&SourceTable, usize, Vec<usize>)> = Vec::new();
    let mut ineligible = Vec::new();
    for t in tables {
        match select_columns(t, config) {
            Some((key, others)) => eligible.push((t, key, others)),
            None => ineligible.push(t.table_id.clone()),
        }
    }
    let candidates: Vec<SourceTable> = eligible.iter().map(|(t, _, _)| (*t).clone()).collect();
    let SampleOutcome {
        selected,
        rejected_similar,
        requested,
    } = stratified_sample(&candidates, target_count, config.max_similarity, seed)?;

    let mut queries = Vec::new();
    let mut qrels = Vec::new();
    let mut stubs = Vec::new();
    let mut skipped_rows = 0;
    for (n, &i) in selected.iter().enumerate() {
        let (table, key, others) = &eligible[i];
        let qid = query_id_for(config.arity, n + 1);
        let j = generate_judgments(table, *key, others, &qid, config.min_linked_ratio)
            .expect("selected columns meet the link threshold");
        let cols: Vec<usize> = std::iter::once(*key).chain(others.iter().copied()).collect();
        stubs.push(annotation_stub(table, &qid, &cols, config.stub_rows));
        skipped_rows += j.skipped_rows;
        queries.push(j.stub);
        qrels.extend(j.qrels);
    }
    Ok(GeneratedCollection {
        report: SamplingReport {
            tables_read: tables.len(),
            eligible: eligible.len(),
            ineligible,
            requested,
            selected: selected.iter().map(|&i| eligible[i].0.table_id.clone()).collect(),
            rejected_similar,
            shortfall: requested.saturating_sub(selected.len()),
            skipped_rows,
        },
        queries,
        qrels,
        stubs,
    })
}
