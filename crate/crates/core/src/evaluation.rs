//! Tuple-level run evaluation: AP/MAP, P@k, Recall@k and NDCG@k with binary relevance.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{self, BufRead};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collection::QrelRecord;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Format { path: String, line: usize, reason: String },
    #[error("query {query_id}: tuple {tuple} retrieved more than once")]
    DuplicateTuple { query_id: String, tuple: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub query_id: String,
    pub tuple: Vec<String>,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

/// Reads `<qid> Q0 <e1|..|en> <rank> <score> <tag>` lines.
pub fn read_run<R: BufRead>(reader: R, path: &str) -> Result<Vec<RunEntry>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| EvalError::Io {
            path: path.into(),
            source,
        })?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let format = |reason: String| EvalError::Format {
            path: path.into(),
            line: i + 1,
            reason,
        };
        if f.len() != 6 {
            return Err(format(format!("expected 6 fields, found {}", f.len())));
        }
        let rank = f[3].parse().map_err(|_| format(format!("bad rank {:?}", f[3])))?;
        let score: f64 = f[4].parse().map_err(|_| format(format!("bad score {:?}", f[4])))?;
        if !score.is_finite() {
            return Err(format(format!("non-finite score {:?}", f[4])));
        }
        out.push(RunEntry {
            query_id: f[0].to_owned(),
            tuple: f[2].split('|').map(str::to_owned).collect(),
            rank,
            score,
            tag: f[5].to_owned(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Positional equality.
    #[default]
    Ordered,
    /// Set equality of the entities.
    Unordered,
}

pub fn match_tuple(run: &[String], qrel: &[String], mode: MatchMode) -> bool {
    if run.len() != qrel.len() {
        return false;
    }
    match mode {
        MatchMode::Ordered => run == qrel,
        MatchMode::Unordered => canonical(run) == canonical(qrel),
    }
}

fn canonical(t: &[String]) -> Vec<&str> {
    let mut v: Vec<&str> = t.iter().map(String::as_str).collect();
    v.sort_unstable();
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub ap: f64,
    /// Indexed like the `k_values` passed to [`evaluate`].
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub relevant: usize,
    pub retrieved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k_values: Vec<usize>,
    pub per_query: BTreeMap<String, QueryMetrics>,
    pub mean: QueryMetrics,
    /// Run queries without judgments; excluded from the means.
    pub unjudged: Vec<String>,
    /// Judged queries with no run entries; scored as zero.
    pub missing_from_run: Vec<String>,
}

/// Orders one query's entries by score (descending), then submitted rank, then tuple.
fn ranked(mut entries: Vec<&RunEntry>) -> Vec<&RunEntry> {
    entries.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.rank.cmp(&b.rank))
            .then_with(|| a.tuple.cmp(&b.tuple))
    });
    entries
}

/// Binary relevance of each ranked tuple; every judged tuple is credited at most once.
fn relevance_vector(ranked: &[&RunEntry], judged: &[&[String]], mode: MatchMode) -> (Vec<bool>, usize) {
    match mode {
        MatchMode::Ordered => {
            let set: HashSet<&[String]> = judged.iter().copied().collect();
            (
                ranked.iter().map(|e| set.contains(e.tuple.as_slice())).collect(),
                set.len(),
            )
        }
        MatchMode::Unordered => {
            let mut open: HashSet<Vec<&str>> = judged.iter().map(|t| canonical(t)).collect();
            let total = open.len();
            (
                ranked.iter().map(|e| open.remove(&canonical(&e.tuple))).collect(),
                total,
            )
        }
    }
}

fn metrics(rel: &[bool], total_relevant: usize, ks: &[usize]) -> QueryMetrics {
    let r = total_relevant as f64;
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (i, &is_rel) in rel.iter().enumerate() {
        if is_rel {
            hits += 1;
            ap += hits as f64 / (i + 1) as f64;
        }
    }
    let hits_at = |k: usize| rel.iter().take(k).filter(|&&x| x).count();
    let dcg_at = |k: usize| -> f64 {
        rel.iter()
            .take(k)
            .enumerate()
            .filter(|(_, &x)| x)
            .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
            .sum()
    };
    let idcg_at = |k: usize| -> f64 { (0..k.min(total_relevant)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum() };
    QueryMetrics {
        ap: if total_relevant == 0 { 0.0 } else { ap / r },
        precision: ks.iter().map(|&k| hits_at(k) as f64 / k as f64).collect(),
        recall: ks
            .iter()
            .map(|&k| {
                if total_relevant == 0 {
                    0.0
                } else {
                    hits_at(k) as f64 / r
                }
            })
            .collect(),
        ndcg: ks
            .iter()
            .map(|&k| {
                let ideal = idcg_at(k);
                if ideal == 0.0 {
                    0.0
                } else {
                    dcg_at(k) / ideal
                }
            })
            .collect(),
        relevant: total_relevant,
        retrieved: rel.len(),
    }
}

/// Evaluates a run against judgments. Every judged query counts towards the means,
/// with zero scores when the run has nothing for it.
pub fn evaluate(
    run: &[RunEntry],
    qrels: &[QrelRecord],
    k_values: &[usize],
    mode: MatchMode,
) -> Result<EvalReport, EvalError> {
    let ks: Vec<usize> = k_values.iter().copied().filter(|&k| k > 0).collect();
    let mut by_query: BTreeMap<&str, Vec<&RunEntry>> = BTreeMap::new();
    for e in run {
        by_query.entry(e.query_id.as_str()).or_default().push(e);
    }
    for (qid, entries) in &by_query {
        let mut seen = HashSet::new();
        for e in entries {
            if !seen.insert(&e.tuple) {
                return Err(EvalError::DuplicateTuple {
                    query_id: qid.to_string(),
                    tuple: e.tuple.join("|"),
                });
            }
        }
    }
    let mut judged: BTreeMap<&str, Vec<&[String]>> = BTreeMap::new();
    for q in qrels {
        judged.entry(q.query_id.as_str()).or_default().push(q.tuple.as_slice());
    }

    let mut per_query = BTreeMap::new();
    let mut missing_from_run = Vec::new();
    for (qid, tuples) in &judged {
        let entries = by_query.get(qid).cloned().unwrap_or_default();
        if entries.is_empty() {
            missing_from_run.push(qid.to_string());
        }
        let order = ranked(entries);
        let (rel, total) = relevance_vector(&order, tuples, mode);
        per_query.insert(qid.to_string(), metrics(&rel, total, &ks));
    }
    let unjudged: Vec<String> = by_query
        .keys()
        .filter(|q| !judged.contains_key(*q))
        .map(|q| q.to_string())
        .collect();

    let n = per_query.len().max(1) as f64;
    let avg = |f: &dyn Fn(&QueryMetrics) -> f64| per_query.values().map(f).sum::<f64>() / n;
    let mean = QueryMetrics {
        ap: avg(&|m| m.ap),
        precision: (0..ks.len()).map(|i| avg(&|m| m.precision[i])).collect(),
        recall: (0..ks.len()).map(|i| avg(&|m| m.recall[i])).collect(),
        ndcg: (0..ks.len()).map(|i| avg(&|m| m.ndcg[i])).collect(),
        relevant: per_query.values().map(|m| m.relevant).sum(),
        retrieved: per_query.values().map(|m| m.retrieved).sum(),
    };
    Ok(EvalReport {
        k_values: ks,
        per_query,
        mean,
        unjudged,
        missing_from_run,
    })
}

impl EvalReport {
    /// `metric \t query_id \t value` rows, per query then `all`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let mut emit = |qid: &str, m: &QueryMetrics| {
            let _ = writeln!(out, "map\t{qid}\t{:.4}", m.ap);
            for (i, k) in self.k_values.iter().enumerate() {
                let _ = writeln!(out, "P@{k}\t{qid}\t{:.4}", m.precision[i]);
            }
            for (i, k) in self.k_values.iter().enumerate() {
                let _ = writeln!(out, "recall@{k}\t{qid}\t{:.4}", m.recall[i]);
            }
            for (i, k) in self.k_values.iter().enumerate() {
                let _ = writeln!(out, "ndcg@{k}\t{qid}\t{:.4}", m.ndcg[i]);
            }
        };
        for (qid, m) in &self.per_query {
            emit(qid, m);
        }
        emit("all", &self.mean);
        out
    }
}

/// Relevant tuple sets per query, for labelling feature files.
pub fn relevant_sets(qrels: &[QrelRecord]) -> HashMap<String, HashSet<Vec<String>>> {
    let mut out: HashMap<String, HashSet<Vec<String>>> = HashMap::new();
    for q in qrels {
        out.entry(q.query_id.clone()).or_default().insert(q.tuple.clone());
    }
    out
}

/// Queries in `run` that have no judgments, sorted.
pub fn unjudged_queries(run: &[RunEntry], qrels: &[QrelRecord]) -> Vec<String> {
    let judged: HashSet<&str> = qrels.iter().map(|q| q.query_id.as_str()).collect();
    let ids: BTreeSet<&str> = run
        .iter()
        .map(|e| e.query_id.as_str())
        .filter(|q| !judged.contains(q))
        .collect();
    ids.into_iter().map(str::to_owned).collect()
}
