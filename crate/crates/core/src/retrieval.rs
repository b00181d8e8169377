//! Relational query answering.
//!
//! A query `{E1, R12, E2, ..., En}` is split into entity sub-queries (searched in the
//! entity partition) and relationship sub-queries (searched in the pair partition).
//! Each sub-query retrieves candidate units, groups them by key and scores every
//! candidate group with a Dirichlet-smoothed language model or the sequential
//! dependence model. Entity tuples are assembled by joining the per-slot rankings
//! and ordered by a weighted sum of their sub-query scores.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collection::QueryRecord;
use crate::corpus::Tokenizer;
use crate::erindex::{ERIndex, GroupProfile, IndexPartition};
use crate::extraction::{GroupKey, UnitKind};

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("query {query_id}: {reason}")]
    Format { query_id: String, reason: String },
    #[error("empty sub-query")]
    EmptySubquery,
    #[error("invalid scoring config: {0}")]
    Config(String),
    #[error("weight vector has {found} entries, expected {expected}")]
    WeightArity { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Pair (a, b) only matches relationship groups keyed (a, b).
    Strict,
    /// Pair (a, b) also matches groups keyed (b, a).
    #[default]
    Either,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Lm,
    #[default]
    Sdm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub model: Model,
    /// Dirichlet pseudo-count.
    pub mu: f64,
    /// (term, ordered window, unordered window) weights of SDM.
    pub sdm_weights: [f64; 3],
    pub unordered_window: usize,
    /// Groups kept per sub-query ranking.
    pub candidate_depth: usize,
    /// Tuple scoring weights, one per sub-query in query order. `None` is uniform.
    pub rerank_weights: Option<Vec<f64>>,
    /// Collection count substituted for terms and bigrams never seen in the partition.
    pub unseen_cf: f64,
    pub orientation: Orientation,
    /// Tuples written per query to run files.
    pub run_depth: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            model: Model::Sdm,
            mu: 2000.0,
            sdm_weights: [0.85, 0.10, 0.05],
            unordered_window: 8,
            candidate_depth: 100,
            rerank_weights: None,
            unseen_cf: 0.5,
            orientation: Orientation::Either,
            run_depth: 1000,
        }
    }
}

impl ScoringConfig {
    pub fn lm() -> Self {
        ScoringConfig {
            model: Model::Lm,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        let bad = |m: &str| Err(QueryError::Config(m.into()));
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad("mu must be positive");
        }
        if self.sdm_weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return bad("SDM weights must be non-negative");
        }
        if (self.sdm_weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("SDM weights must sum to 1");
        }
        if self.unordered_window < 2 {
            return bad("unordered window must be at least 2");
        }
        if self.candidate_depth == 0 {
            return bad("candidate depth must be at least 1");
        }
        if !(self.unseen_cf > 0.0 && self.unseen_cf.is_finite()) {
            return bad("unseen collection count must be positive");
        }
        if let Some(w) = &self.rerank_weights {
            if w.iter().any(|x| !x.is_finite()) {
                return bad("rerank weights must be finite");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationalQuery {
    pub query_id: String,
    pub nl_text: String,
    pub entity_subqueries: Vec<Vec<String>>,
    pub relationship_subqueries: Vec<Vec<String>>,
    pub orientation_mode: Orientation,
}

impl RelationalQuery {
    pub fn arity(&self) -> usize {
        self.entity_subqueries.len()
    }

    /// Number of features per tuple: one score per sub-query.
    pub fn feature_count(&self) -> usize {
        2 * self.arity() - 1
    }
}

/// Maps the relational components of a query record onto sub-queries: odd positions
/// are entity types, even positions relationship types.
pub fn parse_query(
    record: &QueryRecord,
    tokenizer: &Tokenizer,
    orientation: Orientation,
) -> Result<RelationalQuery, QueryError> {
    let n = record.components.len();
    let fail = |reason: String| QueryError::Format {
        query_id: record.query_id.clone(),
        reason,
    };
    if n.is_multiple_of(2) {
        return Err(fail(format!("even component count ({n})")));
    }
    if n < 3 {
        return Err(fail(format!("needs at least 3 components, found {n}")));
    }
    let mut entity_subqueries = Vec::with_capacity(n / 2 + 1);
    let mut relationship_subqueries = Vec::with_capacity(n / 2);
    for (i, component) in record.components.iter().enumerate() {
        let terms = tokenizer.terms(component);
        if terms.is_empty() {
            return Err(fail(format!(
                "component {} ({component:?}) is empty after normalization",
                i + 1
            )));
        }
        if i % 2 == 0 {
            entity_subqueries.push(terms);
        } else {
            relationship_subqueries.push(terms);
        }
    }
    Ok(RelationalQuery {
        query_id: record.query_id.clone(),
        nl_text: record.nl_text.clone(),
        entity_subqueries,
        relationship_subqueries,
        orientation_mode: orientation,
    })
}

/// Query-side statistics for one sub-query against one partition.
struct PreparedSubquery {
    terms: Vec<Option<u32>>,
    /// Smoothing probability of each term.
    unigram_p: Vec<f64>,
    /// Smoothing probability of each adjacent query bigram, ordered and unordered.
    ordered_p: Vec<f64>,
    unordered_p: Vec<f64>,
    mu: f64,
    weights: [f64; 3],
    window: usize,
}

fn collection_size(p: &IndexPartition) -> f64 {
    (p.stats.total_terms as f64).max(1.0)
}

fn smoothing_p(count: u64, size: f64, unseen: f64) -> f64 {
    if count == 0 {
        unseen / size
    } else {
        count as f64 / size
    }
}

/// Occurrences of `a` and `b` within `window` tokens of each other in one unit.
/// For `a == b` each unordered pair of distinct positions counts once.
fn unordered_matches(pos_a: &[u32], pos_b: &[u32], same: bool, window: usize) -> u64 {
    let reach = (window - 1) as u32;
    let mut n = 0;
    if same {
        for (i, &x) in pos_a.iter().enumerate() {
            n += pos_a[i + 1..].iter().take_while(|&&y| y - x <= reach).count() as u64;
        }
    } else {
        for &x in pos_a {
            n += pos_b.iter().filter(|&&y| x.abs_diff(y) <= reach).count() as u64;
        }
    }
    n
}

fn positions_of(terms: &[u32], t: u32) -> Vec<u32> {
    terms
        .iter()
        .enumerate()
        .filter(|&(_, &x)| x == t)
        .map(|(i, _)| i as u32)
        .collect()
}

/// Unordered window matches of a term pair over the whole partition, from postings.
fn collection_unordered(p: &IndexPartition, a: u32, b: u32, window: usize) -> u64 {
    let la = p.postings_by_id(a);
    if a == b {
        return la
            .iter()
            .map(|x| unordered_matches(&x.positions, &x.positions, true, window))
            .sum();
    }
    let lb = p.postings_by_id(b);
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < la.len() && j < lb.len() {
        match la[i].unit_id.cmp(&lb[j].unit_id) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += unordered_matches(&la[i].positions, &lb[j].positions, false, window);
                i += 1;
                j += 1;
            }
        }
    }
    n
}

impl PreparedSubquery {
    fn new(p: &IndexPartition, query: &[String], config: &ScoringConfig) -> Result<Self, QueryError> {
        if query.is_empty() {
            return Err(QueryError::EmptySubquery);
        }
        let size = collection_size(p);
        let terms: Vec<Option<u32>> = query.iter().map(|t| p.term_id(t)).collect();
        let unigram_p = terms
            .iter()
            .map(|t| {
                let cf = t.map_or(0, |id| p.stats.term_collection_freq[id as usize]);
                smoothing_p(cf, size, config.unseen_cf)
            })
            .collect();
        let weights = match config.model {
            Model::Lm => [1.0, 0.0, 0.0],
            Model::Sdm if query.len() == 1 => [1.0, 0.0, 0.0],
            Model::Sdm => config.sdm_weights,
        };
        let mut ordered_p = Vec::new();
        let mut unordered_p = Vec::new();
        for w in terms.windows(2) {
            let (ordered, unordered) = match (w[0], w[1]) {
                (Some(a), Some(b)) => (
                    p.stats.bigram_collection_freq.get(&(a, b)).copied().unwrap_or(0),
                    if weights[2] > 0.0 {
                        collection_unordered(p, a, b, config.unordered_window)
                    } else {
                        0
                    },
                ),
                _ => (0, 0),
            };
            ordered_p.push(smoothing_p(ordered, size, config.unseen_cf));
            unordered_p.push(smoothing_p(unordered, size, config.unseen_cf));
        }
        Ok(PreparedSubquery {
            terms,
            unigram_p,
            ordered_p,
            unordered_p,
            mu: config.mu,
            weights,
            window: config.unordered_window,
        })
    }

    fn smoothed(&self, count: u64, p: f64, length: u64) -> f64 {
        ((count as f64 + self.mu * p) / (length as f64 + self.mu)).ln()
    }

    fn lm(&self, g: &GroupProfile) -> f64 {
        self.terms
            .iter()
            .zip(&self.unigram_p)
            .map(|(t, &p)| self.smoothed(t.map_or(0, |id| g.tf(id)), p, g.total_length))
            .sum()
    }

    /// Ordered-adjacent and unordered-window counts of query bigram `i` in a group.
    fn window_counts(&self, part: &IndexPartition, g: &GroupProfile, i: usize) -> (u64, u64) {
        let (Some(a), Some(b)) = (self.terms[i], self.terms[i + 1]) else {
            return (0, 0);
        };
        let (mut ordered, mut unordered) = (0, 0);
        for &uid in &g.units {
            let unit = part.unit(uid).expect("group members are indexed");
            let pa = positions_of(&unit.terms, a);
            if pa.is_empty() {
                continue;
            }
            if self.weights[1] > 0.0 {
                ordered += pa
                    .iter()
                    .filter(|&&x| unit.terms.get(x as usize + 1) == Some(&b))
                    .count() as u64;
            }
            if self.weights[2] > 0.0 {
                let pb = if a == b {
                    pa.clone()
                } else {
                    positions_of(&unit.terms, b)
                };
                unordered += unordered_matches(&pa, &pb, a == b, self.window);
            }
        }
        (ordered, unordered)
    }

    fn score(&self, part: &IndexPartition, g: &GroupProfile) -> f64 {
        let [wt, wo, wu] = self.weights;
        let mut score = wt * self.lm(g);
        if wo == 0.0 && wu == 0.0 {
            return score;
        }
        let (mut f_o, mut f_u) = (0.0, 0.0);
        for i in 0..self.terms.len() - 1 {
            let (ordered, unordered) = self.window_counts(part, g, i);
            f_o += self.smoothed(ordered, self.ordered_p[i], g.total_length);
            f_u += self.smoothed(unordered, self.unordered_p[i], g.total_length);
        }
        if wo != 0.0 {
            score += wo * f_o;
        }
        if wu != 0.0 {
            score += wu * f_u;
        }
        score
    }
}

/// Dirichlet-smoothed query log-likelihood of a group.
pub fn score_group_lm(
    partition: &IndexPartition,
    group: &GroupProfile,
    terms: &[String],
    mu: f64,
    unseen_cf: f64,
) -> Result<f64, QueryError> {
    let config = ScoringConfig {
        model: Model::Lm,
        mu,
        unseen_cf,
        ..Default::default()
    };
    config.validate()?;
    Ok(PreparedSubquery::new(partition, terms, &config)?.score(partition, group))
}

/// Sequential dependence model score of a group. Window counts never cross units.
pub fn score_group_sdm(
    partition: &IndexPartition,
    group: &GroupProfile,
    terms: &[String],
    config: &ScoringConfig,
) -> Result<f64, QueryError> {
    let config = ScoringConfig {
        model: Model::Sdm,
        ..config.clone()
    };
    config.validate()?;
    Ok(PreparedSubquery::new(partition, terms, &config)?.score(partition, group))
}

/// Scores a group with the configured model.
pub fn score_group(
    partition: &IndexPartition,
    group: &GroupProfile,
    terms: &[String],
    config: &ScoringConfig,
) -> Result<f64, QueryError> {
    config.validate()?;
    Ok(PreparedSubquery::new(partition, terms, config)?.score(partition, group))
}

/// Ranked (group key, score) list of one sub-query: descending by score, ties by
/// key ascending.
pub type Ranking = Vec<(GroupKey, f64)>;

fn by_score_then_key(a: &(GroupKey, f64), b: &(GroupKey, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Candidate groups of every unit matching any sub-query term, scored over their
/// full profiles and cut to `candidate_depth`.
pub fn retrieve_subquery(
    partition: &IndexPartition,
    subquery: &[String],
    config: &ScoringConfig,
) -> Result<Ranking, QueryError> {
    config.validate()?;
    let prepared = PreparedSubquery::new(partition, subquery, config)?;
    let mut candidates = BTreeSet::new();
    for t in prepared.terms.iter().flatten() {
        for post in partition.postings_by_id(*t) {
            let unit = partition.unit(post.unit_id).expect("postings reference indexed units");
            candidates.insert(unit.group);
        }
    }
    let mut scored: Vec<(GroupKey, f64)> = candidates
        .into_par_iter()
        .map(|g| {
            let group = partition.group(g);
            (group.key.clone(), prepared.score(partition, group))
        })
        .collect();
    scored.sort_by(by_score_then_key);
    scored.truncate(config.candidate_depth);
    Ok(scored)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleResult {
    pub tuple: Vec<String>,
    /// Sub-query scores in query order: E1, R12, E2, ..., En.
    pub features: Vec<f64>,
    pub score: f64,
}

impl TupleResult {
    pub fn label(&self) -> String {
        self.tuple.join("|")
    }
}

fn resolve_weights(weights: Option<&[f64]>, arity: usize) -> Result<Vec<f64>, QueryError> {
    match weights {
        None => Ok(vec![1.0 / arity as f64; arity]),
        Some(w) if w.len() == arity => Ok(w.to_vec()),
        Some(w) => Err(QueryError::WeightArity {
            expected: arity,
            found: w.len(),
        }),
    }
}

fn dot(features: &[f64], weights: &[f64]) -> f64 {
    features.iter().zip(weights).map(|(f, w)| f * w).sum()
}

fn sort_tuples(tuples: &mut [TupleResult]) {
    tuples.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tuple.cmp(&b.tuple)));
}

/// Assembles entity tuples from per-slot rankings.
///
/// A tuple `(e1..en)` is produced iff every `ei` is ranked for entity slot `i` and
/// every adjacent pair is ranked for the relationship slot between them (in either
/// key orientation under [`Orientation::Either`], where the better-scoring
/// orientation supplies the feature).
pub fn join_tuples(
    entity_rankings: &[Ranking],
    relationship_rankings: &[Ranking],
    orientation: Orientation,
    weights: Option<&[f64]>,
) -> Result<Vec<TupleResult>, QueryError> {
    let n = entity_rankings.len();
    if n < 2 || relationship_rankings.len() != n - 1 {
        return Err(QueryError::Config(format!(
            "{n} entity rankings need {} relationship rankings, got {}",
            n.saturating_sub(1),
            relationship_rankings.len()
        )));
    }
    let weights = resolve_weights(weights, 2 * n - 1)?;
    let entity_scores: Vec<HashMap<&str, f64>> = entity_rankings
        .iter()
        .map(|r| r.iter().map(|(k, s)| (k.0[0].as_str(), *s)).collect())
        .collect();

    // edges[i]: e_i -> [(e_{i+1}, relationship score)], sorted by target.
    let mut edges: Vec<HashMap<&str, Vec<(&str, f64)>>> = Vec::with_capacity(n - 1);
    for (i, ranking) in relationship_rankings.iter().enumerate() {
        let mut best: HashMap<(&str, &str), f64> = HashMap::new();
        for (key, s) in ranking {
            let (a, b) = (key.0[0].as_str(), key.0[1].as_str());
            let directions: &[(&str, &str)] = match orientation {
                Orientation::Strict => &[(a, b)],
                Orientation::Either => &[(a, b), (b, a)],
            };
            for &(from, to) in directions {
                if entity_scores[i].contains_key(from) && entity_scores[i + 1].contains_key(to) {
                    best.entry((from, to)).and_modify(|v| *v = v.max(*s)).or_insert(*s);
                }
            }
        }
        let mut adj: HashMap<&str, Vec<(&str, f64)>> = HashMap::new();
        for ((a, b), s) in best {
            adj.entry(a).or_default().push((b, s));
        }
        for list in adj.values_mut() {
            list.sort_by(|x, y| x.0.cmp(y.0));
        }
        edges.push(adj);
    }

    let mut out = Vec::new();
    let mut starts: Vec<&str> = edges[0].keys().copied().collect();
    starts.sort_unstable();
    let mut path: Vec<&str> = Vec::with_capacity(n);
    let mut feats: Vec<f64> = Vec::with_capacity(2 * n - 1);
    for start in starts {
        path.push(start);
        feats.push(entity_scores[0][start]);
        extend(&edges, &entity_scores, &weights, &mut path, &mut feats, &mut out);
        path.pop();
        feats.pop();
    }
    sort_tuples(&mut out);
    Ok(out)
}

fn extend<'a>(
    edges: &[HashMap<&'a str, Vec<(&'a str, f64)>>],
    entity_scores: &[HashMap<&'a str, f64>],
    weights: &[f64],
    path: &mut Vec<&'a str>,
    feats: &mut Vec<f64>,
    out: &mut Vec<TupleResult>,
) {
    let i = path.len() - 1;
    if i == edges.len() {
        out.push(TupleResult {
            tuple: path.iter().map(|s| s.to_string()).collect(),
            features: feats.clone(),
            score: dot(feats, weights),
        });
        return;
    }
    let Some(next) = edges[i].get(path[i]) else {
        return;
    };
    for &(to, rel) in next {
        path.push(to);
        feats.push(rel);
        feats.push(entity_scores[i + 1][to]);
        extend(edges, entity_scores, weights, path, feats, out);
        feats.pop();
        feats.pop();
        path.pop();
    }
}

/// Recomputes combined scores with a new weight vector and re-sorts.
pub fn rerank(mut tuples: Vec<TupleResult>, weights: &[f64]) -> Result<Vec<TupleResult>, QueryError> {
    for t in &mut tuples {
        if t.features.len() != weights.len() {
            return Err(QueryError::WeightArity {
                expected: t.features.len(),
                found: weights.len(),
            });
        }
        t.score = dot(&t.features, weights);
    }
    sort_tuples(&mut tuples);
    Ok(tuples)
}

/// Per-slot rankings of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRankings {
    pub entity: Vec<Ranking>,
    pub relationship: Vec<Ranking>,
}

pub fn rank_subqueries(
    index: &ERIndex,
    query: &RelationalQuery,
    config: &ScoringConfig,
) -> Result<QueryRankings, QueryError> {
    let entity = query
        .entity_subqueries
        .iter()
        .map(|q| retrieve_subquery(index.partition(UnitKind::Entity), q, config))
        .collect::<Result<_, _>>()?;
    let relationship = query
        .relationship_subqueries
        .iter()
        .map(|q| retrieve_subquery(index.partition(UnitKind::Pair), q, config))
        .collect::<Result<_, _>>()?;
    Ok(QueryRankings { entity, relationship })
}

/// Full staged search for one query: retrieve, group, score, join.
pub fn search(
    index: &ERIndex,
    query: &RelationalQuery,
    config: &ScoringConfig,
) -> Result<Vec<TupleResult>, QueryError> {
    let rankings = rank_subqueries(index, query, config)?;
    join_tuples(
        &rankings.entity,
        &rankings.relationship,
        query.orientation_mode,
        config.rerank_weights.as_deref(),
    )
}

/// Runs independent queries concurrently; results keep query order.
pub fn search_all(
    index: &ERIndex,
    queries: &[RelationalQuery],
    config: &ScoringConfig,
) -> Vec<Result<Vec<TupleResult>, QueryError>> {
    queries.par_iter().map(|q| search(index, q, config)).collect()
}

/// Writes TREC-style run lines: `<qid> Q0 <e1|..|en> <rank> <score> <tag>`.
pub fn write_run<W: Write>(
    mut w: W,
    query_id: &str,
    tuples: &[TupleResult],
    depth: usize,
    tag: &str,
) -> io::Result<()> {
    for (rank, t) in tuples.iter().take(depth).enumerate() {
        writeln!(w, "{} Q0 {} {} {} {}", query_id, t.label(), rank + 1, t.score, tag)?;
    }
    Ok(())
}

/// Writes LETOR-style lines: `<label> qid:<qid> 1:<f1> ... k:<fk> # <e1|..|en>`.
///
/// The label is 1 when the tuple is judged relevant, 0 otherwise or without judgments.
pub fn emit_features<W: Write>(
    mut w: W,
    query_id: &str,
    tuples: &[TupleResult],
    relevant: Option<&HashSet<Vec<String>>>,
) -> io::Result<()> {
    for t in tuples {
        let label = u8::from(relevant.is_some_and(|r| r.contains(&t.tuple)));
        write!(w, "{label} qid:{query_id}")?;
        for (i, f) in t.features.iter().enumerate() {
            write!(w, " {}:{}", i + 1, f)?;
        }
        writeln!(w, " # {}", t.label())?;
    }
    Ok(())
}
