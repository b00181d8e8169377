//! Brute-force reference implementations and fixtures shared by the integration tests.
//!
//! Nothing here touches the index: scores are recomputed by counting directly over
//! extraction units, joins by enumerating cross products, metrics by definition.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;

use erkit::corpus::{AnnotatedDocument, EntityAnnotation, IngestConfig};
use erkit::extraction::{ExtractionConfig, ExtractionUnit, GroupKey, UnitKind};
use erkit::pipeline::{extract_corpus, Extraction};
use erkit::retrieval::{Orientation, Ranking, TupleResult};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn toy_corpus() -> PathBuf {
    data_dir().join("toy_corpus.jsonl")
}

pub fn toy_extraction() -> Extraction {
    extract_corpus(toy_corpus(), &IngestConfig::default(), &ExtractionConfig::default()).expect("toy corpus")
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Term statistics of one partition, counted straight from the units.
pub struct OracleScorer {
    groups: BTreeMap<GroupKey, Vec<Vec<String>>>,
    all: Vec<Vec<String>>,
    total_terms: usize,
}

impl OracleScorer {
    pub fn new(units: &[ExtractionUnit], kind: UnitKind) -> Self {
        let mut groups: BTreeMap<GroupKey, Vec<Vec<String>>> = BTreeMap::new();
        let mut all = Vec::new();
        let mut seen = HashSet::new();
        for u in units.iter().filter(|u| u.kind == kind) {
            if !seen.insert(u.unit_id) {
                continue;
            }
            groups.entry(u.key.clone()).or_default().push(u.terms.clone());
            all.push(u.terms.clone());
        }
        let total_terms = all.iter().map(Vec::len).sum();
        OracleScorer {
            groups,
            all,
            total_terms,
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &GroupKey> {
        self.groups.keys()
    }

    pub fn vocabulary(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .all
            .iter()
            .flatten()
            .cloned()
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        v.sort();
        v
    }

    fn unigram(units: &[Vec<String>], t: &str) -> usize {
        units.iter().flatten().filter(|x| *x == t).count()
    }

    fn ordered(units: &[Vec<String>], a: &str, b: &str) -> usize {
        units
            .iter()
            .map(|u| (1..u.len()).filter(|&j| u[j - 1] == a && u[j] == b).count())
            .sum()
    }

    fn unordered(units: &[Vec<String>], a: &str, b: &str, window: usize) -> usize {
        let mut n = 0;
        for u in units {
            for i in 0..u.len() {
                for j in 0..u.len() {
                    if i == j || i.abs_diff(j) > window - 1 {
                        continue;
                    }
                    if a == b {
                        if i < j && u[i] == a && u[j] == a {
                            n += 1;
                        }
                    } else if u[i] == a && u[j] == b {
                        n += 1;
                    }
                }
            }
        }
        n
    }

    /// lambda = (t, o, u); a single-term query always scores with (1, 0, 0).
    pub fn score(
        &self,
        key: &GroupKey,
        query: &[String],
        lambda: [f64; 3],
        mu: f64,
        window: usize,
        unseen: f64,
    ) -> f64 {
        let units = &self.groups[key];
        let g_len = units.iter().map(Vec::len).sum::<usize>() as f64;
        let c = (self.total_terms as f64).max(1.0);
        let smooth = |count: usize, coll: usize| {
            let p = if coll == 0 { unseen / c } else { coll as f64 / c };
            ((count as f64 + mu * p) / (g_len + mu)).ln()
        };
        let lambda = if query.len() == 1 { [1.0, 0.0, 0.0] } else { lambda };
        let mut f_t = 0.0;
        for t in query {
            f_t += smooth(Self::unigram(units, t), Self::unigram(&self.all, t));
        }
        let mut score = lambda[0] * f_t;
        if lambda[1] != 0.0 || lambda[2] != 0.0 {
            let (mut f_o, mut f_u) = (0.0, 0.0);
            for w in query.windows(2) {
                f_o += smooth(
                    Self::ordered(units, &w[0], &w[1]),
                    Self::ordered(&self.all, &w[0], &w[1]),
                );
                f_u += smooth(
                    Self::unordered(units, &w[0], &w[1], window),
                    Self::unordered(&self.all, &w[0], &w[1], window),
                );
            }
            score += lambda[1] * f_o + lambda[2] * f_u;
        }
        score
    }

    /// Scores every group containing at least one query term, sorted and cut to `depth`.
    pub fn rank(
        &self,
        query: &[String],
        lambda: [f64; 3],
        mu: f64,
        window: usize,
        unseen: f64,
        depth: usize,
    ) -> Ranking {
        let mut out: Ranking = self
            .groups
            .iter()
            .filter(|(_, units)| units.iter().flatten().any(|t| query.contains(t)))
            .map(|(k, _)| (k.clone(), self.score(k, query, lambda, mu, window, unseen)))
            .collect();
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        out.truncate(depth);
        out
    }
}

/// Enumerates the full cross product of entity rankings and keeps tuples whose
/// every adjacent pair has a relationship score.
pub fn exhaustive_join(
    entities: &[Ranking],
    relationships: &[Ranking],
    orientation: Orientation,
    weights: Option<&[f64]>,
) -> Vec<TupleResult> {
    let n = entities.len();
    let uniform = vec![1.0 / (2 * n - 1) as f64; 2 * n - 1];
    let weights = weights.unwrap_or(&uniform);
    let rel_score = |slot: usize, a: &str, b: &str| -> Option<f64> {
        let mut best: Option<f64> = None;
        for (k, s) in &relationships[slot] {
            let fwd = k.0[0] == a && k.0[1] == b;
            let rev = k.0[0] == b && k.0[1] == a;
            if fwd || (rev && orientation == Orientation::Either) {
                best = Some(best.map_or(*s, |x: f64| x.max(*s)));
            }
        }
        best
    };
    let mut combos: Vec<Vec<usize>> = vec![vec![]];
    for r in entities {
        let mut next = Vec::new();
        for c in &combos {
            for i in 0..r.len() {
                let mut c = c.clone();
                c.push(i);
                next.push(c);
            }
        }
        combos = next;
    }
    let mut out = Vec::new();
    'combo: for c in combos {
        let tuple: Vec<String> = c
            .iter()
            .enumerate()
            .map(|(s, &i)| entities[s][i].0 .0[0].clone())
            .collect();
        let mut features = vec![entities[0][c[0]].1];
        for s in 0..n - 1 {
            match rel_score(s, &tuple[s], &tuple[s + 1]) {
                Some(r) => features.push(r),
                None => continue 'combo,
            }
            features.push(entities[s + 1][c[s + 1]].1);
        }
        let score = features.iter().zip(weights).map(|(f, w)| f * w).sum();
        out.push(TupleResult { tuple, features, score });
    }
    out.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| a.tuple.cmp(&b.tuple))
    });
    out
}

/// Textbook metrics for one ranked list with binary relevance.
pub struct OracleMetrics {
    pub ap: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
}

pub fn oracle_metrics(ranked_relevance: &[bool], total_relevant: usize, ks: &[usize]) -> OracleMetrics {
    let precision_at = |k: usize| {
        let hits = ranked_relevance.iter().take(k).filter(|&&r| r).count();
        hits as f64 / k as f64
    };
    let mut ap_sum = 0.0;
    for (i, &r) in ranked_relevance.iter().enumerate() {
        if r {
            ap_sum += precision_at(i + 1);
        }
    }
    let ap = if total_relevant == 0 {
        0.0
    } else {
        ap_sum / total_relevant as f64
    };
    let gain = |i: usize| 1.0 / (i as f64 + 2.0).log2();
    let mut ndcg = Vec::new();
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    for &k in ks {
        precision.push(precision_at(k));
        let hits = ranked_relevance.iter().take(k).filter(|&&r| r).count();
        recall.push(if total_relevant == 0 {
            0.0
        } else {
            hits as f64 / total_relevant as f64
        });
        let mut dcg = 0.0;
        for (i, &r) in ranked_relevance.iter().enumerate().take(k) {
            if r {
                dcg += gain(i);
            }
        }
        let mut ideal = 0.0;
        for i in 0..k.min(total_relevant) {
            ideal += gain(i);
        }
        ndcg.push(if ideal > 0.0 { dcg / ideal } else { 0.0 });
    }
    OracleMetrics {
        ap,
        precision,
        recall,
        ndcg,
    }
}

const WORDS: &[&str] = &[
    "the",
    "company",
    "built",
    "a",
    "plant",
    "in",
    "founded",
    "by",
    "river",
    "city",
    "near",
    "large",
    "old",
    "new",
    "regiment",
    "fought",
    "at",
    "battle",
    "of",
    "and",
    "was",
    "is",
    "headquartered",
    "car",
    "makes",
    "famous",
];

/// Random single-sentence documents with `k` distinct entities drawn from a pool.
/// Returns the documents and the number of distinct entities in each sentence.
pub fn synthetic_documents(n: usize, pool: usize, seed: u64) -> (Vec<AnnotatedDocument>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entities: Vec<String> = (0..pool).map(|i| format!("E{i}")).collect();
    let mut docs = Vec::with_capacity(n);
    let mut ks = Vec::with_capacity(n);
    for d in 0..n {
        let k = rng.gen_range(0..=5usize);
        let chosen: Vec<&String> = entities.choose_multiple(&mut rng, k).collect();
        let mut text = String::new();
        let mut annotations = Vec::new();
        let mut mentions: Vec<&String> = chosen.clone();
        // Occasional repeated mention of an already chosen entity.
        if k > 0 && rng.gen_bool(0.2) {
            mentions.push(chosen[rng.gen_range(0..k)]);
        }
        mentions.shuffle(&mut rng);
        for e in mentions {
            for _ in 0..rng.gen_range(0..4) {
                text.push_str(WORDS.choose(&mut rng).unwrap());
                text.push(' ');
            }
            let surface = format!("Ent{}", &e[1..]);
            annotations.push(EntityAnnotation {
                entity_id: e.clone(),
                begin: text.len(),
                end: text.len() + surface.len(),
                surface: surface.clone(),
            });
            text.push_str(&surface);
            text.push(' ');
        }
        for _ in 0..rng.gen_range(1..6) {
            text.push_str(WORDS.choose(&mut rng).unwrap());
            text.push(' ');
        }
        text.pop();
        text.push('.');
        docs.push(AnnotatedDocument::new(format!("s{d:05}"), text, annotations).expect("synthetic document"));
        ks.push(k);
    }
    (docs, ks)
}

pub fn group_units(units: &[ExtractionUnit]) -> HashMap<(UnitKind, GroupKey), Vec<&ExtractionUnit>> {
    let mut out: HashMap<(UnitKind, GroupKey), Vec<&ExtractionUnit>> = HashMap::new();
    for u in units {
        out.entry((u.kind, u.key.clone())).or_default().push(u);
    }
    out
}
