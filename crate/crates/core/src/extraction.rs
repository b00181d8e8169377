//! Sentence-scoped entity and entity-pair context extraction.
//!
//! Every sentence with linked entities yields one ENTITY unit per distinct entity
//! (the sentence minus that entity's own mention tokens) and one PAIR unit per
//! unordered pair of distinct entities (the tokens separating the two mentions).

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::Xxh3;

use crate::corpus::{annotations_in_sentence, AnnotatedDocument, EntityAnnotation, Sentence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum UnitKind {
    Entity,
    Pair,
}

impl UnitKind {
    pub fn arity(self) -> usize {
        match self {
            UnitKind::Entity => 1,
            UnitKind::Pair => 2,
        }
    }
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnitKind::Entity => "ENTITY",
            UnitKind::Pair => "PAIR",
        })
    }
}

/// Entity or ordered entity-pair key. Units sharing a key form a group.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupKey(pub Vec<String>);

impl GroupKey {
    pub fn entity(id: impl Into<String>) -> Self {
        GroupKey(vec![id.into()])
    }

    pub fn pair(first: impl Into<String>, second: impl Into<String>) -> Self {
        GroupKey(vec![first.into(), second.into()])
    }

    pub fn entities(&self) -> &[String] {
        &self.0
    }

    pub fn reversed(&self) -> Self {
        GroupKey(self.0.iter().rev().cloned().collect())
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("|"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionUnit {
    pub unit_id: u64,
    pub kind: UnitKind,
    pub key: GroupKey,
    /// Normalized terms in sentence order; a term's position is its index.
    pub terms: Vec<String>,
    pub doc_id: String,
    pub sent_index: usize,
}

impl ExtractionUnit {
    pub fn new(
        kind: UnitKind,
        key: GroupKey,
        terms: Vec<String>,
        doc_id: impl Into<String>,
        sent_index: usize,
    ) -> Self {
        let doc_id = doc_id.into();
        ExtractionUnit {
            unit_id: unit_id(&doc_id, sent_index, kind, &key),
            kind,
            key,
            terms,
            doc_id,
            sent_index,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("units always serialize")
    }
}

/// Content-derived identifier of a unit.
pub fn unit_id(doc_id: &str, sent_index: usize, kind: UnitKind, key: &GroupKey) -> u64 {
    let mut h = Xxh3::new();
    h.update(doc_id.as_bytes());
    h.update(&[0]);
    h.update(&(sent_index as u64).to_le_bytes());
    h.update(&[kind as u8]);
    for e in &key.0 {
        h.update(e.as_bytes());
        h.update(&[0]);
    }
    h.digest()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    /// Pairs separated by more tokens than this are not extracted. `None` keeps all.
    pub max_separation: Option<usize>,
}

/// Per-document extraction counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionStats {
    pub sentences: usize,
    pub entity_units: usize,
    pub pair_units: usize,
    pub straddling_annotations: usize,
    pub pairs_over_cutoff: usize,
}

impl std::ops::AddAssign for ExtractionStats {
    fn add_assign(&mut self, o: Self) {
        self.sentences += o.sentences;
        self.entity_units += o.entity_units;
        self.pair_units += o.pair_units;
        self.straddling_annotations += o.straddling_annotations;
        self.pairs_over_cutoff += o.pairs_over_cutoff;
    }
}

/// (separating tokens, earlier begin, later begin) of a mention pair; lower is closer.
type SeparationRank = (usize, usize, usize);

/// Distinct entities of a sentence in first-occurrence order, each with its mentions.
fn mentions_by_entity<'a>(mentions: &[&'a EntityAnnotation]) -> Vec<(&'a str, Vec<&'a EntityAnnotation>)> {
    let mut order: Vec<(&str, Vec<&EntityAnnotation>)> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for &m in mentions {
        let i = *slot.entry(m.entity_id.as_str()).or_insert_with(|| {
            order.push((m.entity_id.as_str(), Vec::new()));
            order.len() - 1
        });
        order[i].1.push(m);
    }
    order
}

fn overlaps(a_begin: usize, a_end: usize, b_begin: usize, b_end: usize) -> bool {
    a_begin < b_end && b_begin < a_end
}

pub fn extract_entity_units(doc: &AnnotatedDocument, sentences: &[Sentence]) -> Vec<ExtractionUnit> {
    let mut out = Vec::new();
    for s in sentences {
        let found = annotations_in_sentence(doc, s);
        for (entity, spans) in mentions_by_entity(&found.contained) {
            let terms = s
                .tokens
                .iter()
                .filter(|t| !spans.iter().any(|m| overlaps(t.begin, t.end, m.begin, m.end)))
                .map(|t| t.term.clone())
                .collect();
            out.push(ExtractionUnit::new(
                UnitKind::Entity,
                GroupKey::entity(entity),
                terms,
                &doc.doc_id,
                s.sent_index,
            ));
        }
    }
    out
}

/// Index range of the tokens lying strictly between two mentions.
fn separating_range(s: &Sentence, a: &EntityAnnotation, b: &EntityAnnotation) -> (usize, usize) {
    let (earlier, later) = if (a.begin, a.end) <= (b.begin, b.end) {
        (a, b)
    } else {
        (b, a)
    };
    let lo = s.tokens.partition_point(|t| t.begin < earlier.end);
    let hi = s.tokens.partition_point(|t| t.end <= later.begin);
    (lo, hi.max(lo))
}

fn extract_pairs(
    doc: &AnnotatedDocument,
    sentences: &[Sentence],
    config: &ExtractionConfig,
    stats: &mut ExtractionStats,
) -> Vec<ExtractionUnit> {
    let mut out = Vec::new();
    for s in sentences {
        let found = annotations_in_sentence(doc, s);
        let entities = mentions_by_entity(&found.contained);
        for (i, (first, first_spans)) in entities.iter().enumerate() {
            for (second, second_spans) in &entities[i + 1..] {
                // Closest pair of mentions; ties go to the earliest one.
                let mut best: Option<(SeparationRank, (usize, usize))> = None;
                for a in first_spans {
                    for b in second_spans {
                        let range = separating_range(s, a, b);
                        let rank = (range.1 - range.0, a.begin.min(b.begin), a.begin.max(b.begin));
                        if best.is_none_or(|(r, _)| rank < r) {
                            best = Some((rank, range));
                        }
                    }
                }
                let (_, (lo, hi)) = best.expect("entities have at least one mention");
                if config.max_separation.is_some_and(|max| hi - lo > max) {
                    stats.pairs_over_cutoff += 1;
                    continue;
                }
                let terms = s.tokens[lo..hi].iter().map(|t| t.term.clone()).collect();
                out.push(ExtractionUnit::new(
                    UnitKind::Pair,
                    GroupKey::pair(*first, *second),
                    terms,
                    &doc.doc_id,
                    s.sent_index,
                ));
            }
        }
    }
    out
}

pub fn extract_pair_units(
    doc: &AnnotatedDocument,
    sentences: &[Sentence],
    config: &ExtractionConfig,
) -> Vec<ExtractionUnit> {
    extract_pairs(doc, sentences, config, &mut ExtractionStats::default())
}

/// Entity units followed by pair units for one segmented document.
pub fn extract_document(
    doc: &AnnotatedDocument,
    sentences: &[Sentence],
    config: &ExtractionConfig,
) -> (Vec<ExtractionUnit>, ExtractionStats) {
    let mut stats = ExtractionStats {
        sentences: sentences.len(),
        straddling_annotations: sentences
            .iter()
            .map(|s| annotations_in_sentence(doc, s).straddling)
            .sum(),
        ..Default::default()
    };
    let mut units = extract_entity_units(doc, sentences);
    stats.entity_units = units.len();
    let pairs = extract_pairs(doc, sentences, config, &mut stats);
    stats.pair_units = pairs.len();
    units.extend(pairs);
    (units, stats)
}
