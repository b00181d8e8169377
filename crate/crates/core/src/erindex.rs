//! Paired inverted indexes over extraction units.
//!
//! The entity partition indexes ENTITY units and the pair partition indexes PAIR
//! units. Each partition keeps positional postings, a unit store (group and term
//! sequence of every unit), a group store with aggregated term frequencies, and
//! collection statistics including adjacent-bigram counts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::{xxh3_64, Xxh3};

use crate::extraction::{ExtractionUnit, GroupKey, UnitKind};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"ERKITIDX";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unit id {unit_id:016x} appears twice with different content")]
    DuplicateUnit { unit_id: u64 },
    #[error("{file}: checksum mismatch (stored {stored:016x}, computed {computed:016x})")]
    Checksum { file: String, stored: u64, computed: u64 },
    #[error("{file}: index format version {found} is not supported (expected {expected})")]
    Version { file: String, found: u32, expected: u32 },
    #[error("{file}: truncated")]
    Truncated { file: String },
    #[error("{file}: {reason}")]
    Corrupt { file: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IndexError + '_ {
    move |source| IndexError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub unit_id: u64,
    pub tf: u32,
    pub positions: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitEntry {
    pub unit_id: u64,
    /// Index into the partition's group list.
    pub group: u32,
    /// Term ids in unit order.
    pub terms: Vec<u32>,
}

impl UnitEntry {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Aggregate of all units sharing a key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupProfile {
    pub key: GroupKey,
    /// Member unit ids, ascending.
    pub units: Vec<u64>,
    /// (term id, summed tf) sorted by term id.
    pub term_freqs: Vec<(u32, u64)>,
    pub total_length: u64,
}

impl GroupProfile {
    pub fn tf(&self, term_id: u32) -> u64 {
        self.term_freqs
            .binary_search_by_key(&term_id, |&(t, _)| t)
            .map_or(0, |i| self.term_freqs[i].1)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CollectionStats {
    pub total_terms: u64,
    pub unit_count: u64,
    pub group_count: u64,
    /// Collection frequency by term id.
    pub term_collection_freq: Vec<u64>,
    /// Adjacent ordered bigram counts keyed by term ids.
    pub bigram_collection_freq: HashMap<(u32, u32), u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPartition {
    pub kind: UnitKind,
    terms: Vec<String>,
    term_ids: HashMap<String, u32>,
    postings: Vec<Vec<Posting>>,
    units: Vec<UnitEntry>,
    groups: Vec<GroupProfile>,
    group_ids: HashMap<GroupKey, u32>,
    pub stats: CollectionStats,
}

impl IndexPartition {
    pub fn term_id(&self, term: &str) -> Option<u32> {
        self.term_ids.get(term).copied()
    }

    pub fn term(&self, id: u32) -> &str {
        &self.terms[id as usize]
    }

    /// Vocabulary in term-id order (lexicographic).
    pub fn vocabulary(&self) -> &[String] {
        &self.terms
    }

    /// Exact postings for `term`, sorted by unit id; empty for unknown terms.
    pub fn lookup_postings(&self, term: &str) -> &[Posting] {
        self.term_id(term).map_or(&[][..], |id| &self.postings[id as usize])
    }

    pub fn postings_by_id(&self, term_id: u32) -> &[Posting] {
        &self.postings[term_id as usize]
    }

    pub fn unit(&self, unit_id: u64) -> Option<&UnitEntry> {
        self.units
            .binary_search_by_key(&unit_id, |u| u.unit_id)
            .ok()
            .map(|i| &self.units[i])
    }

    pub fn units(&self) -> &[UnitEntry] {
        &self.units
    }

    pub fn groups(&self) -> &[GroupProfile] {
        &self.groups
    }

    pub fn group(&self, index: u32) -> &GroupProfile {
        &self.groups[index as usize]
    }

    pub fn group_index(&self, key: &GroupKey) -> Option<u32> {
        self.group_ids.get(key).copied()
    }

    /// Key of the group containing `unit_id`, `None` for unknown units.
    pub fn group_of(&self, unit_id: u64) -> Option<&GroupKey> {
        self.unit(unit_id).map(|u| &self.group(u.group).key)
    }

    /// Stored aggregate for `key`, `None` for unknown keys.
    pub fn group_profile(&self, key: &GroupKey) -> Option<&GroupProfile> {
        self.group_index(key).map(|i| self.group(i))
    }

    pub fn collection_freq(&self, term: &str) -> u64 {
        self.term_id(term)
            .map_or(0, |id| self.stats.term_collection_freq[id as usize])
    }

    pub fn bigram_freq(&self, first: &str, second: &str) -> u64 {
        match (self.term_id(first), self.term_id(second)) {
            (Some(a), Some(b)) => self.stats.bigram_collection_freq.get(&(a, b)).copied().unwrap_or(0),
            _ => 0,
        }
    }

    fn counts(&self) -> PartitionCounts {
        PartitionCounts {
            units: self.stats.unit_count,
            groups: self.stats.group_count,
            terms: self.terms.len() as u64,
            total_terms: self.stats.total_terms,
            bigrams: self.stats.bigram_collection_freq.len() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    /// Units per parallel work batch.
    pub batch_size: usize,
    /// Worker threads for building; 0 uses all cores. Not part of the persisted config.
    #[serde(skip)]
    pub threads: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            batch_size: 4096,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub units: u64,
    pub groups: u64,
    pub terms: u64,
    pub total_terms: u64,
    pub bigrams: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// xxh3 over the canonical dump of the indexed units.
    pub corpus_hash: String,
    pub config: IndexConfig,
    pub entity: PartitionCounts,
    pub pair: PartitionCounts,
    /// Data file name to xxh3 checksum; filled in when saved.
    pub files: BTreeMap<String, String>,
    /// Checksum of this manifest serialized with an empty `checksum` field.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ERIndex {
    pub entity_partition: IndexPartition,
    pub pair_partition: IndexPartition,
    pub manifest: Manifest,
}

impl ERIndex {
    pub fn partition(&self, kind: UnitKind) -> &IndexPartition {
        match kind {
            UnitKind::Entity => &self.entity_partition,
            UnitKind::Pair => &self.pair_partition,
        }
    }
}

/// Builds both partitions. Output does not depend on `config.threads`.
pub fn build_index(
    units: impl IntoIterator<Item = ExtractionUnit>,
    config: &IndexConfig,
) -> Result<ERIndex, IndexError> {
    let units: Vec<ExtractionUnit> = units.into_iter().collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .expect("thread pool");
    pool.install(|| build_in_pool(units, config))
}

fn build_in_pool(mut units: Vec<ExtractionUnit>, config: &IndexConfig) -> Result<ERIndex, IndexError> {
    units.par_sort_unstable_by(|a, b| {
        a.unit_id
            .cmp(&b.unit_id)
            .then_with(|| a.kind.cmp(&b.kind))
            .then_with(|| a.key.cmp(&b.key))
            .then_with(|| a.doc_id.cmp(&b.doc_id))
            .then_with(|| a.sent_index.cmp(&b.sent_index))
            .then_with(|| a.terms.cmp(&b.terms))
    });
    let mut deduped: Vec<ExtractionUnit> = Vec::with_capacity(units.len());
    for u in units {
        match deduped.last() {
            Some(prev) if prev.unit_id == u.unit_id => {
                if *prev != u {
                    return Err(IndexError::DuplicateUnit { unit_id: u.unit_id });
                }
            }
            _ => deduped.push(u),
        }
    }

    let mut corpus_hash = Xxh3::new();
    for u in &deduped {
        corpus_hash.update(u.to_json_line().as_bytes());
        corpus_hash.update(b"\n");
    }

    let batch = config.batch_size.max(1);
    let (entity_units, pair_units): (Vec<_>, Vec<_>) = deduped.into_iter().partition(|u| u.kind == UnitKind::Entity);
    let entity_partition = build_partition(UnitKind::Entity, entity_units, batch);
    let pair_partition = build_partition(UnitKind::Pair, pair_units, batch);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        corpus_hash: format!("{:016x}", corpus_hash.digest()),
        config: config.clone(),
        entity: entity_partition.counts(),
        pair: pair_partition.counts(),
        files: BTreeMap::new(),
        checksum: String::new(),
    };
    Ok(ERIndex {
        entity_partition,
        pair_partition,
        manifest,
    })
}

/// `units` must be sorted by unit id and unique.
fn build_partition(kind: UnitKind, units: Vec<ExtractionUnit>, batch: usize) -> IndexPartition {
    let vocab: BTreeSet<&str> = units
        .par_chunks(batch)
        .map(|chunk| {
            chunk
                .iter()
                .flat_map(|u| u.terms.iter().map(String::as_str))
                .collect::<BTreeSet<_>>()
        })
        .reduce(BTreeSet::new, |mut a, b| {
            a.extend(b);
            a
        });
    let terms: Vec<String> = vocab.into_iter().map(str::to_owned).collect();
    let term_ids: HashMap<String, u32> = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();

    let keys: BTreeSet<&GroupKey> = units.iter().map(|u| &u.key).collect();
    let group_keys: Vec<GroupKey> = keys.into_iter().cloned().collect();
    let group_ids: HashMap<GroupKey, u32> = group_keys
        .iter()
        .enumerate()
        .map(|(i, k)| (k.clone(), i as u32))
        .collect();

    // Per unit: term-id sequence and (term id, positions) sorted by term id.
    type Local = (UnitEntry, Vec<(u32, Vec<u32>)>);
    let locals: Vec<Local> = units
        .par_chunks(batch)
        .flat_map_iter(|chunk| {
            chunk.iter().map(|u| {
                let ids: Vec<u32> = u.terms.iter().map(|t| term_ids[t]).collect();
                let mut by_term: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
                for (pos, &t) in ids.iter().enumerate() {
                    by_term.entry(t).or_default().push(pos as u32);
                }
                let entry = UnitEntry {
                    unit_id: u.unit_id,
                    group: group_ids[&u.key],
                    terms: ids,
                };
                (entry, by_term.into_iter().collect())
            })
        })
        .collect();

    let mut postings: Vec<Vec<Posting>> = vec![Vec::new(); terms.len()];
    let mut cf = vec![0u64; terms.len()];
    let mut bigrams: HashMap<(u32, u32), u64> = HashMap::new();
    let mut group_units: Vec<Vec<u64>> = vec![Vec::new(); group_keys.len()];
    let mut group_tf: Vec<BTreeMap<u32, u64>> = vec![BTreeMap::new(); group_keys.len()];
    let mut group_len = vec![0u64; group_keys.len()];
    let mut total_terms = 0u64;
    let mut unit_entries = Vec::with_capacity(locals.len());
    for (entry, per_term) in locals {
        let g = entry.group as usize;
        group_units[g].push(entry.unit_id);
        group_len[g] += entry.terms.len() as u64;
        total_terms += entry.terms.len() as u64;
        for w in entry.terms.windows(2) {
            *bigrams.entry((w[0], w[1])).or_default() += 1;
        }
        for (t, positions) in per_term {
            let tf = positions.len() as u32;
            cf[t as usize] += tf as u64;
            *group_tf[g].entry(t).or_default() += tf as u64;
            postings[t as usize].push(Posting {
                unit_id: entry.unit_id,
                tf,
                positions,
            });
        }
        unit_entries.push(entry);
    }

    let groups: Vec<GroupProfile> = group_keys
        .into_iter()
        .zip(group_units)
        .zip(group_tf)
        .zip(group_len)
        .map(|(((key, units), tf), total_length)| GroupProfile {
            key,
            units,
            term_freqs: tf.into_iter().collect(),
            total_length,
        })
        .collect();

    IndexPartition {
        kind,
        stats: CollectionStats {
            total_terms,
            unit_count: unit_entries.len() as u64,
            group_count: groups.len() as u64,
            term_collection_freq: cf,
            bigram_collection_freq: bigrams,
        },
        terms,
        term_ids,
        postings,
        units: unit_entries,
        groups,
        group_ids,
    }
}

// ---------------------------------------------------------------------------
// Persistence
//
// Every data file is: magic (8 bytes) | version u32 | payload length u64 |
// payload | xxh3-64 of everything before it. Integers are little-endian.

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| IndexError::Truncated { file: self.file.into() })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// A count of items each at least `min_item` bytes long.
    fn len(&mut self, min_item: usize) -> Result<usize, IndexError> {
        let n = self.u64()?;
        let remaining = (self.buf.len() - self.pos) as u64;
        if n.saturating_mul(min_item.max(1) as u64) > remaining {
            return Err(self.corrupt(format!("count {n} exceeds remaining bytes")));
        }
        Ok(n as usize)
    }
    fn str(&mut self) -> Result<String, IndexError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.corrupt("invalid UTF-8".into()))
    }
    fn corrupt(&self, reason: String) -> IndexError {
        IndexError::Corrupt {
            file: self.file.into(),
            reason,
        }
    }
    fn finish(self) -> Result<(), IndexError> {
        if self.pos != self.buf.len() {
            return Err(self.corrupt("trailing bytes".into()));
        }
        Ok(())
    }
}

fn frame(payload: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 28);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    let sum = xxh3_64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

fn unframe<'a>(bytes: &'a [u8], file: &str) -> Result<&'a [u8], IndexError> {
    const HEADER: usize = 8 + 4 + 8;
    if bytes.len() < HEADER + 8 {
        return Err(IndexError::Truncated { file: file.into() });
    }
    if &bytes[..8] != MAGIC {
        return Err(IndexError::Corrupt {
            file: file.into(),
            reason: "bad magic".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(IndexError::Version {
            file: file.into(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(trailer.try_into().unwrap());
    let computed = xxh3_64(body);
    if stored != computed {
        return Err(IndexError::Checksum {
            file: file.into(),
            stored,
            computed,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if len != (body.len() - HEADER) as u64 {
        return Err(IndexError::Truncated { file: file.into() });
    }
    Ok(&body[HEADER..])
}

fn encode_lexicon(p: &IndexPartition) -> Vec<u8> {
    let mut e = Enc::default();
    e.len(p.terms.len());
    for (t, cf) in p.terms.iter().zip(&p.stats.term_collection_freq) {
        e.str(t);
        e.u64(*cf);
    }
    let mut bigrams: Vec<_> = p.stats.bigram_collection_freq.iter().collect();
    bigrams.sort_unstable();
    e.len(bigrams.len());
    for (&(a, b), &n) in bigrams {
        e.u32(a);
        e.u32(b);
        e.u64(n);
    }
    e.u64(p.stats.total_terms);
    e.u64(p.stats.unit_count);
    e.u64(p.stats.group_count);
    e.0
}

fn encode_postings(p: &IndexPartition) -> Vec<u8> {
    let mut e = Enc::default();
    e.len(p.postings.len());
    for list in &p.postings {
        e.len(list.len());
        for post in list {
            e.u64(post.unit_id);
            e.u32(post.tf);
            for &pos in &post.positions {
                e.u32(pos);
            }
        }
    }
    e.0
}

fn encode_units(p: &IndexPartition) -> Vec<u8> {
    let mut e = Enc::default();
    e.len(p.units.len());
    for u in &p.units {
        e.u64(u.unit_id);
        e.u32(u.group);
        e.u32(u.terms.len() as u32);
        for &t in &u.terms {
            e.u32(t);
        }
    }
    e.0
}

fn encode_groups(p: &IndexPartition) -> Vec<u8> {
    let mut e = Enc::default();
    e.len(p.groups.len());
    for g in &p.groups {
        e.u32(g.key.0.len() as u32);
        for ent in &g.key.0 {
            e.str(ent);
        }
        e.len(g.units.len());
        for &u in &g.units {
            e.u64(u);
        }
        e.len(g.term_freqs.len());
        for &(t, n) in &g.term_freqs {
            e.u32(t);
            e.u64(n);
        }
        e.u64(g.total_length);
    }
    e.0
}

struct PartitionFiles<'a> {
    lexicon: &'a [u8],
    postings: &'a [u8],
    units: &'a [u8],
    groups: &'a [u8],
}

fn decode_partition(kind: UnitKind, prefix: &str, f: PartitionFiles<'_>) -> Result<IndexPartition, IndexError> {
    let lex_name = format!("{prefix}.lexicon");
    let mut d = Dec {
        buf: f.lexicon,
        pos: 0,
        file: &lex_name,
    };
    let n_terms = d.len(12)?;
    let mut terms = Vec::with_capacity(n_terms);
    let mut cf = Vec::with_capacity(n_terms);
    for _ in 0..n_terms {
        terms.push(d.str()?);
        cf.push(d.u64()?);
    }
    if terms.windows(2).any(|w| w[0] >= w[1]) {
        return Err(d.corrupt("vocabulary not sorted".into()));
    }
    let n_bigrams = d.len(16)?;
    let mut bigrams = HashMap::with_capacity(n_bigrams);
    for _ in 0..n_bigrams {
        let a = d.u32()?;
        let b = d.u32()?;
        bigrams.insert((a, b), d.u64()?);
    }
    let total_terms = d.u64()?;
    let unit_count = d.u64()?;
    let group_count = d.u64()?;
    d.finish()?;

    let post_name = format!("{prefix}.postings");
    let mut d = Dec {
        buf: f.postings,
        pos: 0,
        file: &post_name,
    };
    let n_lists = d.len(8)?;
    if n_lists != n_terms {
        return Err(d.corrupt("postings/lexicon term count mismatch".into()));
    }
    let mut postings = Vec::with_capacity(n_lists);
    for _ in 0..n_lists {
        let n = d.len(12)?;
        let mut list = Vec::with_capacity(n);
        for _ in 0..n {
            let unit_id = d.u64()?;
            let tf = d.u32()?;
            let positions = (0..tf).map(|_| d.u32()).collect::<Result<_, _>>()?;
            list.push(Posting { unit_id, tf, positions });
        }
        postings.push(list);
    }
    d.finish()?;

    let unit_name = format!("{prefix}.units");
    let mut d = Dec {
        buf: f.units,
        pos: 0,
        file: &unit_name,
    };
    let n_units = d.len(16)?;
    let mut units = Vec::with_capacity(n_units);
    for _ in 0..n_units {
        let unit_id = d.u64()?;
        let group = d.u32()?;
        let len = d.u32()?;
        let terms = (0..len).map(|_| d.u32()).collect::<Result<_, _>>()?;
        units.push(UnitEntry { unit_id, group, terms });
    }
    d.finish()?;

    let group_name = format!("{prefix}.groups");
    let mut d = Dec {
        buf: f.groups,
        pos: 0,
        file: &group_name,
    };
    let n_groups = d.len(28)?;
    let mut groups = Vec::with_capacity(n_groups);
    for _ in 0..n_groups {
        let arity = d.u32()?;
        let key = GroupKey((0..arity).map(|_| d.str()).collect::<Result<_, _>>()?);
        let n = d.len(8)?;
        let members = (0..n).map(|_| d.u64()).collect::<Result<_, _>>()?;
        let n = d.len(12)?;
        let mut term_freqs = Vec::with_capacity(n);
        for _ in 0..n {
            let t = d.u32()?;
            term_freqs.push((t, d.u64()?));
        }
        groups.push(GroupProfile {
            key,
            units: members,
            term_freqs,
            total_length: d.u64()?,
        });
    }
    d.finish()?;

    let bad = |file: &str, reason: &str| IndexError::Corrupt {
        file: file.into(),
        reason: reason.into(),
    };
    if units.len() as u64 != unit_count || groups.len() as u64 != group_count {
        return Err(bad(&lex_name, "counts disagree with stored units/groups"));
    }
    if units
        .iter()
        .any(|u| u.group as usize >= groups.len() || u.terms.iter().any(|&t| t as usize >= n_terms))
    {
        return Err(bad(&unit_name, "reference out of range"));
    }
    if groups
        .iter()
        .any(|g| g.term_freqs.iter().any(|&(t, _)| t as usize >= n_terms))
    {
        return Err(bad(&group_name, "term reference out of range"));
    }
    if bigrams
        .keys()
        .any(|&(a, b)| a as usize >= n_terms || b as usize >= n_terms)
    {
        return Err(bad(&lex_name, "bigram reference out of range"));
    }
    let term_ids = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    let group_ids = groups
        .iter()
        .enumerate()
        .map(|(i, g)| (g.key.clone(), i as u32))
        .collect();
    Ok(IndexPartition {
        kind,
        terms,
        term_ids,
        postings,
        units,
        groups,
        group_ids,
        stats: CollectionStats {
            total_terms,
            unit_count,
            group_count,
            term_collection_freq: cf,
            bigram_collection_freq: bigrams,
        },
    })
}

const PARTITIONS: [(UnitKind, &str); 2] = [(UnitKind::Entity, "entity"), (UnitKind::Pair, "pair")];
const SECTIONS: [&str; 4] = ["lexicon", "postings", "units", "groups"];

fn manifest_bytes(m: &Manifest) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(m).expect("manifest serializes");
    s.push('\n');
    s.into_bytes()
}

fn seal(mut m: Manifest) -> Manifest {
    m.checksum = String::new();
    m.checksum = format!("{:016x}", xxh3_64(&manifest_bytes(&m)));
    m
}

/// Writes the index into `dir`, creating it if needed. On failure the files written
/// so far are removed.
pub fn save_index(index: &ERIndex, dir: impl AsRef<Path>) -> Result<Manifest, IndexError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = write_files(index, dir, &mut written);
    if result.is_err() {
        for p in &written {
            let _ = fs::remove_file(p);
        }
    }
    result
}

fn write_files(index: &ERIndex, dir: &Path, written: &mut Vec<PathBuf>) -> Result<Manifest, IndexError> {
    let mut manifest = index.manifest.clone();
    manifest.files.clear();
    for (kind, prefix) in PARTITIONS {
        let p = index.partition(kind);
        let payloads = [encode_lexicon(p), encode_postings(p), encode_units(p), encode_groups(p)];
        for (section, payload) in SECTIONS.iter().zip(payloads) {
            let name = format!("{prefix}.{section}");
            let bytes = frame(payload);
            let path = dir.join(&name);
            fs::write(&path, &bytes).map_err(io_err(&path))?;
            written.push(path);
            manifest.files.insert(name, format!("{:016x}", xxh3_64(&bytes)));
        }
    }
    let manifest = seal(manifest);
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest_bytes(&manifest)).map_err(io_err(&path))?;
    written.push(path);
    Ok(manifest)
}

fn read_manifest(dir: &Path) -> Result<Manifest, IndexError> {
    let path = dir.join(MANIFEST);
    let raw = fs::read(&path).map_err(io_err(&path))?;
    let corrupt = |reason: String| IndexError::Corrupt {
        file: MANIFEST.into(),
        reason,
    };
    let value: serde_json::Value = serde_json::from_slice(&raw).map_err(|e| corrupt(e.to_string()))?;
    if let Some(found) = value.get("format_version").and_then(|v| v.as_u64()) {
        if found != FORMAT_VERSION as u64 {
            return Err(IndexError::Version {
                file: MANIFEST.into(),
                found: found.min(u32::MAX as u64) as u32,
                expected: FORMAT_VERSION,
            });
        }
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
    // The manifest must be byte-for-byte canonical so that no edit goes unnoticed.
    if manifest_bytes(&manifest) != raw {
        return Err(corrupt("not in canonical form".into()));
    }
    let resealed = seal(manifest.clone());
    if resealed.checksum != manifest.checksum {
        let parse = |s: &str| u64::from_str_radix(s, 16).unwrap_or(0);
        return Err(IndexError::Checksum {
            file: MANIFEST.into(),
            stored: parse(&manifest.checksum),
            computed: parse(&resealed.checksum),
        });
    }
    Ok(manifest)
}

pub fn load_index(dir: impl AsRef<Path>) -> Result<ERIndex, IndexError> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let mut parts = Vec::with_capacity(2);
    for (kind, prefix) in PARTITIONS {
        let mut payloads: Vec<Vec<u8>> = Vec::with_capacity(4);
        for section in SECTIONS {
            let name = format!("{prefix}.{section}");
            let path = dir.join(&name);
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let expected = manifest.files.get(&name).ok_or_else(|| IndexError::Corrupt {
                file: MANIFEST.into(),
                reason: format!("no checksum listed for {name}"),
            })?;
            let computed = xxh3_64(&bytes);
            if format!("{computed:016x}") != *expected {
                // Prefer the file's own framing error when it has one.
                unframe(&bytes, &name)?;
                return Err(IndexError::Checksum {
                    file: name,
                    stored: u64::from_str_radix(expected, 16).unwrap_or(0),
                    computed,
                });
            }
            payloads.push(unframe(&bytes, &name)?.to_vec());
        }
        let partition = decode_partition(
            kind,
            prefix,
            PartitionFiles {
                lexicon: &payloads[0],
                postings: &payloads[1],
                units: &payloads[2],
                groups: &payloads[3],
            },
        )?;
        let listed = if kind == UnitKind::Entity {
            manifest.entity
        } else {
            manifest.pair
        };
        if partition.counts() != listed {
            return Err(IndexError::Corrupt {
                file: MANIFEST.into(),
                reason: format!("{prefix} counts disagree with data files"),
            });
        }
        parts.push(partition);
    }
    let pair_partition = parts.pop().unwrap();
    let entity_partition = parts.pop().unwrap();
    Ok(ERIndex {
        entity_partition,
        pair_partition,
        manifest,
    })
}
