#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use erkit::collection::{jaccard_title_similarity, load_tables_dir, QueryRecord};
use erkit::corpus::Tokenizer;
use erkit::extraction::{ExtractionUnit, UnitKind};
use erkit::pipeline::read_unit_dump;
use erkit::retrieval::{parse_query, Orientation, ScoringConfig};
use tempfile::TempDir;

use support::{data_dir, exhaustive_join, OracleScorer};

fn erkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_erkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = erkit(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn data(name: &str) -> String {
    data_dir().join(name).display().to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (
                path.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&path).unwrap(),
            )
        })
        .collect()
}

fn field(stdout: &str, name: &str) -> usize {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{name}\t")))
        .unwrap_or_else(|| panic!("no {name} in {stdout}"))
        .split('\t')
        .next()
        .unwrap()
        .split(' ')
        .next()
        .unwrap()
        .parse()
        .unwrap()
}

fn toy_index(tmp: &TempDir) -> PathBuf {
    let idx = tmp.path().join("idx");
    ok(&["index", "--corpus", &data("toy_corpus.jsonl"), "--index-dir", p(&idx)]);
    idx
}

#[test]
fn extract_counts_follow_the_count_law() {
    let tmp = TempDir::new().unwrap();
    let out = ok(&[
        "extract",
        "--corpus",
        &data("toy_corpus.jsonl"),
        "--out-dir",
        p(tmp.path()),
    ]);
    let units = read_unit_dump(
        fs::File::open(tmp.path().join("units.jsonl"))
            .map(std::io::BufReader::new)
            .unwrap(),
    )
    .unwrap();
    let mut per_sentence: BTreeMap<(String, usize), (usize, usize)> = BTreeMap::new();
    for u in &units {
        let c = per_sentence.entry((u.doc_id.clone(), u.sent_index)).or_default();
        match u.kind {
            UnitKind::Entity => c.0 += 1,
            UnitKind::Pair => c.1 += 1,
        }
    }
    for (s, &(k, pairs)) in &per_sentence {
        assert_eq!(pairs, k * (k.max(1) - 1) / 2, "{s:?}");
    }
    let entity: usize = per_sentence.values().map(|c| c.0).sum();
    let pair: usize = per_sentence.values().map(|c| c.1).sum();
    assert_eq!(field(&out, "ENTITY"), entity);
    assert_eq!(field(&out, "PAIR"), pair);
    assert!(tmp.path().join("effective_config.json").is_file());
}

#[test]
fn extract_empty_corpus_reports_zero() {
    let tmp = TempDir::new().unwrap();
    let corpus = tmp.path().join("empty.jsonl");
    fs::write(&corpus, "").unwrap();
    let out = ok(&["extract", "--corpus", p(&corpus), "--out-dir", p(&tmp.path().join("o"))]);
    assert_eq!(field(&out, "ENTITY"), 0);
    assert_eq!(field(&out, "PAIR"), 0);
}

#[test]
fn missing_corpus_exits_2() {
    let tmp = TempDir::new().unwrap();
    let out = erkit(&[
        "extract",
        "--corpus",
        "/no/such/corpus.jsonl",
        "--out-dir",
        p(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/corpus.jsonl"));
}

#[test]
fn malformed_corpus_record_exits_1_with_line_number() {
    let tmp = TempDir::new().unwrap();
    let corpus = tmp.path().join("bad.jsonl");
    let good = fs::read_to_string(data_dir().join("toy_corpus.jsonl")).unwrap();
    let first = good.lines().next().unwrap();
    fs::write(&corpus, format!("{first}\n{{\"doc_id\": \"x\"}}\n")).unwrap();
    let out = erkit(&["extract", "--corpus", p(&corpus), "--out-dir", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains('2'));
    let out = ok(&[
        "extract",
        "--skip-errors",
        "--corpus",
        p(&corpus),
        "--out-dir",
        p(&tmp.path().join("o")),
    ]);
    assert_eq!(field(&out, "documents"), 1);
}

#[test]
fn index_is_deterministic_across_runs_and_threads() {
    let tmp = TempDir::new().unwrap();
    let corpus = data("toy_corpus.jsonl");
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|d| tmp.path().join(d)).collect();
    ok(&["index", "--corpus", &corpus, "--index-dir", p(&dirs[0])]);
    ok(&[
        "--threads",
        "1",
        "index",
        "--corpus",
        &corpus,
        "--index-dir",
        p(&dirs[1]),
    ]);
    ok(&[
        "--threads",
        "8",
        "index",
        "--corpus",
        &corpus,
        "--index-dir",
        p(&dirs[2]),
    ]);
    let a = dir_bytes(&dirs[0]);
    assert!(a.contains_key("manifest.json") && a.contains_key("effective_config.json"));
    assert_eq!(a, dir_bytes(&dirs[1]));
    assert_eq!(a, dir_bytes(&dirs[2]));
}

#[test]
fn index_from_dump_matches_index_from_corpus() {
    let tmp = TempDir::new().unwrap();
    let ext = tmp.path().join("ext");
    ok(&["extract", "--corpus", &data("toy_corpus.jsonl"), "--out-dir", p(&ext)]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["index", "--corpus", &data("toy_corpus.jsonl"), "--index-dir", p(&a)]);
    ok(&["index", "--dump", p(&ext.join("units.jsonl")), "--index-dir", p(&b)]);
    let (mut a, mut b) = (dir_bytes(&a), dir_bytes(&b));
    a.remove("effective_config.json");
    b.remove("effective_config.json");
    assert_eq!(a, b);
}

#[test]
fn corrupt_dump_line_is_reported_by_number() {
    let tmp = TempDir::new().unwrap();
    let ext = tmp.path().join("ext");
    ok(&["extract", "--corpus", &data("toy_corpus.jsonl"), "--out-dir", p(&ext)]);
    let dump = ext.join("units.jsonl");
    let mut lines: Vec<String> = fs::read_to_string(&dump).unwrap().lines().map(str::to_owned).collect();
    lines[4] = lines[4].replacen("\"terms\":[", "\"terms\":[\"forged\",", 1);
    lines[2] = lines[2].replace("\"kind\":\"ENTITY\"", "\"kind\":\"PAIR\"");
    fs::write(&dump, lines.join("\n")).unwrap();
    let out = erkit(&["index", "--dump", p(&dump), "--index-dir", p(&tmp.path().join("idx"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn search_top_tuple_matches_exhaustive_join() {
    let tmp = TempDir::new().unwrap();
    let idx = toy_index(&tmp);
    let record = QueryRecord {
        query_id: "pair-1".into(),
        nl_text: "automobile manufacturers and the cities where they are headquartered".into(),
        components: vec![
            "automobile manufacturer".into(),
            "headquartered in".into(),
            "headquartered".into(),
        ],
        source_table: None,
    };
    let queries = tmp.path().join("q.jsonl");
    fs::write(&queries, serde_json::to_string(&record).unwrap() + "\n").unwrap();
    let run_dir = tmp.path().join("run");
    ok(&[
        "search",
        "--index",
        p(&idx),
        "--queries",
        p(&queries),
        "--out-dir",
        p(&run_dir),
    ]);
    let run = fs::read_to_string(run_dir.join("run.txt")).unwrap();
    let top = run
        .lines()
        .next()
        .expect("non-empty run")
        .split(' ')
        .nth(2)
        .unwrap()
        .to_string();

    let units: Vec<ExtractionUnit> = support::toy_extraction().units;
    let config = ScoringConfig::default();
    let q = parse_query(&record, &Tokenizer::default(), Orientation::Either).unwrap();
    let rank = |kind, terms: &[String]| {
        OracleScorer::new(&units, kind).rank(terms, config.sdm_weights, config.mu, 8, 0.5, config.candidate_depth)
    };
    let want = exhaustive_join(
        &[
            rank(UnitKind::Entity, &q.entity_subqueries[0]),
            rank(UnitKind::Entity, &q.entity_subqueries[1]),
        ],
        &[rank(UnitKind::Pair, &q.relationship_subqueries[0])],
        Orientation::Either,
        None,
    );
    assert_eq!(top, want[0].tuple.join("|"));
    assert_eq!(run.lines().count(), want.len());
}

#[test]
fn lm_and_unigram_sdm_runs_are_identical() {
    let tmp = TempDir::new().unwrap();
    let idx = toy_index(&tmp);
    let (a, b) = (tmp.path().join("lm"), tmp.path().join("sdm"));
    let q = data("toy_queries.jsonl");
    ok(&[
        "search",
        "--index",
        p(&idx),
        "--queries",
        &q,
        "--out-dir",
        p(&a),
        "--model",
        "lm",
    ]);
    ok(&[
        "search",
        "--index",
        p(&idx),
        "--queries",
        &q,
        "--out-dir",
        p(&b),
        "--model",
        "sdm",
        "--lambda",
        "1,0,0",
    ]);
    let run = fs::read(a.join("run.txt")).unwrap();
    assert!(!run.is_empty());
    assert_eq!(run, fs::read(b.join("run.txt")).unwrap());
}

#[test]
fn search_writes_labelled_features_and_config() {
    let tmp = TempDir::new().unwrap();
    let idx = toy_index(&tmp);
    let out = tmp.path().join("run");
    ok(&[
        "search",
        "--index",
        p(&idx),
        "--queries",
        &data("toy_queries.jsonl"),
        "--out-dir",
        p(&out),
        "--qrels",
        &data("toy_qrels.txt"),
    ]);
    let features = fs::read_to_string(out.join("features.txt")).unwrap();
    let run = fs::read_to_string(out.join("run.txt")).unwrap();
    assert!(features.lines().count() >= run.lines().count());
    assert!(features.lines().any(|l| l.starts_with("1 qid:")));
    for line in features.lines() {
        let n = line
            .split(" # ")
            .next()
            .unwrap()
            .split(' ')
            .filter(|f| f.contains(':'))
            .count();
        assert!(n == 4 || n == 6, "{line}");
    }
    assert!(out.join("effective_config.json").is_file());
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let tmp = TempDir::new().unwrap();
    let idx = toy_index(&tmp);
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"scoring": {"mu": 500.0, "candidate_depth": 7}}"#).unwrap();
    let q = data("toy_queries.jsonl");
    let read = |dir: &Path| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(dir.join("effective_config.json")).unwrap()).unwrap()
    };
    let a = tmp.path().join("a");
    ok(&[
        "--config",
        p(&cfg),
        "search",
        "--index",
        p(&idx),
        "--queries",
        &q,
        "--out-dir",
        p(&a),
    ]);
    assert_eq!(read(&a)["scoring"]["mu"], 500.0);
    assert_eq!(read(&a)["scoring"]["candidate_depth"], 7);
    assert_eq!(read(&a)["scoring"]["unordered_window"], 8);
    let b = tmp.path().join("b");
    ok(&[
        "--config",
        p(&cfg),
        "search",
        "--index",
        p(&idx),
        "--queries",
        &q,
        "--out-dir",
        p(&b),
        "--mu",
        "100",
    ]);
    assert_eq!(read(&b)["scoring"]["mu"], 100.0);
    assert_eq!(read(&b)["scoring"]["candidate_depth"], 7);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = erkit(&["search", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn invalid_scoring_flags_exit_1() {
    let tmp = TempDir::new().unwrap();
    let idx = toy_index(&tmp);
    let out = erkit(&[
        "search",
        "--index",
        p(&idx),
        "--queries",
        &data("toy_queries.jsonl"),
        "--out-dir",
        p(tmp.path()),
        "--lambda",
        "0.5,0.5,0.5",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_of_perfect_run_gives_map_one() {
    let tmp = TempDir::new().unwrap();
    let qrels = fs::read_to_string(data_dir().join("toy_qrels.txt")).unwrap();
    let mut run = String::new();
    let mut rank: BTreeMap<&str, usize> = BTreeMap::new();
    for line in qrels.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        let r = rank.entry(f[0]).or_default();
        *r += 1;
        run.push_str(&format!("{} Q0 {} {} {} perfect\n", f[0], f[2], r, 100 - *r));
    }
    let path = tmp.path().join("run.txt");
    fs::write(&path, run).unwrap();
    let out = ok(&["eval", "--run", p(&path), "--qrels", &data("toy_qrels.txt")]);
    assert!(out.lines().any(|l| l == "map\tall\t1.0000"), "{out}");
}

#[test]
fn eval_warns_on_mismatched_queries_but_succeeds() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("run.txt");
    fs::write(&path, "toy-01 Q0 BMW|Munich 1 2.0 t\nghost Q0 a|b 1 1.0 t\n").unwrap();
    let out = erkit(&["eval", "--run", p(&path), "--qrels", &data("toy_qrels.txt")]);
    assert_eq!(out.status.code(), Some(0));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ghost") && err.contains("toy-02"), "{err}");
}

#[test]
fn eval_with_unreadable_qrels_exits_2() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("run.txt");
    fs::write(&path, "q Q0 a|b 1 1.0 t\n").unwrap();
    let out = erkit(&["eval", "--run", p(&path), "--qrels", p(&tmp.path().join("missing.txt"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_collection_samples_dissimilar_tables_deterministically() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&[
            "gen-collection",
            "--tables",
            &data("tables"),
            "--out-dir",
            p(d),
            "--target",
            "5",
            "--seed",
            "3",
        ]);
    }
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    let stubs = fs::read_to_string(a.join("annotation_stubs.jsonl")).unwrap();
    assert_eq!(stubs.lines().count(), 5);
    let tables = load_tables_dir(data_dir().join("tables")).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("sampling_report.json")).unwrap()).unwrap();
    let selected: Vec<&str> = report["selected"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    let titles: Vec<&str> = selected
        .iter()
        .map(|id| tables.iter().find(|t| t.table_id == *id).unwrap().page_title.as_str())
        .collect();
    for i in 0..titles.len() {
        for j in 0..i {
            assert!(
                jaccard_title_similarity(titles[i], titles[j]) < 0.7,
                "{} / {}",
                titles[i],
                titles[j]
            );
        }
    }
    let queries = fs::read_to_string(a.join("queries.jsonl")).unwrap();
    let qrels = fs::read_to_string(a.join("qrels.txt")).unwrap();
    let ids: BTreeSet<&str> = qrels.lines().map(|l| l.split(' ').next().unwrap()).collect();
    assert_eq!(ids.len(), queries.lines().count());
    assert!(a.join("effective_config.json").is_file());
}

#[test]
fn gen_collection_shortfall_warns() {
    let tmp = TempDir::new().unwrap();
    let out = erkit(&[
        "gen-collection",
        "--tables",
        &data("tables"),
        "--out-dir",
        p(tmp.path()),
        "--target",
        "50",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let n = fs::read_to_string(tmp.path().join("queries.jsonl"))
        .unwrap()
        .lines()
        .count();
    assert!(n > 0 && n < 50);
}

#[test]
fn gen_collection_triples() {
    let tmp = TempDir::new().unwrap();
    ok(&[
        "gen-collection",
        "--tables",
        &data("tables"),
        "--out-dir",
        p(tmp.path()),
        "--target",
        "3",
        "--arity",
        "3",
    ]);
    let qrels = fs::read_to_string(tmp.path().join("qrels.txt")).unwrap();
    assert!(!qrels.is_empty());
    assert!(qrels
        .lines()
        .all(|l| l.starts_with("RELink_T_") && l.split(' ').nth(2).unwrap().split('|').count() == 3));
}

#[test]
fn stats_on_three_query_sample() {
    let out = ok(&[
        "stats",
        "--queries",
        &data("stats_sample/queries.jsonl"),
        "--qrels",
        &data("stats_sample/qrels.txt"),
    ]);
    let row = |name: &str| -> Vec<String> {
        out.lines()
            .find(|l| l.starts_with(&format!("{name}\t")))
            .unwrap()
            .split('\t')
            .skip(1)
            .map(str::to_owned)
            .collect()
    };
    // Two pair queries of 67 and 39 characters, one triple of 59.
    assert_eq!(row("total_queries"), ["2", "1", "3"]);
    assert_eq!(row("avg_query_length_chars"), ["53.0", "59.0", "55.0"]);
    // Entity types: car manufacturer(16) city(4) football club(13) stadium(7) = 40/4;
    // film(4) director(8) studio(6) = 18/3; overall 58/7.
    assert_eq!(row("avg_entity_type_length_chars"), ["10.0", "6.0", "8.3"]);
    assert_eq!(row("avg_relationship_type_length_chars"), ["12.0", "11.0", "11.5"]);
    assert_eq!(row("avg_relevant_judgments"), ["3.0", "3.0", "3.0"]);
}

#[test]
fn stats_on_empty_collection_is_all_zero() {
    let tmp = TempDir::new().unwrap();
    let (q, r) = (tmp.path().join("q.jsonl"), tmp.path().join("r.txt"));
    fs::write(&q, "").unwrap();
    fs::write(&r, "").unwrap();
    let out = ok(&["stats", "--queries", p(&q), "--qrels", p(&r)]);
    for line in out.lines().skip(1) {
        assert!(line.split('\t').skip(1).all(|v| v == "0" || v == "0.0"), "{line}");
    }
}
