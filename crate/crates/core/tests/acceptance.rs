//! Acceptance checks. Runs as a plain binary so every criterion prints its
//! own PASS/FAIL line; exits non-zero if any fails.

use std::collections::{HashMap, HashSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, RngAlgorithm, TestRng, TestRunner};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use tabprov::embed::{flatten_column, flatten_row, Embedder, EmbedderSpec};
use tabprov::exec::{self, ExecMode};
use tabprov::metadata::{benford_distance, benford_expected, compute_statistics};
use tabprov::packing::allocate_tokens;
use tabprov::provider::{
    evaluate_recall, sweep_allocation, CellSelectionMode, RecallFixture, SyncResult,
};
use tabprov::retrieval::cell_extraction_prompt;
use tabprov::retrieval::llm::{prompt_digest, LlmClientSpec, DEFAULT_KEY};
use tabprov::retrieval::CRITERIA;
use tabprov::sampling::{clustering_sample, content_snapshot, kmeans, query_based_sample};
use tabprov::serialize::{nlsep_header, nlsep_row, serialize};
use tabprov::table::{content_hash, parse_csv, parse_table_json};
use tabprov::{
    AllocationRatio, Cell, HeaderNode, HeaderTree, KnowledgeKind, Provider, ProviderConfig, Query,
    SamplingMethod, SerializationFormat, Table, TableManager, Tokenizer,
};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn main() {
    let checks: [Check; 10] = [
        ("budget compliance", budget_compliance),
        ("sampling oracle equivalence", sampling_oracles),
        ("content snapshot K=1", snapshot_k1),
        ("statistics features", statistics_features),
        ("serialization round-trips", serialization_round_trips),
        ("allocation exactness", allocation_exactness),
        ("recall proxy", recall_proxy),
        ("sweep mechanics", sweep_mechanics),
        ("manager sync", manager_sync),
        ("offline determinism", offline_determinism),
    ];
    // keep panic messages out of the report; they are captured below
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!(
                "acceptance {:>2} {name}: PASS ({detail}) [{secs:.2}s]",
                i + 1
            ),
            Err(why) => {
                failed += 1;
                println!("acceptance {:>2} {name}: FAIL ({why}) [{secs:.2}s]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        checks.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

// ---------------------------------------------------------------------------
// random tables

const WORDS: [&str; 24] = [
    "alpha", "north", "river", "market", "London", "Beijing", "growth", "index", "total", "score",
    "region", "sales", "Paris", "medal", "city", "report", "energy", "budget", "team", "player",
    "season", "price", "school", "station",
];

fn random_word(rng: &mut ChaCha8Rng) -> &'static str {
    WORDS.choose(rng).unwrap()
}

/// Cell text of a random shape; `awkward` adds quotes, commas, newlines
/// and markup characters.
fn random_cell(rng: &mut ChaCha8Rng, awkward: bool) -> String {
    let pick = rng.random_range(0..if awkward { 9 } else { 6 });
    match pick {
        0 => rng.random_range(-500i64..5000).to_string(),
        1 => format!("{:.2}", rng.random_range(-100.0..1000.0f64)),
        2 => random_word(rng).to_owned(),
        3 => format!("{} {}", random_word(rng), random_word(rng)),
        4 => rng.random_range(1990..2030).to_string(),
        5 => String::new(),
        6 => format!("say \"{}\", then {}", random_word(rng), random_word(rng)),
        7 => format!("{}\n{} | <b>&", random_word(rng), random_word(rng)),
        _ => format!(" {},{} ", random_word(rng), rng.random_range(0..99)),
    }
}

fn random_table(rng: &mut ChaCha8Rng, max_rows: usize, awkward: bool) -> Table {
    let cols = rng.random_range(2..=6);
    let rows = rng.random_range(0..=max_rows);
    let headers: Vec<String> = (0..cols)
        .map(|c| format!("{} {c}", random_word(rng)))
        .collect();
    let body: Vec<Vec<String>> = (0..rows)
        .map(|_| (0..cols).map(|_| random_cell(rng, awkward)).collect())
        .collect();
    Table::from_strings(random_word(rng), headers, body).unwrap()
}

/// A query mentioning a couple of the table's cells and a cue or two.
fn random_query(rng: &mut ChaCha8Rng, table: &Table) -> Query {
    let mut parts = vec!["which".to_owned(), random_word(rng).to_owned()];
    for _ in 0..2 {
        if table.row_count() > 0 {
            let r = rng.random_range(0..table.row_count());
            let c = rng.random_range(0..table.col_count());
            parts.push(table.rows()[r][c].text().to_owned());
        }
    }
    match rng.random_range(0..4) {
        0 => parts.push(format!("more than {}", rng.random_range(0..1000))),
        1 => parts.push("highest".into()),
        2 => parts.push("fewer than 50".into()),
        _ => {}
    }
    Query::new(parts.join(" "))
}

fn all_cols(t: &Table) -> Vec<usize> {
    (0..t.col_count()).collect()
}

fn header_only(t: &Table) -> Table {
    t.restrict(&[], &all_cols(t)).unwrap()
}

// ---------------------------------------------------------------------------
// shared provider pieces

const CORPUS: &str = r#"{"id":"d1","title":"London","body":"London is the capital of England. It hosted the 2012 Summer Olympics.","source":"encyclopedia"}
{"id":"d2","title":"Beijing","body":"Beijing is the capital of China. It hosted the 2008 Summer Olympics.","source":"encyclopedia"}
{"id":"d3","title":"Gross domestic product","body":"GDP measures the market value of goods and services produced. It is reported per year.","source":"glossary"}
{"id":"d4","title":"Medal table","body":"A medal table ranks teams by medals won. Gold counts first.","source":"glossary"}
{"id":"d5","title":"Market index","body":"A market index tracks the price of a basket of stocks. Growth is measured year over year.","source":"glossary"}
"#;

const ALL_KINDS: [KnowledgeKind; 8] = [
    KnowledgeKind::DimensionMeasure,
    KnowledgeKind::SemanticType,
    KnowledgeKind::TableSize,
    KnowledgeKind::Statistics,
    KnowledgeKind::HeaderHierarchy,
    KnowledgeKind::DocReference,
    KnowledgeKind::TermExplanation,
    KnowledgeKind::SelfPrompt,
];

struct Workspace {
    _dir: tempfile::TempDir,
    corpus: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    std::fs::write(&corpus, CORPUS).unwrap();
    Workspace { _dir: dir, corpus }
}

fn stub(script: impl IntoIterator<Item = (String, String)>) -> LlmClientSpec {
    LlmClientSpec::ScriptedStub {
        script: script.into_iter().collect(),
    }
}

// ---------------------------------------------------------------------------
// 1

fn random_method(rng: &mut ChaCha8Rng, i: usize) -> SamplingMethod {
    match i % 5 {
        0 => SamplingMethod::Random { seed: rng.random() },
        1 => SamplingMethod::Evenly,
        2 => SamplingMethod::ContentSnapshot {
            k: rng.random_range(1..=4),
            ngram: rng.random_range(1..=3),
        },
        3 => SamplingMethod::QueryBased {
            grounding: if rng.random_bool(0.5) {
                Some(rng.random_range(1..=3))
            } else {
                None
            },
        },
        _ => SamplingMethod::Clustering {
            n_clusters: rng.random_range(1..=5),
            per_cluster_k: rng.random_range(1..=4),
            seed: rng.random(),
        },
    }
}

fn budget_compliance() -> Outcome {
    const FIXTURES: usize = 600;
    let ratios = [(5, 5), (4, 6), (3, 7), (6, 4), (7, 3)];
    let ws = workspace();
    let tok = Tokenizer::heuristic();
    let mut rng = ChaCha8Rng::seed_from_u64(0xB0D6E7);
    let start = Instant::now();
    let mut violations = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for i in 0..FIXTURES {
        let table = random_table(&mut rng, 40, true);
        let query = random_query(&mut rng, &table);
        let method = random_method(&mut rng, i);
        let format = SerializationFormat::ALL[(i / 5) % 6];
        let (t, a) = ratios[(i / 30) % 5];
        seen.insert((method.name(), format, (t, a)));
        let ratio = AllocationRatio::new(t, a).unwrap();

        // the header must fit the smallest table share (3/10)
        let head = header_only(&table);
        let header = SerializationFormat::ALL
            .iter()
            .map(|&f| tok.count(&serialize(&head, f)))
            .chain([tok.count(&nlsep_header(&table))])
            .max()
            .unwrap();
        let budget = (header * 10).div_ceil(3) + 1 + rng.random_range(0..600);

        let kinds: Vec<KnowledgeKind> = ALL_KINDS
            .iter()
            .copied()
            .filter(|_| rng.random_bool(0.6))
            .collect();
        let cell_selection = if rng.random_bool(0.5) {
            CellSelectionMode::Llm
        } else {
            CellSelectionMode::Heuristic
        };
        let reply = if table.row_count() > 0 {
            format!("[{:?}]", table.rows()[0][0].text())
        } else {
            "[]".into()
        };
        let cfg = ProviderConfig {
            sampling: method.clone(),
            augmentation: kinds,
            cell_selection,
            format,
            budget,
            ratio,
            llm: Some(stub([(DEFAULT_KEY.to_owned(), reply)])),
            corpus_path: Some(ws.corpus.clone()),
            ..ProviderConfig::default()
        };
        let provider = Provider::new(cfg).map_err(|e| format!("fixture {i}: {e}"))?;
        match provider.provide_table(&query, &table) {
            Ok(p) => {
                let used = tok.count(&p.text);
                let m = &p.manifest;
                if used > budget
                    || m.table_tokens_used > m.table_budget
                    || m.aug_tokens_used > m.aug_budget
                {
                    violations.push(format!(
                        "fixture {i}: {used} > {budget} ({method}, {format})"
                    ));
                }
            }
            Err(e) => errors.push(format!("fixture {i} ({method}, {format}, {t}:{a}): {e}")),
        }
    }
    let elapsed = start.elapsed();
    ensure(violations.is_empty(), || {
        format!("{} violations, first: {}", violations.len(), violations[0])
    })?;
    ensure(errors.is_empty(), || {
        format!("{} pipeline errors, first: {}", errors.len(), errors[0])
    })?;
    ensure(seen.len() == 5 * 6 * 5, || {
        format!(
            "only {} method/format/ratio combinations covered",
            seen.len()
        )
    })?;
    ensure(elapsed < Duration::from_secs(60), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "{FIXTURES} fixtures, {} combinations, 0 violations, {:.1}s",
        seen.len(),
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 2

/// Hashed character trigrams, written out again from the definition:
/// whitespace-collapsed lowercase text padded with one space per side,
/// FNV-1a of each 3-char window into `dim` buckets, L2-normalized.
fn oracle_embed(text: &str, dim: usize) -> Vec<f64> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let norm = words.join(" ").to_lowercase();
    let mut v = vec![0.0; dim];
    if norm.is_empty() {
        return v;
    }
    let padded: Vec<char> = format!(" {norm} ").chars().collect();
    for i in 0..padded.len() - 2 {
        let gram: String = padded[i..i + 3].iter().collect();
        let mut h: u64 = 14695981039346656037;
        for b in gram.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(1099511628211);
        }
        v[(h % dim as u64) as usize] += 1.0;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Stable descending sort, so equal scores keep ascending index order.
fn desc_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    idx
}

/// Greedy prefix of `ranked` under the NLSep budget of `table`.
fn oracle_prefix(table: &Table, ranked: &[usize], budget: usize, tok: &Tokenizer) -> Vec<usize> {
    let mut used = tok.count(&nlsep_header(table));
    let mut kept = Vec::new();
    for &r in ranked {
        let c = tok.count(&nlsep_row(table, r));
        if used + c > budget {
            break;
        }
        used += c;
        kept.push(r);
    }
    kept.sort_unstable();
    kept
}

fn oracle_query_based(
    table: &Table,
    query: &Query,
    budget: usize,
    grounding: Option<usize>,
    tok: &Tokenizer,
) -> (Vec<usize>, Vec<usize>) {
    let q = oracle_embed(query.text(), 256);
    let cols = match grounding {
        None => all_cols(table),
        Some(l) => {
            let scores: Vec<f64> = (0..table.col_count())
                .map(|c| oracle_cosine(&oracle_embed(&flatten_column(table, c).unwrap(), 256), &q))
                .collect();
            let mut top: Vec<usize> = desc_order(&scores).into_iter().take(l).collect();
            top.sort_unstable();
            top
        }
    };
    let rows: Vec<usize> = (0..table.row_count()).collect();
    let working = table.restrict(&rows, &cols).unwrap();
    let scores: Vec<f64> = rows
        .iter()
        .map(|&r| oracle_cosine(&oracle_embed(&flatten_row(&working, r).unwrap(), 256), &q))
        .collect();
    (
        oracle_prefix(&working, &desc_order(&scores), budget, tok),
        cols,
    )
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Checks a clustering run against brute force: every row sits at its
/// nearest centroid, reported distances are exact, converged centroids
/// are member means, and the kept rows follow from those distances.
fn check_clustering(
    table: &Table,
    budget: usize,
    n_clusters: usize,
    per_cluster_k: usize,
    seed: u64,
    tok: &Tokenizer,
    emb: &Embedder,
) -> Result<(), String> {
    let n = table.row_count();
    let got = clustering_sample(table, budget, tok, emb, n_clusters, per_cluster_k, seed)
        .map_err(|e| e.to_string())?;
    if n == 0 {
        return ensure(got.source_rows().is_empty(), || {
            "rows from an empty table".into()
        });
    }
    let points: Vec<Vec<f64>> = (0..n)
        .map(|r| oracle_embed(&flatten_row(table, r).unwrap(), 256))
        .collect();
    let k = n_clusters.min(n);
    let km = kmeans(&points, k, seed, tabprov::sampling::MAX_ITERATIONS);
    for (r, p) in points.iter().enumerate() {
        let d: Vec<f64> = km.centroids.iter().map(|c| sq(p, c).sqrt()).collect();
        let best = d.iter().copied().fold(f64::INFINITY, f64::min);
        let a = km.assignments[r];
        ensure(d[a] <= best + 1e-9, || {
            format!("row {r} assigned to {a} at {} but nearest is {best}", d[a])
        })?;
        ensure((km.distances[r] - d[a]).abs() <= 1e-9, || {
            format!("row {r} distance {} vs {}", km.distances[r], d[a])
        })?;
    }
    if km.converged {
        for (c, centroid) in km.centroids.iter().enumerate() {
            let members: Vec<&Vec<f64>> = (0..n)
                .filter(|&r| km.assignments[r] == c)
                .map(|r| &points[r])
                .collect();
            if members.is_empty() {
                continue;
            }
            for (j, &x) in centroid.iter().enumerate() {
                let mean = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
                ensure((x - mean).abs() <= 1e-9, || {
                    format!("centroid {c} dim {j}: {x} vs member mean {mean}")
                })?;
            }
        }
    }
    // nearest per_cluster_k of each cluster, then the farthest dropped
    let mut picked = Vec::new();
    for c in 0..k {
        let mut m: Vec<usize> = (0..n).filter(|&r| km.assignments[r] == c).collect();
        m.sort_by(|&a, &b| km.distances[a].partial_cmp(&km.distances[b]).unwrap());
        picked.extend(m.into_iter().take(per_cluster_k));
    }
    picked.sort_by(|&a, &b| {
        km.distances[a]
            .partial_cmp(&km.distances[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut keep = picked.clone();
    let cost = |rows: &[usize]| {
        tok.count(&nlsep_header(table))
            + rows
                .iter()
                .map(|&r| tok.count(&nlsep_row(table, r)))
                .sum::<usize>()
    };
    while cost(&keep) > budget {
        keep.pop();
    }
    keep.sort_unstable();
    ensure(got.source_rows() == keep.as_slice(), || {
        format!("clustering kept {:?}, oracle {keep:?}", got.source_rows())
    })
}

fn sampling_oracles() -> Outcome {
    let tok = Tokenizer::heuristic();
    let emb = Embedder::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5A3F1E);
    let mut tables: Vec<(Table, Query)> = Vec::new();
    let recall_dir = manifest_dir().join("tests/fixtures/recall");
    for f in RecallFixture::load_dir(&recall_dir).map_err(|e| e.to_string())? {
        tables.push((f.table.into_table().unwrap(), Query::new(f.query)));
    }
    for _ in 0..120 {
        let t = random_table(&mut rng, 50, false);
        let q = random_query(&mut rng, &t);
        tables.push((t, q));
    }
    tables.retain(|(t, _)| t.row_count() <= 50);

    let mut embeddings = 0;
    let mut runs = 0;
    for (i, (t, q)) in tables.iter().enumerate() {
        // the embedder itself against the written-out definition
        for r in 0..t.row_count() {
            let text = flatten_row(t, r).unwrap();
            let got = emb.embed(&text).unwrap();
            let want = oracle_embed(&text, 256);
            let diff = got
                .values()
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            ensure(diff <= 1e-12, || {
                format!("table {i} row {r}: embedding off by {diff}")
            })?;
            embeddings += 1;
        }
        let full = tok.count(&tabprov::serialize::to_nlsep(t));
        let budget = (tok.count(&nlsep_header(t)) + full) / 2 + 1;
        for grounding in [None, Some(1), Some(2)] {
            let got = query_based_sample(t, q, budget, &tok, &emb, grounding)
                .map_err(|e| format!("table {i}: {e}"))?;
            let (rows, cols) = oracle_query_based(t, q, budget, grounding, &tok);
            ensure(got.source_rows() == rows.as_slice(), || {
                format!(
                    "table {i} grounding {grounding:?}: rows {:?} vs oracle {rows:?}",
                    got.source_rows()
                )
            })?;
            ensure(got.source_cols() == cols.as_slice(), || {
                format!("table {i}: cols {:?} vs oracle {cols:?}", got.source_cols())
            })?;
            runs += 1;
        }
        for (nc, k, seed) in [(3, 2, 7), (1, 50, 1), (5, 1, 42)] {
            check_clustering(t, budget, nc, k, seed, &tok, &emb)
                .map_err(|e| format!("table {i}: {e}"))?;
            runs += 1;
        }
    }
    Ok(format!(
        "{} tables, {runs} runs, {embeddings} row embeddings, 0 mismatches",
        tables.len()
    ))
}

// ---------------------------------------------------------------------------
// 3

fn oracle_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .collect::<String>()
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Share of the cell's distinct n-grams found in the query (unigrams when
/// either side is shorter than `n`), by exhaustive pairwise comparison.
fn oracle_overlap(cell: &str, query: &str, n: usize) -> f64 {
    let c = oracle_tokens(cell);
    let q = oracle_tokens(query);
    let n = if c.len() < n || q.len() < n { 1 } else { n };
    let grams = |t: &[String]| -> Vec<Vec<String>> {
        let mut out: Vec<Vec<String>> = Vec::new();
        for i in 0..t.len().saturating_sub(n - 1) {
            let g = t[i..i + n].to_vec();
            if !out.contains(&g) {
                out.push(g);
            }
        }
        out
    };
    let cg = grams(&c);
    if cg.is_empty() {
        return 0.0;
    }
    let qg = grams(&q);
    cg.iter().filter(|g| qg.contains(g)).count() as f64 / cg.len() as f64
}

fn olympics() -> Table {
    Table::from_strings(
        "Summer Olympics",
        ["Year", "Host City", "Number of Participants"],
        [
            ["2000", "Sydney", "10651"],
            ["2004", "Athens", "10625"],
            ["2008", "Beijing", "10942"],
            ["2012", "London", "10568"],
            ["2016", "Rio de Janeiro", "11238"],
        ],
    )
    .unwrap()
}

const OLYMPICS_QUESTION: &str =
    "How many more participants were there in 2008 than in the London Olympics?";

fn snapshot_k1() -> Outcome {
    let tok = Tokenizer::heuristic();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let mut cases = vec![(olympics(), Query::new(OLYMPICS_QUESTION), 1)];
    for i in 0..200 {
        let mut t = random_table(&mut rng, 30, false);
        while t.row_count() == 0 {
            t = random_table(&mut rng, 30, false);
        }
        let q = random_query(&mut rng, &t);
        cases.push((t, q, 1 + i % 3));
    }
    for (i, (t, q, n)) in cases.iter().enumerate() {
        let sub = content_snapshot(t, q, 1, *n, 100_000, &tok).map_err(|e| e.to_string())?;
        let want: Vec<usize> = (0..t.col_count())
            .map(|c| {
                let mut best = 0;
                let mut best_score = f64::NEG_INFINITY;
                for r in 0..t.row_count() {
                    let s = oracle_overlap(t.rows()[r][c].text(), q.text(), *n);
                    if s > best_score {
                        best = r;
                        best_score = s;
                    }
                }
                best
            })
            .collect();
        ensure(sub.synthetic() == Some(want.as_slice()), || {
            format!(
                "case {i}: provenance {:?} vs oracle {want:?}",
                sub.synthetic()
            )
        })?;
        let row: Vec<&str> = sub.table().rows()[0].iter().map(Cell::text).collect();
        let want_row: Vec<&str> = want
            .iter()
            .enumerate()
            .map(|(c, &r)| t.rows()[r][c].text())
            .collect();
        ensure(sub.table().row_count() == 1 && row == want_row, || {
            format!("case {i}: synthetic row {row:?} vs {want_row:?}")
        })?;
    }
    let sub = content_snapshot(&cases[0].0, &cases[0].1, 1, 1, 100_000, &tok).unwrap();
    let row: Vec<&str> = sub.table().rows()[0].iter().map(Cell::text).collect();
    ensure(row[0] == "2008" && row[1] == "London", || {
        format!("Olympics synthetic row {row:?}")
    })?;
    Ok(format!(
        "{} tables match the exhaustive oracle; Olympics row {row:?}",
        cases.len()
    ))
}

// ---------------------------------------------------------------------------
// 4

#[derive(Clone, Debug)]
enum V {
    Num(f64),
    Text(String),
}

impl V {
    fn render(&self) -> String {
        match self {
            V::Num(x) => format!("{x}"),
            V::Text(s) => s.clone(),
        }
    }
}

/// The 19 features from their textbook definitions over known values.
fn oracle_stats(vals: &[V]) -> [(&'static str, Option<f64>); 19] {
    let m = vals.len() as f64;
    let texts: Vec<String> = vals.iter().map(V::render).collect();
    let same = |a: &V, b: &V| match (a, b) {
        (V::Num(x), V::Num(y)) => x == y,
        (V::Text(x), V::Text(y)) => x == y,
        _ => false,
    };
    let share_of_mode = |keys: Vec<String>| {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for k in keys {
            *counts.entry(k).or_default() += 1;
        }
        counts.values().max().copied().unwrap_or(0) as f64 / m
    };
    let change_rate = (vals.len() >= 2).then(|| {
        (1..vals.len())
            .filter(|&i| !same(&vals[i - 1], &vals[i]))
            .count() as f64
            / (m - 1.0)
    });
    let percent = texts.iter().filter(|t| t.trim().ends_with('%')).count() as f64 / m;
    let prefix = share_of_mode(
        texts
            .iter()
            .map(|t| t.trim().chars().take(1).collect())
            .collect(),
    );
    let suffix = share_of_mode(
        texts
            .iter()
            .map(|t| {
                t.trim()
                    .chars()
                    .next_back()
                    .map(String::from)
                    .unwrap_or_default()
            })
            .collect(),
    );
    let mut distinct: Vec<&V> = Vec::new();
    for v in vals {
        if !distinct.iter().any(|d| same(d, v)) {
            distinct.push(v);
        }
    }
    let cardinality = distinct.len() as f64 / m;
    let major = distinct
        .iter()
        .map(|d| vals.iter().filter(|v| same(d, v)).count())
        .max()
        .unwrap() as f64
        / m;

    let nums: Vec<f64> = vals
        .iter()
        .filter_map(|v| match v {
            V::Num(x) => Some(*x),
            _ => None,
        })
        .collect();
    let k = nums.len() as f64;
    let mut f: [(&'static str, Option<f64>); 19] = [
        ("changeRate", change_rate),
        ("partialOrdered", None),
        ("orderedConfidence", None),
        ("aggrPercentFormatted", Some(percent)),
        ("commonPrefix", Some(prefix)),
        ("commonSuffix", Some(suffix)),
        ("aggr01Ranged", None),
        ("aggr0100Ranged", None),
        ("aggrIntegers", None),
        ("aggrNegative", None),
        ("variance", None),
        ("range", None),
        ("cardinality", Some(cardinality)),
        ("spread", None),
        ("major", Some(major)),
        ("benford", None),
        ("skewness", None),
        ("kurtosis", None),
        ("gini", None),
    ];
    if nums.len() < 2 {
        return f;
    }
    let ups = nums.windows(2).filter(|w| w[0] < w[1]).count();
    let downs = nums.windows(2).filter(|w| w[0] > w[1]).count();
    let partial = ups.max(downs) as f64 / (k - 1.0);
    let strict = ups == nums.len() - 1 || downs == nums.len() - 1;
    let frac = |p: &dyn Fn(f64) -> bool| nums.iter().filter(|&&x| p(x)).count() as f64 / k;
    let mean = nums.iter().sum::<f64>() / k;
    let var = nums.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / k;
    let sd = var.sqrt();
    let lo = nums.iter().cloned().fold(f64::MAX, f64::min);
    let hi = nums.iter().cloned().fold(f64::MIN, f64::max);
    f[1].1 = Some(partial);
    f[2].1 = Some(if strict { 1.0 } else { partial });
    f[6].1 = Some(frac(&|x| (0.0..=1.0).contains(&x)));
    f[7].1 = Some(frac(&|x| (0.0..=100.0).contains(&x)));
    f[8].1 = Some(frac(&|x| x == x.trunc()));
    f[9].1 = Some(frac(&|x| x < 0.0));
    f[10].1 = Some(sd);
    f[11].1 = Some(hi - lo);
    if hi > lo {
        f[13].1 = Some(cardinality / (hi - lo));
        let z = |p: i32| nums.iter().map(|x| ((x - mean) / sd).powi(p)).sum::<f64>() / k;
        f[16].1 = Some(z(3));
        f[17].1 = Some(z(4) - 3.0);
    }
    // leading digit by repeated scaling into [1, 10)
    let mut digits = [0u64; 9];
    for &x in &nums {
        let mut a = x.abs();
        if a < 1.0 {
            continue;
        }
        while a >= 10.0 {
            a /= 10.0;
        }
        digits[a as usize - 1] += 1;
    }
    let total: u64 = digits.iter().sum();
    if total > 0 {
        f[15].1 = Some(
            (1..=9)
                .map(|d| {
                    (digits[d - 1] as f64 / total as f64 - (1.0 + 1.0 / d as f64).log10()).abs()
                })
                .sum(),
        );
    }
    // mean absolute difference over all ordered pairs
    if nums.iter().all(|&x| x >= 0.0) && mean > 0.0 {
        let mad: f64 = nums
            .iter()
            .map(|a| nums.iter().map(|b| (a - b).abs()).sum::<f64>())
            .sum();
        f[18].1 = Some(mad / (2.0 * k * k * mean));
    }
    f
}

fn random_column(rng: &mut ChaCha8Rng) -> Vec<V> {
    let len = rng.random_range(1..=1000);
    let shape = rng.random_range(0..6);
    (0..len)
        .map(|i| match shape {
            // integers with repeats
            0 => V::Num(rng.random_range(-20i64..60) as f64),
            // reals in [0, 1]
            1 => V::Num((rng.random_range(0..10_000) as f64) / 10_000.0),
            // ascending with occasional ties
            2 => V::Num((i / rng.random_range(1..3)) as f64 * 1.5),
            // heavy tail
            3 => V::Num(f64::from(rng.random_range(1u32..1000)).powi(2)),
            // text with a few percent strings
            4 => {
                if rng.random_bool(0.2) {
                    V::Text(format!("{}%", rng.random_range(0..100)))
                } else {
                    V::Text(random_word(rng).to_owned())
                }
            }
            // mixed
            _ => {
                if rng.random_bool(0.6) {
                    V::Num(rng.random_range(-1000.0..1000.0f64).round() / 4.0)
                } else {
                    V::Text(random_word(rng).to_owned())
                }
            }
        })
        .collect()
}

fn column_table(vals: &[V]) -> Table {
    Table::from_strings("", ["v"], vals.iter().map(|v| vec![v.render()])).unwrap()
}

fn compare_stats(label: &str, vals: &[V]) -> Result<(), String> {
    let got = compute_statistics(&column_table(vals), 0).map_err(|e| e.to_string())?;
    for ((name, g), (_, w)) in got.features().into_iter().zip(oracle_stats(vals)) {
        let ok = match (g, w) {
            (None, None) => true,
            (Some(a), Some(b)) => (a - b).abs() <= 1e-9 * b.abs().max(1.0),
            _ => false,
        };
        ensure(ok, || format!("{label}: {name} = {g:?}, oracle {w:?}"))?;
    }
    Ok(())
}

fn statistics_features() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x57A75);
    for i in 0..200 {
        compare_stats(&format!("column {i}"), &random_column(&mut rng))?;
    }
    let degenerate: [(&str, Vec<V>); 5] = [
        ("constant", vec![V::Num(7.0); 12]),
        (
            "all-negative",
            (1..40).map(|i| V::Num(-(i as f64) * 3.25)).collect(),
        ),
        ("single-value", vec![V::Num(42.0)]),
        ("single-text", vec![V::Text("x".into())]),
        ("zeros", vec![V::Num(0.0); 5]),
    ];
    for (label, vals) in &degenerate {
        compare_stats(label, vals)?;
    }
    // the Benford shares are irrational, so an exactly-Benford multiset
    // only exists in the limit; 10^12 values rounded to whole counts
    let counts: [u64; 9] =
        std::array::from_fn(|i| (benford_expected(i as u32 + 1) * 1e12).round() as u64);
    let b = benford_distance(&counts).unwrap();
    ensure(b < 1e-9, || {
        format!("Benford distance {b} on Benford counts")
    })?;
    Ok(format!(
        "200 random columns + {} degenerate cases within 1e-9; Benford distance {b:.1e}",
        degenerate.len()
    ))
}

// ---------------------------------------------------------------------------
// 5

fn random_headers(rng: &mut ChaCha8Rng, width: usize) -> HeaderTree {
    let mut roots = Vec::new();
    let mut left = width;
    let mut n = 0;
    while left > 0 {
        let take = if left >= 2 && rng.random_bool(0.3) {
            rng.random_range(2..=left.min(3))
        } else {
            1
        };
        if take == 1 {
            roots.push(HeaderNode::leaf(format!("{} {n}", random_word(rng))));
        } else {
            let kids = (0..take)
                .map(|j| HeaderNode::leaf(format!("{} {n}.{j}", random_word(rng))))
                .collect();
            roots.push(HeaderNode::group(format!("group \"{n}\""), kids));
        }
        n += 1;
        left -= take;
    }
    HeaderTree { roots }
}

fn serialization_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7AB1E);
    let mut quoted = 0;
    for i in 0..100 {
        let width = rng.random_range(1..=6);
        let rows: Vec<Vec<Cell>> = (0..rng.random_range(0..25))
            .map(|_| {
                (0..width)
                    .map(|_| Cell::new(random_cell(&mut rng, true)))
                    .collect()
            })
            .collect();
        quoted += rows
            .iter()
            .flatten()
            .filter(|c| c.text().contains(['"', ',', '\n']))
            .count();

        let nested = Table::new(
            Some(format!("t{i}")),
            format!("{} & \"{}\"", random_word(&mut rng), i),
            random_headers(&mut rng, width),
            rows.clone(),
        )
        .unwrap();
        let back = parse_table_json(serialize(&nested, SerializationFormat::Json).as_bytes())
            .map_err(|e| format!("table {i} json: {e}"))?;
        ensure(back == nested, || {
            format!("table {i}: JSON round-trip differs")
        })?;

        let flat_headers: Vec<String> = (0..width)
            .map(|c| format!("{}, \"{c}\"", random_word(&mut rng)))
            .collect();
        let flat = Table::new(None, "", HeaderTree::flat(flat_headers), rows).unwrap();
        let import = parse_csv(serialize(&flat, SerializationFormat::Csv).as_bytes(), false)
            .map_err(|e| format!("table {i} csv: {e}"))?;
        ensure(import.warnings.is_empty(), || {
            format!("table {i}: csv warnings {:?}", import.warnings)
        })?;
        ensure(import.table == flat, || {
            format!("table {i}: CSV round-trip differs")
        })?;
    }

    let golden = manifest_dir().join("tests/golden");
    let source = parse_table_json(&std::fs::read(golden.join("source.json")).unwrap())
        .map_err(|e| e.to_string())?;
    for (format, file) in [
        (SerializationFormat::Html, "table.html"),
        (SerializationFormat::Xml, "table.xml"),
        (SerializationFormat::Json, "table.json"),
        (SerializationFormat::Csv, "table.csv"),
        (SerializationFormat::Markdown, "table.md"),
        (SerializationFormat::NlSep, "table.nlsep"),
    ] {
        let want = std::fs::read(golden.join(file)).unwrap();
        let got = serialize(&source, format);
        ensure(got.as_bytes() == want.as_slice(), || {
            format!(
                "{file} differs:\n{got}\n---\n{}",
                String::from_utf8_lossy(&want)
            )
        })?;
    }
    Ok(format!(
        "100 JSON + 100 CSV round-trips ({quoted} quoted/escaped cells), 6 golden files byte-equal"
    ))
}

// ---------------------------------------------------------------------------
// 6

fn allocation_exactness() -> Outcome {
    let r = |t, a| AllocationRatio::new(t, a).unwrap();
    ensure(
        allocate_tokens(1000, r(5, 5)).ok() == Some((500, 500)),
        || format!("(1000, 5:5) -> {:?}", allocate_tokens(1000, r(5, 5))),
    )?;
    ensure(
        allocate_tokens(2000, r(4, 6)).ok() == Some((800, 1200)),
        || format!("(2000, 4:6) -> {:?}", allocate_tokens(2000, r(4, 6))),
    )?;
    let mut ratios = Vec::new();
    for t in 0..=10u32 {
        for a in 0..=10u32 {
            if t + a > 0 {
                ratios.push((t, a));
            }
        }
    }
    ratios.extend([
        (1, 1_000_000),
        (999_983, 7),
        (u32::MAX, u32::MAX),
        (u32::MAX, 1),
    ]);
    let mut checked = 0u64;
    for &(t, a) in &ratios {
        let ratio = r(t, a);
        for budget in 1..=100_000usize {
            let (tb, ab) = allocate_tokens(budget, ratio).map_err(|e| e.to_string())?;
            let floor = (budget as u128 * t as u128 / (t as u128 + a as u128)) as usize;
            if tb + ab != budget || tb != floor {
                return Err(format!("({budget}, {t}:{a}) -> ({tb}, {ab})"));
            }
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} (budget, ratio) pairs sum to the budget with the floored table share"
    ))
}

// ---------------------------------------------------------------------------
// 7

const RECALL_BUDGET: usize = 200;
const RECALL_MARGIN: f64 = 0.1;

fn recall_proxy() -> Outcome {
    let fixtures = RecallFixture::load_dir(&manifest_dir().join("tests/fixtures/recall"))
        .map_err(|e| e.to_string())?;
    ensure(fixtures.len() == 30, || {
        format!("expected 30 fixtures, found {}", fixtures.len())
    })?;
    let methods = [
        SamplingMethod::Random { seed: 0 },
        SamplingMethod::QueryBased { grounding: None },
        SamplingMethod::QueryBased { grounding: Some(2) },
    ];
    let res = evaluate_recall(
        &fixtures,
        &methods,
        RECALL_BUDGET,
        &Tokenizer::heuristic(),
        &Embedder::default(),
    )
    .map_err(|e| e.to_string())?;
    let (random, qb, grounded) = (res[0].mean_recall, res[1].mean_recall, res[2].mean_recall);
    let summary =
        format!("grounded {grounded:.3} >= query-based {qb:.3} >= random {random:.3} at budget {RECALL_BUDGET}");
    ensure(grounded >= qb && qb >= random, || {
        format!("ordering broken: {summary}")
    })?;
    ensure(grounded - random >= RECALL_MARGIN, || {
        format!("margin below {RECALL_MARGIN}: {summary}")
    })?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// 8

fn hundred_rows() -> Table {
    let cities = [
        "London", "Paris", "Beijing", "Sydney", "Athens", "Rome", "Oslo", "Lima",
    ];
    let rows = (0..100).map(|i| {
        vec![
            format!("{}", 1920 + i),
            cities[i % cities.len()].to_owned(),
            format!("{}", 1000 + (i * 7919) % 9000),
            format!("{:.1}", ((i * 37) % 100) as f64 / 10.0),
        ]
    });
    Table::from_strings(
        "Host city statistics",
        ["Year", "Host City", "Participants", "Growth"],
        rows,
    )
    .unwrap()
}

fn sweep_mechanics() -> Outcome {
    let ws = workspace();
    let cfg = ProviderConfig {
        sampling: SamplingMethod::QueryBased { grounding: None },
        augmentation: ALL_KINDS.to_vec(),
        budget: 700,
        llm: Some(stub([(
            DEFAULT_KEY.to_owned(),
            "The statement compares the participants of two host cities.".to_owned(),
        )])),
        corpus_path: Some(ws.corpus.clone()),
        ..ProviderConfig::default()
    };
    let provider = Provider::new(cfg).map_err(|e| e.to_string())?;
    let ratios: Vec<AllocationRatio> = ["7:3", "6:4", "5:5", "4:6", "3:7"]
        .iter()
        .map(|r| r.parse().unwrap())
        .collect();
    let fixtures = [(
        "hundred".to_owned(),
        hundred_rows(),
        Query::new("How many more participants were there in London than in Paris in 1990?"),
    )];
    let report = sweep_allocation(
        &fixtures,
        &ratios,
        &SerializationFormat::ALL,
        provider.config().budget,
        &provider,
    )
    .map_err(|e| e.to_string())?;
    let mut spans = Vec::new();
    for format in SerializationFormat::ALL {
        let runs: Vec<_> = report.rows.iter().filter(|r| r.format == format).collect();
        for w in runs.windows(2) {
            ensure(w[1].rows_included <= w[0].rows_included, || {
                format!(
                    "{format}: rows rose from {} at {} to {} at {}",
                    w[0].rows_included, w[0].ratio, w[1].rows_included, w[1].ratio
                )
            })?;
            ensure(w[1].items_included >= w[0].items_included, || {
                format!(
                    "{format}: items fell from {} at {} to {} at {}",
                    w[0].items_included, w[0].ratio, w[1].items_included, w[1].ratio
                )
            })?;
        }
        let (first, last) = (runs[0], runs[runs.len() - 1]);
        spans.push(format!(
            "{format} rows {}->{} items {}->{}",
            first.rows_included, last.rows_included, first.items_included, last.items_included
        ));
    }
    let moved = report
        .rows
        .windows(5)
        .step_by(5)
        .any(|w| w[0].rows_included > w[4].rows_included);
    ensure(moved, || "no format traded rows for items".into())?;
    Ok(spans.join("; "))
}

// ---------------------------------------------------------------------------
// 9

#[derive(Clone, Debug)]
enum Op {
    Update(usize),
    /// Pull with the client's cached version, or a stale offset from it.
    Pull {
        stale: u64,
    },
}

fn variant(i: usize) -> Table {
    let mut t = olympics();
    if i > 0 {
        let mut doc = tabprov::table::TableDocument::from_table(&t);
        doc.rows[i % 5][2] = format!("{}", 10_000 + i);
        t = doc.into_table().unwrap();
    }
    t
}

fn manager_sync() -> Outcome {
    let ops = prop::collection::vec(
        prop_oneof![
            (0usize..4).prop_map(Op::Update),
            (0u64..3).prop_map(|stale| Op::Pull { stale }),
        ],
        1..40,
    );
    let mut runner = TestRunner::new_with_rng(
        PropConfig {
            cases: 1000,
            failure_persistence: None,
            ..PropConfig::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let counter = std::cell::Cell::new(0usize);
    let result = runner.run(&ops, |ops| {
        counter.set(counter.get() + ops.len());
        let m = TableManager::new();
        let id = m.register(variant(0).with_id("t")).unwrap();
        let mut current = m.get(&id).unwrap();
        let mut client = 1u64;
        for op in ops {
            match op {
                Op::Update(v) => {
                    let t = variant(v);
                    let changed = content_hash(&t) != current.hash;
                    let got = m.update(&id, t).unwrap();
                    let want = current.version + u64::from(changed);
                    prop_assert_eq!(got, want);
                }
                Op::Pull { stale } => {
                    let known = client.saturating_sub(stale);
                    match m.sync_pull(&id, known).unwrap() {
                        SyncResult::Unchanged { version } => {
                            prop_assert_eq!(version, known);
                            prop_assert_eq!(version, current.version);
                        }
                        SyncResult::Updated { table, version } => {
                            prop_assert_ne!(known, version);
                            prop_assert_eq!(content_hash(&table), m.get(&id).unwrap().hash);
                            client = version;
                        }
                    }
                }
            }
            let now = m.get(&id).unwrap();
            prop_assert!(now.version >= current.version, "version went backwards");
            prop_assert_eq!(now.hash.clone(), content_hash(&now.table));
            prop_assert_eq!(
                now.version != current.version,
                now.hash != current.hash,
                "version and hash must change together"
            );
            if now.version != current.version {
                prop_assert_eq!(now.version, current.version + 1);
            }
            current = now;
        }
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    Ok(format!(
        "1000 random sequences, {} operations",
        counter.get()
    ))
}

// ---------------------------------------------------------------------------
// 10

/// sha256 of the two packed prompts below, joined by a NUL byte.
const FROZEN_DIGEST: &str = "a96c4f2d12e4dd06a9ce06a40ddcac1f03785c74554bf04b8a799f3ef8cf585f";

fn determinism_run(ws: &Workspace) -> Result<Vec<String>, String> {
    let table = olympics();
    let query = Query::new(OLYMPICS_QUESTION);
    let mut out = Vec::new();
    for sampling in [
        SamplingMethod::QueryBased { grounding: None },
        SamplingMethod::Clustering {
            n_clusters: 2,
            per_cluster_k: 2,
            seed: 11,
        },
    ] {
        let base = ProviderConfig {
            sampling: sampling.clone(),
            augmentation: ALL_KINDS.to_vec(),
            cell_selection: CellSelectionMode::Llm,
            format: SerializationFormat::Markdown,
            budget: 900,
            ratio: "4:6".parse().unwrap(),
            embedder: EmbedderSpec::Local { dim: 256 },
            corpus_path: Some(ws.corpus.clone()),
            ..ProviderConfig::default()
        };
        // the extraction prompt depends on the sampled table
        let (table_budget, _) = allocate_tokens(base.budget, base.ratio).unwrap();
        let sub = tabprov::sampling::sample(
            &table,
            &query,
            &sampling,
            table_budget,
            &Tokenizer::heuristic(),
            &Embedder::default(),
        )
        .map_err(|e| e.to_string())?;
        let extraction = prompt_digest(&cell_extraction_prompt(sub.table(), &CRITERIA));
        let cfg = ProviderConfig {
            llm: Some(stub([
                (extraction, r#"["London", "2008", "Atlantis"]"#.to_owned()),
                (
                    DEFAULT_KEY.to_owned(),
                    "The statement compares the 2008 Games in Beijing with the 2012 Games in London."
                        .to_owned(),
                ),
            ])),
            ..base
        };
        let provider = Provider::new(cfg).map_err(|e| e.to_string())?;
        let packed = provider
            .provide_table(&query, &table)
            .map_err(|e| e.to_string())?;
        out.push(packed.text);
        out.push(serde_json::to_string(&packed.manifest).unwrap());
    }
    Ok(out)
}

fn offline_determinism() -> Outcome {
    let ws = workspace();
    let before = exec::mode();
    exec::set_mode(ExecMode::Parallel);
    let first = determinism_run(&ws);
    exec::set_mode(ExecMode::Sequential);
    let second = determinism_run(&ws);
    exec::set_mode(before);
    let (first, second) = (first?, second?);
    ensure(first == second, || "two runs differ".into())?;
    ensure(
        first[0].contains("term-explanation: London")
            && first[0].contains("term-explanation: 2008")
            && first[0].contains("self-prompt: "),
        || format!("prompt lacks the scripted items:\n{}", first[0]),
    )?;
    let digest = hex::encode(Sha256::digest(
        [first[0].as_str(), first[2].as_str()].join("\0").as_bytes(),
    ));
    ensure(digest == FROZEN_DIGEST, || {
        format!(
            "digest {digest} differs from the frozen {FROZEN_DIGEST}; prompts:\n{}\n\n{}",
            first[0], first[2]
        )
    })?;
    Ok(format!(
        "parallel and sequential runs byte-identical; digest {}",
        &digest[..16]
    ))
}
