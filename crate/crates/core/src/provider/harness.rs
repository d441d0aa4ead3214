//! Token-allocation sweeps and the planted-relevance recall proxy.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PackSettings, Provider};
use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::exec;
use crate::packing::AllocationRatio;
use crate::sampling::{sample, SamplingMethod};
use crate::serialize::SerializationFormat;
use crate::table::{Query, Table, TableDocument};
use crate::tokenizer::Tokenizer;

pub const SWEEP_CSV_HEADER: &str =
    "fixture,ratio,format,table_tokens,aug_tokens,rows_included,items_included";

/// Seeds averaged over for the random method: `seed .. seed + RANDOM_SEEDS`.
pub const RANDOM_SEEDS: u64 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fixture: String,
    pub ratio: AllocationRatio,
    pub format: SerializationFormat,
    pub table_tokens: usize,
    pub aug_tokens: usize,
    pub rows_included: usize,
    pub items_included: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SweepReport {
    pub budget: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(SWEEP_CSV_HEADER.split(','))
            .map_err(|e| Error::Ingestion(e.to_string()))?;
        for r in &self.rows {
            w.write_record([
                r.fixture.clone(),
                r.ratio.to_string(),
                r.format.to_string(),
                r.table_tokens.to_string(),
                r.aug_tokens.to_string(),
                r.rows_included.to_string(),
                r.items_included.to_string(),
            ])
            .map_err(|e| Error::Ingestion(e.to_string()))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Ingestion(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Runs the provider for every (fixture, ratio, format) at `budget`, in
/// that nesting order.
pub fn sweep_allocation(
    fixtures: &[(String, Table, Query)],
    ratios: &[AllocationRatio],
    formats: &[SerializationFormat],
    budget: usize,
    provider: &Provider,
) -> Result<SweepReport> {
    if fixtures.is_empty() || ratios.is_empty() || formats.is_empty() {
        return Err(Error::Precondition(
            "sweep needs at least one fixture, ratio and format".into(),
        ));
    }
    let mut runs = Vec::new();
    for (fi, _) in fixtures.iter().enumerate() {
        for &ratio in ratios {
            for &format in formats {
                runs.push((fi, ratio, format));
            }
        }
    }
    let rows = exec::try_map(&runs, |&(fi, ratio, format)| {
        let (name, table, query) = &fixtures[fi];
        let p = provider.provide_with(
            query,
            table,
            PackSettings {
                format,
                budget,
                ratio,
            },
        )?;
        Ok::<_, Error>(SweepRow {
            fixture: name.clone(),
            ratio,
            format,
            table_tokens: p.manifest.table_tokens_used,
            aug_tokens: p.manifest.aug_tokens_used,
            rows_included: p.manifest.rows_included,
            items_included: p.manifest.items_included,
        })
    })?;
    Ok(SweepReport { budget, rows })
}

/// A table, a query and the rows that answer it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallFixture {
    pub name: String,
    pub query: String,
    pub table: TableDocument,
    pub gold_rows: Vec<usize>,
}

impl RecallFixture {
    pub fn load(path: &Path) -> Result<RecallFixture> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Every `*.json` file in `dir`, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<Vec<RecallFixture>> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<Vec<_>>>()?;
        paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
        paths.sort();
        paths.iter().map(|p| RecallFixture::load(p)).collect()
    }
}

/// `|selected ∩ gold| / |gold|`; 1.0 for an empty gold set.
pub fn recall(selected: &[usize], gold: &[usize]) -> f64 {
    if gold.is_empty() {
        return 1.0;
    }
    let sel: HashSet<usize> = selected.iter().copied().collect();
    let gold: HashSet<usize> = gold.iter().copied().collect();
    gold.intersection(&sel).count() as f64 / gold.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRecall {
    pub label: String,
    pub method: SamplingMethod,
    pub mean_recall: f64,
}

fn label(m: &SamplingMethod) -> String {
    match m {
        SamplingMethod::QueryBased { grounding: Some(l) } => format!("query-based+grounding({l})"),
        other => other.name().to_owned(),
    }
}

/// Mean recall of the rows each method keeps at `budget`. The random
/// method is averaged over [`RANDOM_SEEDS`] consecutive seeds.
pub fn evaluate_recall(
    fixtures: &[RecallFixture],
    methods: &[SamplingMethod],
    budget: usize,
    tokenizer: &Tokenizer,
    embedder: &Embedder,
) -> Result<Vec<MethodRecall>> {
    if fixtures.is_empty() {
        return Err(Error::Precondition(
            "recall needs at least one fixture".into(),
        ));
    }
    let tables = fixtures
        .iter()
        .map(|f| f.table.clone().into_table())
        .collect::<Result<Vec<_>>>()?;
    methods
        .iter()
        .map(|m| {
            let variants: Vec<SamplingMethod> = match *m {
                SamplingMethod::Random { seed } => (seed..seed + RANDOM_SEEDS)
                    .map(|s| SamplingMethod::Random { seed: s })
                    .collect(),
                _ => vec![m.clone()],
            };
            let idx: Vec<usize> = (0..fixtures.len()).collect();
            let per_fixture = exec::try_map(&idx, |&i| {
                let q = Query::new(fixtures[i].query.clone());
                let mut sum = 0.0;
                for v in &variants {
                    let sub = sample(&tables[i], &q, v, budget, tokenizer, embedder)?;
                    sum += recall(sub.source_rows(), &fixtures[i].gold_rows);
                }
                Ok::<_, Error>(sum / variants.len() as f64)
            })?;
            Ok(MethodRecall {
                label: label(m),
                method: m.clone(),
                mean_recall: per_fixture.iter().sum::<f64>() / per_fixture.len() as f64,
            })
        })
        .collect()
}
