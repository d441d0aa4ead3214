//! Row/column sampling: score rows with a method-specific function, rank
//! them, and keep the best-ranked prefix that fits the token budget.
//!
//! Budgets are always checked against the NLSep rendering of the candidate
//! sub-table with its header, the cheapest of the supported formats.

mod embedding;
mod kmeans;
mod snapshot;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::serialize::{nlsep_header, nlsep_row};
use crate::table::{Query, Table};
use crate::tokenizer::Tokenizer;

pub use embedding::{clustering_sample, query_based_sample, rank_columns};
pub use kmeans::{kmeans, KMeans, MAX_ITERATIONS};
pub use snapshot::{content_snapshot, ngram_overlap, overlap_matrix};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SamplingMethod {
    Random {
        seed: u64,
    },
    Evenly,
    ContentSnapshot {
        k: usize,
        ngram: usize,
    },
    QueryBased {
        /// Number of grounded columns; `None` disables column grounding.
        grounding: Option<usize>,
    },
    Clustering {
        n_clusters: usize,
        per_cluster_k: usize,
        seed: u64,
    },
}

impl SamplingMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SamplingMethod::Random { .. } => "random",
            SamplingMethod::Evenly => "evenly",
            SamplingMethod::ContentSnapshot { .. } => "content-snapshot",
            SamplingMethod::QueryBased { .. } => "query-based",
            SamplingMethod::Clustering { .. } => "clustering",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SamplingMethod::ContentSnapshot { k, ngram } => {
                if k == 0 {
                    return Err(Error::config("content snapshot K must be >= 1"));
                }
                if ngram == 0 {
                    return Err(Error::config("n-gram order must be >= 1"));
                }
            }
            SamplingMethod::QueryBased { grounding: Some(0) } => {
                return Err(Error::config("grounding column count must be >= 1"));
            }
            SamplingMethod::Clustering {
                n_clusters,
                per_cluster_k,
                ..
            } => {
                if n_clusters == 0 {
                    return Err(Error::config("cluster count must be >= 1"));
                }
                if per_cluster_k == 0 {
                    return Err(Error::config("per-cluster K must be >= 1"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Whether the method needs an embedder.
    pub fn uses_embeddings(&self) -> bool {
        matches!(
            self,
            SamplingMethod::QueryBased { .. } | SamplingMethod::Clustering { .. }
        )
    }
}

impl fmt::Display for SamplingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A sampled table together with where its rows and columns came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SubTable {
    table: Table,
    source_rows: Vec<usize>,
    source_cols: Vec<usize>,
    scores: Option<Vec<f64>>,
    method: Option<SamplingMethod>,
    synthetic: Option<Vec<usize>>,
    warnings: Vec<String>,
}

impl SubTable {
    /// The whole table, unranked.
    pub fn full(table: &Table) -> SubTable {
        SubTable {
            table: table.clone(),
            source_rows: (0..table.row_count()).collect(),
            source_cols: (0..table.col_count()).collect(),
            scores: None,
            method: None,
            synthetic: None,
            warnings: Vec::new(),
        }
    }

    pub(crate) fn from_parent(
        parent: &Table,
        rows: Vec<usize>,
        cols: Vec<usize>,
        scores: Option<Vec<f64>>,
        method: SamplingMethod,
    ) -> Result<SubTable> {
        let table = parent.restrict(&rows, &cols)?;
        Ok(SubTable {
            table,
            source_rows: rows,
            source_cols: cols,
            scores,
            method: Some(method),
            synthetic: None,
            warnings: Vec::new(),
        })
    }

    /// Attaches externally computed row scores.
    pub fn with_scores(mut self, scores: Vec<f64>) -> Result<SubTable> {
        if scores.len() != self.table.row_count() {
            return Err(Error::DimensionMismatch(
                scores.len(),
                self.table.row_count(),
            ));
        }
        self.scores = Some(scores);
        Ok(self)
    }

    pub fn table(&self) -> &Table {
        &self.table
    }

    /// Parent row index of each sub-table row. For a synthetic row this is
    /// the sorted set of contributing rows; see [`SubTable::synthetic`].
    pub fn source_rows(&self) -> &[usize] {
        &self.source_rows
    }

    pub fn source_cols(&self) -> &[usize] {
        &self.source_cols
    }

    /// Per-row scores aligned with the sub-table rows; higher ranks higher.
    pub fn scores(&self) -> Option<&[f64]> {
        self.scores.as_deref()
    }

    pub fn method(&self) -> Option<&SamplingMethod> {
        self.method.as_ref()
    }

    /// For a synthetic row: the parent row each column's cell came from.
    pub fn synthetic(&self) -> Option<&[usize]> {
        self.synthetic.as_deref()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub(crate) fn push_warning(&mut self, w: String) {
        log::warn!("{w}");
        self.warnings.push(w);
    }

    /// Sub-table row positions from lowest to highest rank: lowest score
    /// first (later position first on ties), or last row first if unranked.
    pub fn drop_order(&self) -> Vec<usize> {
        let n = self.table.row_count();
        let mut order: Vec<usize> = (0..n).collect();
        match &self.scores {
            Some(s) if s.len() == n => {
                order.sort_by(|&a, &b| s[a].total_cmp(&s[b]).then(b.cmp(&a)));
            }
            _ => order.reverse(),
        }
        order
    }

    /// Keeps the rows at the given positions (ascending), preserving
    /// provenance and scores.
    pub(crate) fn retain_positions(&self, keep: &[usize]) -> Result<SubTable> {
        let rows = keep.iter().map(|&p| self.table.rows()[p].clone()).collect();
        let table = self.table.with_rows(rows)?;
        let (source_rows, synthetic) = if self.synthetic.is_some() {
            if keep.is_empty() {
                (Vec::new(), None)
            } else {
                (self.source_rows.clone(), self.synthetic.clone())
            }
        } else {
            (keep.iter().map(|&p| self.source_rows[p]).collect(), None)
        };
        Ok(SubTable {
            table,
            source_rows,
            source_cols: self.source_cols.clone(),
            scores: self
                .scores
                .as_ref()
                .map(|s| keep.iter().map(|&p| s[p]).collect()),
            method: self.method.clone(),
            synthetic,
            warnings: self.warnings.clone(),
        })
    }
}

/// NLSep token costs of a table: header line and each body line. Lines
/// are newline-separated, so the full rendering costs exactly
/// `header + sum(rows)`.
pub(crate) struct RowCosts {
    pub header: usize,
    pub rows: Vec<usize>,
}

impl RowCosts {
    pub fn of(table: &Table, tokenizer: &Tokenizer) -> RowCosts {
        RowCosts {
            header: tokenizer.count(&nlsep_header(table)),
            rows: crate::exec::map_range(table.row_count(), |r| {
                tokenizer.count(&nlsep_row(table, r))
            }),
        }
    }

    pub fn check_header(&self, budget: usize) -> Result<()> {
        if self.header > budget {
            Err(Error::Budget {
                needed: self.header,
                budget,
            })
        } else {
            Ok(())
        }
    }

    /// Longest prefix of `ranked` that fits `budget`.
    pub fn take_prefix(&self, ranked: &[usize], budget: usize) -> Vec<usize> {
        let mut used = self.header;
        let mut out = Vec::new();
        for &r in ranked {
            if used + self.rows[r] > budget {
                break;
            }
            used += self.rows[r];
            out.push(r);
        }
        out
    }
}

/// Samples `table` for `query` with `method` so that the NLSep rendering of
/// the result fits `budget`. The header row is always kept.
pub fn sample(
    table: &Table,
    query: &Query,
    method: &SamplingMethod,
    budget: usize,
    tokenizer: &Tokenizer,
    embedder: &Embedder,
) -> Result<SubTable> {
    method.validate()?;
    match *method {
        SamplingMethod::Random { seed } => random_sample(table, budget, seed, tokenizer),
        SamplingMethod::Evenly => evenly_sample(table, budget, tokenizer),
        SamplingMethod::ContentSnapshot { k, ngram } => {
            content_snapshot(table, query, k, ngram, budget, tokenizer)
        }
        SamplingMethod::QueryBased { grounding } => {
            query_based_sample(table, query, budget, tokenizer, embedder, grounding)
        }
        SamplingMethod::Clustering {
            n_clusters,
            per_cluster_k,
            seed,
        } => clustering_sample(
            table,
            budget,
            tokenizer,
            embedder,
            n_clusters,
            per_cluster_k,
            seed,
        ),
    }
}

fn all_cols(table: &Table) -> Vec<usize> {
    (0..table.col_count()).collect()
}

/// Rows drawn uniformly without replacement until the next one would not
/// fit; output in original order.
pub fn random_sample(
    table: &Table,
    budget: usize,
    seed: u64,
    tokenizer: &Tokenizer,
) -> Result<SubTable> {
    let costs = RowCosts::of(table, tokenizer);
    costs.check_header(budget)?;
    let mut order: Vec<usize> = (0..table.row_count()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut rows = costs.take_prefix(&order, budget);
    rows.sort_unstable();
    SubTable::from_parent(
        table,
        rows,
        all_cols(table),
        None,
        SamplingMethod::Random { seed },
    )
}

/// `0, n-1, 1, n-2, ...`: outermost rows first, moving towards the middle.
pub fn evenly_order(n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let (mut lo, mut hi) = (0usize, n);
    while lo < hi {
        out.push(lo);
        lo += 1;
        if lo < hi {
            hi -= 1;
            out.push(hi);
        }
    }
    out
}

pub fn evenly_sample(table: &Table, budget: usize, tokenizer: &Tokenizer) -> Result<SubTable> {
    let costs = RowCosts::of(table, tokenizer);
    costs.check_header(budget)?;
    let mut rows = costs.take_prefix(&evenly_order(table.row_count()), budget);
    rows.sort_unstable();
    SubTable::from_parent(table, rows, all_cols(table), None, SamplingMethod::Evenly)
}
