//! Content snapshot: rows (or one synthetic row) with the highest n-gram
//! overlap with the question.

use std::collections::HashSet;

use super::{RowCosts, SamplingMethod, SubTable};
use crate::error::Result;
use crate::exec;
use crate::table::{normalize_tokens, Query, Table};
use crate::tokenizer::Tokenizer;

fn ngrams(tokens: &[String], n: usize) -> HashSet<String> {
    tokens.windows(n).map(|w| w.join(" ")).collect()
}

fn overlap_tokens(cell: &[String], query: &[String], n: usize) -> f64 {
    let n = if cell.len() < n || query.len() < n {
        1
    } else {
        n
    };
    let cell_grams = ngrams(cell, n);
    if cell_grams.is_empty() {
        return 0.0;
    }
    let query_grams = ngrams(query, n);
    let shared = cell_grams.intersection(&query_grams).count();
    shared as f64 / cell_grams.len().max(1) as f64
}

/// Share of the cell's distinct n-grams that also occur in the query.
/// Falls back to unigrams when either side has fewer than `n` tokens.
pub fn ngram_overlap(cell_text: &str, query: &Query, n: usize) -> f64 {
    overlap_tokens(&normalize_tokens(cell_text), query.tokens(), n.max(1))
}

/// Per-cell overlaps, `[row][col]`.
pub fn overlap_matrix(table: &Table, query: &Query, n: usize) -> Vec<Vec<f64>> {
    let q = query.tokens();
    exec::map(table.rows(), |row| {
        row.iter()
            .map(|c| overlap_tokens(&normalize_tokens(c.text()), q, n.max(1)))
            .collect()
    })
}

/// `K > 1`: the top-K rows by mean cell overlap, in relevance order.
/// `K = 1`: one synthetic row taking each column's best-overlapping cell.
pub fn content_snapshot(
    table: &Table,
    query: &Query,
    k: usize,
    n: usize,
    budget: usize,
    tokenizer: &Tokenizer,
) -> Result<SubTable> {
    let method = SamplingMethod::ContentSnapshot { k, ngram: n };
    method.validate()?;
    let costs = RowCosts::of(table, tokenizer);
    costs.check_header(budget)?;
    let cols: Vec<usize> = (0..table.col_count()).collect();
    let overlaps = overlap_matrix(table, query, n);

    if table.row_count() == 0 {
        return SubTable::from_parent(table, Vec::new(), cols, Some(Vec::new()), method);
    }

    if k == 1 {
        let provenance: Vec<usize> = cols
            .iter()
            .map(|&c| {
                let mut best = 0;
                for r in 1..table.row_count() {
                    if overlaps[r][c] > overlaps[best][c] {
                        best = r;
                    }
                }
                best
            })
            .collect();
        let row: Vec<_> = provenance
            .iter()
            .enumerate()
            .map(|(c, &r)| table.rows()[r][c].clone())
            .collect();
        let score = provenance
            .iter()
            .enumerate()
            .map(|(c, &r)| overlaps[r][c])
            .sum::<f64>()
            / cols.len() as f64;
        let synthetic = table.with_rows(vec![row])?;
        let syn_costs = RowCosts::of(&synthetic, tokenizer);
        let mut contributing = provenance.clone();
        contributing.sort_unstable();
        contributing.dedup();
        let full = SubTable {
            table: synthetic,
            source_rows: contributing,
            source_cols: cols,
            scores: Some(vec![score]),
            method: Some(method),
            synthetic: Some(provenance),
            warnings: Vec::new(),
        };
        return if syn_costs.header + syn_costs.rows[0] <= budget {
            Ok(full)
        } else {
            full.retain_positions(&[])
        };
    }

    let row_scores: Vec<f64> = overlaps
        .iter()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .collect();
    let mut ranked: Vec<usize> = (0..table.row_count()).collect();
    ranked.sort_by(|&a, &b| row_scores[b].total_cmp(&row_scores[a]).then(a.cmp(&b)));
    ranked.truncate(k);
    let rows = costs.take_prefix(&ranked, budget);
    let scores = rows.iter().map(|&r| row_scores[r]).collect();
    SubTable::from_parent(table, rows, cols, Some(scores), method)
}
