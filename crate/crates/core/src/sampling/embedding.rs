//! Embedding-based sampling: query similarity ranking (with optional column
//! grounding) and k-means clustering of rows.

use super::kmeans::{kmeans, MAX_ITERATIONS};
use super::{RowCosts, SamplingMethod, SubTable};
use crate::embed::{cosine_similarity, embed_columns, embed_rows, Embedder};
use crate::error::Result;
use crate::table::{Query, Table};
use crate::tokenizer::Tokenizer;

/// Indices sorted by score descending, ties to the smaller index.
fn rank_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Columns ranked by similarity of their flattening to the query, with
/// their scores.
pub fn rank_columns(
    table: &Table,
    query: &Query,
    embedder: &Embedder,
) -> Result<Vec<(usize, f64)>> {
    let q = embedder.embed(query.text())?;
    let cols = embed_columns(table, embedder)?;
    let scores = cols
        .iter()
        .map(|c| cosine_similarity(c, &q))
        .collect::<Result<Vec<_>>>()?;
    Ok(rank_desc(&scores)
        .into_iter()
        .map(|i| (i, scores[i]))
        .collect())
}

/// Ranks rows by cosine similarity to the query and keeps the best-ranked
/// prefix that fits. With `grounding = Some(l)` the table is first cut down
/// to the `l` columns most similar to the query; row embeddings and budget
/// accounting then use only those columns.
pub fn query_based_sample(
    table: &Table,
    query: &Query,
    budget: usize,
    tokenizer: &Tokenizer,
    embedder: &Embedder,
    grounding: Option<usize>,
) -> Result<SubTable> {
    let method = SamplingMethod::QueryBased { grounding };
    method.validate()?;
    let cols: Vec<usize> = match grounding {
        Some(l) => {
            let mut c: Vec<usize> = rank_columns(table, query, embedder)?
                .into_iter()
                .take(l)
                .map(|(i, _)| i)
                .collect();
            c.sort_unstable();
            c
        }
        None => (0..table.col_count()).collect(),
    };
    let all_rows: Vec<usize> = (0..table.row_count()).collect();
    let working = table.restrict(&all_rows, &cols)?;
    let costs = RowCosts::of(&working, tokenizer);
    costs.check_header(budget)?;

    let q = embedder.embed(query.text())?;
    let scores = embed_rows(&working, embedder)?
        .iter()
        .map(|e| cosine_similarity(e, &q))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = costs.take_prefix(&rank_desc(&scores), budget);
    rows.sort_unstable();
    let kept = rows.iter().map(|&r| scores[r]).collect();
    SubTable::from_parent(table, rows, cols, Some(kept), method)
}

/// Clusters row embeddings, keeps the `per_cluster_k` rows nearest each
/// centroid, then drops the rows farthest from their centroid until the
/// result fits. Scores are negated centroid distances.
pub fn clustering_sample(
    table: &Table,
    budget: usize,
    tokenizer: &Tokenizer,
    embedder: &Embedder,
    n_clusters: usize,
    per_cluster_k: usize,
    seed: u64,
) -> Result<SubTable> {
    let method = SamplingMethod::Clustering {
        n_clusters,
        per_cluster_k,
        seed,
    };
    method.validate()?;
    let costs = RowCosts::of(table, tokenizer);
    costs.check_header(budget)?;
    let cols: Vec<usize> = (0..table.col_count()).collect();
    let n = table.row_count();
    if n == 0 {
        return SubTable::from_parent(table, Vec::new(), cols, Some(Vec::new()), method);
    }
    let mut warning = None;
    let k = if n_clusters > n {
        warning = Some(format!(
            "requested {n_clusters} clusters for {n} rows; clamped to {n}"
        ));
        n
    } else {
        n_clusters
    };

    let points: Vec<Vec<f64>> = embed_rows(table, embedder)?
        .into_iter()
        .map(|e| e.values().to_vec())
        .collect();
    let km = kmeans(&points, k, seed, MAX_ITERATIONS);

    let mut selected = Vec::new();
    for cluster in 0..k {
        let mut members: Vec<usize> = (0..n).filter(|&r| km.assignments[r] == cluster).collect();
        members.sort_by(|&a, &b| km.distances[a].total_cmp(&km.distances[b]).then(a.cmp(&b)));
        selected.extend(members.into_iter().take(per_cluster_k));
    }

    // nearest first, so the budget prefix drops the farthest rows
    selected.sort_by(|&a, &b| km.distances[a].total_cmp(&km.distances[b]).then(a.cmp(&b)));
    let mut total = costs.header + selected.iter().map(|&r| costs.rows[r]).sum::<usize>();
    while total > budget {
        let r = selected
            .pop()
            .expect("header fits, so an empty selection fits");
        total -= costs.rows[r];
    }
    selected.sort_unstable();
    let scores = selected.iter().map(|&r| -km.distances[r]).collect();
    let mut sub = SubTable::from_parent(table, selected, cols, Some(scores), method)?;
    if let Some(w) = warning {
        sub.push_warning(w);
    }
    Ok(sub)
}
