//! Choosing which cells deserve an explanation: keyword heuristics over the
//! query, or an LLM asked with the fixed extraction prompt.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::Serialize;
use serde_json::json;

use super::llm::{parse_string_list, LlmClient};
use crate::error::Result;
use crate::table::{normalize_tokens, Query, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionReason {
    ExplicitMention,
    Comparative,
    Superlative,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SelectedCell {
    pub row: usize,
    pub col: usize,
    pub reason: SelectionReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CellSelection {
    pub cells: Vec<SelectedCell>,
    pub warnings: Vec<String>,
}

impl CellSelection {
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn coords(&self) -> Vec<(usize, usize)> {
        self.cells.iter().map(|c| (c.row, c.col)).collect()
    }

    /// Adds a cell unless its coordinates are already present.
    fn insert(
        &mut self,
        seen: &mut HashSet<(usize, usize)>,
        row: usize,
        col: usize,
        reason: SelectionReason,
    ) {
        if seen.insert((row, col)) {
            self.cells.push(SelectedCell { row, col, reason });
        }
    }
}

pub const GREATER_CUES: [&str; 3] = ["more", "greater", "over"];
pub const LESS_CUES: [&str; 3] = ["less", "fewer", "under"];
/// Comparative cue without a direction of its own.
pub const NEUTRAL_CUE: &str = "than";
pub const MAX_CUES: [&str; 4] = ["most", "highest", "maximum", "best"];
pub const MIN_CUES: [&str; 4] = ["least", "lowest", "minimum", "worst"];

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+(\.\d+)?").unwrap());

/// Numbers written in the query text.
pub fn query_numbers(text: &str) -> Vec<f64> {
    NUMBER
        .find_iter(text)
        .filter_map(|m| m.as_str().parse().ok())
        .collect()
}

fn has_any(tokens: &[String], cues: &[&str]) -> bool {
    tokens.iter().any(|t| cues.contains(&t.as_str()))
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Union of three rules, each cell tagged with the first rule that picked
/// it:
///
/// * explicit mention: the cell's normalized tokens occur as a contiguous
///   run of query tokens;
/// * comparative: with a "more/greater/over" cue, numeric cells strictly
///   above some number in the query; with "less/fewer/under", strictly
///   below one. "than" alone gives no direction and selects nothing;
/// * superlative: the first maximal (or minimal) numeric cell of each
///   column under a max (or min) cue.
///
/// Cells are listed by rule, then in row-major order.
pub fn select_cells_heuristic(table: &Table, query: &Query) -> CellSelection {
    let q = query.tokens();
    let mut sel = CellSelection::default();
    let mut seen = HashSet::new();

    for (r, row) in table.rows().iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            if contains_run(q, &normalize_tokens(cell.text())) {
                sel.insert(&mut seen, r, c, SelectionReason::ExplicitMention);
            }
        }
    }

    let nums = query_numbers(query.text());
    let greater = has_any(q, &GREATER_CUES);
    let less = has_any(q, &LESS_CUES);
    if !nums.is_empty() && (greater || less) {
        let lo = nums.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = nums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (r, row) in table.rows().iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                let Some(x) = cell.number() else { continue };
                if (greater && x > lo) || (less && x < hi) {
                    sel.insert(&mut seen, r, c, SelectionReason::Comparative);
                }
            }
        }
    }

    let want_max = has_any(q, &MAX_CUES);
    let want_min = has_any(q, &MIN_CUES);
    if want_max || want_min {
        let mut picks = Vec::new();
        for c in 0..table.col_count() {
            let numeric: Vec<(usize, f64)> = table
                .rows()
                .iter()
                .enumerate()
                .filter_map(|(r, row)| row[c].number().map(|x| (r, x)))
                .collect();
            let mut best_max: Option<(usize, f64)> = None;
            let mut best_min: Option<(usize, f64)> = None;
            for &(r, x) in &numeric {
                if best_max.is_none_or(|(_, b)| x > b) {
                    best_max = Some((r, x));
                }
                if best_min.is_none_or(|(_, b)| x < b) {
                    best_min = Some((r, x));
                }
            }
            if want_max {
                picks.extend(best_max.map(|(r, _)| (r, c)));
            }
            if want_min {
                picks.extend(best_min.map(|(r, _)| (r, c)));
            }
        }
        picks.sort_unstable();
        for (r, c) in picks {
            sel.insert(&mut seen, r, c, SelectionReason::Superlative);
        }
    }
    sel
}

/// Names of the extraction criteria, in prompt order.
pub const CRITERIA: [&str; 5] = [
    "Cell Position",
    "Cell Content",
    "Cell Formatting",
    "Cell Context",
    "Cell Properties",
];

/// The table as a dictionary-style string: `{"header":[..],"rows":[[..]]}`.
pub fn table_dict(table: &Table) -> String {
    let rows: Vec<Vec<&str>> = table
        .rows()
        .iter()
        .map(|r| r.iter().map(|c| c.text()).collect())
        .collect();
    json!({"header": table.headers().column_labels(), "rows": rows}).to_string()
}

pub fn cell_extraction_prompt(table: &Table, criteria: &[&str]) -> String {
    format!(
        "You will be given a parsed table {} in python dictionary format, extract the cells that need to be explained. The extraction rule should be based on the following criteria: {}. Only return the cells name in a python List[str].",
        table_dict(table),
        criteria.join(", ")
    )
}

/// Asks the LLM for cell names and maps each back to the first cell (in
/// row-major order) whose text equals it. Malformed replies and unknown
/// names become warnings.
pub fn select_cells_llm(
    table: &Table,
    criteria: &[&str],
    llm: &LlmClient,
) -> Result<CellSelection> {
    let reply = llm.complete(&cell_extraction_prompt(table, criteria))?;
    let mut sel = CellSelection::default();
    let names = match parse_string_list(&reply) {
        Ok(n) => n,
        Err(why) => {
            let w = format!("unparseable cell list from model: {why}");
            log::warn!("{w}");
            sel.warnings.push(w);
            return Ok(sel);
        }
    };
    let mut seen = HashSet::new();
    for name in names {
        let hit = table
            .rows()
            .iter()
            .enumerate()
            .find_map(|(r, row)| row.iter().position(|c| c.text() == name).map(|c| (r, c)));
        match hit {
            Some((r, c)) => sel.insert(&mut seen, r, c, SelectionReason::Llm),
            None => {
                let w = format!("model named cell {name:?} which is not in the table");
                log::warn!("{w}");
                sel.warnings.push(w);
            }
        }
    }
    Ok(sel)
}
