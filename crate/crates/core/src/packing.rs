//! Splitting a token budget between the table and its augmentation,
//! whole-row truncation, and prompt assembly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metadata::{AugmentationBundle, KnowledgeItem, KnowledgeKind};
use crate::sampling::SubTable;
use crate::serialize::{serialize, SerializationFormat};
use crate::tokenizer::Tokenizer;

/// Upper-limit shares of table and augmentation, `t:a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AllocationRatio {
    table_share: u32,
    aug_share: u32,
}

impl AllocationRatio {
    pub fn new(table_share: u32, aug_share: u32) -> Result<AllocationRatio> {
        if table_share == 0 && aug_share == 0 {
            return Err(Error::config("allocation ratio 0:0 has no shares"));
        }
        Ok(AllocationRatio {
            table_share,
            aug_share,
        })
    }

    pub fn table_share(self) -> u32 {
        self.table_share
    }

    pub fn aug_share(self) -> u32 {
        self.aug_share
    }
}

impl Default for AllocationRatio {
    fn default() -> Self {
        AllocationRatio {
            table_share: 5,
            aug_share: 5,
        }
    }
}

impl fmt::Display for AllocationRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.table_share, self.aug_share)
    }
}

impl FromStr for AllocationRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("ratio must look like 't:a', got {s:?}"));
        let (t, a) = s.trim().split_once(':').ok_or_else(bad)?;
        let t = t.trim().parse().map_err(|_| bad())?;
        let a = a.trim().parse().map_err(|_| bad())?;
        AllocationRatio::new(t, a)
    }
}

impl TryFrom<String> for AllocationRatio {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AllocationRatio> for String {
    fn from(r: AllocationRatio) -> String {
        r.to_string()
    }
}

/// `(table_budget, aug_budget)` with `table_budget = floor(budget * t / (t + a))`;
/// the remainder goes to augmentation.
pub fn allocate_tokens(budget: usize, ratio: AllocationRatio) -> Result<(usize, usize)> {
    if budget == 0 {
        return Err(Error::config("budget must be at least 1 token"));
    }
    let t = ratio.table_share as u128;
    let total = t + ratio.aug_share as u128;
    let table = (budget as u128 * t / total) as usize;
    Ok((table, budget - table))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptLayout {
    #[default]
    AugmentationFirst,
    TableFirst,
}

impl FromStr for PromptLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "augmentation-first" | "aug-first" => Ok(PromptLayout::AugmentationFirst),
            "table-first" => Ok(PromptLayout::TableFirst),
            _ => Err(Error::config(format!("unknown prompt layout {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackManifest {
    pub format: SerializationFormat,
    pub budget: usize,
    pub ratio: AllocationRatio,
    pub table_budget: usize,
    pub aug_budget: usize,
    pub table_tokens_used: usize,
    pub aug_tokens_used: usize,
    /// Parent-table indices of rows removed to fit the table share.
    pub dropped_rows: Vec<usize>,
    pub dropped_items: Vec<KnowledgeKind>,
    pub rows_included: usize,
    pub items_included: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_method: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub augmentation_kinds: Vec<KnowledgeKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedPrompt {
    pub text: String,
    pub manifest: PackManifest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truncated {
    pub subtable: SubTable,
    /// Parent-table row indices removed, ascending.
    pub dropped_rows: Vec<usize>,
}

fn header_cost(
    sub: &SubTable,
    format: SerializationFormat,
    tokenizer: &Tokenizer,
) -> Result<usize> {
    let empty = sub.retain_positions(&[])?;
    Ok(tokenizer.count(&serialize(empty.table(), format)))
}

/// Drops whole rows, lowest ranked first (or last row first when the
/// sub-table is unranked), until the serialization fits `budget`.
pub fn truncate_rows_to_budget(
    sub: &SubTable,
    budget: usize,
    tokenizer: &Tokenizer,
    format: SerializationFormat,
) -> Result<Truncated> {
    let header = header_cost(sub, format, tokenizer)?;
    if header > budget {
        return Err(Error::Budget {
            needed: header,
            budget,
        });
    }
    let order = sub.drop_order();
    let n = order.len();
    let keep_after = |dropped: usize| {
        let mut keep: Vec<usize> = order[dropped..].to_vec();
        keep.sort_unstable();
        keep
    };
    let fits = |dropped: usize| -> Result<bool> {
        let s = sub.retain_positions(&keep_after(dropped))?;
        Ok(tokenizer.count(&serialize(s.table(), format)) <= budget)
    };
    // Removing rows never adds tokens, so the fitting drop counts form a
    // suffix of 0..=n and the smallest one can be found by bisection.
    let (mut lo, mut hi) = (0usize, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if fits(mid)? {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let subtable = sub.retain_positions(&keep_after(lo))?;
    let mut dropped_rows: Vec<usize> = if sub.synthetic().is_some() {
        if lo > 0 {
            sub.source_rows().to_vec()
        } else {
            Vec::new()
        }
    } else {
        order[..lo].iter().map(|&p| sub.source_rows()[p]).collect()
    };
    dropped_rows.sort_unstable();
    Ok(Truncated {
        subtable,
        dropped_rows,
    })
}

/// The line an item occupies in the prompt: `"{kind}: {text}"`.
pub fn item_line(item: &KnowledgeItem) -> String {
    format!("{}: {}", item.kind, item.text)
}

pub fn pack(
    sub: &SubTable,
    bundle: &AugmentationBundle,
    format: SerializationFormat,
    budget: usize,
    ratio: AllocationRatio,
    tokenizer: &Tokenizer,
) -> Result<PackedPrompt> {
    pack_with_layout(
        sub,
        bundle,
        format,
        budget,
        ratio,
        tokenizer,
        PromptLayout::default(),
    )
}

/// Splits the budget by `ratio`, truncates the table to its share and adds
/// bundle items in priority order while their lines fit the augmentation
/// share. The first item that does not fit ends the augmentation; it and
/// every later item are reported as dropped. Items and table are separated
/// by a blank line.
pub fn pack_with_layout(
    sub: &SubTable,
    bundle: &AugmentationBundle,
    format: SerializationFormat,
    budget: usize,
    ratio: AllocationRatio,
    tokenizer: &Tokenizer,
    layout: PromptLayout,
) -> Result<PackedPrompt> {
    let (table_budget, aug_budget) = allocate_tokens(budget, ratio)?;
    let header = header_cost(sub, format, tokenizer)?;
    if header > budget {
        return Err(Error::Budget {
            needed: header,
            budget,
        });
    }
    let truncated = truncate_rows_to_budget(sub, table_budget, tokenizer, format)?;
    let table_text = serialize(truncated.subtable.table(), format);
    let table_tokens = tokenizer.count(&table_text);

    let mut lines = Vec::new();
    let mut dropped_items = Vec::new();
    let mut aug_tokens = 0;
    for item in bundle.ordered() {
        if !dropped_items.is_empty() {
            dropped_items.push(item.kind);
            continue;
        }
        let line = item_line(item);
        let cost = tokenizer.count(&line);
        if aug_tokens + cost <= aug_budget {
            aug_tokens += cost;
            lines.push(line);
        } else {
            dropped_items.push(item.kind);
        }
    }
    let aug_text = lines.join("\n");
    let aug_tokens = tokenizer.count(&aug_text);

    let text = if lines.is_empty() {
        table_text
    } else {
        match layout {
            PromptLayout::AugmentationFirst => format!("{aug_text}\n\n{table_text}"),
            PromptLayout::TableFirst => format!("{table_text}\n\n{aug_text}"),
        }
    };
    let total = tokenizer.count(&text);
    if total > budget {
        return Err(Error::Budget {
            needed: total,
            budget,
        });
    }
    Ok(PackedPrompt {
        text,
        manifest: PackManifest {
            format,
            budget,
            ratio,
            table_budget,
            aug_budget,
            table_tokens_used: table_tokens,
            aug_tokens_used: aug_tokens,
            dropped_rows: truncated.dropped_rows,
            dropped_items,
            rows_included: truncated.subtable.table().row_count(),
            items_included: lines.len(),
            sampling_method: None,
            augmentation_kinds: Vec::new(),
        },
    })
}
