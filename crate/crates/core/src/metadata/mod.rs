//! Knowledge items derived from the table itself: field roles, semantic
//! types, size, statistics and header structure.

pub mod semantic;
pub mod stats;

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::table::{table_size, HeaderNode, Table, ValueKind};
use crate::tokenizer::Tokenizer;

pub use semantic::{
    infer_semantic_field_type, RuleSpec, SemanticFieldType, Taxonomy, TypeSpec, CATEGORY, FREE_TEXT,
};
pub use stats::{
    benford_distance, benford_expected, compute_statistics, leading_digit, StatisticsFeatureSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnowledgeKind {
    DimensionMeasure,
    SemanticType,
    TableSize,
    Statistics,
    HeaderHierarchy,
    DocReference,
    TermExplanation,
    SelfPrompt,
}

impl KnowledgeKind {
    pub const METADATA: [KnowledgeKind; 5] = [
        KnowledgeKind::DimensionMeasure,
        KnowledgeKind::SemanticType,
        KnowledgeKind::TableSize,
        KnowledgeKind::Statistics,
        KnowledgeKind::HeaderHierarchy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KnowledgeKind::DimensionMeasure => "dimension-measure",
            KnowledgeKind::SemanticType => "semantic-type",
            KnowledgeKind::TableSize => "table-size",
            KnowledgeKind::Statistics => "statistics",
            KnowledgeKind::HeaderHierarchy => "header-hierarchy",
            KnowledgeKind::DocReference => "doc-reference",
            KnowledgeKind::TermExplanation => "term-explanation",
            KnowledgeKind::SelfPrompt => "self-prompt",
        }
    }

    pub fn is_metadata(self) -> bool {
        KnowledgeKind::METADATA.contains(&self)
    }
}

impl fmt::Display for KnowledgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KnowledgeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let all = [
            KnowledgeKind::DimensionMeasure,
            KnowledgeKind::SemanticType,
            KnowledgeKind::TableSize,
            KnowledgeKind::Statistics,
            KnowledgeKind::HeaderHierarchy,
            KnowledgeKind::DocReference,
            KnowledgeKind::TermExplanation,
            KnowledgeKind::SelfPrompt,
        ];
        let wanted = s.trim().to_ascii_lowercase().replace('_', "-");
        all.into_iter()
            .find(|k| k.name() == wanted)
            .ok_or_else(|| Error::config(format!("unknown augmentation kind {s:?}")))
    }
}

/// One piece of augmentation text with its token cost under the tokenizer
/// that built it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeItem {
    pub kind: KnowledgeKind,
    pub text: String,
    pub token_cost: usize,
    /// 1 is packed first.
    pub priority: usize,
}

impl KnowledgeItem {
    pub fn new(
        kind: KnowledgeKind,
        text: impl Into<String>,
        tokenizer: &Tokenizer,
    ) -> KnowledgeItem {
        let text = text.into();
        let token_cost = tokenizer.count(&text);
        KnowledgeItem {
            kind,
            text,
            token_cost,
            priority: 0,
        }
    }
}

/// Ordered knowledge items; order is packing priority.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationBundle {
    pub items: Vec<KnowledgeItem>,
}

impl AugmentationBundle {
    pub fn new() -> AugmentationBundle {
        AugmentationBundle::default()
    }

    /// Appends an item with the next priority.
    pub fn push(&mut self, mut item: KnowledgeItem) {
        item.priority = self.items.len() + 1;
        self.items.push(item);
    }

    pub fn extend(&mut self, items: impl IntoIterator<Item = KnowledgeItem>) {
        for i in items {
            self.push(i);
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items in priority order.
    pub fn ordered(&self) -> Vec<&KnowledgeItem> {
        let mut v: Vec<&KnowledgeItem> = self.items.iter().collect();
        v.sort_by_key(|i| i.priority);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Dimension,
    Measure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ColumnRole {
    pub role: Role,
    pub confidence: f64,
}

/// Share of non-empty cells that must be numeric for a measure.
pub const MEASURE_SHARE: f64 = 0.8;

static IDENTIFIER_HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(years?|ids?|codes?|rank(ing)?s?)\b").unwrap());

fn year_like(table: &Table, col: usize) -> bool {
    let nums: Vec<f64> = table
        .rows()
        .iter()
        .filter(|r| r[col].kind() == ValueKind::Integer)
        .filter_map(|r| r[col].number())
        .collect();
    let numeric = table
        .rows()
        .iter()
        .filter(|r| r[col].kind().is_numeric())
        .count();
    if nums.is_empty() || nums.len() != numeric {
        return false;
    }
    let four_digit = nums
        .iter()
        .all(|x| (1000.0..=2100.0).contains(x) && x.fract() == 0.0);
    let distinct = nums
        .iter()
        .map(|x| x.to_bits())
        .collect::<std::collections::HashSet<_>>()
        .len();
    four_digit && distinct as f64 / nums.len() as f64 > 0.9
}

/// Measure iff at least 80% of non-empty cells are numeric and the column
/// is not identifier-like (year/id/code/rank header, or distinct 4-digit
/// years). Identifier-like columns are dimensions whose confidence is the
/// numeric share that triggered the exception.
pub fn classify_dimension_measure(table: &Table, col: usize) -> Result<ColumnRole> {
    let cells = table.column(col)?;
    let nonempty = cells.iter().filter(|c| !c.is_empty()).count();
    let numeric = cells.iter().filter(|c| c.kind().is_numeric()).count();
    let share = if nonempty == 0 {
        0.0
    } else {
        numeric as f64 / nonempty as f64
    };
    if share >= MEASURE_SHARE {
        let header = table.headers().leaf_labels()[col];
        if IDENTIFIER_HEADER.is_match(header) || year_like(table, col) {
            return Ok(ColumnRole {
                role: Role::Dimension,
                confidence: share,
            });
        }
        return Ok(ColumnRole {
            role: Role::Measure,
            confidence: share,
        });
    }
    Ok(ColumnRole {
        role: Role::Dimension,
        confidence: 1.0 - share,
    })
}

/// Compact decimal rendering: integers without a fraction, otherwise at
/// most four decimals.
pub fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        return format!("{}", x as i64);
    }
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_owned()
    } else {
        s.to_owned()
    }
}

/// The five-feature summary: variance, range, cardinality, major and
/// change rate. Absent features are left out.
pub fn combined_statistics(
    table: &Table,
    col: usize,
    tokenizer: &Tokenizer,
) -> Result<KnowledgeItem> {
    let text = combined_statistics_text(table, col)?;
    Ok(KnowledgeItem::new(
        KnowledgeKind::Statistics,
        text,
        tokenizer,
    ))
}

fn combined_statistics_text(table: &Table, col: usize) -> Result<String> {
    let s = compute_statistics(table, col)?;
    let parts: Vec<String> = [
        ("variance", s.variance),
        ("range", s.range),
        ("cardinality", s.cardinality),
        ("major", s.major),
        ("changeRate", s.change_rate),
    ]
    .into_iter()
    .filter_map(|(n, v)| v.map(|v| format!("{n} {}", fmt_num(v))))
    .collect();
    let label = table.headers().column_labels()[col].clone();
    Ok(if parts.is_empty() {
        format!("column {label}: no statistics")
    } else {
        format!("column {label}: {}", parts.join(", "))
    })
}

fn outline(n: &HeaderNode, indent: usize, out: &mut Vec<String>) {
    out.push(format!("{}- {}", "  ".repeat(indent), n.label));
    for c in &n.children {
        outline(c, indent + 1, out);
    }
}

pub fn header_hierarchy_text(table: &Table) -> String {
    let h = table.headers();
    let n = h.leaf_count();
    if h.is_flat() {
        return format!("flat header, {n} columns: {}", h.leaf_labels().join(", "));
    }
    let mut lines = vec![format!(
        "hierarchical header, depth {}, {n} columns:",
        h.depth()
    )];
    for r in &h.roots {
        outline(r, 0, &mut lines);
    }
    lines.join("\n")
}

pub fn extract_header_hierarchy(table: &Table, tokenizer: &Tokenizer) -> KnowledgeItem {
    KnowledgeItem::new(
        KnowledgeKind::HeaderHierarchy,
        header_hierarchy_text(table),
        tokenizer,
    )
}

fn metadata_text(table: &Table, kind: KnowledgeKind, taxonomy: &Taxonomy) -> Result<String> {
    let labels = table.headers().column_labels();
    let cols: Vec<usize> = (0..table.col_count()).collect();
    Ok(match kind {
        KnowledgeKind::TableSize => {
            let (r, c) = table_size(table);
            format!("table has {r} rows, {c} columns")
        }
        KnowledgeKind::DimensionMeasure => {
            let roles = exec::try_map(&cols, |&c| classify_dimension_measure(table, c))?;
            let parts: Vec<String> = labels
                .iter()
                .zip(roles)
                .map(|(l, r)| {
                    let role = match r.role {
                        Role::Dimension => "dimension",
                        Role::Measure => "measure",
                    };
                    format!("{l} is {role}")
                })
                .collect();
            format!("dimension/measure: {}", parts.join(", "))
        }
        KnowledgeKind::SemanticType => {
            let types = exec::try_map(&cols, |&c| infer_semantic_field_type(table, c, taxonomy))?;
            let parts: Vec<String> = labels
                .iter()
                .zip(types)
                .map(|(l, t)| format!("{l} is {}", t.label))
                .collect();
            format!("semantic field types: {}", parts.join(", "))
        }
        KnowledgeKind::Statistics => {
            exec::try_map(&cols, |&c| combined_statistics_text(table, c))?.join("; ")
        }
        KnowledgeKind::HeaderHierarchy => header_hierarchy_text(table),
        other => {
            return Err(Error::config(format!("{other} is not a metadata kind")));
        }
    })
}

/// One item per requested metadata kind, prioritized in request order.
pub fn render_metadata_bundle(
    table: &Table,
    kinds: &[KnowledgeKind],
    taxonomy: &Taxonomy,
    tokenizer: &Tokenizer,
) -> Result<AugmentationBundle> {
    let mut bundle = AugmentationBundle::new();
    for &kind in kinds {
        let text = metadata_text(table, kind, taxonomy)?;
        bundle.push(KnowledgeItem::new(kind, text, tokenizer));
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::parse_table_json;

    fn tok() -> Tokenizer {
        Tokenizer::heuristic()
    }

    #[test]
    fn dimension_measure_rules() {
        let t = Table::from_strings(
            "",
            ["Price", "Product Name", "Launch", "Item ID"],
            [
                ["3.5", "Widget", "2001", "17"],
                ["2.0", "Gadget", "2002", "18"],
                ["9.9", "Doohickey", "2003", "19"],
            ],
        )
        .unwrap();
        let r = classify_dimension_measure(&t, 0).unwrap();
        assert_eq!(r.role, Role::Measure);
        assert_eq!(r.confidence, 1.0);
        let r = classify_dimension_measure(&t, 1).unwrap();
        assert_eq!(r.role, Role::Dimension);
        assert_eq!(r.confidence, 1.0);
        // distinct four-digit years are identifier-like
        assert_eq!(
            classify_dimension_measure(&t, 2).unwrap().role,
            Role::Dimension
        );
        assert_eq!(
            infer_semantic_field_type(&t, 2, &Taxonomy::default())
                .unwrap()
                .label,
            "Year"
        );
        assert_eq!(
            classify_dimension_measure(&t, 3).unwrap().role,
            Role::Dimension
        );
        assert!(classify_dimension_measure(&t, 4).is_err());
    }

    #[test]
    fn measure_threshold() {
        // 4 of 5 numeric = 0.8 => measure; 3 of 5 => dimension with 0.4
        let t = Table::from_strings(
            "",
            ["a", "b"],
            [["1", "1"], ["2", "2"], ["3", "3"], ["4", "x"], ["y", "z"]],
        )
        .unwrap();
        assert_eq!(
            classify_dimension_measure(&t, 0).unwrap().role,
            Role::Measure
        );
        let r = classify_dimension_measure(&t, 1).unwrap();
        assert_eq!(r.role, Role::Dimension);
        assert!((r.confidence - 0.4).abs() < 1e-12);
    }

    #[test]
    fn combined_statistics_rendering() {
        let t = Table::from_strings("", ["n", "s"], [["1", "a"], ["1", "b"], ["4", "a"]]).unwrap();
        let item = combined_statistics(&t, 0, &tok()).unwrap();
        for name in ["variance", "range", "cardinality", "major", "changeRate"] {
            assert!(item.text.contains(name), "{}", item.text);
        }
        assert_eq!(item.token_cost, tok().count(&item.text));
        assert_eq!(item.kind, KnowledgeKind::Statistics);
        let item = combined_statistics(&t, 1, &tok()).unwrap();
        assert_eq!(
            item.text,
            "column s: cardinality 0.6667, major 0.6667, changeRate 1"
        );
    }

    #[test]
    fn header_hierarchy_items() {
        let t = Table::from_strings("", ["a", "b", "c"], Vec::<Vec<&str>>::new()).unwrap();
        assert_eq!(header_hierarchy_text(&t), "flat header, 3 columns: a, b, c");
        let t = parse_table_json(
            br#"{"title":"","headers":[["H",["a","b"]],"c"],"rows":[["1","2","3"]]}"#,
        )
        .unwrap();
        assert_eq!(
            header_hierarchy_text(&t),
            "hierarchical header, depth 2, 3 columns:\n- H\n  - a\n  - b\n- c"
        );
    }

    #[test]
    fn bundle_rendering() {
        let t = Table::from_strings("", ["a", "b"], [["1", "2"]]).unwrap();
        let tax = Taxonomy::default();
        let b = render_metadata_bundle(&t, &[KnowledgeKind::TableSize], &tax, &tok()).unwrap();
        assert_eq!(b.items.len(), 1);
        assert_eq!(b.items[0].text, "table has 1 rows, 2 columns");
        assert!(render_metadata_bundle(&t, &[], &tax, &tok())
            .unwrap()
            .is_empty());
        let b = render_metadata_bundle(
            &t,
            &[KnowledgeKind::DimensionMeasure, KnowledgeKind::Statistics],
            &tax,
            &tok(),
        )
        .unwrap();
        assert_eq!(
            b.items.iter().map(|i| i.priority).collect::<Vec<_>>(),
            vec![1, 2]
        );
        assert!(render_metadata_bundle(&t, &[KnowledgeKind::SelfPrompt], &tax, &tok()).is_err());
    }

    #[test]
    fn number_formatting() {
        assert_eq!(fmt_num(3.0), "3");
        assert_eq!(fmt_num(2.0 / 3.0), "0.6667");
        assert_eq!(fmt_num(0.5), "0.5");
        assert_eq!(fmt_num(-0.00001), "0");
    }

    #[test]
    fn kinds_parse() {
        assert_eq!(
            "table-size".parse::<KnowledgeKind>().unwrap(),
            KnowledgeKind::TableSize
        );
        assert_eq!(
            "self_prompt".parse::<KnowledgeKind>().unwrap(),
            KnowledgeKind::SelfPrompt
        );
        assert!("nope".parse::<KnowledgeKind>().is_err());
    }
}
