//! Rule-based semantic field typing.

use std::collections::HashSet;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::Table;

/// Share of non-empty cells a cell-level rule must match.
pub const CELL_RULE_SHARE: f64 = 0.8;

pub const CATEGORY: &str = "Category";
pub const FREE_TEXT: &str = "FreeText";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleSpec {
    CellRegex(String),
    HeaderRegex(String),
    NumericRange {
        min: f64,
        max: f64,
        #[serde(default)]
        integer_only: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSpec {
    pub label: String,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
    pub priority: i32,
}

#[derive(Debug, Clone)]
enum Rule {
    Cell(Regex),
    Header(Regex),
    Numeric {
        min: f64,
        max: f64,
        integer_only: bool,
    },
}

#[derive(Debug, Clone)]
struct CompiledType {
    label: String,
    rules: Vec<Rule>,
}

/// An ordered set of semantic labels with matching rules. The first label
/// (by ascending priority) with any matching rule wins.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    types: Vec<CompiledType>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SemanticFieldType {
    pub label: String,
    /// Matched rule ids, `"<label>#<rule index>"`, or `"fallback"`.
    pub evidence: Vec<String>,
}

fn compile(re: &str) -> Result<Regex> {
    Regex::new(re).map_err(|e| Error::config(format!("bad taxonomy regex {re:?}: {e}")))
}

impl Taxonomy {
    pub fn from_specs(mut specs: Vec<TypeSpec>) -> Result<Taxonomy> {
        if specs.is_empty() {
            return Err(Error::config("taxonomy is empty"));
        }
        specs.sort_by_key(|s| s.priority);
        let types = specs
            .into_iter()
            .map(|s| {
                let rules = s
                    .rules
                    .iter()
                    .map(|r| {
                        Ok(match r {
                            RuleSpec::CellRegex(re) => Rule::Cell(compile(re)?),
                            RuleSpec::HeaderRegex(re) => Rule::Header(compile(re)?),
                            RuleSpec::NumericRange {
                                min,
                                max,
                                integer_only,
                            } => Rule::Numeric {
                                min: *min,
                                max: *max,
                                integer_only: *integer_only,
                            },
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(CompiledType {
                    label: s.label,
                    rules,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Taxonomy { types })
    }

    pub fn from_json(bytes: &[u8]) -> Result<Taxonomy> {
        let specs: Vec<TypeSpec> =
            serde_json::from_slice(bytes).map_err(|e| Error::config(format!("taxonomy: {e}")))?;
        Taxonomy::from_specs(specs)
    }

    pub fn load(path: &Path) -> Result<Taxonomy> {
        Taxonomy::from_json(&std::fs::read(path)?)
    }

    pub fn labels(&self) -> Vec<&str> {
        self.types.iter().map(|t| t.label.as_str()).collect()
    }

    /// The built-in taxonomy: Money, Ratio/Percent, Year, Identifier,
    /// Count, Location, PersonName, then the Category/FreeText fallbacks.
    pub fn default_specs() -> Vec<TypeSpec> {
        let t = |label: &str, priority, rules| TypeSpec {
            label: label.into(),
            rules,
            priority,
        };
        use RuleSpec::*;
        vec![
            t(
                "Money",
                10,
                vec![
                    CellRegex(r"^[-+]?\s*[$€£¥]\s*[-+]?[\d,]*\.?\d+\s*[kKmMbB]?$".into()),
                    CellRegex(r"(?i)^[-+]?[\d,]*\.?\d+\s*(usd|eur|gbp|jpy|dollars?)$".into()),
                    HeaderRegex(r"(?i)\b(price|cost|revenue|salary|income|profit|budget|usd|dollars?)\b".into()),
                ],
            ),
            t(
                "Ratio/Percent",
                20,
                vec![
                    CellRegex(r"^[-+]?\d*\.?\d+\s*%$".into()),
                    HeaderRegex(r"(?i)\b(percent(age)?|ratio|rate|share|pct)\b|%".into()),
                ],
            ),
            t(
                "Year",
                30,
                vec![
                    HeaderRegex(r"(?i)\b(year|season)s?\b".into()),
                    NumericRange {
                        min: 1000.0,
                        max: 2100.0,
                        integer_only: true,
                    },
                ],
            ),
            t(
                "Identifier",
                40,
                vec![
                    HeaderRegex(r"(?i)\b(id|code|key|no|isbn|sku)\b".into()),
                    CellRegex(r"^[A-Z]{1,4}-?\d{2,}$".into()),
                ],
            ),
            t(
                "Count",
                50,
                vec![
                    HeaderRegex(r"(?i)\b(count|number|num|total|participants|population|employees|votes|attendance)\b".into()),
                ],
            ),
            t(
                "Location",
                60,
                vec![HeaderRegex(
                    r"(?i)\b(city|country|state|location|place|venue|region|capital|host|nation|province)\b".into(),
                )],
            ),
            t(
                "PersonName",
                70,
                vec![HeaderRegex(
                    r"(?i)\b(player|person|author|director|driver|athlete|coach|winner|candidate|artist)\b".into(),
                )],
            ),
            t(CATEGORY, 80, Vec::new()),
            t(FREE_TEXT, 90, Vec::new()),
        ]
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Taxonomy::from_specs(Taxonomy::default_specs()).expect("built-in taxonomy compiles")
    }
}

pub fn infer_semantic_field_type(
    table: &Table,
    col: usize,
    taxonomy: &Taxonomy,
) -> Result<SemanticFieldType> {
    let cells: Vec<_> = table
        .column(col)?
        .into_iter()
        .filter(|c| !c.is_empty())
        .collect();
    let header = table.headers().leaf_labels()[col];
    let share =
        |hit: usize| !cells.is_empty() && hit as f64 / cells.len() as f64 >= CELL_RULE_SHARE;

    for t in &taxonomy.types {
        let evidence: Vec<String> = t
            .rules
            .iter()
            .enumerate()
            .filter(|(_, r)| match r {
                Rule::Header(re) => re.is_match(header),
                Rule::Cell(re) => share(
                    cells
                        .iter()
                        .filter(|c| re.is_match(c.text().trim()))
                        .count(),
                ),
                Rule::Numeric {
                    min,
                    max,
                    integer_only,
                } => share(
                    cells
                        .iter()
                        .filter_map(|c| c.number())
                        .filter(|x| {
                            (*min..=*max).contains(x) && (!integer_only || x.fract() == 0.0)
                        })
                        .count(),
                ),
            })
            .map(|(i, _)| format!("{}#{i}", t.label))
            .collect();
        if !evidence.is_empty() {
            return Ok(SemanticFieldType {
                label: t.label.clone(),
                evidence,
            });
        }
    }

    let texts: Vec<&str> = cells
        .iter()
        .filter(|c| !c.kind().is_numeric())
        .map(|c| c.text())
        .collect();
    let distinct = texts.iter().collect::<HashSet<_>>().len();
    let cardinality = if texts.is_empty() {
        1.0
    } else {
        distinct as f64 / texts.len() as f64
    };
    Ok(SemanticFieldType {
        label: if cardinality < 0.5 {
            CATEGORY
        } else {
            FREE_TEXT
        }
        .to_owned(),
        evidence: vec!["fallback".to_owned()],
    })
}
