//! Table model, ingestion from CSV and the canonical JSON document, and
//! structural validation.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

static INTEGER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[+-]?\d+$").unwrap());
static REAL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$").unwrap());
static DATE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(\d{4})(?:-(\d{2})(?:-(\d{2}))?)?$").unwrap());

/// Parsed-value tag of a cell. A pure function of the cell text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Integer,
    Real,
    Date,
    Text,
    Empty,
}

impl ValueKind {
    /// Tags `text`. Integer wins over date, so a bare `2008` is an integer.
    pub fn of(text: &str) -> ValueKind {
        let t = text.trim();
        if t.is_empty() {
            return ValueKind::Empty;
        }
        if INTEGER_RE.is_match(t) {
            return ValueKind::Integer;
        }
        if REAL_RE.is_match(t) && t.parse::<f64>().is_ok_and(f64::is_finite) {
            return ValueKind::Real;
        }
        if let Some(c) = DATE_RE.captures(t) {
            let month_ok = c
                .get(2)
                .is_none_or(|m| matches!(m.as_str().parse::<u32>(), Ok(1..=12)));
            let day_ok = c
                .get(3)
                .is_none_or(|d| matches!(d.as_str().parse::<u32>(), Ok(1..=31)));
            if month_ok && day_ok {
                return ValueKind::Date;
            }
        }
        ValueKind::Text
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, ValueKind::Integer | ValueKind::Real)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Cell {
    text: String,
    kind: ValueKind,
}

impl Cell {
    pub fn new(text: impl Into<String>) -> Cell {
        let text = text.into();
        let kind = ValueKind::of(&text);
        Cell { text, kind }
    }

    pub fn empty() -> Cell {
        Cell::new("")
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn kind(&self) -> ValueKind {
        self.kind
    }

    /// Numeric value for integer/real cells.
    pub fn number(&self) -> Option<f64> {
        if self.kind.is_numeric() {
            self.text.trim().parse::<f64>().ok()
        } else {
            None
        }
    }

    pub fn is_empty(&self) -> bool {
        self.kind == ValueKind::Empty
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// One node of the header tree. A node without children is a leaf and
/// owns exactly one column.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HeaderNode {
    pub label: String,
    pub children: Vec<HeaderNode>,
}

impl HeaderNode {
    pub fn leaf(label: impl Into<String>) -> HeaderNode {
        HeaderNode {
            label: label.into(),
            children: Vec::new(),
        }
    }

    pub fn group(label: impl Into<String>, children: Vec<HeaderNode>) -> HeaderNode {
        HeaderNode {
            label: label.into(),
            children,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn leaf_count(&self) -> usize {
        if self.is_leaf() {
            1
        } else {
            self.children.iter().map(HeaderNode::leaf_count).sum()
        }
    }

    pub fn depth(&self) -> usize {
        1 + self
            .children
            .iter()
            .map(HeaderNode::depth)
            .max()
            .unwrap_or(0)
    }

    fn collect_paths<'a>(&'a self, prefix: &mut Vec<&'a str>, out: &mut Vec<Vec<&'a str>>) {
        prefix.push(&self.label);
        if self.is_leaf() {
            out.push(prefix.clone());
        } else {
            for c in &self.children {
                c.collect_paths(prefix, out);
            }
        }
        prefix.pop();
    }

    /// Keeps the leaves whose running index is in `keep`; `None` when no
    /// leaf survives.
    fn prune(&self, next: &mut usize, keep: &BTreeSet<usize>) -> Option<HeaderNode> {
        if self.is_leaf() {
            let idx = *next;
            *next += 1;
            return keep.contains(&idx).then(|| self.clone());
        }
        let children: Vec<_> = self
            .children
            .iter()
            .filter_map(|c| c.prune(next, keep))
            .collect();
        (!children.is_empty()).then(|| HeaderNode::group(self.label.clone(), children))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct HeaderTree {
    pub roots: Vec<HeaderNode>,
}

impl HeaderTree {
    pub fn flat<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> HeaderTree {
        HeaderTree {
            roots: labels.into_iter().map(HeaderNode::leaf).collect(),
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.roots.iter().map(HeaderNode::leaf_count).sum()
    }

    /// 1 for a flat header, greater for a hierarchical one.
    pub fn depth(&self) -> usize {
        self.roots.iter().map(HeaderNode::depth).max().unwrap_or(0)
    }

    pub fn is_flat(&self) -> bool {
        self.depth() <= 1
    }

    /// Root-to-leaf label paths in column order.
    pub fn leaf_paths(&self) -> Vec<Vec<&str>> {
        let mut out = Vec::new();
        let mut prefix = Vec::new();
        for r in &self.roots {
            r.collect_paths(&mut prefix, &mut out);
        }
        out
    }

    pub fn leaf_labels(&self) -> Vec<&str> {
        self.leaf_paths()
            .into_iter()
            .map(|p| *p.last().expect("paths are non-empty"))
            .collect()
    }

    /// Column labels for single-line renderings: the leaf label for flat
    /// headers, the `/`-joined path otherwise.
    pub fn column_labels(&self) -> Vec<String> {
        self.leaf_paths().into_iter().map(|p| p.join("/")).collect()
    }

    /// Sub-tree covering only the given leaf columns.
    pub fn restrict(&self, cols: &BTreeSet<usize>) -> HeaderTree {
        let mut next = 0;
        HeaderTree {
            roots: self
                .roots
                .iter()
                .filter_map(|r| r.prune(&mut next, cols))
                .collect(),
        }
    }
}

/// A titled grid of typed cells under a (possibly hierarchical) header.
/// Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Table {
    id: Option<String>,
    title: String,
    headers: HeaderTree,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    /// Builds a table, checking that every row has one cell per header leaf.
    pub fn new(
        id: Option<String>,
        title: impl Into<String>,
        headers: HeaderTree,
        rows: Vec<Vec<Cell>>,
    ) -> Result<Table> {
        let width = headers.leaf_count();
        if width == 0 {
            return Err(Error::Schema {
                row: 0,
                message: "table must have at least one column".into(),
            });
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(Error::Schema {
                    row: i,
                    message: format!("row has {} cells but header has {width} leaves", r.len()),
                });
            }
        }
        Ok(Table {
            id,
            title: title.into(),
            headers,
            rows,
        })
    }

    /// Convenience constructor for flat-header tables from string rows.
    pub fn from_strings<H, R, C>(title: &str, headers: H, rows: R) -> Result<Table>
    where
        H: IntoIterator,
        H::Item: Into<String>,
        R: IntoIterator<Item = C>,
        C: IntoIterator,
        C::Item: Into<String>,
    {
        let rows = rows
            .into_iter()
            .map(|r| r.into_iter().map(Cell::new).collect())
            .collect();
        Table::new(None, title, HeaderTree::flat(headers), rows)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Table {
        self.id = Some(id.into());
        self
    }

    pub fn id(&self) -> Option<&str> {
        self.id.as_deref()
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn headers(&self) -> &HeaderTree {
        &self.headers
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn col_count(&self) -> usize {
        self.headers.leaf_count()
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&Cell> {
        self.rows.get(row).and_then(|r| r.get(col))
    }

    pub fn column(&self, col: usize) -> Result<Vec<&Cell>> {
        self.check_col(col)?;
        Ok(self.rows.iter().map(|r| &r[col]).collect())
    }

    pub(crate) fn check_row(&self, row: usize) -> Result<()> {
        if row < self.rows.len() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                what: "row",
                index: row,
                len: self.rows.len(),
            })
        }
    }

    pub(crate) fn check_col(&self, col: usize) -> Result<()> {
        let len = self.col_count();
        if col < len {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                what: "column",
                index: col,
                len,
            })
        }
    }

    /// The sub-table of `rows` (in the given order) by `cols` (ascending
    /// column order is kept regardless of the order passed).
    pub fn restrict(&self, rows: &[usize], cols: &[usize]) -> Result<Table> {
        for &r in rows {
            self.check_row(r)?;
        }
        for &c in cols {
            self.check_col(c)?;
        }
        let keep: BTreeSet<usize> = cols.iter().copied().collect();
        let headers = self.headers.restrict(&keep);
        let new_rows = rows
            .iter()
            .map(|&r| keep.iter().map(|&c| self.rows[r][c].clone()).collect())
            .collect();
        Table::new(self.id.clone(), self.title.clone(), headers, new_rows)
    }

    /// Same header and title, different body.
    pub(crate) fn with_rows(&self, rows: Vec<Vec<Cell>>) -> Result<Table> {
        Table::new(
            self.id.clone(),
            self.title.clone(),
            self.headers.clone(),
            rows,
        )
    }
}

/// `(rows, cols)`.
pub fn table_size(table: &Table) -> (usize, usize) {
    (table.row_count(), table.col_count())
}

/// Stable hex digest over title, headers and cells. The id is not part of
/// the content.
pub fn content_hash(table: &Table) -> String {
    let doc = TableDocument::from_table(table);
    let body = serde_json::to_vec(&(&doc.title, &doc.headers, &doc.rows))
        .expect("table documents always serialize");
    hex::encode(Sha256::digest(&body))
}

/// Lowercased, punctuation-stripped word tokens.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// A natural-language question or statement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    text: String,
    tokens: Vec<String>,
}

impl Query {
    pub fn new(text: impl Into<String>) -> Query {
        let text = text.into();
        let tokens = normalize_tokens(&text);
        Query { text, tokens }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

// ---------------------------------------------------------------------------
// JSON document

/// `str | [str, [HeaderSpec]]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HeaderSpec {
    Leaf(String),
    Group(String, Vec<HeaderSpec>),
}

impl HeaderSpec {
    fn to_node(&self) -> HeaderNode {
        match self {
            HeaderSpec::Leaf(l) => HeaderNode::leaf(l.clone()),
            HeaderSpec::Group(l, ch) => {
                HeaderNode::group(l.clone(), ch.iter().map(HeaderSpec::to_node).collect())
            }
        }
    }

    fn from_node(n: &HeaderNode) -> HeaderSpec {
        if n.is_leaf() {
            HeaderSpec::Leaf(n.label.clone())
        } else {
            HeaderSpec::Group(
                n.label.clone(),
                n.children.iter().map(HeaderSpec::from_node).collect(),
            )
        }
    }
}

/// Canonical table interchange document. Field order is the serialized
/// key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default)]
    pub title: String,
    pub headers: Vec<HeaderSpec>,
    pub rows: Vec<Vec<String>>,
}

impl TableDocument {
    pub fn from_table(t: &Table) -> TableDocument {
        TableDocument {
            id: t.id.clone(),
            title: t.title.clone(),
            headers: t.headers.roots.iter().map(HeaderSpec::from_node).collect(),
            rows: t
                .rows
                .iter()
                .map(|r| r.iter().map(|c| c.text.clone()).collect())
                .collect(),
        }
    }

    pub fn into_table(self) -> Result<Table> {
        let headers = HeaderTree {
            roots: self.headers.iter().map(HeaderSpec::to_node).collect(),
        };
        let rows = self
            .rows
            .into_iter()
            .map(|r| r.into_iter().map(Cell::new).collect())
            .collect();
        Table::new(self.id, self.title, headers, rows)
    }
}

pub fn parse_table_json(bytes: &[u8]) -> Result<Table> {
    let doc: TableDocument =
        serde_json::from_slice(bytes).map_err(|e| Error::Document(e.to_string()))?;
    doc.into_table()
}

// ---------------------------------------------------------------------------
// CSV

/// Result of CSV ingestion; padding and header repairs are reported as
/// warnings rather than errors.
#[derive(Debug, Clone)]
pub struct CsvImport {
    pub table: Table,
    pub warnings: Vec<String>,
}

/// Parses RFC-4180 CSV. The first non-title record is the header row.
pub fn parse_csv(bytes: &[u8], has_title: bool) -> Result<CsvImport> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Ingestion(format!("input is not UTF-8: {e}")))?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    if text.trim().is_empty() {
        return Err(Error::Ingestion("empty input".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Ingestion(e.to_string()))?;
        records.push(rec.iter().map(str::to_owned).collect::<Vec<_>>());
    }
    let mut records = records.into_iter();
    let title = if has_title {
        records.next().map(|r| r.join(",")).unwrap_or_default()
    } else {
        String::new()
    };
    let mut header: Vec<String> = records
        .next()
        .ok_or_else(|| Error::Ingestion("no header row".into()))?;
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Ingestion("header row has zero columns".into()));
    }
    let body: Vec<Vec<String>> = records.collect();
    let mut warnings = Vec::new();

    let widest = body.iter().map(Vec::len).max().unwrap_or(0);
    if widest > header.len() {
        warnings.push(format!(
            "rows have up to {widest} cells but header has {}; added placeholder headers",
            header.len()
        ));
        for j in header.len()..widest {
            header.push(format!("column_{}", j + 1));
        }
    }
    let width = header.len();
    let rows = body
        .into_iter()
        .enumerate()
        .map(|(i, mut r)| {
            if r.len() < width {
                warnings.push(format!(
                    "row {i}: padded {} missing cell(s) with empty values",
                    width - r.len()
                ));
                r.resize(width, String::new());
            }
            r.into_iter().map(Cell::new).collect()
        })
        .collect();
    let table = Table::new(None, title, HeaderTree::flat(header), rows)?;
    Ok(CsvImport { table, warnings })
}
