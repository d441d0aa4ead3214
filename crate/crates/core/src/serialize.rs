//! Canonical table serializations.
//!
//! * `NLSep`: rows joined by `\n`, cells by `" | "`; no trailing newline.
//! * `CSV`: RFC-4180, `\n` line endings, trailing newline.
//! * `Markdown`: pipe table with a `---` separator row.
//! * `JSON`: the canonical table document, compact, fixed key order.
//! * `HTML`: `<table><tr><th>..</th></tr><tr><td>..</td></tr></table>`,
//!   hierarchical headers via `colspan`/`rowspan`.
//! * `XML`: `<table><header>..</header><row><cell>..</cell></row></table>`.
//!
//! Only the JSON form carries the title and id. Single-line header formats
//! (NLSep, CSV, Markdown) label hierarchical columns with their `/`-joined
//! header path.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::table::{HeaderNode, Table, TableDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SerializationFormat {
    #[serde(rename = "html")]
    Html,
    #[serde(rename = "xml")]
    Xml,
    #[serde(rename = "json")]
    Json,
    #[serde(rename = "csv")]
    Csv,
    #[serde(rename = "markdown")]
    Markdown,
    #[serde(rename = "nlsep")]
    NlSep,
}

impl SerializationFormat {
    pub const ALL: [SerializationFormat; 6] = [
        SerializationFormat::Html,
        SerializationFormat::Xml,
        SerializationFormat::Json,
        SerializationFormat::Csv,
        SerializationFormat::Markdown,
        SerializationFormat::NlSep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SerializationFormat::Html => "html",
            SerializationFormat::Xml => "xml",
            SerializationFormat::Json => "json",
            SerializationFormat::Csv => "csv",
            SerializationFormat::Markdown => "markdown",
            SerializationFormat::NlSep => "nlsep",
        }
    }
}

impl fmt::Display for SerializationFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SerializationFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().replace(['+', '-', '_'], "").as_str() {
            "html" => Ok(SerializationFormat::Html),
            "xml" => Ok(SerializationFormat::Xml),
            "json" => Ok(SerializationFormat::Json),
            "csv" => Ok(SerializationFormat::Csv),
            "markdown" | "md" => Ok(SerializationFormat::Markdown),
            "nlsep" => Ok(SerializationFormat::NlSep),
            _ => Err(Error::Config(format!("unknown serialization format {s:?}"))),
        }
    }
}

pub fn serialize(table: &Table, format: SerializationFormat) -> String {
    match format {
        SerializationFormat::NlSep => to_nlsep(table),
        SerializationFormat::Csv => to_csv(table),
        SerializationFormat::Markdown => to_markdown(table),
        SerializationFormat::Json => to_json(table),
        SerializationFormat::Html => to_html(table),
        SerializationFormat::Xml => to_xml(table),
    }
}

fn nlsep_cell(s: &str) -> String {
    s.replace('|', "\\|").replace(['\r', '\n'], " ")
}

/// Header line of the NLSep rendering.
pub fn nlsep_header(table: &Table) -> String {
    table
        .headers()
        .column_labels()
        .iter()
        .map(|l| nlsep_cell(l))
        .collect::<Vec<_>>()
        .join(" | ")
}

/// One body line of the NLSep rendering.
pub fn nlsep_row(table: &Table, row: usize) -> String {
    table.rows()[row]
        .iter()
        .map(|c| nlsep_cell(c.text()))
        .collect::<Vec<_>>()
        .join(" | ")
}

pub fn to_nlsep(table: &Table) -> String {
    let mut out = nlsep_header(table);
    for r in 0..table.row_count() {
        out.push('\n');
        out.push_str(&nlsep_row(table, r));
    }
    out
}

pub fn to_csv(table: &Table) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(table.headers().column_labels())
        .expect("writing to memory");
    for row in table.rows() {
        w.write_record(row.iter().map(|c| c.text()))
            .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is UTF-8")
}

fn md_cell(s: &str) -> String {
    s.replace('|', "\\|")
        .replace("\r\n", "<br>")
        .replace(['\r', '\n'], "<br>")
}

pub fn to_markdown(table: &Table) -> String {
    let labels = table.headers().column_labels();
    let line = |cells: Vec<String>| format!("| {} |", cells.join(" | "));
    let mut lines = vec![
        line(labels.iter().map(|l| md_cell(l)).collect()),
        line(vec!["---".to_owned(); labels.len()]),
    ];
    for row in table.rows() {
        lines.push(line(row.iter().map(|c| md_cell(c.text())).collect()));
    }
    lines.join("\n")
}

pub fn to_json(table: &Table) -> String {
    serde_json::to_string(&TableDocument::from_table(table)).expect("table documents serialize")
}

fn escape_markup(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn html_header_rows(roots: &[HeaderNode], depth: usize) -> Vec<String> {
    let mut rows = vec![String::new(); depth];
    fn walk(n: &HeaderNode, level: usize, depth: usize, rows: &mut [String]) {
        let mut attrs = String::new();
        if n.is_leaf() {
            if depth - level > 1 {
                let _ = write!(attrs, " rowspan=\"{}\"", depth - level);
            }
        } else {
            let span = n.leaf_count();
            if span > 1 {
                let _ = write!(attrs, " colspan=\"{span}\"");
            }
        }
        let _ = write!(rows[level], "<th{attrs}>{}</th>", escape_markup(&n.label));
        for c in &n.children {
            walk(c, level + 1, depth, rows);
        }
    }
    for r in roots {
        walk(r, 0, depth, &mut rows);
    }
    rows
}

pub fn to_html(table: &Table) -> String {
    let mut out = String::from("<table>");
    let depth = table.headers().depth().max(1);
    for r in html_header_rows(&table.headers().roots, depth) {
        let _ = write!(out, "<tr>{r}</tr>");
    }
    for row in table.rows() {
        out.push_str("<tr>");
        for c in row {
            let _ = write!(out, "<td>{}</td>", escape_markup(c.text()));
        }
        out.push_str("</tr>");
    }
    out.push_str("</table>");
    out
}

fn xml_header(n: &HeaderNode, out: &mut String) {
    if n.is_leaf() {
        let _ = write!(out, "<col>{}</col>", escape_markup(&n.label));
    } else {
        let _ = write!(out, "<group label=\"{}\">", escape_markup(&n.label));
        for c in &n.children {
            xml_header(c, out);
        }
        out.push_str("</group>");
    }
}

pub fn to_xml(table: &Table) -> String {
    let mut out = String::from("<table><header>");
    for r in &table.headers().roots {
        xml_header(r, &mut out);
    }
    out.push_str("</header>");
    for row in table.rows() {
        out.push_str("<row>");
        for c in row {
            let _ = write!(out, "<cell>{}</cell>", escape_markup(c.text()));
        }
        out.push_str("</row>");
    }
    out.push_str("</table>");
    out
}

/// Number of body rows in a serialized table segment, recovered from the
/// format's row delimiters. Used to audit packed prompts.
pub fn count_body_rows(
    text: &str,
    format: SerializationFormat,
    header_depth: usize,
) -> Option<usize> {
    match format {
        SerializationFormat::NlSep => Some(text.split('\n').count().saturating_sub(1)),
        SerializationFormat::Markdown => Some(text.split('\n').count().saturating_sub(2)),
        SerializationFormat::Html => Some(
            text.matches("<tr>")
                .count()
                .saturating_sub(header_depth.max(1)),
        ),
        SerializationFormat::Xml => Some(text.matches("<row>").count()),
        SerializationFormat::Csv => crate::table::parse_csv(text.as_bytes(), false)
            .ok()
            .map(|i| i.table.row_count()),
        SerializationFormat::Json => crate::table::parse_table_json(text.as_bytes())
            .ok()
            .map(|t| t.row_count()),
    }
}
