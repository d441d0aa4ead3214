//! Knowledge pulled from outside the table: document references, term
//! explanations for selected cells, and a self-prompting pass.

pub mod cells;
pub mod llm;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{cosine_similarity, Embedder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::metadata::{KnowledgeItem, KnowledgeKind};
use crate::serialize::to_nlsep;
use crate::table::Table;
use crate::tokenizer::Tokenizer;

pub use cells::{
    cell_extraction_prompt, select_cells_heuristic, select_cells_llm, CellSelection, SelectedCell,
    SelectionReason, CRITERIA,
};
pub use llm::{parse_string_list, prompt_digest, LlmClient, LlmClientSpec};

/// Characters of the body that go into a document's embedding.
pub const BODY_HEAD_CHARS: usize = 500;

/// Lowest cosine score at which a document counts as explaining a term.
pub const TERM_MIN_SCORE: f64 = 0.2;

pub const SELF_PROMPT_INSTRUCTION: &str =
    "Identify critical values and ranges of the last table related to the statement";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeDoc {
    pub id: String,
    pub title: String,
    pub body: String,
    pub source: String,
}

impl KnowledgeDoc {
    /// Title followed by the head of the body.
    pub fn embedding_text(&self) -> String {
        let head: String = self.body.chars().take(BODY_HEAD_CHARS).collect();
        format!("{} {}", self.title, head)
    }

    /// Body up to and including the first sentence terminator that ends
    /// the text or is followed by whitespace.
    pub fn first_sentence(&self) -> &str {
        let body = self.body.trim();
        let mut it = body.char_indices().peekable();
        while let Some((i, c)) = it.next() {
            if matches!(c, '.' | '!' | '?') {
                match it.peek() {
                    None => return body,
                    Some((_, n)) if n.is_whitespace() => return &body[..i + c.len_utf8()],
                    _ => {}
                }
            }
        }
        body
    }
}

/// An immutable set of documents with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    docs: Vec<KnowledgeDoc>,
}

impl Corpus {
    pub fn new(docs: Vec<KnowledgeDoc>) -> Result<Corpus> {
        let mut ids = HashSet::new();
        for d in &docs {
            if !ids.insert(d.id.as_str()) {
                return Err(Error::Ingestion(format!(
                    "duplicate document id {:?}",
                    d.id
                )));
            }
        }
        Ok(Corpus { docs })
    }

    /// One JSON document per non-blank line.
    pub fn from_jsonl(text: &str) -> Result<Corpus> {
        let docs = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<KnowledgeDoc>(l)
                    .map_err(|e| Error::Ingestion(format!("corpus line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(docs)
    }

    pub fn load(path: &Path) -> Result<Corpus> {
        Corpus::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn docs(&self) -> &[KnowledgeDoc] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

/// A corpus with its document embeddings computed once.
#[derive(Debug)]
pub struct DocIndex<'a> {
    corpus: &'a Corpus,
    vectors: Vec<EmbeddingVector>,
}

impl<'a> DocIndex<'a> {
    pub fn build(corpus: &'a Corpus, embedder: &Embedder) -> Result<DocIndex<'a>> {
        let texts: Vec<String> = corpus
            .docs
            .iter()
            .map(KnowledgeDoc::embedding_text)
            .collect();
        Ok(DocIndex {
            corpus,
            vectors: embedder.embed_batch(&texts)?,
        })
    }

    /// Up to `top_k` documents by descending cosine to the query, ties
    /// broken by ascending id.
    pub fn search(
        &self,
        query: &str,
        top_k: usize,
        embedder: &Embedder,
    ) -> Result<Vec<(&'a KnowledgeDoc, f64)>> {
        if top_k == 0 {
            return Err(Error::config("retrieval top_k must be at least 1"));
        }
        if self.corpus.is_empty() {
            return Ok(Vec::new());
        }
        let q = embedder.embed(query)?;
        let mut scored = self
            .vectors
            .iter()
            .zip(&self.corpus.docs)
            .map(|(v, d)| Ok((d, cosine_similarity(v, &q)?)))
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.id.cmp(&b.0.id)));
        scored.truncate(top_k);
        Ok(scored)
    }
}

/// Title and leaf header labels joined by spaces; an empty title is left
/// out.
pub fn build_doc_query(table: &Table) -> String {
    let mut parts: Vec<&str> = Vec::new();
    if !table.title().trim().is_empty() {
        parts.push(table.title());
    }
    parts.extend(table.headers().leaf_labels());
    parts.join(" ")
}

pub fn retrieve_docs<'a>(
    query: &str,
    corpus: &'a Corpus,
    top_k: usize,
    embedder: &Embedder,
) -> Result<Vec<(&'a KnowledgeDoc, f64)>> {
    DocIndex::build(corpus, embedder)?.search(query, top_k, embedder)
}

/// `"{title}: {first sentence} ({source})"` for the documents retrieved
/// with the table's title and headers.
pub fn doc_reference_items(
    table: &Table,
    corpus: &Corpus,
    top_k: usize,
    embedder: &Embedder,
    tokenizer: &Tokenizer,
) -> Result<Vec<KnowledgeItem>> {
    Ok(
        retrieve_docs(&build_doc_query(table), corpus, top_k, embedder)?
            .into_iter()
            .map(|(d, _)| {
                let text = format!("{}: {} ({})", d.title, d.first_sentence(), d.source);
                KnowledgeItem::new(KnowledgeKind::DocReference, text, tokenizer)
            })
            .collect(),
    )
}

/// One item per selected cell: the first sentence of the best document
/// scoring at least [`TERM_MIN_SCORE`], or a note that none was found.
pub fn explain_terms(
    selection: &CellSelection,
    table: &Table,
    corpus: &Corpus,
    embedder: &Embedder,
    per_term_top_k: usize,
    tokenizer: &Tokenizer,
) -> Result<Vec<KnowledgeItem>> {
    if selection.is_empty() {
        return Ok(Vec::new());
    }
    let index = DocIndex::build(corpus, embedder)?;
    selection
        .cells
        .iter()
        .map(|sc| {
            let term = table
                .cell(sc.row, sc.col)
                .ok_or(Error::IndexOutOfRange {
                    what: "cell",
                    index: sc.row,
                    len: table.row_count(),
                })?
                .text();
            let hits = index.search(term, per_term_top_k, embedder)?;
            let text = match hits.first() {
                Some((d, s)) if *s >= TERM_MIN_SCORE => {
                    format!("{term} — {} ({})", d.first_sentence(), d.source)
                }
                _ => format!("{term} — no reference found"),
            };
            Ok(KnowledgeItem::new(
                KnowledgeKind::TermExplanation,
                text,
                tokenizer,
            ))
        })
        .collect()
}

pub fn self_prompt_text(table: &Table, statement: &str) -> String {
    format!(
        "{}\n\nStatement: {}\n\n{}",
        to_nlsep(table),
        statement.trim(),
        SELF_PROMPT_INSTRUCTION
    )
}

/// First pass of self-prompting: the model's reply about critical values
/// becomes a knowledge item for the final prompt.
pub fn self_prompt(
    table: &Table,
    statement: &str,
    llm: &LlmClient,
    tokenizer: &Tokenizer,
) -> Result<KnowledgeItem> {
    if statement.trim().is_empty() {
        return Err(Error::Precondition(
            "statement required for self-prompting".into(),
        ));
    }
    let reply = llm.complete(&self_prompt_text(table, statement))?;
    Ok(KnowledgeItem::new(
        KnowledgeKind::SelfPrompt,
        reply.trim(),
        tokenizer,
    ))
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::retrieval::cells::SelectedCell;
    use crate::sampling::fixtures::olympics;

    fn tok() -> Tokenizer {
        Tokenizer::heuristic()
    }

    #[test]
    fn doc_query() {
        let t = Table::from_strings(
            "2023 Fortune 500 Companies",
            ["Revenue", "Employees"],
            Vec::<Vec<&str>>::new(),
        )
        .unwrap();
        assert_eq!(
            build_doc_query(&t),
            "2023 Fortune 500 Companies Revenue Employees"
        );
        let t = Table::from_strings("", ["a", "b"], Vec::<Vec<&str>>::new()).unwrap();
        assert_eq!(build_doc_query(&t), "a b");
    }

    #[test]
    fn corpus_loading() {
        let c = Corpus::from_jsonl(
            "{\"id\":\"a\",\"title\":\"A\",\"body\":\"x\",\"source\":\"s\"}\n\n{\"id\":\"b\",\"title\":\"B\",\"body\":\"y\",\"source\":\"s\"}\n",
        )
        .unwrap();
        assert_eq!(c.len(), 2);
        let dup = "{\"id\":\"a\",\"title\":\"A\",\"body\":\"x\",\"source\":\"s\"}\n".repeat(2);
        assert!(Corpus::from_jsonl(&dup).is_err());
        assert!(Corpus::from_jsonl("not json").is_err());
    }

    #[test]
    fn retrieval_ranks_by_brute_force_cosine() {
        let c = corpus();
        let e = Embedder::default();
        let q = "Summer Olympics Year Host City";
        let got = retrieve_docs(q, &c, 10, &e).unwrap();
        assert_eq!(got.len(), c.len());
        let qv = e.embed(q).unwrap();
        let mut expect: Vec<(String, f64)> = c
            .docs()
            .iter()
            .map(|d| {
                let v = e.embed(&d.embedding_text()).unwrap();
                (d.id.clone(), cosine_similarity(&v, &qv).unwrap())
            })
            .collect();
        expect.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let ids: Vec<&str> = got.iter().map(|(d, _)| d.id.as_str()).collect();
        assert_eq!(ids, expect.iter().map(|x| x.0.as_str()).collect::<Vec<_>>());
        assert_eq!(ids[0], "olympics");
        assert_eq!(retrieve_docs(q, &c, 2, &e).unwrap().len(), 2);
        assert!(retrieve_docs(q, &Corpus::default(), 3, &e)
            .unwrap()
            .is_empty());
        assert!(retrieve_docs(q, &c, 0, &e).is_err());
    }

    #[test]
    fn ties_break_by_id() {
        let c = Corpus::new(vec![doc("b", "same", "text"), doc("a", "same", "text")]).unwrap();
        let got = retrieve_docs("same text", &c, 2, &Embedder::default()).unwrap();
        assert_eq!(got[0].0.id, "a");
    }

    #[test]
    fn first_sentence_rules() {
        assert_eq!(doc("x", "", "One. Two.").first_sentence(), "One.");
        assert_eq!(
            doc("x", "", "Pi is 3.14 roughly! Yes").first_sentence(),
            "Pi is 3.14 roughly!"
        );
        assert_eq!(doc("x", "", "no stop").first_sentence(), "no stop");
    }

    #[test]
    fn term_explanations() {
        let t = Table::from_strings("", ["k", "v"], [["GDP", "qqzzxx"]]).unwrap();
        let sel = CellSelection {
            cells: vec![
                SelectedCell {
                    row: 0,
                    col: 0,
                    reason: SelectionReason::Llm,
                },
                SelectedCell {
                    row: 0,
                    col: 1,
                    reason: SelectionReason::Llm,
                },
            ],
            warnings: Vec::new(),
        };
        let items = explain_terms(&sel, &t, &corpus(), &Embedder::default(), 3, &tok()).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(
            items[0].text,
            "GDP — Gross domestic product (GDP) is the market value of goods and services produced in a period. (wiki)"
        );
        assert_eq!(items[1].text, "qqzzxx — no reference found");
        assert!(items
            .iter()
            .all(|i| i.kind == KnowledgeKind::TermExplanation));
        let none = explain_terms(
            &CellSelection::default(),
            &t,
            &corpus(),
            &Embedder::default(),
            3,
            &tok(),
        );
        assert!(none.unwrap().is_empty());
    }

    #[test]
    fn doc_references() {
        let items =
            doc_reference_items(&olympics(), &corpus(), 1, &Embedder::default(), &tok()).unwrap();
        assert_eq!(items.len(), 1);
        assert!(
            items[0]
                .text
                .starts_with("Summer Olympics: The Summer Olympic Games"),
            "{}",
            items[0].text
        );
    }

    #[test]
    fn self_prompting() {
        let t = olympics();
        let llm = LlmClient::constant("rows 2–3 are critical");
        let item = self_prompt(&t, "London hosted in 2012", &llm, &tok()).unwrap();
        assert_eq!(item.text, "rows 2–3 are critical");
        assert_eq!(item.kind, KnowledgeKind::SelfPrompt);
        let p = self_prompt_text(&t, "London hosted in 2012");
        assert!(p.contains(SELF_PROMPT_INSTRUCTION));
        assert!(p.starts_with("Year | Host City"));
        assert!(matches!(
            self_prompt(&t, "  ", &llm, &tok()),
            Err(Error::Precondition(_))
        ));
        // scripted by digest of the exact prompt
        let llm = LlmClient::stub([(prompt_digest(&p), "digest hit".to_owned())]);
        assert_eq!(
            self_prompt(&t, "London hosted in 2012", &llm, &tok())
                .unwrap()
                .text,
            "digest hit"
        );
    }
}
