//! Deterministic token counting.
//!
//! Text is split into pieces: maximal runs of alphanumeric characters, and
//! every other non-whitespace character on its own. Whitespace separates
//! pieces and costs nothing. Both tokenizer kinds count piece by piece, so
//! counts are additive across any whitespace boundary:
//! `count(a + "\n" + b) == count(a) + count(b)`.

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

pub const DEFAULT_CHARS_PER_TOKEN: usize = 4;

/// An upper bound on prompt size, in tokens. Always at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenBudget(usize);

impl TokenBudget {
    pub fn new(limit: usize) -> Result<TokenBudget> {
        if limit == 0 {
            return Err(Error::config("token budget must be at least 1"));
        }
        Ok(TokenBudget(limit))
    }

    pub fn limit(self) -> usize {
        self.0
    }
}

/// Greedy longest-match vocabulary loaded from a file with one entry per
/// line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    entries: HashSet<String>,
    max_chars: usize,
}

impl Vocabulary {
    pub fn from_entries<I, S>(entries: I) -> Vocabulary
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entries: HashSet<String> = entries
            .into_iter()
            .map(Into::into)
            .filter(|e: &String| !e.is_empty())
            .collect();
        let max_chars = entries.iter().map(|e| e.chars().count()).max().unwrap_or(1);
        Vocabulary { entries, max_chars }
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read vocabulary {}: {e}", path.display()))
        })?;
        Ok(Vocabulary::from_entries(text.lines().map(str::trim_end)))
    }

    fn count_piece(&self, piece: &[char]) -> usize {
        let mut n = 0;
        let mut i = 0;
        while i < piece.len() {
            let longest = (1..=self.max_chars.min(piece.len() - i))
                .rev()
                .find(|&len| {
                    let s: String = piece[i..i + len].iter().collect();
                    self.entries.contains(&s)
                })
                .unwrap_or(1);
            i += longest;
            n += 1;
        }
        n
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenizerSpec {
    /// Each piece costs `max(1, ceil(chars / chars_per_token))`.
    Heuristic { chars_per_token: usize },
    /// Each piece costs the number of greedy longest-match vocabulary hits;
    /// characters outside the vocabulary cost one each.
    Vocabulary(Arc<Vocabulary>),
}

impl Default for TokenizerSpec {
    fn default() -> Self {
        TokenizerSpec::Heuristic {
            chars_per_token: DEFAULT_CHARS_PER_TOKEN,
        }
    }
}

impl TokenizerSpec {
    /// Builds a spec from the `tokenizer.kind` config value.
    pub fn from_config(
        kind: &str,
        chars_per_token: Option<usize>,
        vocab_path: Option<&Path>,
    ) -> Result<TokenizerSpec> {
        match kind {
            "heuristic" => {
                let d = chars_per_token.unwrap_or(DEFAULT_CHARS_PER_TOKEN);
                if d == 0 {
                    return Err(Error::config("tokenizer.chars_per_token must be >= 1"));
                }
                Ok(TokenizerSpec::Heuristic { chars_per_token: d })
            }
            "external-vocabulary" | "vocabulary" => {
                let path = vocab_path.ok_or_else(|| {
                    Error::config("tokenizer.vocab_path is required for external-vocabulary")
                })?;
                Ok(TokenizerSpec::Vocabulary(Arc::new(Vocabulary::load(path)?)))
            }
            other => Err(Error::config(format!("unknown tokenizer kind {other:?}"))),
        }
    }
}

/// Token counter bound to a spec.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Tokenizer {
    spec: TokenizerSpec,
}

impl Tokenizer {
    pub fn new(spec: TokenizerSpec) -> Tokenizer {
        Tokenizer { spec }
    }

    pub fn heuristic() -> Tokenizer {
        Tokenizer::default()
    }

    pub fn spec(&self) -> &TokenizerSpec {
        &self.spec
    }

    pub fn count(&self, text: &str) -> usize {
        count_tokens(text, &self.spec)
    }
}

pub fn count_tokens(text: &str, spec: &TokenizerSpec) -> usize {
    let mut total = 0;
    let mut run: Vec<char> = Vec::new();
    let flush = |run: &mut Vec<char>, total: &mut usize| {
        if !run.is_empty() {
            *total += piece_cost(run, spec);
            run.clear();
        }
    };
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            run.push(ch);
        } else {
            flush(&mut run, &mut total);
            if !ch.is_whitespace() {
                total += piece_cost(&[ch], spec);
            }
        }
    }
    flush(&mut run, &mut total);
    total
}

fn piece_cost(piece: &[char], spec: &TokenizerSpec) -> usize {
    match spec {
        TokenizerSpec::Heuristic { chars_per_token } => {
            piece.len().div_ceil(*chars_per_token).max(1)
        }
        TokenizerSpec::Vocabulary(v) => v.count_piece(piece),
    }
}
