//! Provider configuration from a flat key-value document.
//!
//! The file is TOML; nested tables and dotted keys are flattened to
//! `section.key` before lookup, so `[sampling]\nkind = "evenly"` and
//! `sampling.kind = "evenly"` are equivalent. Relative paths resolve
//! against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::embed::{EmbedderSpec, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::metadata::KnowledgeKind;
use crate::packing::{AllocationRatio, PromptLayout};
use crate::retrieval::llm::{LlmClient, LlmClientSpec};
use crate::sampling::SamplingMethod;
use crate::serialize::SerializationFormat;
use crate::tokenizer::TokenizerSpec;

pub const KEYS: [&str; 30] = [
    "sampling.kind",
    "sampling.seed",
    "sampling.k",
    "sampling.ngram",
    "sampling.n_clusters",
    "sampling.per_cluster_k",
    "sampling.grounding",
    "sampling.max_columns",
    "sampling.trigger_tokens",
    "augmentation.kinds",
    "augmentation.cell_selection",
    "packing.format",
    "packing.budget",
    "packing.ratio",
    "packing.layout",
    "tokenizer.kind",
    "tokenizer.chars_per_token",
    "tokenizer.vocab_path",
    "embedder.kind",
    "embedder.dim",
    "embedder.endpoint",
    "embedder.model",
    "llm.kind",
    "llm.endpoint",
    "llm.model",
    "llm.script_path",
    "corpus.path",
    "retrieval.top_k",
    "taxonomy.path",
    "manager.journal",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum CellSelectionMode {
    #[default]
    Heuristic,
    Llm,
}

impl FromStr for CellSelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heuristic" => Ok(CellSelectionMode::Heuristic),
            "llm" => Ok(CellSelectionMode::Llm),
            _ => Err(Error::config(format!("unknown cell selection mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderConfig {
    pub sampling: SamplingMethod,
    /// Serialized size (in the packing format) above which sampling runs;
    /// `None` always samples.
    pub trigger_tokens: Option<usize>,
    pub augmentation: Vec<KnowledgeKind>,
    pub cell_selection: CellSelectionMode,
    pub format: SerializationFormat,
    pub budget: usize,
    pub ratio: AllocationRatio,
    pub layout: PromptLayout,
    pub tokenizer: TokenizerSpec,
    pub embedder: EmbedderSpec,
    pub llm: Option<LlmClientSpec>,
    pub corpus_path: Option<PathBuf>,
    pub retrieval_top_k: usize,
    pub taxonomy_path: Option<PathBuf>,
    pub journal_path: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            sampling: SamplingMethod::QueryBased { grounding: None },
            trigger_tokens: None,
            augmentation: Vec::new(),
            cell_selection: CellSelectionMode::Heuristic,
            format: SerializationFormat::NlSep,
            budget: 1024,
            ratio: AllocationRatio::default(),
            layout: PromptLayout::default(),
            tokenizer: TokenizerSpec::default(),
            embedder: EmbedderSpec::default(),
            llm: None,
            corpus_path: None,
            retrieval_top_k: 3,
            taxonomy_path: None,
            journal_path: None,
        }
    }
}

type Flat = BTreeMap<String, toml::Value>;

fn flatten(prefix: &str, table: &toml::Table, out: &mut Flat) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

struct Reader {
    flat: Flat,
    base: PathBuf,
}

impl Reader {
    fn str(&self, key: &str) -> Result<Option<String>> {
        match self.flat.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(Error::config(format!(
                "{key} must be a string, got {other}"
            ))),
        }
    }

    fn uint(&self, key: &str) -> Result<Option<u64>> {
        match self.flat.get(key) {
            None => Ok(None),
            Some(toml::Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(other) => Err(Error::config(format!(
                "{key} must be a non-negative integer, got {other}"
            ))),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.uint(key)?.map(|v| v as usize).unwrap_or(default))
    }

    fn bool(&self, key: &str) -> Result<Option<bool>> {
        match self.flat.get(key) {
            None => Ok(None),
            Some(toml::Value::Boolean(b)) => Ok(Some(*b)),
            Some(other) => Err(Error::config(format!(
                "{key} must be a boolean, got {other}"
            ))),
        }
    }

    fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.str(key)?.map(|p| self.base.join(p)))
    }

    /// A list given either as an array of strings or a comma-separated
    /// string.
    fn list(&self, key: &str) -> Result<Option<Vec<String>>> {
        match self.flat.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(
                s.split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(str::to_owned)
                    .collect(),
            )),
            Some(toml::Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    toml::Value::String(s) => Ok(s.clone()),
                    other => Err(Error::config(format!(
                        "{key} entries must be strings, got {other}"
                    ))),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(other) => Err(Error::config(format!("{key} must be a list, got {other}"))),
        }
    }
}

impl ProviderConfig {
    pub fn load(path: &Path) -> Result<ProviderConfig> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        ProviderConfig::from_toml_str(&text, base)
    }

    pub fn from_toml_str(text: &str, base: &Path) -> Result<ProviderConfig> {
        let doc: toml::Table = text
            .parse()
            .map_err(|e| Error::config(format!("config: {e}")))?;
        let mut flat = Flat::new();
        flatten("", &doc, &mut flat);
        if let Some(k) = flat.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::config(format!("unknown config key {k:?}")));
        }
        let r = Reader {
            flat,
            base: base.to_path_buf(),
        };
        let d = ProviderConfig::default();

        let seed = r.uint("sampling.seed")?.unwrap_or(0);
        let sampling = match r.str("sampling.kind")?.as_deref().unwrap_or("query-based") {
            "random" => SamplingMethod::Random { seed },
            "evenly" => SamplingMethod::Evenly,
            "content-snapshot" => SamplingMethod::ContentSnapshot {
                k: r.usize_or("sampling.k", 1)?,
                ngram: r.usize_or("sampling.ngram", 2)?,
            },
            "query-based" => SamplingMethod::QueryBased {
                grounding: if r.bool("sampling.grounding")?.unwrap_or(false) {
                    Some(r.usize_or("sampling.max_columns", 3)?)
                } else {
                    None
                },
            },
            "clustering" => SamplingMethod::Clustering {
                n_clusters: r.usize_or("sampling.n_clusters", 3)?,
                per_cluster_k: r.usize_or("sampling.per_cluster_k", 1)?,
                seed,
            },
            other => return Err(Error::config(format!("unknown sampling kind {other:?}"))),
        };

        let augmentation = r
            .list("augmentation.kinds")?
            .unwrap_or_default()
            .iter()
            .map(|k| k.parse())
            .collect::<Result<Vec<KnowledgeKind>>>()?;
        let cell_selection = match r.str("augmentation.cell_selection")? {
            Some(s) => s.parse()?,
            None => d.cell_selection,
        };

        let format = match r.str("packing.format")? {
            Some(s) => s.parse()?,
            None => d.format,
        };
        let ratio = match r.str("packing.ratio")? {
            Some(s) => s.parse()?,
            None => d.ratio,
        };
        let layout = match r.str("packing.layout")? {
            Some(s) => s.parse()?,
            None => d.layout,
        };

        let vocab = r.path("tokenizer.vocab_path")?;
        let tokenizer = TokenizerSpec::from_config(
            r.str("tokenizer.kind")?.as_deref().unwrap_or("heuristic"),
            r.uint("tokenizer.chars_per_token")?.map(|v| v as usize),
            vocab.as_deref(),
        )?;

        let embedder = match r.str("embedder.kind")?.as_deref().unwrap_or("local") {
            "local" | "local-deterministic" => EmbedderSpec::Local {
                dim: r.usize_or("embedder.dim", DEFAULT_DIM)?,
            },
            "remote" => EmbedderSpec::Remote {
                endpoint: r.str("embedder.endpoint")?.ok_or_else(|| {
                    Error::config("embedder.endpoint is required for a remote embedder")
                })?,
                model: r.str("embedder.model")?.unwrap_or_default(),
            },
            other => return Err(Error::config(format!("unknown embedder kind {other:?}"))),
        };

        let llm = match r.str("llm.kind")?.as_deref() {
            None => None,
            Some("remote") => Some(LlmClientSpec::Remote {
                endpoint: r
                    .str("llm.endpoint")?
                    .ok_or_else(|| Error::config("llm.endpoint is required for a remote llm"))?,
                model: r.str("llm.model")?.unwrap_or_default(),
            }),
            Some("scripted-stub") => {
                let path = r.path("llm.script_path")?.ok_or_else(|| {
                    Error::config("llm.script_path is required for a scripted stub")
                })?;
                match LlmClient::load_script(&path)? {
                    LlmClient::Stub { script } => Some(LlmClientSpec::ScriptedStub { script }),
                    LlmClient::Remote { .. } => unreachable!("load_script builds a stub"),
                }
            }
            Some(other) => return Err(Error::config(format!("unknown llm kind {other:?}"))),
        };

        let cfg = ProviderConfig {
            sampling,
            trigger_tokens: r.uint("sampling.trigger_tokens")?.map(|v| v as usize),
            augmentation,
            cell_selection,
            format,
            budget: r.usize_or("packing.budget", d.budget)?,
            ratio,
            layout,
            tokenizer,
            embedder,
            llm,
            corpus_path: r.path("corpus.path")?,
            retrieval_top_k: r.usize_or("retrieval.top_k", d.retrieval_top_k)?,
            taxonomy_path: r.path("taxonomy.path")?,
            journal_path: r.path("manager.journal")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field checks.
    pub fn validate(&self) -> Result<()> {
        self.sampling.validate()?;
        if self.budget == 0 {
            return Err(Error::config("packing.budget must be at least 1"));
        }
        if self.retrieval_top_k == 0 {
            return Err(Error::config("retrieval.top_k must be at least 1"));
        }
        let needs_corpus = self.augmentation.iter().any(|k| {
            matches!(
                k,
                KnowledgeKind::DocReference | KnowledgeKind::TermExplanation
            )
        });
        if needs_corpus && self.corpus_path.is_none() {
            return Err(Error::config(
                "doc-reference and term-explanation augmentation need corpus.path",
            ));
        }
        let needs_llm = self.augmentation.contains(&KnowledgeKind::SelfPrompt)
            || (self.augmentation.contains(&KnowledgeKind::TermExplanation)
                && self.cell_selection == CellSelectionMode::Llm);
        if needs_llm && self.llm.is_none() {
            return Err(Error::config(
                "self-prompt and llm cell selection need an llm.kind",
            ));
        }
        let mut seen = Vec::new();
        for k in &self.augmentation {
            if seen.contains(k) {
                return Err(Error::config(format!("augmentation kind {k} listed twice")));
            }
            seen.push(*k);
        }
        Ok(())
    }
}
