//! End-to-end pipeline: sample, augment, pack. Also hosts the table
//! manager and the sweep and recall harnesses.

mod config;
mod harness;
mod manager;

use crate::embed::Embedder;
use crate::error::{Error, Result, Stage};
use crate::metadata::{render_metadata_bundle, AugmentationBundle, KnowledgeKind, Taxonomy};
use crate::packing::{allocate_tokens, pack_with_layout, AllocationRatio, PackedPrompt};
use crate::retrieval::{
    doc_reference_items, explain_terms, select_cells_heuristic, select_cells_llm, self_prompt,
    Corpus, LlmClient, CRITERIA,
};
use crate::sampling::{sample, SubTable};
use crate::serialize::{serialize, SerializationFormat};
use crate::table::{Query, Table};
use crate::tokenizer::Tokenizer;

pub use config::{CellSelectionMode, ProviderConfig, KEYS};
pub use harness::{
    evaluate_recall, recall, sweep_allocation, MethodRecall, RecallFixture, SweepReport, SweepRow,
    RANDOM_SEEDS, SWEEP_CSV_HEADER,
};
pub use manager::{derived_id, ManagedTable, SyncResult, TableManager};

/// Budget settings that a sweep varies per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackSettings {
    pub format: SerializationFormat,
    pub budget: usize,
    pub ratio: AllocationRatio,
}

/// A configured pipeline with its clients and table manager.
#[derive(Debug)]
pub struct Provider {
    config: ProviderConfig,
    tokenizer: Tokenizer,
    embedder: Embedder,
    llm: Option<LlmClient>,
    corpus: Corpus,
    taxonomy: Taxonomy,
    manager: TableManager,
}

impl Provider {
    pub fn new(config: ProviderConfig) -> Result<Provider> {
        config.validate()?;
        let corpus = match &config.corpus_path {
            Some(p) => Corpus::load(p)?,
            None => Corpus::default(),
        };
        let taxonomy = match &config.taxonomy_path {
            Some(p) => Taxonomy::load(p)?,
            None => Taxonomy::default(),
        };
        let manager = match &config.journal_path {
            Some(p) => TableManager::open(p)?,
            None => TableManager::new(),
        };
        Ok(Provider {
            tokenizer: Tokenizer::new(config.tokenizer.clone()),
            embedder: Embedder::from_spec(&config.embedder),
            llm: config.llm.as_ref().map(LlmClient::from_spec),
            corpus,
            taxonomy,
            manager,
            config,
        })
    }

    /// Replaces the corpus loaded from configuration.
    pub fn with_corpus(mut self, corpus: Corpus) -> Provider {
        self.corpus = corpus;
        self
    }

    pub fn with_llm(mut self, llm: LlmClient) -> Provider {
        self.llm = Some(llm);
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn manager(&self) -> &TableManager {
        &self.manager
    }

    pub fn settings(&self) -> PackSettings {
        PackSettings {
            format: self.config.format,
            budget: self.config.budget,
            ratio: self.config.ratio,
        }
    }

    /// Full pipeline on a registered table.
    pub fn provide(&self, query: &Query, table_id: &str) -> Result<PackedPrompt> {
        let managed = self.manager.get(table_id)?;
        self.provide_table(query, &managed.table)
    }

    pub fn provide_table(&self, query: &Query, table: &Table) -> Result<PackedPrompt> {
        self.provide_with(query, table, self.settings())
    }

    /// Samples the table to the table share of the budget (unless it is
    /// below the trigger size), builds the configured augmentation from
    /// the full table, and packs.
    pub fn provide_with(
        &self,
        query: &Query,
        table: &Table,
        settings: PackSettings,
    ) -> Result<PackedPrompt> {
        let (table_budget, _) =
            allocate_tokens(settings.budget, settings.ratio).map_err(|e| e.at(Stage::Packing))?;
        let sub = self.sample_stage(query, table, table_budget, settings.format)?;
        let bundle = self
            .augment(query, table, &sub)
            .map_err(|e| e.at(Stage::Augmentation))?;
        let mut packed = pack_with_layout(
            &sub,
            &bundle,
            settings.format,
            settings.budget,
            settings.ratio,
            &self.tokenizer,
            self.config.layout,
        )
        .map_err(|e| e.at(Stage::Packing))?;
        packed.manifest.sampling_method = sub.method().map(|m| m.name().to_owned());
        packed.manifest.augmentation_kinds = self.config.augmentation.clone();
        Ok(packed)
    }

    fn sample_stage(
        &self,
        query: &Query,
        table: &Table,
        table_budget: usize,
        format: SerializationFormat,
    ) -> Result<SubTable> {
        if let Some(trigger) = self.config.trigger_tokens {
            if self.tokenizer.count(&serialize(table, format)) <= trigger {
                return Ok(SubTable::full(table));
            }
        }
        sample(
            table,
            query,
            &self.config.sampling,
            table_budget,
            &self.tokenizer,
            &self.embedder,
        )
        .map_err(|e| e.at(Stage::Sampling))
    }

    fn llm(&self) -> Result<&LlmClient> {
        self.llm
            .as_ref()
            .ok_or_else(|| Error::config("no llm configured"))
    }

    /// The configured augmentation items in configuration order. Metadata
    /// describes the full table; term explanations and self-prompting see
    /// the sampled one.
    pub fn augment(
        &self,
        query: &Query,
        table: &Table,
        sub: &SubTable,
    ) -> Result<AugmentationBundle> {
        let mut bundle = AugmentationBundle::new();
        for &kind in &self.config.augmentation {
            if kind.is_metadata() {
                let b = render_metadata_bundle(table, &[kind], &self.taxonomy, &self.tokenizer)?;
                bundle.extend(b.items);
                continue;
            }
            match kind {
                KnowledgeKind::DocReference => bundle.extend(doc_reference_items(
                    table,
                    &self.corpus,
                    self.config.retrieval_top_k,
                    &self.embedder,
                    &self.tokenizer,
                )?),
                KnowledgeKind::TermExplanation => {
                    let selection = match self.config.cell_selection {
                        CellSelectionMode::Heuristic => select_cells_heuristic(sub.table(), query),
                        CellSelectionMode::Llm => {
                            select_cells_llm(sub.table(), &CRITERIA, self.llm()?)?
                        }
                    };
                    bundle.extend(explain_terms(
                        &selection,
                        sub.table(),
                        &self.corpus,
                        &self.embedder,
                        self.config.retrieval_top_k,
                        &self.tokenizer,
                    )?);
                }
                KnowledgeKind::SelfPrompt => {
                    bundle.push(self_prompt(
                        sub.table(),
                        query.text(),
                        self.llm()?,
                        &self.tokenizer,
                    )?);
                }
                _ => unreachable!("metadata kinds handled above"),
            }
        }
        Ok(bundle)
    }
}
