//! Table provider toolkit: pick the rows of a table that matter for a
//! question, attach metadata and retrieved knowledge, and pack both into a
//! prompt that never exceeds a token budget.
//!
//! The pipeline has three stages, each usable on its own:
//!
//! * [`sampling`] ranks rows (and optionally columns) and selects a
//!   sub-table that fits a budget.
//! * [`metadata`] and [`retrieval`] produce [`KnowledgeItem`]s describing the
//!   table or explaining its contents.
//! * [`packing`] splits the budget between table and knowledge, truncates
//!   whole rows and serializes to one of six formats.
//!
//! [`provider`] wires the stages together and hosts the versioned table
//! manager.

pub mod embed;
pub mod error;
pub mod exec;
pub mod metadata;
pub mod packing;
pub mod provider;
pub mod retrieval;
pub mod sampling;
pub mod serialize;
pub mod table;
pub mod tokenizer;

pub use error::{Error, Result, Stage};
pub use metadata::{AugmentationBundle, KnowledgeItem, KnowledgeKind};
pub use packing::{AllocationRatio, PackedPrompt};
pub use provider::{Provider, ProviderConfig, TableManager};
pub use sampling::{SamplingMethod, SubTable};
pub use serialize::SerializationFormat;
pub use table::{Cell, HeaderNode, HeaderTree, Query, Table, ValueKind};
pub use tokenizer::{TokenBudget, Tokenizer, TokenizerSpec};
