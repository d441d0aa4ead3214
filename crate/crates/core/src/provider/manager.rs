//! Versioned table store with pull-based sync and an optional
//! append-only journal.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{content_hash, Table, TableDocument};

#[derive(Debug, Clone, PartialEq)]
pub struct ManagedTable {
    pub id: String,
    pub table: Arc<Table>,
    /// Starts at 1 and grows by one with every content change.
    pub version: u64,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyncResult {
    Unchanged { version: u64 },
    Updated { table: Arc<Table>, version: u64 },
}

#[derive(Serialize, Deserialize)]
struct JournalEntry {
    id: String,
    version: u64,
    table: TableDocument,
}

/// Id used for tables registered without one.
pub fn derived_id(table: &Table) -> String {
    format!("tbl-{}", &content_hash(table)[..16])
}

#[derive(Debug, Default)]
pub struct TableManager {
    tables: RwLock<HashMap<String, Arc<RwLock<ManagedTable>>>>,
    journal: Option<Mutex<File>>,
    journal_path: Option<PathBuf>,
}

impl TableManager {
    /// An in-memory manager.
    pub fn new() -> TableManager {
        TableManager::default()
    }

    /// Replays the journal at `path` (if it exists) and appends every
    /// later change to it.
    pub fn open(path: &Path) -> Result<TableManager> {
        let mut tables = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: JournalEntry = serde_json::from_str(&line)
                    .map_err(|err| Error::Ingestion(format!("journal line {}: {err}", i + 1)))?;
                let table = e.table.into_table()?;
                let prev = tables
                    .get(&e.id)
                    .map(|m: &ManagedTable| m.version)
                    .unwrap_or(0);
                if e.version <= prev {
                    return Err(Error::Ingestion(format!(
                        "journal line {}: version {} of {:?} does not follow {prev}",
                        i + 1,
                        e.version,
                        e.id
                    )));
                }
                tables.insert(
                    e.id.clone(),
                    ManagedTable {
                        id: e.id,
                        hash: content_hash(&table),
                        table: Arc::new(table),
                        version: e.version,
                    },
                );
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(TableManager {
            tables: RwLock::new(
                tables
                    .into_iter()
                    .map(|(k, v)| (k, Arc::new(RwLock::new(v))))
                    .collect(),
            ),
            journal: Some(Mutex::new(file)),
            journal_path: Some(path.to_path_buf()),
        })
    }

    pub fn journal_path(&self) -> Option<&Path> {
        self.journal_path.as_deref()
    }

    fn append(&self, m: &ManagedTable) -> Result<()> {
        if let Some(j) = &self.journal {
            let entry = JournalEntry {
                id: m.id.clone(),
                version: m.version,
                table: TableDocument::from_table(&m.table),
            };
            let mut line = serde_json::to_string(&entry)?;
            line.push('\n');
            let mut f = j.lock().expect("journal lock poisoned");
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        Ok(())
    }

    fn entry(&self, id: &str) -> Result<Arc<RwLock<ManagedTable>>> {
        self.tables
            .read()
            .expect("manager index poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| Error::UnknownTable(id.to_owned()))
    }

    /// Registers a table under its own id, or a content-derived one.
    /// Registering identical content again is a no-op; different content
    /// under a taken id is an error.
    pub fn register(&self, table: Table) -> Result<String> {
        let id = table
            .id()
            .map(str::to_owned)
            .unwrap_or_else(|| derived_id(&table));
        let hash = content_hash(&table);
        let mut index = self.tables.write().expect("manager index poisoned");
        if let Some(existing) = index.get(&id) {
            let existing = existing.read().expect("table lock poisoned");
            return if existing.hash == hash {
                Ok(id)
            } else {
                Err(Error::DuplicateTable(id))
            };
        }
        let m = ManagedTable {
            id: id.clone(),
            table: Arc::new(table.with_id(id.clone())),
            version: 1,
            hash,
        };
        self.append(&m)?;
        index.insert(id.clone(), Arc::new(RwLock::new(m)));
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Result<ManagedTable> {
        Ok(self.entry(id)?.read().expect("table lock poisoned").clone())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.tables
            .read()
            .expect("manager index poisoned")
            .contains_key(id)
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .tables
            .read()
            .expect("manager index poisoned")
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    /// Replaces the content of `id`; returns the resulting version, which
    /// only changes when the content hash does.
    pub fn update(&self, id: &str, table: Table) -> Result<u64> {
        let entry = self.entry(id)?;
        let mut m = entry.write().expect("table lock poisoned");
        let hash = content_hash(&table);
        if hash == m.hash {
            return Ok(m.version);
        }
        let next = ManagedTable {
            id: id.to_owned(),
            table: Arc::new(table.with_id(id)),
            version: m.version + 1,
            hash,
        };
        self.append(&next)?;
        *m = next;
        Ok(m.version)
    }

    /// Unchanged iff `known_version` is the current version.
    pub fn sync_pull(&self, id: &str, known_version: u64) -> Result<SyncResult> {
        let m = self.get(id)?;
        Ok(if m.version == known_version {
            SyncResult::Unchanged { version: m.version }
        } else {
            SyncResult::Updated {
                table: m.table,
                version: m.version,
            }
        })
    }
}
