//! Local dataset hub.
//!
//! ```text
//! <registry>/<id>/builder.json
//! <registry>/<id>/entry.json
//! <registry>/<id>/cards/<rev>.md
//! <registry>/vocab/*.txt          optional vocabulary overrides
//! ```
//!
//! Ids may contain `/`, so entries can sit at any depth. Mutations are
//! serialized by `<registry>/.lock`.

mod card;
mod vocab;

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::{valid_dataset_id, BuilderDef, DatasetInfo};

pub use card::{
    card_template, check_card, has_errors, parse_card, validate_card, CardError, DataCard, Finding, FindingKind,
    Section, Severity, REQUIRED_SECTIONS,
};
pub use vocab::{TagKey, TagSet, Vocabulary};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("dataset {0:?} is already registered")]
    DuplicateId(String),
    #[error("invalid dataset id {0:?}")]
    InvalidId(String),
    #[error("{key} value {value:?} is not in the vocabulary")]
    UnknownVocabularyValue { key: TagKey, value: String },
    #[error(transparent)]
    Card(#[from] CardError),
    #[error("card failed validation: {}", .0.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidCard(Vec<Finding>),
    #[error("timed out waiting for the registry lock")]
    LockTimeout,
    #[error("invalid entry file {path}: {reason}")]
    BadEntry { path: PathBuf, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub id: String,
    /// Relative to the entry directory.
    pub builder: PathBuf,
    pub card_revision: u32,
    #[serde(default)]
    pub linked_models: Vec<String>,
}

impl RegistryEntry {
    pub fn card_path(&self, rev: u32) -> PathBuf {
        PathBuf::from("cards").join(format!("{rev}.md"))
    }
}

pub fn entry_dir(root: &Path, id: &str) -> PathBuf {
    id.split('/').fold(root.to_path_buf(), |p, part| p.join(part))
}

pub fn builder_path(root: &Path, id: &str) -> PathBuf {
    entry_dir(root, id).join("builder.json")
}

/// Text of the latest card revision, if the entry has one.
pub fn current_card_text(root: &Path, id: &str) -> io::Result<Option<String>> {
    let dir = entry_dir(root, id);
    let entry: RegistryEntry = match fs::read(dir.join("entry.json")) {
        Ok(b) => serde_json::from_slice(&b).map_err(io::Error::other)?,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e),
    };
    if entry.card_revision == 0 {
        return Ok(None);
    }
    fs::read_to_string(dir.join(entry.card_path(entry.card_revision))).map(Some)
}

/// Exclusive lock held while the registry is mutated.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    const STALE: Duration = Duration::from_secs(60);

    fn acquire(root: &Path, timeout: Duration) -> Result<Self, RegistryError> {
        fs::create_dir_all(root)?;
        let path = root.join(".lock");
        let deadline = Instant::now() + timeout;
        loop {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(_) => return Ok(DirLock { path }),
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    let stale = fs::metadata(&path)
                        .and_then(|m| m.modified())
                        .ok()
                        .and_then(|t| SystemTime::now().duration_since(t).ok())
                        .is_some_and(|age| age > Self::STALE);
                    if stale {
                        log::warn!("breaking stale registry lock {}", path.display());
                        let _ = fs::remove_file(&path);
                        continue;
                    }
                    if Instant::now() > deadline {
                        return Err(RegistryError::LockTimeout);
                    }
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Filter for [`Registry::search`]: AND across keys, OR within a key.
/// Keys with no values do not constrain.
pub type SearchFilter = BTreeMap<TagKey, Vec<String>>;

/// True when `tags` satisfies every key of `filter`.
pub fn matches_filter(tags: &TagSet, filter: &SearchFilter) -> bool {
    filter.iter().all(|(key, wanted)| {
        wanted.is_empty() || {
            let have = tags.values(*key);
            wanted.iter().any(|w| have.contains(&w.as_str()))
        }
    })
}

#[derive(Debug, Clone)]
pub struct Registry {
    root: PathBuf,
    vocab: Vocabulary,
    pub lock_timeout: Duration,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = crate::store::temp_file_path(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

impl Registry {
    pub fn open(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        let vocab = Vocabulary::load(&root);
        Registry {
            root,
            vocab,
            lock_timeout: Duration::from_secs(10),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Every entry, sorted by id.
    pub fn entries(&self) -> Result<Vec<RegistryEntry>, RegistryError> {
        let mut out = Vec::new();
        if self.root.is_dir() {
            self.scan(&self.root, &mut out)?;
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    fn scan(&self, dir: &Path, out: &mut Vec<RegistryEntry>) -> Result<(), RegistryError> {
        let entry_file = dir.join("entry.json");
        if entry_file.is_file() {
            let bytes = fs::read(&entry_file)?;
            let e: RegistryEntry = serde_json::from_slice(&bytes).map_err(|err| RegistryError::BadEntry {
                path: entry_file.clone(),
                reason: err.to_string(),
            })?;
            out.push(e);
            return Ok(());
        }
        for child in fs::read_dir(dir)? {
            let child = child?;
            let name = child.file_name();
            let name = name.to_string_lossy();
            if child.file_type()?.is_dir() && name != "vocab" && name != "cards" && !name.starts_with('.') {
                self.scan(&child.path(), out)?;
            }
        }
        Ok(())
    }

    pub fn entry(&self, id: &str) -> Result<RegistryEntry, RegistryError> {
        if !valid_dataset_id(id) {
            return Err(RegistryError::UnknownDataset(id.to_owned()));
        }
        let path = entry_dir(&self.root, id).join("entry.json");
        match fs::read(&path) {
            Ok(b) => serde_json::from_slice(&b).map_err(|e| RegistryError::BadEntry {
                path,
                reason: e.to_string(),
            }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(RegistryError::UnknownDataset(id.to_owned())),
            Err(e) => Err(e.into()),
        }
    }

    pub fn builder_path(&self, id: &str) -> Result<PathBuf, RegistryError> {
        let e = self.entry(id)?;
        Ok(entry_dir(&self.root, id).join(e.builder))
    }

    pub fn card_text(&self, id: &str) -> Result<Option<String>, RegistryError> {
        self.entry(id)?;
        Ok(current_card_text(&self.root, id)?)
    }

    pub fn card_revision_text(&self, id: &str, rev: u32) -> Result<String, RegistryError> {
        let e = self.entry(id)?;
        Ok(fs::read_to_string(entry_dir(&self.root, id).join(e.card_path(rev)))?)
    }

    /// Tags of the current card; entries without a parseable card have none.
    pub fn tags(&self, id: &str) -> Result<TagSet, RegistryError> {
        Ok(self
            .card_text(id)?
            .and_then(|t| parse_card(&t).ok())
            .map(|c| c.tags)
            .unwrap_or_default())
    }

    /// Registers a dataset with its builder and first card revision.
    pub fn add_entry(
        &self,
        def: &BuilderDef,
        card_text: Option<&str>,
        linked_models: Vec<String>,
    ) -> Result<RegistryEntry, RegistryError> {
        if !valid_dataset_id(&def.id) {
            return Err(RegistryError::InvalidId(def.id.clone()));
        }
        if let Some(text) = card_text {
            self.check_new_card(text, None)?;
        }
        let _lock = DirLock::acquire(&self.root, self.lock_timeout)?;
        let dir = entry_dir(&self.root, &def.id);
        if dir.join("entry.json").exists() {
            return Err(RegistryError::DuplicateId(def.id.clone()));
        }
        fs::create_dir_all(dir.join("cards"))?;
        let builder = serde_json::to_vec_pretty(def).expect("builder serializes");
        write_atomic(&dir.join("builder.json"), &builder)?;
        let entry = RegistryEntry {
            id: def.id.clone(),
            builder: PathBuf::from("builder.json"),
            card_revision: card_text.map_or(0, |_| 1),
            linked_models,
        };
        if let Some(text) = card_text {
            write_atomic(&dir.join(entry.card_path(1)), text.as_bytes())?;
        }
        self.write_entry(&dir, &entry)?;
        Ok(entry)
    }

    fn write_entry(&self, dir: &Path, entry: &RegistryEntry) -> Result<(), RegistryError> {
        let bytes = serde_json::to_vec_pretty(entry).expect("entry serializes");
        Ok(write_atomic(&dir.join("entry.json"), &bytes)?)
    }

    fn check_new_card(&self, text: &str, info: Option<&DatasetInfo>) -> Result<(), RegistryError> {
        let card = parse_card(text)?;
        let findings = validate_card(&card, info, &self.vocab);
        if has_errors(&findings) {
            return Err(RegistryError::InvalidCard(findings));
        }
        Ok(())
    }

    /// Stores `text` as the next card revision. Earlier revisions are kept;
    /// an invalid card leaves the entry untouched.
    pub fn bump_card_revision(
        &self,
        id: &str,
        text: &str,
        info: Option<&DatasetInfo>,
    ) -> Result<RegistryEntry, RegistryError> {
        self.check_new_card(text, info)?;
        let _lock = DirLock::acquire(&self.root, self.lock_timeout)?;
        let mut entry = self.entry(id)?;
        let dir = entry_dir(&self.root, id);
        fs::create_dir_all(dir.join("cards"))?;
        entry.card_revision += 1;
        write_atomic(&dir.join(entry.card_path(entry.card_revision)), text.as_bytes())?;
        self.write_entry(&dir, &entry)?;
        Ok(entry)
    }

    /// Checks every filter value against the vocabularies.
    pub fn check_filter(&self, filter: &SearchFilter) -> Result<(), RegistryError> {
        for (key, values) in filter {
            if let Some(v) = values.iter().find(|v| !self.vocab.contains(*key, v)) {
                return Err(RegistryError::UnknownVocabularyValue {
                    key: *key,
                    value: v.clone(),
                });
            }
        }
        Ok(())
    }

    /// Ids whose tags match `filter`, sorted.
    pub fn search(&self, filter: &SearchFilter) -> Result<Vec<String>, RegistryError> {
        self.check_filter(filter)?;
        let mut out = Vec::new();
        for e in self.entries()? {
            if matches_filter(&self.tags(&e.id)?, filter) {
                out.push(e.id);
            }
        }
        Ok(out)
    }
}
