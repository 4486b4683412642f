//! Declarative dataset builders: fetch raw sources, verify them, parse them
//! into typed rows and cache the result as DSET1 tables.
//!
//! Cache layout:
//!
//! ```text
//! <cache>/downloads/<sha256(url)>                  raw source bytes
//! <cache>/datasets/<id>/<version>/<builder-fp>/<split>.dset
//! <cache>/datasets/<id>/<version>/<builder-fp>/dataset_info.json
//! ```

mod download;
mod parse;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{canonical_json, Fingerprint};
use crate::schema::Schema;
use crate::store::{open_table, StoreError, Table, TableWriter, WriteOptions};

pub(crate) use download::open_url;
pub use download::{resolve_url, DownloadRecord, Downloader, USER_AGENT};
pub use parse::{parse_source, value_from_json, value_from_text, RowParser};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("download of {url} failed: {reason}")]
    Download { url: String, reason: String },
    #[error("checksum mismatch for {url}: expected {expected}, got {actual}")]
    ChecksumMismatch {
        url: String,
        expected: String,
        actual: String,
    },
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("type error on line {line} at {path}: {reason}")]
    Type { line: usize, path: String, reason: String },
    #[error("invalid builder definition: {0}")]
    InvalidDef(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Csv,
    Jsonl,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatOptions {
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    #[serde(default = "default_true")]
    pub has_header: bool,
}

fn default_delimiter() -> String {
    ",".into()
}

fn default_true() -> bool {
    true
}

impl Default for FormatOptions {
    fn default() -> Self {
        FormatOptions {
            delimiter: default_delimiter(),
            has_header: true,
        }
    }
}

impl FormatOptions {
    pub(crate) fn delimiter_byte(&self) -> Result<u8, BuildError> {
        match self.delimiter.as_bytes() {
            [b] => Ok(*b),
            _ => Err(BuildError::InvalidDef("delimiter must be a single byte".into())),
        }
    }
}

/// Where a column's value comes from in a source record: a CSV column
/// index, a CSV header name / JSON pointer, or `"line"` for text sources.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldAccessor {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRef {
    pub url: String,
    #[serde(default)]
    pub sha256: Option<String>,
}

/// A declarative recipe for building one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuilderDef {
    pub id: String,
    pub version: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub citation: String,
    #[serde(default)]
    pub license: String,
    pub sources: BTreeMap<String, Vec<SourceRef>>,
    pub format: SourceFormat,
    #[serde(default)]
    pub format_options: FormatOptions,
    pub schema: Schema,
    pub field_map: BTreeMap<String, FieldAccessor>,
    #[serde(default)]
    pub recommended_metrics: Vec<String>,
}

pub fn valid_dataset_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || matches!(b, b'_' | b'/' | b'-'))
        && !id.starts_with('/')
        && !id.ends_with('/')
        && !id.contains("//")
}

fn valid_semver(v: &str) -> bool {
    let core = v.split(['-', '+']).next().unwrap_or("");
    let parts: Vec<&str> = core.split('.').collect();
    parts.len() == 3
        && parts
            .iter()
            .all(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()))
}

impl BuilderDef {
    pub fn from_json(text: &str) -> Result<Self, BuildError> {
        let def: BuilderDef = serde_json::from_str(text).map_err(|e| BuildError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        def.validate()?;
        Ok(def)
    }

    pub fn load(path: &Path) -> Result<Self, BuildError> {
        let text = fs::read_to_string(path).map_err(|e| BuildError::Store(StoreError::Io(e)))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), BuildError> {
        let bad = |m: String| Err(BuildError::InvalidDef(m));
        if !valid_dataset_id(&self.id) {
            return bad(format!("invalid dataset id {:?}", self.id));
        }
        if !valid_semver(&self.version) {
            return bad(format!("version {:?} is not semver", self.version));
        }
        if self.sources.keys().any(String::is_empty) {
            return bad("empty split name".into());
        }
        for c in self.schema.columns() {
            if !self.field_map.contains_key(&c.name) {
                return bad(format!("no field_map entry for column {:?}", c.name));
            }
        }
        self.format_options.delimiter_byte()?;
        Ok(())
    }

    pub fn to_canonical_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("builder def serializes"))
    }

    /// SHA-256 of the canonical JSON form; key order in the source text
    /// does not matter, any field change does.
    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of(self.to_canonical_json().as_bytes())
    }
}

pub fn builder_fingerprint(def: &BuilderDef) -> Fingerprint {
    def.fingerprint()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub num_rows: u64,
    pub fingerprint: Fingerprint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub id: String,
    pub description: String,
    pub citation: String,
    pub version: String,
    pub license: String,
    pub splits: BTreeMap<String, SplitInfo>,
    /// url -> sha256 of every source used.
    pub download_checksums: BTreeMap<String, String>,
    pub builder_fingerprint: Fingerprint,
    #[serde(default)]
    pub recommended_metrics: Vec<String>,
}

impl DatasetInfo {
    pub fn split_rows(&self) -> BTreeMap<String, u64> {
        self.splits.iter().map(|(k, v)| (k.clone(), v.num_rows)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct DatasetDict {
    pub splits: BTreeMap<String, Table>,
    pub info: DatasetInfo,
}

impl DatasetDict {
    pub fn split(&self, name: &str) -> Option<&Table> {
        self.splits.get(name)
    }
}

/// Opens the raw file for parsing; `.gz` sources are decompressed.
fn open_download(record: &DownloadRecord) -> Result<Box<dyn BufRead + Send>, BuildError> {
    let f = File::open(&record.path).map_err(|e| BuildError::Store(StoreError::Io(e)))?;
    Ok(if record.url.ends_with(".gz") {
        Box::new(BufReader::new(flate2::read::GzDecoder::new(f)))
    } else {
        Box::new(BufReader::new(f))
    })
}

/// Loads datasets by id from a registry directory, building and caching
/// them on first use.
#[derive(Debug)]
pub struct DatasetLoader {
    pub registry_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub downloader: Downloader,
    pub write_options: WriteOptions,
}

impl DatasetLoader {
    pub fn new(registry_dir: impl Into<PathBuf>, cache_dir: impl Into<PathBuf>) -> Self {
        DatasetLoader {
            registry_dir: registry_dir.into(),
            cache_dir: cache_dir.into(),
            downloader: Downloader::default(),
            write_options: WriteOptions::default(),
        }
    }

    pub fn with_downloader(mut self, d: Downloader) -> Self {
        self.downloader = d;
        self
    }

    pub fn builder_path(&self, id: &str) -> Result<PathBuf, BuildError> {
        if !valid_dataset_id(id) {
            return Err(BuildError::UnknownDataset(id.to_owned()));
        }
        let p = crate::registry::builder_path(&self.registry_dir, id);
        if p.is_file() {
            Ok(p)
        } else {
            Err(BuildError::UnknownDataset(id.to_owned()))
        }
    }

    pub fn builder_def(&self, id: &str) -> Result<BuilderDef, BuildError> {
        let def = BuilderDef::load(&self.builder_path(id)?)?;
        if def.id != id {
            return Err(BuildError::InvalidDef(format!(
                "builder at {id:?} declares id {:?}",
                def.id
            )));
        }
        Ok(def)
    }

    pub fn dataset_dir(&self, def: &BuilderDef) -> PathBuf {
        self.cache_dir
            .join("datasets")
            .join(&def.id)
            .join(&def.version)
            .join(def.fingerprint().to_hex())
    }

    /// Opens cached splits if present; never touches the network.
    pub fn open_cached(&self, id: &str) -> Result<Option<DatasetDict>, BuildError> {
        let def = self.builder_def(id)?;
        Ok(self.try_open(&self.dataset_dir(&def)))
    }

    fn try_open(&self, dir: &Path) -> Option<DatasetDict> {
        let info: DatasetInfo = serde_json::from_slice(&fs::read(dir.join("dataset_info.json")).ok()?).ok()?;
        let mut splits = BTreeMap::new();
        for (name, si) in &info.splits {
            let t = open_table(dir.join(format!("{name}.dset"))).ok()?;
            if t.num_rows() != si.num_rows || t.fingerprint() != si.fingerprint {
                return None;
            }
            splits.insert(name.clone(), t);
        }
        Some(DatasetDict { splits, info })
    }

    /// Returns the dataset, building it if no valid cache exists.
    pub fn load(&self, id: &str) -> Result<DatasetDict, BuildError> {
        let def = self.builder_def(id)?;
        let dir = self.dataset_dir(&def);
        if let Some(dd) = self.try_open(&dir) {
            return Ok(dd);
        }
        let base = self.builder_path(id)?.parent().map(Path::to_path_buf);
        let dd = self.build(&def, base.as_deref(), &dir)?;
        self.check_card(id, &dd.info);
        Ok(dd)
    }

    fn check_card(&self, id: &str, info: &DatasetInfo) {
        let Ok(Some(text)) = crate::registry::current_card_text(&self.registry_dir, id) else {
            return;
        };
        let vocab = crate::registry::Vocabulary::load(&self.registry_dir);
        for finding in crate::registry::check_card(&text, Some(info), &vocab) {
            log::warn!("data card for {id}: {finding}");
        }
    }

    /// Downloads, verifies and parses every split, then writes the cache.
    pub fn build(&self, def: &BuilderDef, base: Option<&Path>, dir: &Path) -> Result<DatasetDict, BuildError> {
        def.validate()?;
        fs::create_dir_all(dir).map_err(|e| BuildError::Store(StoreError::from_io(e)))?;
        let mut checksums = BTreeMap::new();
        let mut records = BTreeMap::new();
        // verify everything before writing anything
        for (split, sources) in &def.sources {
            let mut recs = Vec::new();
            for src in sources {
                let rec = self.downloader.download_and_verify(src, base, &self.cache_dir)?;
                checksums.insert(rec.url.clone(), rec.sha256.clone());
                recs.push(rec);
            }
            records.insert(split.clone(), recs);
        }
        let mut splits = BTreeMap::new();
        let mut split_info = BTreeMap::new();
        for (split, recs) in &records {
            let mut w = TableWriter::create(dir.join(format!("{split}.dset")), &def.schema, self.write_options)?;
            for rec in recs {
                let reader = open_download(rec)?;
                let rows = parse_source(def.format, &def.format_options, &def.field_map, &def.schema, reader)?;
                for row in rows {
                    w.push(&row?)?;
                }
            }
            let t = w.finish()?;
            split_info.insert(
                split.clone(),
                SplitInfo {
                    num_rows: t.num_rows(),
                    fingerprint: t.fingerprint(),
                },
            );
            splits.insert(split.clone(), t);
        }
        let info = DatasetInfo {
            id: def.id.clone(),
            description: def.description.clone(),
            citation: def.citation.clone(),
            version: def.version.clone(),
            license: def.license.clone(),
            splits: split_info,
            download_checksums: checksums,
            builder_fingerprint: def.fingerprint(),
            recommended_metrics: def.recommended_metrics.clone(),
        };
        let info_path = dir.join("dataset_info.json");
        let tmp = crate::store::temp_file_path(&info_path);
        let body = serde_json::to_vec_pretty(&info).expect("info serializes");
        fs::write(&tmp, body)
            .and_then(|_| fs::rename(&tmp, &info_path))
            .map_err(|e| BuildError::Store(StoreError::from_io(e)))?;
        Ok(DatasetDict { splits, info })
    }
}

/// Loads dataset `id` from `registry_dir`, caching under `cache_dir`.
pub fn load_dataset(
    registry_dir: impl Into<PathBuf>,
    id: &str,
    cache_dir: impl Into<PathBuf>,
) -> Result<DatasetDict, BuildError> {
    DatasetLoader::new(registry_dir, cache_dir).load(id)
}
