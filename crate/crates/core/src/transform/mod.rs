//! Table transforms with fingerprint-keyed caching.
//!
//! Every operation derives an output fingerprint from the input's lineage
//! and a [`TransformSpec`]; results live at
//! `<cache>/transforms/<fingerprint>.dset` and are reused when that file
//! opens and verifies.
//!
//! `map` and `filter` split the input into `batch_size` blocks, give each of
//! `workers` threads a contiguous run of blocks, and merge the per-shard
//! files in range order. The merge re-batches rows, so the output file is
//! byte-identical for any worker count.

mod registry;
mod rng;

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical::{canonical_json, Fingerprint};
use crate::schema::{Row, Schema, Value};
use crate::store::{open_table_verified, temp_file_path, StoreError, Table, TableWriter, WriteOptions};

pub use registry::{
    FnContext, MapEntry, MapFunction, PredicateEntry, PredicateFunction, SchemaFunction, TransformRegistry,
};
pub use rng::{permutation, SplitMix64};

pub const DEFAULT_BATCH_SIZE: u64 = 1000;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("unknown transform {0:?}")]
    UnknownTransform(String),
    #[error("transform {id:?} is registered at version {registered}, spec asks for {requested}")]
    VersionMismatch {
        id: String,
        registered: String,
        requested: String,
    },
    #[error("transform failed on rows [{start}, {end}): {message}")]
    Function { start: u64, end: u64, message: String },
    #[error("output of rows [{start}, {end}) does not match the output schema: {reason}")]
    SchemaMismatch { start: u64, end: u64, reason: String },
    #[error("column {0:?} has a type that cannot be sorted")]
    UnorderableType(String),
    #[error("need at least 2 rows, table has {0}")]
    TooFewRows(u64),
    #[error("row index {index} out of bounds for {rows} rows")]
    OutOfBounds { index: u64, rows: u64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Map,
    Filter,
    Sort,
    Shuffle,
    Select,
    TrainTestSplit,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Map => "map",
            OpKind::Filter => "filter",
            OpKind::Sort => "sort",
            OpKind::Shuffle => "shuffle",
            OpKind::Select => "select",
            OpKind::TrainTestSplit => "train_test_split",
        }
    }
}

/// Identity of one processing step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub op_kind: OpKind,
    pub transform_id: String,
    pub transform_version: String,
    #[serde(default)]
    pub params: Json,
    #[serde(default)]
    pub batched: bool,
    #[serde(default = "default_batch_size")]
    pub batch_size: u64,
}

fn default_batch_size() -> u64 {
    DEFAULT_BATCH_SIZE
}

impl TransformSpec {
    pub fn new(op_kind: OpKind, id: &str, version: &str, params: Json) -> Self {
        TransformSpec {
            op_kind,
            transform_id: id.to_owned(),
            transform_version: version.to_owned(),
            params,
            batched: false,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }

    pub fn map(id: &str, version: &str, params: Json) -> Self {
        Self::new(OpKind::Map, id, version, params)
    }

    pub fn filter(id: &str, version: &str, params: Json) -> Self {
        Self::new(OpKind::Filter, id, version, params)
    }

    pub fn batched(mut self, batch_size: u64) -> Self {
        self.batched = true;
        self.batch_size = batch_size;
        self
    }
}

/// SHA-256 over the parent fingerprint and every spec field, each framed
/// by a little-endian u64 length.
pub fn chain_fingerprint(parent: &Fingerprint, spec: &TransformSpec) -> Fingerprint {
    let mut h = Sha256::new();
    let params = canonical_json(&spec.params);
    let fields: [&[u8]; 7] = [
        &parent.0,
        spec.op_kind.as_str().as_bytes(),
        spec.transform_id.as_bytes(),
        spec.transform_version.as_bytes(),
        params.as_bytes(),
        &[spec.batched as u8],
        &spec.batch_size.to_le_bytes(),
    ];
    for f in fields {
        h.update((f.len() as u64).to_le_bytes());
        h.update(f);
    }
    Fingerprint::from_hasher(h)
}

#[derive(Debug, Clone)]
pub struct SplitTables {
    pub train: Table,
    pub test: Table,
}

/// Runs transforms against a cache directory and a function registry.
#[derive(Debug, Clone)]
pub struct Transformer {
    cache_dir: PathBuf,
    registry: Arc<TransformRegistry>,
    pub write_options: WriteOptions,
}

impl Transformer {
    pub fn new(cache_dir: impl Into<PathBuf>, registry: Arc<TransformRegistry>) -> Self {
        Transformer {
            cache_dir: cache_dir.into(),
            registry,
            write_options: WriteOptions::default(),
        }
    }

    pub fn registry(&self) -> &TransformRegistry {
        &self.registry
    }

    pub fn cache_path(&self, fp: &Fingerprint) -> PathBuf {
        self.cache_dir.join("transforms").join(format!("{fp}.dset"))
    }

    fn cached(
        &self,
        parent: &Table,
        spec: &TransformSpec,
        schema: &Schema,
        build: impl FnOnce(&Path) -> Result<Table, TransformError>,
    ) -> Result<Table, TransformError> {
        let fp = chain_fingerprint(&parent.lineage(), spec);
        let path = self.cache_path(&fp);
        if path.exists() {
            match open_table_verified(&path) {
                Ok(t) if t.schema() == schema => return Ok(t.with_lineage(fp)),
                Ok(_) => log::warn!("cached {} has a different schema, rebuilding", path.display()),
                Err(e) => log::warn!("cached {} is invalid ({e}), rebuilding", path.display()),
            }
            let _ = fs::remove_file(&path);
        }
        Ok(build(&path)?.with_lineage(fp))
    }

    fn map_entry(&self, spec: &TransformSpec) -> Result<&MapEntry, TransformError> {
        let e = self
            .registry
            .map_entry(&spec.transform_id)
            .ok_or_else(|| TransformError::UnknownTransform(spec.transform_id.clone()))?;
        check_version(spec, &e.version)?;
        Ok(e)
    }

    fn predicate_entry(&self, spec: &TransformSpec) -> Result<&PredicateEntry, TransformError> {
        let e = self
            .registry
            .predicate_entry(&spec.transform_id)
            .ok_or_else(|| TransformError::UnknownTransform(spec.transform_id.clone()))?;
        check_version(spec, &e.version)?;
        Ok(e)
    }

    /// Applies a registered map function.
    pub fn map(
        &self,
        t: &Table,
        spec: &TransformSpec,
        out_schema: &Schema,
        workers: usize,
    ) -> Result<Table, TransformError> {
        if spec.op_kind != OpKind::Map {
            return Err(TransformError::InvalidParams("spec is not a map".into()));
        }
        let entry = self.map_entry(spec)?;
        self.cached(t, spec, out_schema, |dest| {
            let step =
                |ctx: &FnContext<'_>, rows: Vec<Row>, start: u64, end: u64| {
                    apply_map(&self.registry, entry, spec.batched, ctx, rows)
                        .map_err(|message| TransformError::Function { start, end, message })
                };
            self.run_sharded(t, spec, out_schema, workers, &step, dest)
        })
    }

    /// Keeps the rows a registered predicate accepts, in order.
    pub fn filter(&self, t: &Table, spec: &TransformSpec, workers: usize) -> Result<Table, TransformError> {
        if spec.op_kind != OpKind::Filter {
            return Err(TransformError::InvalidParams("spec is not a filter".into()));
        }
        let entry = self.predicate_entry(spec)?;
        self.cached(t, spec, t.schema(), |dest| {
            let step = |ctx: &FnContext<'_>, rows: Vec<Row>, start: u64, end: u64| {
                apply_filter(&self.registry, entry, spec.batched, ctx, rows)
                    .map_err(|message| TransformError::Function { start, end, message })
            };
            self.run_sharded(t, spec, t.schema(), workers, &step, dest)
        })
    }

    fn run_sharded(
        &self,
        t: &Table,
        spec: &TransformSpec,
        out_schema: &Schema,
        workers: usize,
        step: &(dyn Fn(&FnContext<'_>, Vec<Row>, u64, u64) -> Result<Vec<Row>, TransformError> + Sync),
        dest: &Path,
    ) -> Result<Table, TransformError> {
        let n = t.num_rows();
        let bs = spec.batch_size.max(1);
        let blocks = n.div_ceil(bs);
        let workers = (workers.max(1) as u64).min(blocks.max(1));
        let shard = |k: u64, path: &Path| -> Result<Table, TransformError> {
            let ctx = FnContext {
                schema: t.schema(),
                params: &spec.params,
            };
            let mut w = TableWriter::create(path, out_schema, self.write_options)?;
            for b in blocks * k / workers..blocks * (k + 1) / workers {
                let (start, end) = (b * bs, ((b + 1) * bs).min(n));
                let out = step(&ctx, t.slice(start, end)?, start, end)?;
                for row in &out {
                    w.push(row).map_err(|e| match e {
                        StoreError::Type(e) => TransformError::SchemaMismatch {
                            start,
                            end,
                            reason: e.to_string(),
                        },
                        e => e.into(),
                    })?;
                }
            }
            Ok(w.finish()?)
        };
        if workers == 1 {
            return shard(0, dest);
        }

        let paths: Vec<PathBuf> = (0..workers).map(|_| temp_file_path(dest)).collect();
        let results: Vec<Result<Table, TransformError>> = std::thread::scope(|s| {
            let handles: Vec<_> = paths
                .iter()
                .enumerate()
                .map(|(k, p)| s.spawn(move || shard(k as u64, p)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("transform worker panicked"))
                .collect()
        });
        let merged = (|| {
            let shards = results.into_iter().collect::<Result<Vec<_>, _>>()?;
            let mut w = TableWriter::create(dest, out_schema, self.write_options)?;
            for s in &shards {
                for row in s.iter_rows() {
                    w.push(&row?)?;
                }
            }
            Ok(w.finish()?)
        })();
        for p in &paths {
            let _ = fs::remove_file(p);
        }
        merged
    }

    /// Stable sort on one column. Nulls come first ascending and last
    /// descending; NaN sorts after every number in both directions.
    pub fn sort(&self, t: &Table, column: &str, descending: bool) -> Result<Table, TransformError> {
        let col = t
            .schema()
            .column(column)
            .ok_or_else(|| StoreError::UnknownColumn(column.to_owned()))?;
        if !col.ty.is_orderable() {
            return Err(TransformError::UnorderableType(column.to_owned()));
        }
        let spec = TransformSpec::new(
            OpKind::Sort,
            "sort",
            "1",
            json!({"column": column, "descending": descending}),
        );
        self.cached(t, &spec, t.schema(), |dest| {
            let keys = t.get_column(column)?.collect::<Result<Vec<Value>, _>>()?;
            let mut order: Vec<u64> = (0..t.num_rows()).collect();
            order.sort_by(|&a, &b| sort_cmp(&keys[a as usize], &keys[b as usize], descending));
            self.gather(t, &order, dest)
        })
    }

    /// Seeded Fisher–Yates shuffle driven by [`SplitMix64`].
    pub fn shuffle(&self, t: &Table, seed: u64) -> Result<Table, TransformError> {
        let spec = TransformSpec::new(OpKind::Shuffle, "shuffle", "1", json!({"seed": seed}));
        self.cached(t, &spec, t.schema(), |dest| {
            self.gather(t, &permutation(t.num_rows(), seed), dest)
        })
    }

    /// Output row k is input row `indices[k]`; duplicates are allowed.
    pub fn select(&self, t: &Table, indices: &[u64]) -> Result<Table, TransformError> {
        let rows = t.num_rows();
        if let Some(&index) = indices.iter().find(|&&i| i >= rows) {
            return Err(TransformError::OutOfBounds { index, rows });
        }
        let mut h = Sha256::new();
        for i in indices {
            h.update(i.to_le_bytes());
        }
        let spec = TransformSpec::new(
            OpKind::Select,
            "select",
            "1",
            json!({"count": indices.len(), "indices_sha256": hex::encode(h.finalize())}),
        );
        self.cached(t, &spec, t.schema(), |dest| self.gather(t, indices, dest))
    }

    /// Test gets the first `round(f * n)` rows of the seeded permutation,
    /// clamped to `[1, n - 1]`; train gets the rest.
    pub fn train_test_split(&self, t: &Table, test_fraction: f64, seed: u64) -> Result<SplitTables, TransformError> {
        let n = t.num_rows();
        if n < 2 {
            return Err(TransformError::TooFewRows(n));
        }
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(TransformError::InvalidParams(format!(
                "test_fraction must be in (0, 1), got {test_fraction}"
            )));
        }
        let test_n = test_split_size(n, test_fraction);
        let perm = permutation(n, seed);
        let part = |name: &str, idx: &[u64]| {
            let spec = TransformSpec::new(
                OpKind::TrainTestSplit,
                "train_test_split",
                "1",
                json!({"seed": seed, "test_fraction": test_fraction, "part": name}),
            );
            self.cached(t, &spec, t.schema(), |dest| self.gather(t, idx, dest))
        };
        Ok(SplitTables {
            test: part("test", &perm[..test_n as usize])?,
            train: part("train", &perm[test_n as usize..])?,
        })
    }

    fn gather(&self, t: &Table, indices: &[u64], dest: &Path) -> Result<Table, TransformError> {
        let mut w = TableWriter::create(dest, t.schema(), self.write_options)?;
        // decode runs of consecutive indices with one slice
        let mut i = 0;
        while i < indices.len() {
            let start = indices[i];
            let mut j = i + 1;
            while j < indices.len() && indices[j] == indices[j - 1] + 1 && j - i < 4096 {
                j += 1;
            }
            for row in t.slice(start, start + (j - i) as u64)? {
                w.push(&row)?;
            }
            i = j;
        }
        Ok(w.finish()?)
    }
}

pub fn test_split_size(n: u64, test_fraction: f64) -> u64 {
    ((test_fraction * n as f64).round() as u64).clamp(1, n - 1)
}

pub(crate) fn check_version(spec: &TransformSpec, registered: &str) -> Result<(), TransformError> {
    if spec.transform_version == registered {
        Ok(())
    } else {
        Err(TransformError::VersionMismatch {
            id: spec.transform_id.clone(),
            registered: registered.to_owned(),
            requested: spec.transform_version.clone(),
        })
    }
}

/// Runs a map on one block: the whole block when batched, otherwise one
/// single-row call per row, each of which must return exactly one row.
pub(crate) fn apply_map(
    reg: &TransformRegistry,
    e: &MapEntry,
    batched: bool,
    ctx: &FnContext<'_>,
    rows: Vec<Row>,
) -> Result<Vec<Row>, String> {
    if batched {
        return reg.call_map(e, ctx, rows);
    }
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let mut r = reg.call_map(e, ctx, vec![row])?;
        if r.len() != 1 {
            return Err(format!("row function returned {} rows", r.len()));
        }
        out.push(r.pop().unwrap());
    }
    Ok(out)
}

pub(crate) fn apply_filter(
    reg: &TransformRegistry,
    e: &PredicateEntry,
    batched: bool,
    ctx: &FnContext<'_>,
    rows: Vec<Row>,
) -> Result<Vec<Row>, String> {
    let keep = if batched {
        reg.call_predicate(e, ctx, &rows)?
    } else {
        rows.iter()
            .map(|r| reg.call_predicate(e, ctx, std::slice::from_ref(r)).map(|k| k[0]))
            .collect::<Result<Vec<_>, _>>()?
    };
    Ok(rows.into_iter().zip(keep).filter_map(|(r, k)| k.then_some(r)).collect())
}

/// Ordering used by [`Transformer::sort`].
pub fn sort_cmp(a: &Value, b: &Value, descending: bool) -> Ordering {
    fn rank(v: &Value) -> u8 {
        match v {
            Value::Null => 0,
            Value::Float(f) if f.is_nan() => 2,
            _ => 1,
        }
    }
    let (ra, rb) = (rank(a), rank(b));
    if ra != rb || ra != 1 {
        return match (ra, rb, descending) {
            (0, 0, _) | (2, 2, _) => Ordering::Equal,
            (0, _, false) => Ordering::Less,
            (_, 0, false) => Ordering::Greater,
            (0, _, true) => Ordering::Greater,
            (_, 0, true) => Ordering::Less,
            _ => ra.cmp(&rb),
        };
    }
    let ord = match (a, b) {
        (Value::Int(x), Value::Int(y)) => x.cmp(y),
        (Value::Float(x), Value::Float(y)) => x.partial_cmp(y).unwrap_or(Ordering::Equal),
        (Value::Int(x), Value::Float(y)) => (*x as f64).partial_cmp(y).unwrap_or(Ordering::Equal),
        (Value::Float(x), Value::Int(y)) => x.partial_cmp(&(*y as f64)).unwrap_or(Ordering::Equal),
        (Value::Bool(x), Value::Bool(y)) => x.cmp(y),
        (Value::Text(x), Value::Text(y)) => x.cmp(y),
        _ => Ordering::Equal,
    };
    if descending {
        ord.reverse()
    } else {
        ord
    }
}
