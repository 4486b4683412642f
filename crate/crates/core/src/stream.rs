//! Lazy pipelines over raw shards.
//!
//! Shards are read one after another through an 8 MiB buffer and parsed
//! incrementally, so memory use does not depend on shard size. `map` and
//! `filter` chunk their own input into `batch_size` blocks exactly like the
//! eager transforms, which makes a shuffle-free pipeline produce the same
//! rows as building the source and applying the same steps to the table.
//!
//! `shuffle` is a buffered shuffle: it is an approximation of a full
//! permutation bounded by the buffer size.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::{
    open_url, parse_source, resolve_url, BuildError, BuilderDef, DatasetLoader, FieldAccessor, FormatOptions,
    SourceFormat, SourceRef,
};
use crate::schema::{Row, Schema};
use crate::transform::{
    apply_filter, apply_map, check_version, FnContext, MapEntry, PredicateEntry, SplitMix64, TransformError,
    TransformRegistry, TransformSpec, Transformer,
};

pub const READ_BUFFER: usize = 8 << 20;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("shard {shard}: {source}")]
    Shard {
        shard: usize,
        #[source]
        source: BuildError,
    },
    #[error("invalid pipeline: {0}")]
    Invalid(String),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Build(#[from] BuildError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSource {
    pub shards: Vec<SourceRef>,
    pub format: SourceFormat,
    #[serde(default)]
    pub format_options: FormatOptions,
    pub schema: Schema,
    pub field_map: BTreeMap<String, FieldAccessor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum StreamOp {
    Map {
        spec: TransformSpec,
        /// Defaults to the schema the registered function declares.
        #[serde(default)]
        output_schema: Option<Schema>,
    },
    Filter {
        spec: TransformSpec,
    },
    Shuffle {
        buffer_size: usize,
        seed: u64,
    },
    Take {
        n: u64,
    },
    Skip {
        n: u64,
    },
}

/// A source plus lazy ops applied in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamPipeline {
    pub source: StreamSource,
    #[serde(default)]
    pub ops: Vec<StreamOp>,
}

impl StreamPipeline {
    pub fn from_json(text: &str) -> Result<Self, StreamError> {
        let p: StreamPipeline = serde_json::from_str(text).map_err(|e| StreamError::Invalid(e.to_string()))?;
        if p.source.shards.is_empty() {
            return Err(StreamError::Invalid("source needs at least one shard".into()));
        }
        for c in p.source.schema.columns() {
            if !p.source.field_map.contains_key(&c.name) {
                return Err(StreamError::Invalid(format!(
                    "no field_map entry for column {:?}",
                    c.name
                )));
            }
        }
        for op in &p.ops {
            if let StreamOp::Shuffle { buffer_size: 0, .. } = op {
                return Err(StreamError::Invalid("shuffle buffer_size must be at least 1".into()));
            }
        }
        Ok(p)
    }

    /// Schema of the rows the pipeline emits.
    pub fn output_schema(&self, registry: &TransformRegistry) -> Result<Schema, StreamError> {
        let mut schema = self.source.schema.clone();
        for op in &self.ops {
            if let StreamOp::Map { spec, output_schema } = op {
                schema = map_schema(registry, spec, output_schema.as_ref(), &schema)?;
            }
        }
        Ok(schema)
    }
}

fn map_schema(
    registry: &TransformRegistry,
    spec: &TransformSpec,
    explicit: Option<&Schema>,
    input: &Schema,
) -> Result<Schema, StreamError> {
    match explicit {
        Some(s) => Ok(s.clone()),
        None => registry
            .output_schema(&spec.transform_id, input, &spec.params)
            .map_err(StreamError::Invalid),
    }
}

pub type RowStream = Box<dyn Iterator<Item = Result<Row, StreamError>>>;

/// Rows of every shard in order.
fn source_rows(src: &StreamSource, base: Option<PathBuf>) -> RowStream {
    let src = src.clone();
    let mut shard = 0;
    let mut current: Option<Box<dyn Iterator<Item = Result<Row, BuildError>>>> = None;
    Box::new(std::iter::from_fn(move || loop {
        if let Some(it) = current.as_mut() {
            match it.next() {
                Some(r) => {
                    return Some(r.map_err(|e| StreamError::Shard {
                        shard: shard - 1,
                        source: e,
                    }))
                }
                None => current = None,
            }
        }
        if shard >= src.shards.len() {
            return None;
        }
        shard += 1;
        match open_shard(&src, shard - 1, base.as_deref()) {
            Ok(it) => current = Some(it),
            Err(e) => {
                return Some(Err(StreamError::Shard {
                    shard: shard - 1,
                    source: e,
                }))
            }
        }
    }))
}

fn open_shard(
    src: &StreamSource,
    i: usize,
    base: Option<&Path>,
) -> Result<Box<dyn Iterator<Item = Result<Row, BuildError>>>, BuildError> {
    let url = resolve_url(&src.shards[i].url, base)?;
    let raw = open_url(&url).map_err(|e| BuildError::Download {
        url: url.clone(),
        reason: e.reason,
    })?;
    let reader: Box<dyn BufRead + Send> = if url.ends_with(".gz") {
        Box::new(BufReader::with_capacity(READ_BUFFER, flate2::read::GzDecoder::new(raw)))
    } else {
        Box::new(BufReader::with_capacity(READ_BUFFER, raw))
    };
    Ok(Box::new(parse_source(
        src.format,
        &src.format_options,
        &src.field_map,
        &src.schema,
        reader,
    )?))
}

/// Ends the stream after the first error.
fn fuse_errors(mut it: RowStream) -> RowStream {
    let mut done = false;
    Box::new(std::iter::from_fn(move || {
        if done {
            return None;
        }
        let r = it.next();
        done = matches!(r, None | Some(Err(_)));
        r
    }))
}

enum Step {
    Map(MapEntry),
    Filter(PredicateEntry),
}

fn batch_op(
    upstream: RowStream,
    registry: Arc<TransformRegistry>,
    step: Step,
    spec: TransformSpec,
    schema: Schema,
    out_schema: Schema,
) -> RowStream {
    let bs = if spec.batched { spec.batch_size.max(1) } else { 1 } as usize;
    let mut upstream = upstream;
    let mut pending = std::collections::VecDeque::new();
    let mut offset = 0u64;
    let mut done = false;
    Box::new(std::iter::from_fn(move || loop {
        if let Some(r) = pending.pop_front() {
            return Some(Ok(r));
        }
        if done {
            return None;
        }
        let mut batch = Vec::with_capacity(bs);
        while batch.len() < bs {
            match upstream.next() {
                Some(Ok(r)) => batch.push(r),
                Some(Err(e)) => {
                    done = true;
                    return Some(Err(e));
                }
                None => {
                    done = true;
                    break;
                }
            }
        }
        if batch.is_empty() {
            return None;
        }
        let (start, end) = (offset, offset + batch.len() as u64);
        offset = end;
        let ctx = FnContext {
            schema: &schema,
            params: &spec.params,
        };
        let out = match &step {
            Step::Map(e) => apply_map(&registry, e, spec.batched, &ctx, batch),
            Step::Filter(e) => apply_filter(&registry, e, spec.batched, &ctx, batch),
        };
        let rows = match out {
            Ok(rows) => rows,
            Err(message) => {
                done = true;
                return Some(Err(TransformError::Function { start, end, message }.into()));
            }
        };
        for r in &rows {
            if let Err(e) = out_schema.validate_row(r) {
                done = true;
                return Some(Err(TransformError::SchemaMismatch {
                    start,
                    end,
                    reason: e.to_string(),
                }
                .into()));
            }
        }
        pending.extend(rows);
    }))
}

/// Emits a uniformly chosen slot of a `buffer_size` buffer at each step and
/// refills it from upstream; once upstream ends the buffer is drained the
/// same way. Deterministic for a given seed.
pub struct BufferedShuffle<I: Iterator> {
    upstream: I,
    buf: Vec<I::Item>,
    size: usize,
    rng: SplitMix64,
    exhausted: bool,
}

pub fn buffered_shuffle<I: Iterator>(upstream: I, buffer_size: usize, seed: u64) -> BufferedShuffle<I> {
    assert!(buffer_size >= 1, "buffer_size must be at least 1");
    BufferedShuffle {
        upstream,
        buf: Vec::with_capacity(buffer_size),
        size: buffer_size,
        rng: SplitMix64::new(seed),
        exhausted: false,
    }
}

impl<I: Iterator> Iterator for BufferedShuffle<I> {
    type Item = I::Item;

    fn next(&mut self) -> Option<I::Item> {
        while !self.exhausted && self.buf.len() < self.size {
            match self.upstream.next() {
                Some(x) => self.buf.push(x),
                None => self.exhausted = true,
            }
        }
        if self.buf.is_empty() {
            return None;
        }
        let j = self.rng.below(self.buf.len() as u64) as usize;
        if !self.exhausted {
            if let Some(x) = self.upstream.next() {
                return Some(std::mem::replace(&mut self.buf[j], x));
            }
            self.exhausted = true;
        }
        Some(self.buf.swap_remove(j))
    }
}

/// Shuffles the Ok rows of a stream; an upstream error is held back until
/// the buffer drains, then ends the stream.
fn shuffle_op(upstream: RowStream, buffer_size: usize, seed: u64) -> RowStream {
    let stashed: Rc<RefCell<Option<StreamError>>> = Rc::default();
    let stash = Rc::clone(&stashed);
    let mut upstream = upstream;
    let oks = std::iter::from_fn(move || match upstream.next()? {
        Ok(r) => Some(r),
        Err(e) => {
            *stash.borrow_mut() = Some(e);
            None
        }
    });
    let shuffled = buffered_shuffle(oks, buffer_size, seed).map(Ok);
    Box::new(shuffled.chain(std::iter::from_fn(move || stashed.borrow_mut().take().map(Err))))
}

/// Builds the lazy row iterator for `p`. Relative shard paths resolve
/// against `base`.
pub fn stream_rows(
    p: &StreamPipeline,
    registry: Arc<TransformRegistry>,
    base: Option<&Path>,
) -> Result<RowStream, StreamError> {
    let mut schema = p.source.schema.clone();
    let mut it = source_rows(&p.source, base.map(Path::to_path_buf));
    for op in &p.ops {
        it = match op {
            StreamOp::Map { spec, output_schema } => {
                let e = registry
                    .map_entry(&spec.transform_id)
                    .ok_or_else(|| TransformError::UnknownTransform(spec.transform_id.clone()))?
                    .clone();
                check_version(spec, &e.version)?;
                let out = map_schema(&registry, spec, output_schema.as_ref(), &schema)?;
                let s = std::mem::replace(&mut schema, out.clone());
                batch_op(it, Arc::clone(&registry), Step::Map(e), spec.clone(), s, out)
            }
            StreamOp::Filter { spec } => {
                let e = registry
                    .predicate_entry(&spec.transform_id)
                    .ok_or_else(|| TransformError::UnknownTransform(spec.transform_id.clone()))?
                    .clone();
                check_version(spec, &e.version)?;
                batch_op(
                    it,
                    Arc::clone(&registry),
                    Step::Filter(e),
                    spec.clone(),
                    schema.clone(),
                    schema.clone(),
                )
            }
            StreamOp::Shuffle { buffer_size, seed } => {
                if *buffer_size == 0 {
                    return Err(StreamError::Invalid("shuffle buffer_size must be at least 1".into()));
                }
                shuffle_op(it, *buffer_size, *seed)
            }
            StreamOp::Take { n } => Box::new(it.take(usize::try_from(*n).unwrap_or(usize::MAX))),
            StreamOp::Skip { n } => {
                let n = *n;
                let mut seen = 0u64;
                // errors are never skipped
                Box::new(it.filter(move |r| {
                    if r.is_err() || seen >= n {
                        return true;
                    }
                    seen += 1;
                    false
                }))
            }
        };
    }
    Ok(fuse_errors(it))
}

/// Eager counterpart of a shuffle-free pipeline: builds the source into a
/// table, then applies each op with [`Transformer`].
pub fn eager_rows(
    p: &StreamPipeline,
    registry: Arc<TransformRegistry>,
    cache_dir: &Path,
    base: Option<&Path>,
) -> Result<Vec<Row>, StreamError> {
    let def = BuilderDef {
        id: "stream/eager".into(),
        version: "0.0.0".into(),
        description: String::new(),
        citation: String::new(),
        license: String::new(),
        sources: [("all".to_owned(), p.source.shards.clone())].into(),
        format: p.source.format,
        format_options: p.source.format_options.clone(),
        schema: p.source.schema.clone(),
        field_map: p.source.field_map.clone(),
        recommended_metrics: Vec::new(),
    };
    let loader = DatasetLoader::new(cache_dir.join("registry-unused"), cache_dir);
    let dir = loader.dataset_dir(&def);
    let mut t = loader
        .build(&def, base, &dir)?
        .splits
        .remove("all")
        .expect("split built");
    let tf = Transformer::new(cache_dir, Arc::clone(&registry));
    for op in &p.ops {
        t = match op {
            StreamOp::Map { spec, output_schema } => {
                let out = map_schema(&registry, spec, output_schema.as_ref(), t.schema())?;
                tf.map(&t, spec, &out, 1)?
            }
            StreamOp::Filter { spec } => tf.filter(&t, spec, 1)?,
            StreamOp::Take { n } => {
                let idx: Vec<u64> = (0..t.num_rows().min(*n)).collect();
                tf.select(&t, &idx)?
            }
            StreamOp::Skip { n } => {
                let idx: Vec<u64> = (t.num_rows().min(*n)..t.num_rows()).collect();
                tf.select(&t, &idx)?
            }
            StreamOp::Shuffle { .. } => {
                return Err(StreamError::Invalid("buffered shuffle has no eager counterpart".into()))
            }
        };
    }
    Ok(t.read_all().map_err(TransformError::from)?)
}

/// True iff streaming `p` yields exactly the rows of its eager counterpart.
pub fn stream_eager_equivalence(
    p: &StreamPipeline,
    registry: Arc<TransformRegistry>,
    cache_dir: &Path,
    base: Option<&Path>,
) -> Result<bool, StreamError> {
    let eager = eager_rows(p, Arc::clone(&registry), cache_dir, base)?;
    let streamed = stream_rows(p, registry, base)?.collect::<Result<Vec<_>, _>>()?;
    Ok(eager == streamed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffer_of_one_is_identity() {
        let out: Vec<_> = buffered_shuffle(0..50, 1, 9).collect();
        assert_eq!(out, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn permutes() {
        for size in [2, 7, 100] {
            let mut out: Vec<_> = buffered_shuffle(0..60, size, 3).collect();
            assert_ne!(out, (0..60).collect::<Vec<_>>());
            out.sort_unstable();
            assert_eq!(out, (0..60).collect::<Vec<_>>());
        }
        assert_eq!(buffered_shuffle(0..0, 4, 1).count(), 0);
    }

    #[test]
    fn manifest_validation() {
        let ok = r#"{"source": {"shards": [{"url": "a.txt"}], "format": "text",
            "schema": {"columns": [{"name": "line", "nullable": false, "type": {"tag": "string"}}]},
            "field_map": {"line": "line"}},
            "ops": [{"op": "take", "n": 3}, {"op": "shuffle", "buffer_size": 2, "seed": 1}]}"#;
        let p = StreamPipeline::from_json(ok).unwrap();
        assert_eq!(p.ops.len(), 2);
        assert!(StreamPipeline::from_json(&ok.replace("\"buffer_size\": 2", "\"buffer_size\": 0")).is_err());
        assert!(StreamPipeline::from_json(&ok.replace("[{\"url\": \"a.txt\"}]", "[]")).is_err());
    }
}
