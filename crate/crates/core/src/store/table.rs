use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use memmap2::Mmap;
use sha2::{Digest, Sha256};

use super::decode::{AccessStats, Node};
use super::encode::buffer_count;
use super::{pad8, StoreError, FORMAT_VERSION, MAGIC};
use crate::canonical::Fingerprint;
use crate::schema::{FeatureType, Row, Schema, Value};

/// Bytes backing one or more batches.
pub(crate) enum Backing {
    Mapped(Mmap),
    Owned(Vec<u8>),
}

impl Backing {
    fn bytes(&self) -> &[u8] {
        match self {
            Backing::Mapped(m) => m,
            Backing::Owned(v) => v,
        }
    }
}

#[derive(Clone)]
struct BatchLoc {
    backing: Arc<Backing>,
    /// Offset of the batch header in the backing bytes.
    offset: usize,
    /// End of the region this batch may occupy (next batch or footer).
    limit: usize,
    rows: u64,
}

/// A parsed batch header: its row count and the buffer slices it owns.
pub(crate) struct BatchBuffers<'a> {
    pub rows: usize,
    pub buffers: Vec<&'a [u8]>,
    /// Total bytes the batch spans, including header and padding.
    pub span: usize,
}

fn le_u16(b: &[u8], at: usize) -> Option<u16> {
    b.get(at..at + 2).map(|s| u16::from_le_bytes(s.try_into().unwrap()))
}

fn le_u32(b: &[u8], at: usize) -> Option<u32> {
    b.get(at..at + 4).map(|s| u32::from_le_bytes(s.try_into().unwrap()))
}

fn le_u64(b: &[u8], at: usize) -> Option<u64> {
    b.get(at..at + 8).map(|s| u64::from_le_bytes(s.try_into().unwrap()))
}

fn corrupt(msg: &str) -> StoreError {
    StoreError::Corrupt(msg.to_owned())
}

impl BatchLoc {
    fn parse(&self) -> Result<BatchBuffers<'_>, StoreError> {
        let bytes = &self.backing.bytes()[..self.limit];
        let at = self.offset;
        let rows = le_u64(bytes, at).ok_or_else(|| corrupt("batch header out of range"))?;
        let count = le_u32(bytes, at + 8).ok_or_else(|| corrupt("batch header out of range"))? as usize;
        if rows != self.rows {
            return Err(corrupt("batch row count disagrees with footer"));
        }
        let rows = usize::try_from(rows).map_err(|_| corrupt("row count too large"))?;
        let lens_end = count
            .checked_mul(8)
            .and_then(|n| n.checked_add(at + 12))
            .filter(|&n| n <= bytes.len())
            .ok_or_else(|| corrupt("buffer table out of range"))?;
        let mut pos = lens_end + pad8(lens_end - at);
        let mut buffers = Vec::with_capacity(count);
        for i in 0..count {
            let len = le_u64(bytes, at + 12 + 8 * i).unwrap();
            let len = usize::try_from(len).map_err(|_| corrupt("buffer too large"))?;
            let end = pos
                .checked_add(len)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| corrupt("buffer out of range"))?;
            buffers.push(&bytes[pos..end]);
            pos = end + pad8(len);
        }
        if pos > bytes.len() {
            return Err(corrupt("batch overruns its region"));
        }
        Ok(BatchBuffers {
            rows,
            buffers,
            span: pos - at,
        })
    }
}

/// An immutable, memory-mapped table of typed rows.
///
/// Cloning is cheap; clones share the mapping and the access counters.
#[derive(Clone)]
pub struct Table {
    schema: Arc<Schema>,
    schema_json: Arc<str>,
    batches: Vec<BatchLoc>,
    cumulative_rows: Vec<u64>,
    fingerprint: Fingerprint,
    lineage: Fingerprint,
    path: Option<PathBuf>,
    stats: Arc<AccessStats>,
}

impl std::fmt::Debug for Table {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Table")
            .field("rows", &self.num_rows())
            .field("batches", &self.batches.len())
            .field("fingerprint", &self.fingerprint)
            .field("path", &self.path)
            .finish()
    }
}

/// Opens a DSET1 file, reading only the header and footer.
pub fn open_table(path: impl AsRef<Path>) -> Result<Table, StoreError> {
    Table::open(path.as_ref(), false)
}

/// Opens a DSET1 file and recomputes its fingerprint over every buffer.
pub fn open_table_verified(path: impl AsRef<Path>) -> Result<Table, StoreError> {
    Table::open(path.as_ref(), true)
}

impl Table {
    pub fn open(path: &Path, verify: bool) -> Result<Table, StoreError> {
        let file = File::open(path)?;
        // SAFETY: tables are immutable once written (atomic rename); the map
        // is read-only and every access is bounds-checked.
        let map = unsafe { Mmap::map(&file)? };
        let mut t = Table::from_backing(Backing::Mapped(map), verify)?;
        t.path = Some(path.to_path_buf());
        Ok(t)
    }

    /// Parses a DSET1 image held in memory.
    pub fn from_bytes(bytes: Vec<u8>, verify: bool) -> Result<Table, StoreError> {
        Table::from_backing(Backing::Owned(bytes), verify)
    }

    fn from_backing(backing: Backing, verify: bool) -> Result<Table, StoreError> {
        let b = backing.bytes();
        if b.len() < MAGIC.len() || &b[..MAGIC.len()] != MAGIC {
            return Err(StoreError::BadMagic);
        }
        let version = le_u16(b, 6).ok_or(StoreError::TruncatedFile)?;
        if version != FORMAT_VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        let schema_len = le_u32(b, 8).ok_or(StoreError::TruncatedFile)? as usize;
        let schema_bytes = b.get(12..12 + schema_len).ok_or(StoreError::TruncatedFile)?;
        let header_end = 12 + schema_len + pad8(12 + schema_len);

        // trailer: u32 footer_len + magic
        if b.len() < header_end + 10 || &b[b.len() - MAGIC.len()..] != MAGIC {
            return Err(StoreError::TruncatedFile);
        }
        let footer_len = le_u32(b, b.len() - 10).unwrap() as usize;
        let footer_start = (b.len() - 10)
            .checked_sub(footer_len)
            .filter(|&s| s >= header_end)
            .ok_or(StoreError::TruncatedFile)?;
        let batch_count = le_u64(b, footer_start).ok_or(StoreError::TruncatedFile)?;
        let expected_len = usize::try_from(batch_count)
            .ok()
            .and_then(|n| n.checked_mul(16))
            .and_then(|n| n.checked_add(40));
        if expected_len != Some(footer_len) {
            return Err(StoreError::TruncatedFile);
        }
        let batch_count = batch_count as usize;

        let schema_text = std::str::from_utf8(schema_bytes).map_err(|_| corrupt("schema is not utf-8"))?;
        let schema = Schema::from_json(schema_text)?;
        let schema_json: Arc<str> = Arc::from(schema_text);
        let fp_at = footer_start + 8 + 16 * batch_count;
        let fingerprint = Fingerprint(b[fp_at..fp_at + 32].try_into().unwrap());

        let mut entries = Vec::with_capacity(batch_count);
        let mut prev_offset = header_end;
        let mut prev_cum = 0u64;
        for i in 0..batch_count {
            let at = footer_start + 8 + 16 * i;
            let offset = le_u64(b, at).unwrap();
            let cum = le_u64(b, at + 8).unwrap();
            let offset = usize::try_from(offset).map_err(|_| corrupt("batch offset too large"))?;
            if offset < prev_offset || offset >= footer_start || offset % 8 != 0 {
                return Err(corrupt("batch offsets out of order"));
            }
            if cum <= prev_cum {
                return Err(corrupt("cumulative rows must increase"));
            }
            entries.push((offset, cum - prev_cum));
            prev_offset = offset + 1;
            prev_cum = cum;
        }

        let backing = Arc::new(backing);
        let mut batches = Vec::with_capacity(batch_count);
        let mut cumulative_rows = Vec::with_capacity(batch_count);
        let mut total = 0;
        for (i, &(offset, rows)) in entries.iter().enumerate() {
            let limit = entries.get(i + 1).map_or(footer_start, |e| e.0);
            total += rows;
            cumulative_rows.push(total);
            batches.push(BatchLoc {
                backing: Arc::clone(&backing),
                offset,
                limit,
                rows,
            });
        }

        let table = Table {
            schema: Arc::new(schema),
            schema_json,
            batches,
            cumulative_rows,
            fingerprint,
            lineage: fingerprint,
            path: None,
            stats: Arc::default(),
        };
        if verify {
            if table.compute_fingerprint()? != fingerprint {
                return Err(StoreError::ChecksumMismatch);
            }
            let header_pad = &backing.bytes()[12 + schema_len..header_end];
            let first = table.batches.first().map_or(footer_start, |l| l.offset);
            if first != header_end || header_pad.iter().any(|&x| x != 0) {
                return Err(corrupt("header padding or layout"));
            }
            table.check_layout()?;
        }
        Ok(table)
    }

    /// Batches must tile the data region exactly, with zeroed padding, so
    /// that every byte is either hashed, structural or known-zero.
    fn check_layout(&self) -> Result<(), StoreError> {
        for loc in &self.batches {
            let bytes = loc.backing.bytes();
            let parsed = loc.parse()?;
            if loc.offset + parsed.span != loc.limit {
                return Err(corrupt("gap after batch"));
            }
            let base = bytes.as_ptr() as usize;
            let count = parsed.buffers.len();
            let mut pos = loc.offset + 12 + 8 * count;
            for buf in &parsed.buffers {
                let start = buf.as_ptr() as usize - base;
                if bytes[pos..start].iter().any(|&x| x != 0) {
                    return Err(corrupt("non-zero padding"));
                }
                pos = start + buf.len();
            }
            if bytes[pos..loc.limit].iter().any(|&x| x != 0) {
                return Err(corrupt("non-zero padding"));
            }
        }
        Ok(())
    }

    /// Hashes the schema text and every buffer in order.
    pub(crate) fn compute_fingerprint(&self) -> Result<Fingerprint, StoreError> {
        let mut h = Sha256::new();
        h.update(self.schema_json.as_bytes());
        for b in &self.batches {
            let parsed = b.parse()?;
            for buf in parsed.buffers {
                h.update(buf);
            }
        }
        Ok(Fingerprint::from_hasher(h))
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn num_rows(&self) -> u64 {
        self.cumulative_rows.last().copied().unwrap_or(0)
    }

    pub fn num_batches(&self) -> usize {
        self.batches.len()
    }

    /// Prefix sums of batch row counts.
    pub fn cumulative_rows(&self) -> &[u64] {
        &self.cumulative_rows
    }

    /// Content hash stored in the footer.
    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    /// Identity of how this table was produced. Equal to the content
    /// fingerprint for tables written directly; transforms replace it with
    /// the chained fingerprint of the step that produced the table.
    pub fn lineage(&self) -> Fingerprint {
        self.lineage
    }

    pub fn with_lineage(mut self, lineage: Fingerprint) -> Self {
        self.lineage = lineage;
        self
    }

    /// Backing file, if the table maps exactly one file.
    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn stats(&self) -> &AccessStats {
        &self.stats
    }

    /// Index of the batch containing `row`: the `b` with
    /// `cumulative_rows[b-1] <= row < cumulative_rows[b]`.
    pub fn batch_for_row(&self, row: u64) -> Option<usize> {
        let b = self.cumulative_rows.partition_point(|&c| c <= row);
        (b < self.batches.len()).then_some(b)
    }

    fn batch_start(&self, b: usize) -> u64 {
        if b == 0 {
            0
        } else {
            self.cumulative_rows[b - 1]
        }
    }

    fn open_batch(&self, b: usize) -> Result<BatchBuffers<'_>, StoreError> {
        self.stats.batch_opened();
        let parsed = self.batches[b].parse()?;
        let expected: usize = self.schema.columns().iter().map(|c| buffer_count(&c.ty)).sum();
        if parsed.buffers.len() != expected {
            return Err(corrupt("batch buffer count does not match schema"));
        }
        Ok(parsed)
    }

    fn batch_nodes<'a>(&'a self, parsed: &BatchBuffers<'a>) -> Result<Vec<Node<'a>>, StoreError> {
        let mut it = parsed.buffers.iter();
        self.schema
            .columns()
            .iter()
            .map(|c| Node::build(&c.ty, parsed.rows, &mut it))
            .collect()
    }

    /// Decodes rows `[start, end)`, touching only the batches that overlap
    /// the range.
    pub fn slice(&self, start: u64, end: u64) -> Result<Vec<Row>, StoreError> {
        let total = self.num_rows();
        if start > end || end > total {
            return Err(StoreError::OutOfBounds {
                start,
                end,
                rows: total,
            });
        }
        let mut out = Vec::with_capacity((end - start) as usize);
        if start == end {
            return Ok(out);
        }
        let mut b = self.batch_for_row(start).expect("start < total");
        let mut row = start;
        while row < end {
            let first = self.batch_start(b);
            let parsed = self.open_batch(b)?;
            let nodes = self.batch_nodes(&parsed)?;
            let stop = end.min(self.cumulative_rows[b]);
            for r in row..stop {
                let local = (r - first) as usize;
                let values = nodes
                    .iter()
                    .map(|n| n.value(local, &self.stats))
                    .collect::<Result<Row, _>>()?;
                out.push(values);
            }
            row = stop;
            b += 1;
        }
        Ok(out)
    }

    pub fn row(&self, i: u64) -> Result<Row, StoreError> {
        Ok(self.slice(i, i + 1)?.pop().unwrap())
    }

    pub fn read_all(&self) -> Result<Vec<Row>, StoreError> {
        self.slice(0, self.num_rows())
    }

    /// Streams every row in order, decoding one chunk at a time.
    pub fn iter_rows(&self) -> impl Iterator<Item = Result<Row, StoreError>> + '_ {
        const CHUNK: u64 = 1024;
        let total = self.num_rows();
        (0..total.div_ceil(CHUNK)).flat_map(move |c| {
            let start = c * CHUNK;
            match self.slice(start, (start + CHUNK).min(total)) {
                Ok(rows) => rows.into_iter().map(Ok).collect::<Vec<_>>(),
                Err(e) => vec![Err(e)],
            }
        })
    }

    fn column_position(&self, name: &str) -> Result<(usize, usize), StoreError> {
        let idx = self
            .schema
            .index_of(name)
            .ok_or_else(|| StoreError::UnknownColumn(name.to_owned()))?;
        let first_buffer = self.schema.columns()[..idx].iter().map(|c| buffer_count(&c.ty)).sum();
        Ok((idx, first_buffer))
    }

    /// Iterates the values of one column without decoding the others.
    pub fn get_column(&self, name: &str) -> Result<ColumnIter<'_>, StoreError> {
        let (idx, first_buffer) = self.column_position(name)?;
        Ok(ColumnIter {
            table: self,
            ty: &self.schema.columns()[idx].ty,
            first_buffer,
            batch: 0,
            current: None,
        })
    }

    /// Raw little-endian value buffers of a fixed-width column, one chunk per
    /// batch, borrowed straight from the mapping.
    pub fn raw_column_chunks(&self, name: &str) -> Result<Vec<RawChunk<'_>>, StoreError> {
        let (idx, first_buffer) = self.column_position(name)?;
        let ty = &self.schema.columns()[idx].ty;
        if !matches!(
            ty,
            FeatureType::Int64 | FeatureType::Float64 | FeatureType::ClassLabel { .. } | FeatureType::Tensor { .. }
        ) {
            return Err(StoreError::NotFixedWidth(name.to_owned()));
        }
        (0..self.batches.len())
            .map(|b| {
                let parsed = self.open_batch(b)?;
                let mut it = parsed.buffers[first_buffer..].iter();
                Node::build(ty, parsed.rows, &mut it)?;
                Ok(RawChunk {
                    rows: parsed.rows,
                    validity: parsed.buffers[first_buffer],
                    data: parsed.buffers[first_buffer + 1],
                })
            })
            .collect()
    }

    /// Writes this table to `path` by copying batch bytes verbatim.
    pub fn persist(&self, path: &Path) -> Result<Table, StoreError> {
        super::writer::persist_batches(self, path)
    }

    pub(crate) fn schema_json(&self) -> &str {
        &self.schema_json
    }

    /// Raw bytes of each batch (header, buffers and padding), in order.
    pub(crate) fn batch_regions(&self) -> Result<Vec<(u64, &[u8])>, StoreError> {
        self.batches
            .iter()
            .map(|b| {
                let parsed = b.parse()?;
                Ok((b.rows, &b.backing.bytes()[b.offset..b.offset + parsed.span]))
            })
            .collect()
    }
}

/// One batch worth of a fixed-width column.
#[derive(Debug, Clone, Copy)]
pub struct RawChunk<'a> {
    pub rows: usize,
    /// Validity bitmap, least significant bit first.
    pub validity: &'a [u8],
    /// Little-endian values, 8-byte aligned within the file.
    pub data: &'a [u8],
}

impl<'a> RawChunk<'a> {
    /// Typed view over the values without copying. `None` if the buffer is
    /// not suitably aligned (only possible for in-memory images).
    pub fn as_i64(&self) -> Option<&'a [i64]> {
        bytemuck::try_cast_slice(self.data).ok()
    }

    pub fn as_f64(&self) -> Option<&'a [f64]> {
        bytemuck::try_cast_slice(self.data).ok()
    }

    pub fn as_f32(&self) -> Option<&'a [f32]> {
        bytemuck::try_cast_slice(self.data).ok()
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.validity.get(i / 8).is_some_and(|b| b & (1 << (i % 8)) != 0)
    }
}

/// Lazily decodes one column, batch by batch.
pub struct ColumnIter<'a> {
    table: &'a Table,
    ty: &'a FeatureType,
    first_buffer: usize,
    batch: usize,
    current: Option<(Node<'a>, usize, usize)>,
}

impl<'a> ColumnIter<'a> {
    fn load(&mut self) -> Result<(), StoreError> {
        let parsed = self.table.open_batch(self.batch)?;
        let mut it = parsed.buffers[self.first_buffer..].iter();
        let node = Node::build(self.ty, parsed.rows, &mut it)?;
        self.current = Some((node, parsed.rows, 0));
        Ok(())
    }
}

impl Iterator for ColumnIter<'_> {
    type Item = Result<Value, StoreError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some((node, rows, i)) = &mut self.current {
                if *i < *rows {
                    let v = node.value(*i, &self.table.stats);
                    *i += 1;
                    return Some(v);
                }
                self.current = None;
            }
            if self.batch >= self.table.batches.len() {
                return None;
            }
            let loaded = self.load();
            self.batch += 1;
            if let Err(e) = loaded {
                self.batch = usize::MAX;
                return Some(Err(e));
            }
        }
    }
}

/// Concatenates tables by reference: batches are shared, never re-encoded.
pub fn concat_tables(tables: &[Table]) -> Result<Table, StoreError> {
    let first = tables.first().ok_or(StoreError::EmptyConcat)?;
    if tables.iter().any(|t| t.schema != first.schema) {
        return Err(StoreError::SchemaMismatch);
    }
    if tables.len() == 1 {
        return Ok(first.clone());
    }
    let mut batches = Vec::new();
    let mut cumulative_rows = Vec::new();
    let mut total = 0;
    for t in tables {
        for b in &t.batches {
            total += b.rows;
            cumulative_rows.push(total);
            batches.push(b.clone());
        }
    }
    let mut out = Table {
        schema: Arc::clone(&first.schema),
        schema_json: Arc::clone(&first.schema_json),
        batches,
        cumulative_rows,
        fingerprint: first.fingerprint,
        lineage: first.lineage,
        path: None,
        stats: Arc::default(),
    };
    out.fingerprint = out.compute_fingerprint()?;
    out.lineage = out.fingerprint;
    Ok(out)
}
