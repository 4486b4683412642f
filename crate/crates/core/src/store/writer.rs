use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use super::encode::ColumnEncoder;
use super::table::Table;
use super::{pad8, StoreError, DEFAULT_BATCH_ROWS, FORMAT_VERSION, MAGIC};
use crate::canonical::Fingerprint;
use crate::schema::{Row, Schema};

#[derive(Debug, Clone, Copy)]
pub struct WriteOptions {
    pub batch_rows: usize,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions {
            batch_rows: DEFAULT_BATCH_ROWS,
        }
    }
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Sibling temp path used for write-then-rename.
pub(crate) fn temp_path(path: &Path) -> PathBuf {
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp.{}.{n}", std::process::id()))
}

const ZEROS: [u8; 8] = [0; 8];

struct Sink {
    out: BufWriter<File>,
    pos: u64,
}

impl Sink {
    fn write(&mut self, bytes: &[u8]) -> Result<(), StoreError> {
        self.out.write_all(bytes).map_err(StoreError::from_io)?;
        self.pos += bytes.len() as u64;
        Ok(())
    }

    fn pad(&mut self) -> Result<(), StoreError> {
        let n = pad8(self.pos as usize % 8);
        self.write(&ZEROS[..n])
    }
}

/// Streaming DSET1 writer. Rows are validated and encoded as they arrive;
/// at most one batch is held in memory.
pub struct TableWriter {
    schema: Schema,
    schema_json: String,
    opts: WriteOptions,
    encoders: Vec<ColumnEncoder>,
    pending: usize,
    sink: Sink,
    hasher: Sha256,
    index: Vec<(u64, u64)>,
    total: u64,
    tmp: PathBuf,
    dest: PathBuf,
    done: bool,
}

impl TableWriter {
    pub fn create(path: impl AsRef<Path>, schema: &Schema, opts: WriteOptions) -> Result<Self, StoreError> {
        let dest = path.as_ref().to_path_buf();
        if let Some(dir) = dest.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(StoreError::from_io)?;
        }
        let tmp = temp_path(&dest);
        let file = File::create(&tmp).map_err(StoreError::from_io)?;
        let schema_json = schema.to_json();
        let mut hasher = Sha256::new();
        hasher.update(schema_json.as_bytes());

        let mut w = TableWriter {
            schema: schema.clone(),
            encoders: schema.columns().iter().map(|c| ColumnEncoder::new(&c.ty)).collect(),
            schema_json,
            opts: WriteOptions {
                batch_rows: opts.batch_rows.max(1),
            },
            pending: 0,
            sink: Sink {
                out: BufWriter::with_capacity(1 << 20, file),
                pos: 0,
            },
            hasher,
            index: Vec::new(),
            total: 0,
            tmp,
            dest,
            done: false,
        };
        w.write_header()?;
        Ok(w)
    }

    fn write_header(&mut self) -> Result<(), StoreError> {
        self.sink.write(MAGIC)?;
        self.sink.write(&FORMAT_VERSION.to_le_bytes())?;
        self.sink.write(&(self.schema_json.len() as u32).to_le_bytes())?;
        self.sink.write(self.schema_json.as_bytes())?;
        self.sink.pad()
    }

    /// Validates and appends one row.
    pub fn push(&mut self, row: &Row) -> Result<(), StoreError> {
        self.schema.validate_row(row)?;
        for (enc, v) in self.encoders.iter_mut().zip(row) {
            enc.push(v);
        }
        self.pending += 1;
        if self.pending == self.opts.batch_rows {
            self.flush_batch()?;
        }
        Ok(())
    }

    pub fn rows_written(&self) -> u64 {
        self.total + self.pending as u64
    }

    fn flush_batch(&mut self) -> Result<(), StoreError> {
        if self.pending == 0 {
            return Ok(());
        }
        let mut buffers = Vec::new();
        for enc in &mut self.encoders {
            enc.finish(&mut buffers);
        }
        let offset = self.sink.pos;
        self.sink.write(&(self.pending as u64).to_le_bytes())?;
        self.sink.write(&(buffers.len() as u32).to_le_bytes())?;
        for b in &buffers {
            self.sink.write(&(b.len() as u64).to_le_bytes())?;
        }
        self.sink.pad()?;
        for b in &buffers {
            self.hasher.update(b);
            self.sink.write(b)?;
            self.sink.pad()?;
        }
        self.total += self.pending as u64;
        self.index.push((offset, self.total));
        self.pending = 0;
        Ok(())
    }

    /// Writes the footer, renames into place and opens the result.
    pub fn finish(mut self) -> Result<Table, StoreError> {
        self.flush_batch()?;
        let fingerprint = Fingerprint::from_hasher(std::mem::take(&mut self.hasher));
        write_footer(&mut self.sink, &self.index, fingerprint)?;
        self.sink.out.flush().map_err(StoreError::from_io)?;
        fs::rename(&self.tmp, &self.dest).map_err(StoreError::from_io)?;
        self.done = true;
        Table::open(&self.dest, false)
    }
}

impl Drop for TableWriter {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_file(&self.tmp);
        }
    }
}

fn write_footer(sink: &mut Sink, index: &[(u64, u64)], fp: Fingerprint) -> Result<(), StoreError> {
    sink.write(&(index.len() as u64).to_le_bytes())?;
    for (offset, cum) in index {
        sink.write(&offset.to_le_bytes())?;
        sink.write(&cum.to_le_bytes())?;
    }
    sink.write(&fp.0)?;
    let footer_len = 8 + 16 * index.len() + 32;
    sink.write(&(footer_len as u32).to_le_bytes())?;
    sink.write(MAGIC)
}

/// Writes rows to a DSET1 file at `path` with default options.
pub fn write_table<'a>(
    schema: &Schema,
    rows: impl IntoIterator<Item = &'a Row>,
    path: impl AsRef<Path>,
) -> Result<Table, StoreError> {
    write_table_with(schema, rows, path, WriteOptions::default())
}

pub fn write_table_with<'a>(
    schema: &Schema,
    rows: impl IntoIterator<Item = &'a Row>,
    path: impl AsRef<Path>,
    opts: WriteOptions,
) -> Result<Table, StoreError> {
    let mut w = TableWriter::create(path, schema, opts)?;
    for row in rows {
        w.push(row)?;
    }
    w.finish()
}

/// Copies a (possibly concatenated) table's batches verbatim into one file.
pub(crate) fn persist_batches(table: &Table, path: &Path) -> Result<Table, StoreError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(StoreError::from_io)?;
    }
    let tmp = temp_path(path);
    let result = (|| {
        let file = File::create(&tmp).map_err(StoreError::from_io)?;
        let mut sink = Sink {
            out: BufWriter::with_capacity(1 << 20, file),
            pos: 0,
        };
        let json = table.schema_json();
        sink.write(MAGIC)?;
        sink.write(&FORMAT_VERSION.to_le_bytes())?;
        sink.write(&(json.len() as u32).to_le_bytes())?;
        sink.write(json.as_bytes())?;
        sink.pad()?;
        let mut index = Vec::new();
        let mut total = 0;
        for (rows, bytes) in table.batch_regions()? {
            let offset = sink.pos;
            sink.write(bytes)?;
            total += rows;
            index.push((offset, total));
        }
        write_footer(&mut sink, &index, table.fingerprint())?;
        sink.out.flush().map_err(StoreError::from_io)?;
        fs::rename(&tmp, path).map_err(StoreError::from_io)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result?;
    Table::open(path, false)
}
