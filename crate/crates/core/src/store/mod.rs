//! DSET1 columnar storage: a single-file format of record batches that is
//! memory-mapped on open and decoded lazily, batch by batch.
//!
//! File layout (all integers little-endian, every section 8-byte aligned):
//!
//! ```text
//! "DSET1\0" | u16 version | u32 schema_len | schema JSON | pad
//! batch*:  u64 row_count | u32 buffer_count | u64 len * buffer_count | pad
//!          | buffer bytes, each padded to 8
//! footer:  u64 batch_count | (u64 offset, u64 cum_rows) * batch_count
//!          | [u8; 32] sha256 | u32 footer_len | "DSET1\0"
//! ```
//!
//! The fingerprint covers the schema JSON followed by every buffer's bytes
//! (unpadded) in file order.

mod decode;
mod encode;
mod table;
mod writer;

use std::io;

use thiserror::Error;

use crate::schema::SchemaError;

pub use decode::AccessStats;
pub use table::{concat_tables, open_table, open_table_verified, ColumnIter, RawChunk, Table};
pub(crate) use writer::temp_path as temp_file_path;
pub use writer::{write_table, write_table_with, TableWriter, WriteOptions};

pub const MAGIC: &[u8; 6] = b"DSET1\0";
pub const FORMAT_VERSION: u16 = 1;
pub const DEFAULT_BATCH_ROWS: usize = 10_000;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("disk full")]
    DiskFull,
    #[error(transparent)]
    Type(#[from] SchemaError),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated file")]
    TruncatedFile,
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("checksum mismatch")]
    ChecksumMismatch,
    #[error("range [{start}, {end}) out of bounds for {rows} rows")]
    OutOfBounds { start: u64, end: u64, rows: u64 },
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("column {0:?} is not fixed-width")]
    NotFixedWidth(String),
    #[error("schema mismatch")]
    SchemaMismatch,
    #[error("nothing to concatenate")]
    EmptyConcat,
}

impl StoreError {
    pub(crate) fn from_io(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::StorageFull {
            StoreError::DiskFull
        } else {
            StoreError::Io(e)
        }
    }
}

pub(crate) fn pad8(n: usize) -> usize {
    (8 - n % 8) % 8
}

pub(crate) fn bitmap_len(rows: usize) -> usize {
    rows.div_ceil(8)
}
