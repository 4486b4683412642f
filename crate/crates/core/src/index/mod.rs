//! Text (BM25) and vector (exact kNN) indexes over table columns.
//!
//! Index files are self-describing: a 4-byte magic (`TIX1` or `VIX1`), a
//! u32 format version, a u32-length-prefixed JSON parameter block, then
//! little-endian data. They live at
//! `<cache>/indexes/<table-fingerprint>/<column>.{tix|vix}`.

mod text;
mod vector;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::canonical::Fingerprint;
use crate::store::StoreError;

pub use text::{bm25_query, build_text_index, InvertedIndex, Posting, BM25_B, BM25_K1, TOKENIZER};
pub use vector::{build_vector_index, knn_query, Metric, VectorIndex};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("column {column:?} has type {found}, expected {expected}")]
    WrongType {
        column: String,
        expected: &'static str,
        found: String,
    },
    #[error("row {0} has a zero vector, which has no cosine direction")]
    ZeroVector(u64),
    #[error("query has dimension {got}, index has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("bad index file magic")]
    BadMagic,
    #[error("unsupported index format version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt index file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Splits on every non-alphanumeric character after Unicode lowercasing;
/// empty tokens are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

pub fn index_path(cache_dir: &Path, table: &Fingerprint, column: &str, ext: &str) -> PathBuf {
    cache_dir
        .join("indexes")
        .join(table.to_hex())
        .join(format!("{column}.{ext}"))
}

fn corrupt(msg: &str) -> IndexError {
    IndexError::Corrupt(msg.to_owned())
}

/// Little-endian reader with bounds checks.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).ok_or_else(|| corrupt("length overflow"))?;
        let b = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| corrupt("unexpected end of file"))?;
        self.pos = end;
        Ok(b)
    }

    pub(crate) fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    /// A count that must fit in the remaining bytes at `min_size` each.
    pub(crate) fn count(&mut self, min_size: usize) -> Result<usize, IndexError> {
        let n = usize::try_from(self.u64()?).map_err(|_| corrupt("count too large"))?;
        if n.saturating_mul(min_size.max(1)) > self.buf.len() - self.pos {
            return Err(corrupt("count exceeds file size"));
        }
        Ok(n)
    }

    pub(crate) fn finish(self) -> Result<(), IndexError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(corrupt("trailing bytes"))
        }
    }
}

pub(crate) fn write_header(out: &mut Vec<u8>, magic: &[u8; 4], params: &serde_json::Value) {
    let params = crate::canonical::canonical_json(params);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    out.extend_from_slice(params.as_bytes());
}

pub(crate) fn read_header<'a>(buf: &'a [u8], magic: &[u8; 4]) -> Result<(serde_json::Value, Reader<'a>), IndexError> {
    let mut r = Reader::new(buf);
    if r.bytes(4).map_err(|_| IndexError::BadMagic)? != magic {
        return Err(IndexError::BadMagic);
    }
    let v = r.u32()?;
    if v != FORMAT_VERSION {
        return Err(IndexError::UnsupportedVersion(v));
    }
    let n = r.u32()? as usize;
    let params = serde_json::from_slice(r.bytes(n)?).map_err(|e| IndexError::Corrupt(e.to_string()))?;
    Ok((params, r))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IndexError> {
    let io = |e| IndexError::Store(StoreError::from_io(e));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = crate::store::temp_file_path(path);
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

/// Ranks `(id, score)` pairs: by score (descending unless `ascending`),
/// ties by ascending id, truncated to `k`.
pub(crate) fn rank(mut scored: Vec<(u64, f64)>, k: usize, ascending: bool) -> Vec<(u64, f64)> {
    scored.sort_by(|a, b| {
        let by_score = if ascending {
            a.1.total_cmp(&b.1)
        } else {
            b.1.total_cmp(&a.1)
        };
        by_score.then(a.0.cmp(&b.0))
    });
    scored.truncate(k);
    scored
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer() {
        assert_eq!(tokenize("Hello, WORLD!"), ["hello", "world"]);
        assert_eq!(tokenize("  "), Vec::<String>::new());
        assert_eq!(tokenize("Ünïcode straße_x2"), ["ünïcode", "straße", "x2"]);
    }

    #[test]
    fn ranking() {
        let r = rank(vec![(3, 1.0), (1, 2.0), (2, 1.0)], 10, false);
        assert_eq!(r, [(1, 2.0), (2, 1.0), (3, 1.0)]);
        let r = rank(vec![(3, 1.0), (1, 2.0), (2, 1.0)], 2, true);
        assert_eq!(r, [(2, 1.0), (3, 1.0)]);
    }
}
