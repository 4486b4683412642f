//! Read-side views over a batch's buffers. Views borrow directly from the
//! mapped file; values are materialized one element at a time.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{bitmap_len, StoreError};
use crate::schema::{FeatureType, TensorDtype, Value};

/// Counters describing how a table has been read. Shared by clones of a
/// table and used by tests to assert which buffers a read touched.
#[derive(Debug, Default)]
pub struct AccessStats {
    offsets_reads: AtomicU64,
    batches_opened: AtomicU64,
}

impl AccessStats {
    /// Number of offset-buffer lookups performed so far.
    pub fn offsets_reads(&self) -> u64 {
        self.offsets_reads.load(Ordering::Relaxed)
    }

    /// Number of batch headers parsed so far.
    pub fn batches_opened(&self) -> u64 {
        self.batches_opened.load(Ordering::Relaxed)
    }

    pub(crate) fn batch_opened(&self) {
        self.batches_opened.fetch_add(1, Ordering::Relaxed);
    }

    fn offsets_read(&self) {
        self.offsets_reads.fetch_add(1, Ordering::Relaxed);
    }
}

fn corrupt(msg: impl Into<String>) -> StoreError {
    StoreError::Corrupt(msg.into())
}

fn read_u64(buf: &[u8], i: usize) -> Result<u64, StoreError> {
    let start = i.checked_mul(8).ok_or_else(|| corrupt("offset overflow"))?;
    buf.get(start..start + 8)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| corrupt("offset index out of range"))
}

fn bit(bits: &[u8], i: usize) -> bool {
    bits.get(i / 8).is_some_and(|b| b & (1 << (i % 8)) != 0)
}

/// Pulls the next buffer from the batch, failing if the batch ran out.
fn next<'a>(bufs: &mut std::slice::Iter<'_, &'a [u8]>) -> Result<&'a [u8], StoreError> {
    bufs.next().copied().ok_or_else(|| corrupt("missing buffer"))
}

fn expect_len(buf: &[u8], len: Option<usize>, what: &str) -> Result<(), StoreError> {
    match len {
        Some(n) if n == buf.len() => Ok(()),
        _ => Err(corrupt(format!("{what} buffer has wrong length"))),
    }
}

fn check_offsets(offsets: &[u8], rows: usize, last: Option<usize>) -> Result<usize, StoreError> {
    expect_len(offsets, rows.checked_add(1).and_then(|n| n.checked_mul(8)), "offsets")?;
    if read_u64(offsets, 0)? != 0 {
        return Err(corrupt("offsets must start at 0"));
    }
    let end = read_u64(offsets, rows)?;
    let end = usize::try_from(end).map_err(|_| corrupt("offset too large"))?;
    if let Some(expect) = last {
        if end != expect {
            return Err(corrupt("final offset does not match data length"));
        }
    }
    Ok(end)
}

pub(crate) enum Node<'a> {
    Int64 {
        validity: &'a [u8],
        data: &'a [u8],
    },
    Float64 {
        validity: &'a [u8],
        data: &'a [u8],
    },
    Bool {
        validity: &'a [u8],
        bits: &'a [u8],
    },
    Tensor {
        validity: &'a [u8],
        data: &'a [u8],
        dtype: TensorDtype,
        elems: usize,
    },
    Bytes {
        validity: &'a [u8],
        offsets: &'a [u8],
        data: &'a [u8],
        utf8: bool,
    },
    List {
        validity: &'a [u8],
        offsets: &'a [u8],
        child_rows: usize,
        child: Box<Node<'a>>,
    },
    Struct {
        validity: &'a [u8],
        names: Vec<&'a str>,
        children: Vec<Node<'a>>,
    },
}

impl<'a> Node<'a> {
    /// Builds a view for `rows` values of type `ty`, consuming buffers from
    /// `bufs` and checking every buffer length against the row count.
    pub(crate) fn build(
        ty: &'a FeatureType,
        rows: usize,
        bufs: &mut std::slice::Iter<'_, &'a [u8]>,
    ) -> Result<Self, StoreError> {
        let validity = next(bufs)?;
        expect_len(validity, Some(bitmap_len(rows)), "validity")?;
        let node = match ty {
            FeatureType::Int64 | FeatureType::ClassLabel { .. } | FeatureType::Float64 => {
                let data = next(bufs)?;
                expect_len(data, rows.checked_mul(8), "data")?;
                if matches!(ty, FeatureType::Float64) {
                    Node::Float64 { validity, data }
                } else {
                    Node::Int64 { validity, data }
                }
            }
            FeatureType::Bool => {
                let bits = next(bufs)?;
                expect_len(bits, Some(bitmap_len(rows)), "bool")?;
                Node::Bool { validity, bits }
            }
            FeatureType::Tensor { dtype, shape } => {
                let elems = shape
                    .iter()
                    .try_fold(1usize, |acc, &d| acc.checked_mul(usize::try_from(d).ok()?))
                    .ok_or_else(|| corrupt("tensor shape overflow"))?;
                let data = next(bufs)?;
                expect_len(
                    data,
                    rows.checked_mul(elems).and_then(|n| n.checked_mul(dtype.width())),
                    "tensor",
                )?;
                Node::Tensor {
                    validity,
                    data,
                    dtype: *dtype,
                    elems,
                }
            }
            FeatureType::Utf8String | FeatureType::Binary => {
                let offsets = next(bufs)?;
                let data = next(bufs)?;
                check_offsets(offsets, rows, Some(data.len()))?;
                Node::Bytes {
                    validity,
                    offsets,
                    data,
                    utf8: matches!(ty, FeatureType::Utf8String),
                }
            }
            FeatureType::Sequence { inner, .. } => {
                let offsets = next(bufs)?;
                let child_rows = check_offsets(offsets, rows, None)?;
                let child = Node::build(inner, child_rows, bufs)?;
                Node::List {
                    validity,
                    offsets,
                    child_rows,
                    child: Box::new(child),
                }
            }
            FeatureType::Translation { languages } => {
                static STRING: FeatureType = FeatureType::Utf8String;
                let children = languages
                    .iter()
                    .map(|_| Node::build(&STRING, rows, bufs))
                    .collect::<Result<Vec<_>, _>>()?;
                Node::Struct {
                    validity,
                    names: languages.iter().map(String::as_str).collect(),
                    children,
                }
            }
            FeatureType::Record { fields } => {
                let children = fields
                    .iter()
                    .map(|(_, t)| Node::build(t, rows, bufs))
                    .collect::<Result<Vec<_>, _>>()?;
                Node::Struct {
                    validity,
                    names: fields.iter().map(|(n, _)| n.as_str()).collect(),
                    children,
                }
            }
        };
        Ok(node)
    }

    fn validity(&self) -> &'a [u8] {
        match self {
            Node::Int64 { validity, .. }
            | Node::Float64 { validity, .. }
            | Node::Bool { validity, .. }
            | Node::Tensor { validity, .. }
            | Node::Bytes { validity, .. }
            | Node::List { validity, .. }
            | Node::Struct { validity, .. } => validity,
        }
    }

    /// Decodes element `i`. Bounds were checked at build time, but offsets
    /// are validated again here since they come from the file.
    pub(crate) fn value(&self, i: usize, stats: &AccessStats) -> Result<Value, StoreError> {
        if !bit(self.validity(), i) {
            return Ok(Value::Null);
        }
        let v = match self {
            Node::Int64 { data, .. } => Value::Int(read_u64(data, i)? as i64),
            Node::Float64 { data, .. } => Value::Float(f64::from_bits(read_u64(data, i)?)),
            Node::Bool { bits, .. } => Value::Bool(bit(bits, i)),
            Node::Tensor { data, dtype, elems, .. } => {
                let w = dtype.width();
                let start = i * elems * w;
                let chunk = data
                    .get(start..start + elems * w)
                    .ok_or_else(|| corrupt("tensor index out of range"))?;
                let items = chunk
                    .chunks_exact(w)
                    .map(|c| match dtype {
                        TensorDtype::Int64 => Value::Int(i64::from_le_bytes(c.try_into().unwrap())),
                        TensorDtype::Float64 => Value::Float(f64::from_le_bytes(c.try_into().unwrap())),
                        TensorDtype::Float32 => Value::Float(f32::from_le_bytes(c.try_into().unwrap()) as f64),
                    })
                    .collect();
                Value::List(items)
            }
            Node::Bytes {
                offsets, data, utf8, ..
            } => {
                stats.offsets_read();
                let (a, b) = range(offsets, i)?;
                let bytes = data.get(a..b).ok_or_else(|| corrupt("string offsets out of range"))?;
                if *utf8 {
                    Value::Text(
                        std::str::from_utf8(bytes)
                            .map_err(|_| corrupt("invalid utf-8"))?
                            .to_owned(),
                    )
                } else {
                    Value::Bytes(bytes.to_vec())
                }
            }
            Node::List {
                offsets,
                child_rows,
                child,
                ..
            } => {
                stats.offsets_read();
                let (a, b) = range(offsets, i)?;
                if b > *child_rows {
                    return Err(corrupt("list offsets out of range"));
                }
                let items = (a..b).map(|j| child.value(j, stats)).collect::<Result<Vec<_>, _>>()?;
                Value::List(items)
            }
            Node::Struct { names, children, .. } => {
                let mut m = BTreeMap::new();
                for (name, child) in names.iter().zip(children) {
                    m.insert((*name).to_owned(), child.value(i, stats)?);
                }
                Value::Map(m)
            }
        };
        Ok(v)
    }
}

fn range(offsets: &[u8], i: usize) -> Result<(usize, usize), StoreError> {
    let a = read_u64(offsets, i)?;
    let b = read_u64(offsets, i + 1)?;
    if a > b {
        return Err(corrupt("offsets decrease"));
    }
    let a = usize::try_from(a).map_err(|_| corrupt("offset too large"))?;
    let b = usize::try_from(b).map_err(|_| corrupt("offset too large"))?;
    Ok((a, b))
}
