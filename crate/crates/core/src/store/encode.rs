//! Column encoders. Each feature type maps onto a fixed, pre-order list of
//! buffers; nulls clear the validity bit and write a zero placeholder.

use crate::schema::{FeatureType, TensorDtype, Value};

#[derive(Default)]
struct Bitmap {
    bytes: Vec<u8>,
    len: usize,
}

impl Bitmap {
    fn push(&mut self, bit: bool) {
        if self.len % 8 == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().unwrap() |= 1 << (self.len % 8);
        }
        self.len += 1;
    }

    fn take(&mut self) -> Vec<u8> {
        self.len = 0;
        std::mem::take(&mut self.bytes)
    }
}

struct Offsets(Vec<u8>);

impl Offsets {
    fn new() -> Self {
        Offsets(0u64.to_le_bytes().to_vec())
    }

    fn push(&mut self, end: u64) {
        self.0.extend_from_slice(&end.to_le_bytes());
    }

    fn take(&mut self) -> Vec<u8> {
        std::mem::replace(&mut self.0, 0u64.to_le_bytes().to_vec())
    }
}

enum Kind {
    Int64,
    Float64,
    Bool(Bitmap),
    Tensor {
        dtype: TensorDtype,
        elems: usize,
    },
    Bytes {
        offsets: Offsets,
        end: u64,
    },
    List {
        offsets: Offsets,
        end: u64,
        child: Box<ColumnEncoder>,
    },
    Struct {
        names: Vec<String>,
        children: Vec<ColumnEncoder>,
    },
}

pub(crate) struct ColumnEncoder {
    validity: Bitmap,
    data: Vec<u8>,
    kind: Kind,
}

impl ColumnEncoder {
    pub(crate) fn new(ty: &FeatureType) -> Self {
        let kind = match ty {
            FeatureType::Int64 | FeatureType::ClassLabel { .. } => Kind::Int64,
            FeatureType::Float64 => Kind::Float64,
            FeatureType::Bool => Kind::Bool(Bitmap::default()),
            FeatureType::Utf8String | FeatureType::Binary => Kind::Bytes {
                offsets: Offsets::new(),
                end: 0,
            },
            FeatureType::Tensor { dtype, shape } => Kind::Tensor {
                dtype: *dtype,
                elems: shape.iter().product::<u64>() as usize,
            },
            FeatureType::Sequence { inner, .. } => Kind::List {
                offsets: Offsets::new(),
                end: 0,
                child: Box::new(ColumnEncoder::new(inner)),
            },
            FeatureType::Translation { languages } => Kind::Struct {
                names: languages.clone(),
                children: languages
                    .iter()
                    .map(|_| ColumnEncoder::new(&FeatureType::Utf8String))
                    .collect(),
            },
            FeatureType::Record { fields } => Kind::Struct {
                names: fields.iter().map(|(n, _)| n.clone()).collect(),
                children: fields.iter().map(|(_, t)| ColumnEncoder::new(t)).collect(),
            },
        };
        ColumnEncoder {
            validity: Bitmap::default(),
            data: Vec::new(),
            kind,
        }
    }

    /// Appends one value. The value must already be validated against the
    /// encoder's type (or be null).
    pub(crate) fn push(&mut self, v: &Value) {
        let present = !v.is_null();
        self.validity.push(present);
        match &mut self.kind {
            Kind::Int64 => {
                let x = if let Value::Int(i) = v { *i } else { 0 };
                self.data.extend_from_slice(&x.to_le_bytes());
            }
            Kind::Float64 => {
                let x = if let Value::Float(f) = v { *f } else { 0.0 };
                self.data.extend_from_slice(&x.to_le_bytes());
            }
            Kind::Bool(bits) => bits.push(matches!(v, Value::Bool(true))),
            Kind::Tensor { dtype, elems } => {
                let (dtype, elems) = (*dtype, *elems);
                match v {
                    Value::List(items) => {
                        for item in items {
                            match (dtype, item) {
                                (TensorDtype::Int64, Value::Int(i)) => self.data.extend_from_slice(&i.to_le_bytes()),
                                (TensorDtype::Float64, Value::Float(f)) => {
                                    self.data.extend_from_slice(&f.to_le_bytes())
                                }
                                (TensorDtype::Float32, Value::Float(f)) => {
                                    self.data.extend_from_slice(&(*f as f32).to_le_bytes())
                                }
                                _ => self.data.extend(std::iter::repeat_n(0, dtype.width())),
                            }
                        }
                    }
                    _ => self.data.extend(std::iter::repeat_n(0, elems * dtype.width())),
                }
            }
            Kind::Bytes { offsets, end } => {
                let bytes: &[u8] = match v {
                    Value::Text(s) => s.as_bytes(),
                    Value::Bytes(b) => b,
                    _ => &[],
                };
                self.data.extend_from_slice(bytes);
                *end += bytes.len() as u64;
                offsets.push(*end);
            }
            Kind::List { offsets, end, child } => {
                if let Value::List(items) = v {
                    for item in items {
                        child.push(item);
                    }
                    *end += items.len() as u64;
                }
                offsets.push(*end);
            }
            Kind::Struct { names, children } => {
                let map = match v {
                    Value::Map(m) => Some(m),
                    _ => None,
                };
                for (name, child) in names.iter().zip(children.iter_mut()) {
                    match map.and_then(|m| m.get(name)) {
                        Some(x) => child.push(x),
                        None => child.push_placeholder(),
                    }
                }
            }
        }
    }

    // Children of a null struct still get one (null) slot each so that every
    // child stays row-aligned with its parent.
    fn push_placeholder(&mut self) {
        self.push(&Value::Null);
    }

    /// Drains the accumulated buffers in layout order and resets the encoder.
    pub(crate) fn finish(&mut self, out: &mut Vec<Vec<u8>>) {
        out.push(self.validity.take());
        match &mut self.kind {
            Kind::Int64 | Kind::Float64 | Kind::Tensor { .. } => out.push(std::mem::take(&mut self.data)),
            Kind::Bool(bits) => out.push(bits.take()),
            Kind::Bytes { offsets, end } => {
                out.push(offsets.take());
                out.push(std::mem::take(&mut self.data));
                *end = 0;
            }
            Kind::List { offsets, end, child } => {
                out.push(offsets.take());
                *end = 0;
                child.finish(out);
            }
            Kind::Struct { children, .. } => {
                for c in children {
                    c.finish(out);
                }
            }
        }
    }
}

/// Number of buffers a column of this type occupies in each batch.
pub(crate) fn buffer_count(ty: &FeatureType) -> usize {
    match ty {
        FeatureType::Int64
        | FeatureType::ClassLabel { .. }
        | FeatureType::Float64
        | FeatureType::Bool
        | FeatureType::Tensor { .. } => 2,
        FeatureType::Utf8String | FeatureType::Binary => 3,
        FeatureType::Sequence { inner, .. } => 2 + buffer_count(inner),
        FeatureType::Translation { languages } => 1 + 3 * languages.len(),
        FeatureType::Record { fields } => 1 + fields.iter().map(|(_, t)| buffer_count(t)).sum::<usize>(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::FeatureType;

    #[test]
    fn string_layout() {
        let mut e = ColumnEncoder::new(&FeatureType::Utf8String);
        e.push(&Value::from("ab"));
        e.push(&Value::Null);
        e.push(&Value::from("c"));
        let mut out = Vec::new();
        e.finish(&mut out);
        assert_eq!(out.len(), buffer_count(&FeatureType::Utf8String));
        assert_eq!(out[0], vec![0b101]);
        let offs: Vec<u64> = out[1]
            .chunks(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(offs, vec![0, 2, 2, 3]);
        assert_eq!(out[2], b"abc");
    }

    #[test]
    fn buffer_counts_match_encoder_output() {
        let ty = FeatureType::Record {
            fields: vec![
                ("a".into(), FeatureType::sequence(FeatureType::Utf8String)),
                (
                    "t".into(),
                    FeatureType::Translation {
                        languages: vec!["de".into(), "en".into()],
                    },
                ),
                ("b".into(), FeatureType::Bool),
            ],
        };
        let mut e = ColumnEncoder::new(&ty);
        e.push(&Value::Null);
        let mut out = Vec::new();
        e.finish(&mut out);
        assert_eq!(out.len(), buffer_count(&ty));
    }
}
