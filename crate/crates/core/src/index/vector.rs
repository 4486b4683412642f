use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{rank, read_header, write_file, write_header, IndexError};
use crate::schema::{FeatureType, TensorDtype, Value};
use crate::store::Table;

const MAGIC: &[u8; 4] = b"VIX1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cosine,
    InnerProduct,
    L2,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::InnerProduct => "inner_product",
            Metric::L2 => "l2",
        }
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "inner_product" | "ip" => Ok(Metric::InnerProduct),
            "l2" => Ok(Metric::L2),
            _ => Err(format!("unknown metric {s:?}")),
        }
    }
}

/// Row vectors stored as f32, scored in f64. Cosine indexes hold
/// L2-normalized copies.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    metric: Metric,
    dim: usize,
    rows: Vec<u64>,
    data: Vec<f32>,
}

fn normalize(v: &[f64]) -> Option<Vec<f32>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| (x / norm) as f32).collect())
}

impl VectorIndex {
    /// Builds from `(row id, vector)` pairs.
    pub fn from_vectors(
        metric: Metric,
        dim: usize,
        vectors: impl IntoIterator<Item = (u64, Vec<f64>)>,
    ) -> Result<Self, IndexError> {
        let mut ix = VectorIndex {
            metric,
            dim,
            rows: Vec::new(),
            data: Vec::new(),
        };
        for (row, v) in vectors {
            if v.len() != dim {
                return Err(IndexError::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            match metric {
                Metric::Cosine => ix.data.extend(normalize(&v).ok_or(IndexError::ZeroVector(row))?),
                _ => ix.data.extend(v.iter().map(|&x| x as f32)),
            }
            ix.rows.push(row);
        }
        Ok(ix)
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Stored vector of the `i`-th indexed row and its row id.
    pub fn vector(&self, i: usize) -> (u64, &[f32]) {
        (self.rows[i], &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn to_bytes(&self, params: serde_json::Value) -> Vec<u8> {
        let mut p = json!({"metric": self.metric.as_str(), "dim": self.dim});
        if let (Some(p), serde_json::Value::Object(extra)) = (p.as_object_mut(), params) {
            p.extend(extra);
        }
        let mut out = Vec::new();
        write_header(&mut out, MAGIC, &p);
        out.extend_from_slice(&(self.rows.len() as u64).to_le_bytes());
        for r in &self.rows {
            out.extend_from_slice(&r.to_le_bytes());
        }
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, IndexError> {
        let bad = |m: &str| IndexError::Corrupt(m.to_owned());
        let (params, mut r) = read_header(buf, MAGIC)?;
        let metric: Metric = params
            .get("metric")
            .and_then(|m| m.as_str())
            .ok_or_else(|| bad("missing metric"))?
            .parse()
            .map_err(|e: String| IndexError::Corrupt(e))?;
        let dim = params
            .get("dim")
            .and_then(|d| d.as_u64())
            .and_then(|d| usize::try_from(d).ok())
            .ok_or_else(|| bad("missing dim"))?;
        let n = r.count(8)?;
        let rows = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
        if rows.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("row ids not increasing"));
        }
        let len = n
            .checked_mul(dim)
            .and_then(|x| x.checked_mul(4))
            .ok_or_else(|| bad("size overflow"))?;
        let data = r
            .bytes(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        r.finish()?;
        Ok(VectorIndex {
            metric,
            dim,
            rows,
            data,
        })
    }

    pub fn save(&self, path: &Path, params: serde_json::Value) -> Result<(), IndexError> {
        write_file(path, &self.to_bytes(params))
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = std::fs::read(path).map_err(|e| IndexError::Store(e.into()))?;
        Self::from_bytes(&bytes)
    }
}

/// Indexes a rank-1 float tensor column. Null rows are skipped.
pub fn build_vector_index(t: &Table, column: &str, metric: Metric) -> Result<VectorIndex, IndexError> {
    let col = t
        .schema()
        .column(column)
        .ok_or_else(|| crate::store::StoreError::UnknownColumn(column.to_owned()))?;
    let dim = match &col.ty {
        FeatureType::Tensor {
            dtype: TensorDtype::Float32 | TensorDtype::Float64,
            shape,
        } if shape.len() == 1 => shape[0] as usize,
        other => {
            return Err(IndexError::WrongType {
                column: column.to_owned(),
                expected: "rank-1 float tensor",
                found: other.tag().to_owned(),
            })
        }
    };
    let mut vectors = Vec::new();
    for (row, v) in t.get_column(column)?.enumerate() {
        if let Value::List(items) = v? {
            let vec = items
                .iter()
                .map(|x| match x {
                    Value::Float(f) => *f,
                    _ => f64::NAN,
                })
                .collect();
            vectors.push((row as u64, vec));
        }
    }
    VectorIndex::from_vectors(metric, dim, vectors)
}

/// Exact top-`k` neighbours of `q`: cosine and inner product by descending
/// score, l2 by ascending distance; ties go to the lower row id.
pub fn knn_query(ix: &VectorIndex, q: &[f64], k: usize) -> Result<Vec<(u64, f64)>, IndexError> {
    if k == 0 {
        return Err(IndexError::ZeroK);
    }
    if q.len() != ix.dim {
        return Err(IndexError::DimensionMismatch {
            expected: ix.dim,
            got: q.len(),
        });
    }
    let q: Vec<f64> = match ix.metric {
        Metric::Cosine => {
            let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(IndexError::ZeroVector(u64::MAX));
            }
            q.iter().map(|x| x / norm).collect()
        }
        _ => q.to_vec(),
    };
    let scored = (0..ix.len())
        .map(|i| {
            let (row, v) = ix.vector(i);
            let s = match ix.metric {
                Metric::Cosine | Metric::InnerProduct => v.iter().zip(&q).map(|(&a, b)| a as f64 * b).sum(),
                Metric::L2 => v
                    .iter()
                    .zip(&q)
                    .map(|(&a, b)| (a as f64 - b).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            };
            (row, s)
        })
        .collect();
    Ok(rank(scored, k, ix.metric == Metric::L2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis() -> Vec<(u64, Vec<f64>)> {
        vec![
            (0, vec![2.0, 0.0, 0.0]),
            (1, vec![0.0, 1.0, 0.0]),
            (2, vec![0.0, 0.0, 3.0]),
        ]
    }

    #[test]
    fn cosine() {
        let ix = VectorIndex::from_vectors(Metric::Cosine, 3, basis()).unwrap();
        assert_eq!(ix.vector(0).1, [1.0, 0.0, 0.0]);
        let r = knn_query(&ix, &[0.0, 0.0, 5.0], 2).unwrap();
        assert_eq!(r[0].0, 2);
        assert!((r[0].1 - 1.0).abs() < 1e-6);
        assert_eq!(r[1].0, 0);
        assert_eq!(knn_query(&ix, &[1.0, 1.0, 1.0], 10).unwrap().len(), 3);
        assert!(matches!(
            knn_query(&ix, &[1.0], 1),
            Err(IndexError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_vector() {
        let r = VectorIndex::from_vectors(Metric::Cosine, 2, vec![(0, vec![1.0, 0.0]), (4, vec![0.0, 0.0])]);
        assert!(matches!(r, Err(IndexError::ZeroVector(4))));
        assert!(VectorIndex::from_vectors(Metric::L2, 2, vec![(0, vec![0.0, 0.0])]).is_ok());
    }

    #[test]
    fn l2_round_trip() {
        let ix = VectorIndex::from_vectors(Metric::L2, 3, basis()).unwrap();
        assert_eq!(ix.vector(2).1, [0.0, 0.0, 3.0]);
        let back = VectorIndex::from_bytes(&ix.to_bytes(json!({}))).unwrap();
        assert_eq!(back, ix);
        let r = knn_query(&ix, &[0.0, 1.0, 0.0], 3).unwrap();
        assert_eq!(r[0], (1, 0.0));
        assert_eq!(r[1].0, 0);
    }
}
