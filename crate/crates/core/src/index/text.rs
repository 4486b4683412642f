use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde_json::json;

use super::{rank, read_header, tokenize, write_file, write_header, IndexError};
use crate::schema::{FeatureType, Value};
use crate::store::Table;

pub const BM25_K1: f64 = 1.5;
pub const BM25_B: f64 = 0.75;
/// Name of the tokenization rule recorded in index files.
pub const TOKENIZER: &str = "lowercase-alnum-v1";

const MAGIC: &[u8; 4] = b"TIX1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub row: u64,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    pub k1: f64,
    pub b: f64,
    /// Postings sorted by row id.
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lens: Vec<u32>,
    avgdl: f64,
}

impl InvertedIndex {
    pub fn from_documents<'a>(docs: impl IntoIterator<Item = Option<&'a str>>) -> Self {
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lens = Vec::new();
        for (row, doc) in docs.into_iter().enumerate() {
            let toks = doc.map(tokenize).unwrap_or_default();
            doc_lens.push(toks.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in toks {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push(Posting { row: row as u64, tf: n });
            }
        }
        Self::assemble(postings, doc_lens)
    }

    fn assemble(postings: BTreeMap<String, Vec<Posting>>, doc_lens: Vec<u32>) -> Self {
        let total: u64 = doc_lens.iter().map(|&l| l as u64).sum();
        let avgdl = if doc_lens.is_empty() {
            0.0
        } else {
            total as f64 / doc_lens.len() as f64
        };
        InvertedIndex {
            k1: BM25_K1,
            b: BM25_B,
            postings,
            doc_lens,
            avgdl,
        }
    }

    pub fn num_docs(&self) -> u64 {
        self.doc_lens.len() as u64
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_len(&self, row: u64) -> Option<u32> {
        self.doc_lens.get(row as usize).copied()
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn num_terms(&self) -> usize {
        self.postings.len()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.postings(term).len() as f64;
        let total = self.num_docs() as f64;
        ((total - n + 0.5) / (n + 0.5) + 1.0).ln()
    }

    pub fn to_bytes(&self, params: serde_json::Value) -> Vec<u8> {
        let mut out = Vec::new();
        let mut p = json!({"k1": self.k1, "b": self.b, "tokenizer": TOKENIZER});
        if let (Some(p), serde_json::Value::Object(extra)) = (p.as_object_mut(), params) {
            p.extend(extra);
        }
        write_header(&mut out, MAGIC, &p);
        out.extend_from_slice(&(self.doc_lens.len() as u64).to_le_bytes());
        for l in &self.doc_lens {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out.extend_from_slice(&(self.postings.len() as u64).to_le_bytes());
        for (term, list) in &self.postings {
            out.extend_from_slice(&(term.len() as u32).to_le_bytes());
            out.extend_from_slice(term.as_bytes());
            out.extend_from_slice(&(list.len() as u64).to_le_bytes());
            for p in list {
                out.extend_from_slice(&p.row.to_le_bytes());
                out.extend_from_slice(&p.tf.to_le_bytes());
            }
        }
        out
    }

    /// Parses a TIX1 image, checking every structural invariant.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, IndexError> {
        let bad = |m: &str| IndexError::Corrupt(m.to_owned());
        let (params, mut r) = read_header(buf, MAGIC)?;
        if params.get("tokenizer").and_then(|t| t.as_str()) != Some(TOKENIZER) {
            return Err(bad("unknown tokenizer"));
        }
        let num = |k: &str| {
            params
                .get(k)
                .and_then(|v| v.as_f64())
                .ok_or_else(|| bad("missing parameter"))
        };
        let (k1, b) = (num("k1")?, num("b")?);
        let n = r.count(4)?;
        let doc_lens = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let terms = r.count(12)?;
        let mut postings = BTreeMap::new();
        for _ in 0..terms {
            let len = r.u32()? as usize;
            let term = std::str::from_utf8(r.bytes(len)?).map_err(|_| bad("term is not utf-8"))?;
            let count = r.count(12)?;
            let mut list = Vec::with_capacity(count);
            for _ in 0..count {
                let row = r.u64()?;
                let tf = r.u32()?;
                if row >= n as u64 || tf == 0 || list.last().is_some_and(|p: &Posting| p.row >= row) {
                    return Err(bad("invalid posting"));
                }
                list.push(Posting { row, tf });
            }
            if list.is_empty() || postings.insert(term.to_owned(), list).is_some() {
                return Err(bad("invalid term entry"));
            }
        }
        r.finish()?;
        let mut ix = Self::assemble(postings, doc_lens);
        ix.k1 = k1;
        ix.b = b;
        Ok(ix)
    }

    pub fn save(&self, path: &Path, params: serde_json::Value) -> Result<(), IndexError> {
        write_file(path, &self.to_bytes(params))
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = std::fs::read(path).map_err(|e| IndexError::Store(e.into()))?;
        Self::from_bytes(&bytes)
    }
}

/// Indexes a string column; null rows become empty documents.
pub fn build_text_index(t: &Table, column: &str) -> Result<InvertedIndex, IndexError> {
    let col = t
        .schema()
        .column(column)
        .ok_or_else(|| crate::store::StoreError::UnknownColumn(column.to_owned()))?;
    if col.ty != FeatureType::Utf8String {
        return Err(IndexError::WrongType {
            column: column.to_owned(),
            expected: "string",
            found: col.ty.tag().to_owned(),
        });
    }
    let values = t.get_column(column)?.collect::<Result<Vec<Value>, _>>()?;
    Ok(InvertedIndex::from_documents(values.iter().map(Value::as_str)))
}

/// Top-`k` rows by BM25. Repeated query terms count once; rows scoring 0
/// are omitted; ties go to the lower row id.
pub fn bm25_query(ix: &InvertedIndex, query: &str, k: usize) -> Result<Vec<(u64, f64)>, IndexError> {
    if k == 0 {
        return Err(IndexError::ZeroK);
    }
    let mut terms = tokenize(query);
    let mut seen = std::collections::HashSet::new();
    terms.retain(|t| seen.insert(t.clone()));
    let mut scores: HashMap<u64, f64> = HashMap::new();
    for term in &terms {
        let idf = ix.idf(term);
        for p in ix.postings(term) {
            let tf = p.tf as f64;
            let dl = ix.doc_lens[p.row as usize] as f64;
            let s = idf * tf * (ix.k1 + 1.0) / (tf + ix.k1 * (1.0 - ix.b + ix.b * dl / ix.avgdl));
            *scores.entry(p.row).or_insert(0.0) += s;
        }
    }
    Ok(rank(scores.into_iter().filter(|&(_, s)| s > 0.0).collect(), k, false))
}
