//! Seeded random inputs shared by the integration tests and the acceptance
//! harness.

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::json;

use dataforge::builder::SourceFormat;
use dataforge::registry::{SearchFilter, TagKey, Vocabulary};
use dataforge::stream::{StreamOp, StreamPipeline, StreamSource};
use dataforge::TransformSpec;

use super::fixtures::{fixture_tags, sentence, source, text_field_map, text_schema};
use super::oracles;

pub fn text_pipeline(shards: &[PathBuf], ops: Vec<StreamOp>) -> StreamPipeline {
    StreamPipeline {
        source: StreamSource {
            shards: shards.iter().map(|p| source(p)).collect(),
            format: SourceFormat::Jsonl,
            format_options: Default::default(),
            schema: text_schema(),
            field_map: text_field_map(),
        },
        ops,
    }
}

/// Up to five shuffle-free ops over the fixture text schema.
pub fn random_ops(rng: &mut StdRng) -> Vec<StreamOp> {
    let mut ops = Vec::new();
    let mut has_length = false;
    for _ in 0..rng.gen_range(0..6) {
        let batch = |rng: &mut StdRng, spec: TransformSpec| {
            if rng.gen_bool(0.5) {
                spec.batched(rng.gen_range(1..50))
            } else {
                spec
            }
        };
        let op = match rng.gen_range(0..6) {
            0 => StreamOp::Map {
                spec: batch(rng, TransformSpec::map("lowercase", "1", json!({"column": "text"}))),
                output_schema: None,
            },
            1 if !has_length => {
                has_length = true;
                StreamOp::Map {
                    spec: batch(rng, TransformSpec::map("length", "1", json!({"column": "text"}))),
                    output_schema: None,
                }
            }
            2 => {
                let min = rng.gen_range(0..30);
                StreamOp::Filter {
                    spec: batch(
                        rng,
                        TransformSpec::filter("min_length", "1", json!({"column": "text", "min": min})),
                    ),
                }
            }
            3 => StreamOp::Filter {
                spec: batch(rng, TransformSpec::filter("non_empty", "1", json!({"column": "text"}))),
            },
            4 => StreamOp::Take {
                n: rng.gen_range(0..200),
            },
            _ => StreamOp::Skip {
                n: rng.gen_range(0..200),
            },
        };
        ops.push(op);
    }
    ops
}

pub fn labels(rng: &mut StdRng, n: usize, classes: i64) -> Vec<i64> {
    (0..n).map(|_| rng.gen_range(0..classes)).collect()
}

/// References in `0..classes`, predictions mostly right and sometimes an
/// unseen class.
pub fn label_case(rng: &mut StdRng) -> (Vec<i64>, Vec<i64>) {
    let n = rng.gen_range(1..200);
    let classes = rng.gen_range(1..6);
    let refs = labels(rng, n, classes);
    let preds = refs
        .iter()
        .map(|&r| {
            if rng.gen_bool(0.6) {
                r
            } else {
                rng.gen_range(0..classes + 1)
            }
        })
        .collect();
    (preds, refs)
}

pub fn text_case(rng: &mut StdRng) -> (Vec<String>, Vec<String>) {
    let n = rng.gen_range(1..100);
    let refs: Vec<String> = (0..n).map(|_| sentence(rng, 3)).collect();
    let preds = refs
        .iter()
        .map(|r| if rng.gen_bool(0.5) { r.clone() } else { sentence(rng, 3) })
        .collect();
    (preds, refs)
}

/// Candidates with one to three references each; most candidates reuse a
/// prefix of their first reference so higher-order n-grams match.
pub fn translation_corpus(rng: &mut StdRng) -> (Vec<String>, Vec<Vec<String>>) {
    let n = rng.gen_range(1..30);
    let mut cands = Vec::new();
    let mut refs = Vec::new();
    for _ in 0..n {
        let r0 = sentence(rng, 15);
        let cand = if rng.gen_bool(0.7) {
            let words: Vec<&str> = r0.split(' ').collect();
            let cut = rng.gen_range(0..=words.len());
            format!("{} {}", words[..cut].join(" "), sentence(rng, 4))
        } else {
            sentence(rng, 15)
        };
        let extra = (0..rng.gen_range(0..3)).map(|_| sentence(rng, 15));
        refs.push(std::iter::once(r0).chain(extra).collect());
        cands.push(cand);
    }
    // a corpus with no candidate tokens has no defined score
    if cands.iter().all(|c| oracles::words(c).is_empty()) {
        cands[0] = "the".into();
    }
    (cands, refs)
}

/// Split points for at most `max` contiguous shards of `0..n`.
pub fn shard_bounds(rng: &mut StdRng, n: usize, max: usize) -> Vec<(usize, usize)> {
    let shards = rng.gen_range(1..=max);
    let mut cuts: Vec<usize> = (0..shards - 1).map(|_| rng.gen_range(0..=n)).collect();
    cuts.push(0);
    cuts.push(n);
    cuts.sort();
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

pub fn corpus(rng: &mut StdRng, n: usize) -> Vec<Option<String>> {
    (0..n)
        .map(|_| {
            if rng.gen_ratio(1, 25) {
                None
            } else {
                Some(sentence(rng, 12))
            }
        })
        .collect()
}

pub fn query(rng: &mut StdRng) -> String {
    let mut q = sentence(rng, 4);
    if rng.gen_bool(0.2) {
        q += " zzz-unseen";
    }
    q
}

/// Random vectors with some nulls and exact duplicates (to exercise
/// tie-breaking); never all-zero.
pub fn vectors(rng: &mut StdRng, n: usize, dim: usize) -> Vec<Option<Vec<f64>>> {
    let mut out: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    for _ in 0..n {
        let v = match rng.gen_range(0..20) {
            0 => None,
            1 if !out.is_empty() => out[rng.gen_range(0..out.len())].clone(),
            _ => {
                let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-4.0..4.0)).collect();
                if v.iter().all(|&x| x == 0.0) {
                    v[0] = 1.0;
                }
                Some(v)
            }
        };
        out.push(v);
    }
    out
}

pub fn fixture_id(i: usize) -> String {
    format!("fixtures/d{i:02}")
}

/// Ids among the first `n` fixtures whose tags intersect every requested key.
pub fn oracle_search(n: usize, filter: &SearchFilter) -> Vec<String> {
    let mut out: Option<BTreeSet<usize>> = None;
    for (key, wanted) in filter {
        if wanted.is_empty() {
            continue;
        }
        let hits: BTreeSet<usize> = (0..n)
            .filter(|&i| {
                fixture_tags(i)
                    .values(*key)
                    .iter()
                    .any(|v| wanted.iter().any(|w| w == v))
            })
            .collect();
        out = Some(match out {
            None => hits,
            Some(prev) => prev.intersection(&hits).copied().collect(),
        });
    }
    out.unwrap_or_else(|| (0..n).collect())
        .into_iter()
        .map(fixture_id)
        .collect()
}

/// Filters drawn from the values fixtures carry, plus now and then a valid
/// value no fixture has.
pub fn random_filter(rng: &mut StdRng, vocab: &Vocabulary) -> SearchFilter {
    let mut f = SearchFilter::new();
    for key in TagKey::ALL {
        if !rng.gen_bool(0.4) {
            continue;
        }
        let used: BTreeSet<String> = (0..50)
            .flat_map(|i| {
                fixture_tags(i)
                    .values(key)
                    .into_iter()
                    .map(str::to_owned)
                    .collect::<Vec<_>>()
            })
            .collect();
        let mut pool: Vec<String> = used.into_iter().collect();
        if let Some(v) = vocab.values(key).find(|v| !pool.iter().any(|p| p == v)) {
            if rng.gen_bool(0.2) {
                pool.push(v.to_owned());
            }
        }
        let k = rng.gen_range(0..=pool.len().min(3));
        f.insert(key, pool.choose_multiple(rng, k).cloned().collect());
    }
    f
}
