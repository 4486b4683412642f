//! Evaluation metrics as mergeable sufficient statistics.
//!
//! A [`MetricState`] only ever holds integer counters, so merging shard
//! states in any order or tree shape and then calling [`MetricState::compute`]
//! gives bit-identical results.
//!
//! BLEU tokenizes with [`crate::index::tokenize`] (lowercase, split on
//! non-alphanumerics). Scores are sensitive to that choice.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::tokenize;
use crate::schema::Value;

pub const MAX_NGRAM: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("{predictions} predictions but {references} references")]
    LengthMismatch { predictions: usize, references: usize },
    #[error("type error: {0}")]
    Type(String),
    #[error("cannot merge {0} with {1}")]
    MetricMismatch(String, String),
    #[error("no examples")]
    EmptyState,
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    Accuracy,
    F1,
    ExactMatch,
    Bleu,
}

impl MetricId {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::Accuracy => "accuracy",
            MetricId::F1 => "f1",
            MetricId::ExactMatch => "exact_match",
            MetricId::Bleu => "bleu",
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricId {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, MetricError> {
        match s {
            "accuracy" => Ok(MetricId::Accuracy),
            "f1" => Ok(MetricId::F1),
            "exact_match" => Ok(MetricId::ExactMatch),
            "bleu" => Ok(MetricId::Bleu),
            _ => Err(MetricError::UnknownMetric(s.to_owned())),
        }
    }
}

/// Per-class confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [u64; MAX_NGRAM],
    pub totals: [u64; MAX_NGRAM],
    pub candidate_len: u64,
    pub reference_len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stats {
    Accuracy { correct: u64, total: u64 },
    F1 { classes: BTreeMap<i64, ClassCounts> },
    ExactMatch { matches: u64, total: u64 },
    Bleu(BleuStats),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricState {
    pub metric: MetricId,
    pub version: u32,
    pub stats: Stats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ComputeOptions {
    /// Add-1 smoothing of 2..4-gram precisions, applied only when one of
    /// those precisions has no matches.
    pub smooth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metric: MetricId,
    pub version: u32,
    pub scores: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, u64>,
}

/// The positive class for binary F1.
pub const POSITIVE_CLASS: i64 = 1;

fn check_len(p: usize, r: usize) -> Result<(), MetricError> {
    if p == r {
        Ok(())
    } else {
        Err(MetricError::LengthMismatch {
            predictions: p,
            references: r,
        })
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn ngram_counts(toks: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

impl MetricState {
    pub fn new(metric: MetricId) -> Self {
        let stats = match metric {
            MetricId::Accuracy => Stats::Accuracy { correct: 0, total: 0 },
            MetricId::F1 => Stats::F1 {
                classes: BTreeMap::new(),
            },
            MetricId::ExactMatch => Stats::ExactMatch { matches: 0, total: 0 },
            MetricId::Bleu => Stats::Bleu(BleuStats::default()),
        };
        MetricState {
            metric,
            version: 1,
            stats,
        }
    }

    /// Adds label predictions (accuracy, f1).
    pub fn add_labels(&mut self, preds: &[i64], refs: &[i64]) -> Result<(), MetricError> {
        check_len(preds.len(), refs.len())?;
        match &mut self.stats {
            Stats::Accuracy { correct, total } => {
                *correct += preds.iter().zip(refs).filter(|(p, r)| p == r).count() as u64;
                *total += preds.len() as u64;
            }
            Stats::F1 { classes } => {
                for (&p, &r) in preds.iter().zip(refs) {
                    if p == r {
                        classes.entry(p).or_default().tp += 1;
                    } else {
                        classes.entry(p).or_default().fp += 1;
                        classes.entry(r).or_default().fn_ += 1;
                    }
                }
            }
            _ => return Err(MetricError::Type(format!("{} does not take labels", self.metric))),
        }
        Ok(())
    }

    /// Adds string predictions compared exactly (exact_match).
    pub fn add_texts(&mut self, preds: &[&str], refs: &[&str]) -> Result<(), MetricError> {
        check_len(preds.len(), refs.len())?;
        match &mut self.stats {
            Stats::ExactMatch { matches, total } => {
                *matches += preds.iter().zip(refs).filter(|(p, r)| p == r).count() as u64;
                *total += preds.len() as u64;
                Ok(())
            }
            _ => Err(MetricError::Type(format!(
                "{} does not take plain strings",
                self.metric
            ))),
        }
    }

    /// Adds candidate segments, each with one or more references (bleu).
    pub fn add_translations<S: AsRef<str>>(&mut self, preds: &[S], refs: &[Vec<S>]) -> Result<(), MetricError> {
        check_len(preds.len(), refs.len())?;
        let Stats::Bleu(st) = &mut self.stats else {
            return Err(MetricError::Type(format!("{} does not take translations", self.metric)));
        };
        for (cand, rs) in preds.iter().zip(refs) {
            if rs.is_empty() {
                return Err(MetricError::Type("segment has no references".into()));
            }
            let c = tokenize(cand.as_ref());
            let rtoks: Vec<Vec<String>> = rs.iter().map(|r| tokenize(r.as_ref())).collect();
            for n in 1..=MAX_NGRAM {
                let cc = ngram_counts(&c, n);
                let mut max_ref: HashMap<&[String], u64> = HashMap::new();
                for r in &rtoks {
                    for (g, k) in ngram_counts(r, n) {
                        let e = max_ref.entry(g).or_insert(0);
                        *e = (*e).max(k);
                    }
                }
                st.matches[n - 1] += cc
                    .iter()
                    .map(|(g, &k)| k.min(max_ref.get(g).copied().unwrap_or(0)))
                    .sum::<u64>();
                st.totals[n - 1] += (c.len() + 1).saturating_sub(n) as u64;
            }
            let clen = c.len() as u64;
            st.candidate_len += clen;
            // closest reference length, ties to the shorter
            st.reference_len += rtoks
                .iter()
                .map(|r| r.len() as u64)
                .min_by_key(|&l| (l.abs_diff(clen), l))
                .unwrap();
        }
        Ok(())
    }

    /// Adds dataset values, dispatching on the metric's input type.
    pub fn add_batch(&mut self, preds: &[Value], refs: &[Value]) -> Result<(), MetricError> {
        check_len(preds.len(), refs.len())?;
        let ints = |vs: &[Value]| {
            vs.iter()
                .map(|v| {
                    v.as_int()
                        .ok_or_else(|| MetricError::Type(format!("expected an integer, got {v:?}")))
                })
                .collect::<Result<Vec<_>, _>>()
        };
        let strs = |vs: &'_ [Value]| -> Result<Vec<String>, MetricError> {
            vs.iter()
                .map(|v| {
                    v.as_str()
                        .map(str::to_owned)
                        .ok_or_else(|| MetricError::Type(format!("expected a string, got {v:?}")))
                })
                .collect()
        };
        match self.metric {
            MetricId::Accuracy | MetricId::F1 => self.add_labels(&ints(preds)?, &ints(refs)?),
            MetricId::ExactMatch => {
                let (p, r) = (strs(preds)?, strs(refs)?);
                let p: Vec<&str> = p.iter().map(String::as_str).collect();
                let r: Vec<&str> = r.iter().map(String::as_str).collect();
                self.add_texts(&p, &r)
            }
            MetricId::Bleu => {
                let p = strs(preds)?;
                let r = refs
                    .iter()
                    .map(|v| match v {
                        Value::Text(s) => Ok(vec![s.clone()]),
                        Value::List(items) => strs(items),
                        other => Err(MetricError::Type(format!("expected references, got {other:?}"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                self.add_translations(&p, &r)
            }
        }
    }

    /// Field-wise sum; associative and commutative.
    pub fn merge(&self, other: &MetricState) -> Result<MetricState, MetricError> {
        if self.metric != other.metric || self.version != other.version {
            return Err(MetricError::MetricMismatch(
                format!("{}@{}", self.metric, self.version),
                format!("{}@{}", other.metric, other.version),
            ));
        }
        let stats = match (&self.stats, &other.stats) {
            (Stats::Accuracy { correct: a, total: b }, Stats::Accuracy { correct: c, total: d }) => Stats::Accuracy {
                correct: a + c,
                total: b + d,
            },
            (Stats::ExactMatch { matches: a, total: b }, Stats::ExactMatch { matches: c, total: d }) => {
                Stats::ExactMatch {
                    matches: a + c,
                    total: b + d,
                }
            }
            (Stats::F1 { classes: a }, Stats::F1 { classes: b }) => {
                let mut classes = a.clone();
                for (k, v) in b {
                    let e = classes.entry(*k).or_default();
                    e.tp += v.tp;
                    e.fp += v.fp;
                    e.fn_ += v.fn_;
                }
                Stats::F1 { classes }
            }
            (Stats::Bleu(a), Stats::Bleu(b)) => Stats::Bleu(BleuStats {
                matches: std::array::from_fn(|i| a.matches[i] + b.matches[i]),
                totals: std::array::from_fn(|i| a.totals[i] + b.totals[i]),
                candidate_len: a.candidate_len + b.candidate_len,
                reference_len: a.reference_len + b.reference_len,
            }),
            _ => {
                return Err(MetricError::MetricMismatch(
                    "state".into(),
                    "state of a different kind".into(),
                ))
            }
        };
        Ok(MetricState {
            metric: self.metric,
            version: self.version,
            stats,
        })
    }

    pub fn compute(&self, opts: ComputeOptions) -> Result<MetricResult, MetricError> {
        let mut scores = BTreeMap::new();
        let mut counts = BTreeMap::new();
        match &self.stats {
            Stats::Accuracy { correct, total } => {
                if *total == 0 {
                    return Err(MetricError::EmptyState);
                }
                scores.insert("accuracy".into(), ratio(*correct, *total));
                counts.insert("correct".into(), *correct);
                counts.insert("total".into(), *total);
            }
            Stats::ExactMatch { matches, total } => {
                if *total == 0 {
                    return Err(MetricError::EmptyState);
                }
                scores.insert("exact_match".into(), ratio(*matches, *total));
                counts.insert("matches".into(), *matches);
                counts.insert("total".into(), *total);
            }
            Stats::F1 { classes } => {
                if classes.is_empty() {
                    return Err(MetricError::EmptyState);
                }
                let f1 = |c: &ClassCounts| ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
                let pos = classes.get(&POSITIVE_CLASS).copied().unwrap_or_default();
                scores.insert("f1".into(), f1(&pos));
                scores.insert("precision".into(), ratio(pos.tp, pos.tp + pos.fp));
                scores.insert("recall".into(), ratio(pos.tp, pos.tp + pos.fn_));
                let macro_sum: f64 = classes.values().map(f1).sum();
                scores.insert("macro_f1".into(), macro_sum / classes.len() as f64);
                counts.insert("tp".into(), pos.tp);
                counts.insert("fp".into(), pos.fp);
                counts.insert("fn".into(), pos.fn_);
                counts.insert("total".into(), classes.values().map(|c| c.tp + c.fp).sum());
            }
            Stats::Bleu(st) => {
                if st.candidate_len == 0 {
                    return Err(MetricError::EmptyState);
                }
                let smooth = opts.smooth && st.matches[1..].iter().any(|&m| m == 0);
                let mut log_sum = 0.0;
                let mut zero = false;
                for n in 0..MAX_NGRAM {
                    let (m, t) = if smooth && n >= 1 {
                        (st.matches[n] + 1, st.totals[n] + 1)
                    } else {
                        (st.matches[n], st.totals[n])
                    };
                    let p = ratio(m, t);
                    scores.insert(format!("precision_{}", n + 1), p);
                    if p == 0.0 {
                        zero = true;
                    } else {
                        log_sum += p.ln() / MAX_NGRAM as f64;
                    }
                }
                let (c, r) = (st.candidate_len as f64, st.reference_len as f64);
                let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
                scores.insert("brevity_penalty".into(), bp);
                scores.insert("length_ratio".into(), c / r.max(1.0));
                scores.insert("bleu".into(), if zero { 0.0 } else { bp * log_sum.exp() });
                counts.insert("candidate_len".into(), st.candidate_len);
                counts.insert("reference_len".into(), st.reference_len);
            }
        }
        Ok(MetricResult {
            metric: self.metric,
            version: self.version,
            scores,
            counts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_counts() {
        let mut s = MetricState::new(MetricId::Accuracy);
        s.add_labels(&[1, 0], &[1, 1]).unwrap();
        assert_eq!(s.stats, Stats::Accuracy { correct: 1, total: 2 });
        let before = s.clone();
        s.add_labels(&[], &[]).unwrap();
        assert_eq!(s, before);
        assert!(matches!(
            s.add_labels(&[1], &[]),
            Err(MetricError::LengthMismatch { .. })
        ));
        assert_eq!(
            MetricState::new(MetricId::Accuracy).compute(Default::default()),
            Err(MetricError::EmptyState)
        );
    }

    #[test]
    fn f1_hand_count() {
        let mut s = MetricState::new(MetricId::F1);
        s.add_labels(&[1, 0, 1], &[1, 1, 1]).unwrap();
        let r = s.compute(Default::default()).unwrap();
        assert_eq!(r.counts["tp"], 2);
        assert_eq!(r.counts["fp"], 0);
        assert_eq!(r.counts["fn"], 1);
        assert!((r.scores["f1"] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn bleu_identity_and_clipping() {
        let mut s = MetricState::new(MetricId::Bleu);
        s.add_translations(&["the cat sat on the mat"], &[vec!["The cat sat on the mat."]])
            .unwrap();
        assert_eq!(s.compute(Default::default()).unwrap().scores["bleu"], 1.0);

        let mut s = MetricState::new(MetricId::Bleu);
        s.add_translations(&["the the the the"], &[vec!["the cat"]]).unwrap();
        let Stats::Bleu(st) = &s.stats else { unreachable!() };
        assert_eq!((st.matches[0], st.totals[0]), (1, 4));
        let r = s.compute(Default::default()).unwrap();
        assert_eq!(r.scores["precision_1"], 0.25);
        assert_eq!(r.scores["bleu"], 0.0);
    }

    #[test]
    fn closest_reference_ties_shorter() {
        let mut s = MetricState::new(MetricId::Bleu);
        s.add_translations(&["a b c"], &[vec!["a b c d", "a b"]]).unwrap();
        let Stats::Bleu(st) = &s.stats else { unreachable!() };
        assert_eq!(st.reference_len, 2);
    }

    #[test]
    fn smoothing_only_when_needed() {
        let mut s = MetricState::new(MetricId::Bleu);
        s.add_translations(&["a b c d e"], &[vec!["a b c d e"]]).unwrap();
        let plain = s.compute(ComputeOptions { smooth: false }).unwrap();
        let smooth = s.compute(ComputeOptions { smooth: true }).unwrap();
        assert_eq!(plain.scores["bleu"], smooth.scores["bleu"]);

        let mut s = MetricState::new(MetricId::Bleu);
        s.add_translations(&["a x b y"], &[vec!["a b"]]).unwrap();
        assert_eq!(s.compute(ComputeOptions { smooth: false }).unwrap().scores["bleu"], 0.0);
        assert!(s.compute(ComputeOptions { smooth: true }).unwrap().scores["bleu"] > 0.0);
    }

    #[test]
    fn merge_rules() {
        let mut a = MetricState::new(MetricId::F1);
        a.add_labels(&[1, 2], &[2, 2]).unwrap();
        let mut b = MetricState::new(MetricId::F1);
        b.add_labels(&[0], &[1]).unwrap();
        assert_eq!(a.merge(&b).unwrap(), b.merge(&a).unwrap());
        assert_eq!(a.merge(&MetricState::new(MetricId::F1)).unwrap(), a);
        assert!(a.merge(&MetricState::new(MetricId::Accuracy)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut s = MetricState::new(MetricId::Bleu);
        s.add_translations(&["a b"], &[vec!["a b c"]]).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<MetricState>(&text).unwrap(), s);
    }
}
