//! Straightforward reference implementations the library is checked against.

use std::collections::BTreeSet;

use dataforge::index::Metric;

/// Lowercase, split on anything that is not a letter or digit.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    // lowercasing can produce non-alphanumeric marks; split again
    out.iter()
        .flat_map(|w| {
            w.split(|c: char| !c.is_alphanumeric())
                .map(str::to_owned)
                .collect::<Vec<_>>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

fn top_k(mut scored: Vec<(u64, f64)>, k: usize, ascending: bool) -> Vec<(u64, f64)> {
    scored.sort_by(|a, b| {
        let o = if ascending {
            a.1.partial_cmp(&b.1)
        } else {
            b.1.partial_cmp(&a.1)
        };
        o.unwrap().then(a.0.cmp(&b.0))
    });
    scored.truncate(k);
    scored
}

/// Scores every document against every query term (k1 = 1.5, b = 0.75).
pub fn bm25_exhaustive(docs: &[Option<String>], query: &str, k: usize) -> Vec<(u64, f64)> {
    let (k1, b) = (1.5f64, 0.75f64);
    let toks: Vec<Vec<String>> = docs
        .iter()
        .map(|d| d.as_deref().map(words).unwrap_or_default())
        .collect();
    let n_docs = toks.len() as f64;
    let avgdl = if toks.is_empty() {
        0.0
    } else {
        toks.iter().map(|t| t.len() as u64).sum::<u64>() as f64 / n_docs
    };
    let mut terms: Vec<String> = Vec::new();
    for t in words(query) {
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    let mut scored = Vec::new();
    for (row, doc) in toks.iter().enumerate() {
        let mut score = 0.0;
        let mut hit = false;
        for term in &terms {
            let tf = doc.iter().filter(|w| *w == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            hit = true;
            let df = toks.iter().filter(|d| d.contains(term)).count() as f64;
            let idf = ((n_docs - df + 0.5) / (df + 0.5) + 1.0).ln();
            let dl = doc.len() as f64;
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
        }
        if hit && score > 0.0 {
            scored.push((row as u64, score));
        }
    }
    top_k(scored, k, false)
}

/// The f32 value the index keeps for each component.
fn stored(metric: Metric, v: &[f64]) -> Vec<f64> {
    match metric {
        Metric::Cosine => {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| (x / norm) as f32 as f64).collect()
        }
        _ => v.iter().map(|&x| x as f32 as f64).collect(),
    }
}

/// Scores every non-null vector; cosine and inner product descending, l2
/// ascending, ties to the lower row.
pub fn knn_brute_force(metric: Metric, vectors: &[Option<Vec<f64>>], q: &[f64], k: usize) -> Vec<(u64, f64)> {
    let q: Vec<f64> = match metric {
        Metric::Cosine => {
            let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            q.iter().map(|x| x / norm).collect()
        }
        _ => q.to_vec(),
    };
    let mut scored = Vec::new();
    for (row, v) in vectors.iter().enumerate() {
        let Some(v) = v else { continue };
        let v = stored(metric, v);
        let mut s = 0.0;
        match metric {
            Metric::L2 => {
                for i in 0..v.len() {
                    s += (v[i] - q[i]).powi(2);
                }
                s = s.sqrt();
            }
            _ => {
                for i in 0..v.len() {
                    s += v[i] * q[i];
                }
            }
        }
        scored.push((row as u64, s));
    }
    top_k(scored, k, metric == Metric::L2)
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn accuracy(preds: &[i64], refs: &[i64]) -> f64 {
    let mut correct = 0;
    for i in 0..preds.len() {
        if preds[i] == refs[i] {
            correct += 1;
        }
    }
    ratio(correct, preds.len() as u64)
}

fn class_f1(preds: &[i64], refs: &[i64], class: i64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for i in 0..preds.len() {
        match (preds[i] == class, refs[i] == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    ratio(2 * tp, 2 * tp + fp + fn_)
}

/// Binary F1 with positive class 1.
pub fn f1(preds: &[i64], refs: &[i64]) -> f64 {
    class_f1(preds, refs, 1)
}

/// Mean F1 over every label that occurs in either list.
pub fn macro_f1(preds: &[i64], refs: &[i64]) -> f64 {
    let classes: BTreeSet<i64> = preds.iter().chain(refs).copied().collect();
    let sum: f64 = classes.iter().map(|&c| class_f1(preds, refs, c)).sum();
    sum / classes.len() as f64
}

pub fn exact_match(preds: &[String], refs: &[String]) -> f64 {
    ratio(
        preds.iter().zip(refs).filter(|(p, r)| p == r).count() as u64,
        preds.len() as u64,
    )
}

fn ngrams(toks: &[String], n: usize) -> Vec<String> {
    if toks.len() < n {
        return Vec::new();
    }
    (0..=toks.len() - n).map(|i| toks[i..i + n].join("\u{1}")).collect()
}

fn occurrences(list: &[String], g: &str) -> u64 {
    list.iter().filter(|x| *x == g).count() as u64
}

/// Corpus BLEU-4 with clipped counts and closest-reference brevity penalty.
pub fn bleu(cands: &[String], refs: &[Vec<String>], smooth: bool) -> f64 {
    let mut matches = [0u64; 4];
    let mut totals = [0u64; 4];
    let (mut c_len, mut r_len) = (0u64, 0u64);
    for (cand, rs) in cands.iter().zip(refs) {
        let c = words(cand);
        let rtoks: Vec<Vec<String>> = rs.iter().map(|r| words(r)).collect();
        for n in 1..=4 {
            let cg = ngrams(&c, n);
            let rgs: Vec<Vec<String>> = rtoks.iter().map(|r| ngrams(r, n)).collect();
            let mut distinct: Vec<&String> = Vec::new();
            for g in &cg {
                if !distinct.contains(&g) {
                    distinct.push(g);
                }
            }
            for g in distinct {
                let max_ref = rgs.iter().map(|rg| occurrences(rg, g)).max().unwrap_or(0);
                matches[n - 1] += occurrences(&cg, g).min(max_ref);
            }
            totals[n - 1] += cg.len() as u64;
        }
        c_len += c.len() as u64;
        let mut best: Option<u64> = None;
        for r in &rtoks {
            let l = r.len() as u64;
            best = match best {
                None => Some(l),
                Some(b) => {
                    let (db, dl) = (b.abs_diff(c.len() as u64), l.abs_diff(c.len() as u64));
                    Some(if dl < db || (dl == db && l < b) { l } else { b })
                }
            };
        }
        r_len += best.unwrap();
    }
    let smoothing = smooth && matches[1..].contains(&0);
    let mut log_sum = 0.0;
    for n in 0..4 {
        let (m, t) = if smoothing && n > 0 {
            (matches[n] + 1, totals[n] + 1)
        } else {
            (matches[n], totals[n])
        };
        let p = ratio(m, t);
        if p == 0.0 {
            return 0.0;
        }
        log_sum += 0.25 * p.ln();
    }
    let (c, r) = (c_len as f64, r_len as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * log_sum.exp()
}
