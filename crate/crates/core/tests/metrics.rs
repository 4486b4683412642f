mod common;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use dataforge::metrics::{ComputeOptions, MetricError, MetricId, MetricState};

use common::oracles;
use common::scenarios::{label_case, labels, shard_bounds, text_case, translation_corpus};

fn score(s: &MetricState, key: &str) -> f64 {
    s.compute(ComputeOptions::default()).unwrap().scores[key]
}

#[test]
fn label_metrics_equal_naive_counts() {
    let mut rng = StdRng::seed_from_u64(1);
    for case in 0..1000 {
        let (preds, refs) = label_case(&mut rng);

        let mut acc = MetricState::new(MetricId::Accuracy);
        acc.add_labels(&preds, &refs).unwrap();
        assert_eq!(score(&acc, "accuracy"), oracles::accuracy(&preds, &refs), "case {case}");

        let mut f1 = MetricState::new(MetricId::F1);
        f1.add_labels(&preds, &refs).unwrap();
        assert_eq!(score(&f1, "f1"), oracles::f1(&preds, &refs), "case {case}");
        assert_eq!(score(&f1, "macro_f1"), oracles::macro_f1(&preds, &refs), "case {case}");
    }
}

#[test]
fn exact_match_equals_naive_count() {
    let mut rng = StdRng::seed_from_u64(2);
    for case in 0..1000 {
        let (preds, refs) = text_case(&mut rng);
        let mut s = MetricState::new(MetricId::ExactMatch);
        let p: Vec<&str> = preds.iter().map(String::as_str).collect();
        let r: Vec<&str> = refs.iter().map(String::as_str).collect();
        s.add_texts(&p, &r).unwrap();
        assert_eq!(
            score(&s, "exact_match"),
            oracles::exact_match(&preds, &refs),
            "case {case}"
        );
    }
}

#[test]
fn bleu_matches_brute_force() {
    let mut rng = StdRng::seed_from_u64(3);
    let mut nonzero = 0;
    for case in 0..100 {
        let (cands, refs) = translation_corpus(&mut rng);
        let mut s = MetricState::new(MetricId::Bleu);
        s.add_translations(&cands, &refs).unwrap();
        for smooth in [false, true] {
            let got = s.compute(ComputeOptions { smooth }).unwrap().scores["bleu"];
            let want = oracles::bleu(&cands, &refs, smooth);
            assert!(
                (got - want).abs() < 1e-9,
                "case {case} smooth={smooth}: {got} vs {want}"
            );
            nonzero += usize::from(got > 0.0);
        }
    }
    assert!(nonzero > 100, "only {nonzero} non-zero scores");
}

#[test]
fn perfect_translation_scores_one() {
    let refs = vec![vec!["the cat sat on the mat today"]];
    let mut s = MetricState::new(MetricId::Bleu);
    s.add_translations(&["the cat sat on the mat today"], &refs).unwrap();
    assert!((score(&s, "bleu") - 1.0).abs() < 1e-12);
}

fn shard_states(rng: &mut StdRng, metric: MetricId, preds: &[i64], refs: &[i64]) -> Vec<MetricState> {
    shard_bounds(rng, preds.len(), 8)
        .into_iter()
        .map(|(a, b)| {
            let mut s = MetricState::new(metric);
            s.add_labels(&preds[a..b], &refs[a..b]).unwrap();
            s
        })
        .collect()
}

#[test]
fn merging_shards_in_any_order_equals_one_pass() {
    let mut rng = StdRng::seed_from_u64(4);
    for _ in 0..200 {
        let n = rng.gen_range(1..300);
        let refs = labels(&mut rng, n, 4);
        let preds = labels(&mut rng, n, 4);
        for metric in [MetricId::Accuracy, MetricId::F1] {
            let mut whole = MetricState::new(metric);
            whole.add_labels(&preds, &refs).unwrap();
            let mut parts = shard_states(&mut rng, metric, &preds, &refs);
            parts.shuffle(&mut rng);
            let merged = parts[1..].iter().fold(parts[0].clone(), |acc, s| acc.merge(s).unwrap());
            assert_eq!(merged, whole);
        }
    }

    let (cands, refs) = translation_corpus(&mut rng);
    let mut whole = MetricState::new(MetricId::Bleu);
    whole.add_translations(&cands, &refs).unwrap();
    let mut parts: Vec<MetricState> = cands
        .chunks(3)
        .zip(refs.chunks(3))
        .map(|(c, r)| {
            let mut s = MetricState::new(MetricId::Bleu);
            s.add_translations(c, r).unwrap();
            s
        })
        .collect();
    parts.reverse();
    let merged = parts[1..].iter().fold(parts[0].clone(), |acc, s| acc.merge(s).unwrap());
    assert_eq!(merged, whole);
}

#[test]
fn misuse_is_reported() {
    assert!(matches!(
        MetricState::new(MetricId::Accuracy).compute(ComputeOptions::default()),
        Err(MetricError::EmptyState)
    ));
    assert!(matches!(
        MetricState::new(MetricId::Accuracy).merge(&MetricState::new(MetricId::F1)),
        Err(MetricError::MetricMismatch(..))
    ));
    let mut s = MetricState::new(MetricId::F1);
    assert!(matches!(
        s.add_labels(&[1, 2], &[1]),
        Err(MetricError::LengthMismatch { .. })
    ));
    assert!(matches!(
        "rouge".parse::<MetricId>(),
        Err(MetricError::UnknownMetric(_))
    ));
}
