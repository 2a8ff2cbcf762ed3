//! Metric implementations against independent reference computations, plus
//! invariants as properties.

use proptest::prelude::*;
use triagesim_core::metrics::{
    align_words, cosine_similarity, detect_corpus, pearson, quadratic_weighted_kappa, spearman_rho, word_error_rate,
    ConfusionMatrix, DisfluencyDetector, MetricError, Normalizer,
};
use triagesim_core::speech::{db_to_linear, mix_tracks};

/// Direct summation over normalized observed and expected matrices.
fn kappa_oracle(counts: &[Vec<u64>]) -> f64 {
    let k = counts.len();
    let n: f64 = counts.iter().flatten().map(|&c| c as f64).sum();
    let rows: Vec<f64> = counts.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let cols: Vec<f64> = (0..k)
        .map(|j| counts.iter().map(|r| r[j]).sum::<u64>() as f64)
        .collect();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            let w = ((i as f64 - j as f64) / (k as f64 - 1.0)).powi(2);
            num += w * counts[i][j] as f64 / n;
            den += w * rows[i] * cols[j] / (n * n);
        }
    }
    1.0 - num / den
}

/// Textbook Levenshtein distance over words.
fn edit_distance(a: &[String], b: &[String]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Rank = 1 + number smaller + half the number of other equal values.
fn ranks_oracle(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let less = x.iter().filter(|w| *w < v).count() as f64;
            let equal = x.iter().filter(|w| *w == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn matrix() -> impl Strategy<Value = Vec<Vec<u64>>> {
    (2usize..=5).prop_flat_map(|k| proptest::collection::vec(proptest::collection::vec(0u64..=10, k), k))
}

fn words() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "the", "pain"]), 0..30)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

proptest! {
    #[test]
    fn kappa_matches_direct_summation(counts in matrix()) {
        let m = ConfusionMatrix::from_counts(counts.clone()).unwrap();
        match quadratic_weighted_kappa(&m) {
            Ok(k) => {
                let oracle = kappa_oracle(&counts);
                prop_assert!((k - oracle).abs() < 1e-12, "{k} vs {oracle}");
                prop_assert!(k <= 1.0 + 1e-12);
                prop_assert!((k - quadratic_weighted_kappa(&m.transpose()).unwrap()).abs() < 1e-12);
            }
            Err(MetricError::EmptyInput(_)) => prop_assert_eq!(m.total(), 0),
            Err(MetricError::KappaUndefined) => {
                let (r, c) = m.marginals();
                // Zero expected disagreement: both raters put all mass on one shared label.
                prop_assert!(r.iter().filter(|&&x| x > 0).count() == 1 && r == c);
            }
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }

    #[test]
    fn diagonal_kappa_is_one(diag in proptest::collection::vec(0u64..20, 2..=5)) {
        prop_assume!(diag.iter().filter(|&&d| d > 0).count() >= 2);
        let k = diag.len();
        let counts = (0..k).map(|i| (0..k).map(|j| if i == j { diag[i] } else { 0 }).collect()).collect();
        prop_assert_eq!(quadratic_weighted_kappa(&ConfusionMatrix::from_counts(counts).unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn alignment_cost_is_edit_distance(r in words(), h in words()) {
        let c = align_words(&r, &h);
        prop_assert_eq!(c.errors(), edit_distance(&r, &h));
        prop_assert_eq!(c.reference_len, r.len());
        // Hypothesis length is recoverable from the operation counts.
        prop_assert_eq!(r.len() - c.deletions + c.insertions, h.len());
    }

    #[test]
    fn identical_text_has_zero_wer(r in words()) {
        prop_assume!(!r.is_empty());
        let text = r.join(" ");
        prop_assert_eq!(word_error_rate(&text, &text, Normalizer::V1).unwrap(), 0.0);
    }

    #[test]
    fn spearman_matches_rank_then_pearson(
        pairs in proptest::collection::vec((0u8..6, 0u8..6), 3..40)
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let y: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        let (rx, ry) = (ranks_oracle(&x), ranks_oracle(&y));
        match spearman_rho(&x, &y) {
            Ok(rho) => {
                let oracle = pearson_oracle(&rx, &ry);
                prop_assert!((rho - oracle).abs() < 1e-12, "{rho} vs {oracle}");
            }
            Err(MetricError::ZeroVariance) => {
                prop_assert!(rx.iter().all(|r| *r == rx[0]) || ry.iter().all(|r| *r == ry[0]));
            }
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }

    #[test]
    fn spearman_is_invariant_to_monotone_maps(x in proptest::collection::vec(-50.0f64..50.0, 3..30), y in proptest::collection::vec(-50.0f64..50.0, 3..30)) {
        let n = x.len().min(y.len());
        let (x, y) = (&x[..n], &y[..n]);
        if let Ok(rho) = spearman_rho(x, y) {
            let cubed: Vec<f64> = x.iter().map(|v| v.powi(3) + 7.0).collect();
            prop_assert!((spearman_rho(&cubed, y).unwrap() - rho).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&rho));
        }
    }

    #[test]
    fn pearson_and_cosine_are_bounded(x in proptest::collection::vec(-1e3f64..1e3, 2..30), s in 0.1f64..100.0) {
        let y: Vec<f64> = x.iter().map(|v| v * s).collect();
        if let Ok(r) = pearson(&x, &y) {
            prop_assert!((r - 1.0).abs() < 1e-9);
        }
        if let Ok(c) = cosine_similarity(&x, &y) {
            prop_assert!((-1.0..=1.0).contains(&c));
            prop_assert!((c - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn disfluency_rates_survive_duplication(
        utterances in proptest::collection::vec(
            proptest::collection::vec(prop::sample::select(vec!["um", "uh", "i", "i", "mean", "my", "chest", "hurts", "it", "was", "no", "like"]), 1..15),
            1..6,
        )
    ) {
        let texts: Vec<String> = utterances.iter().map(|u| u.join(" ")).collect();
        let detector = DisfluencyDetector::bundled();
        let once = detect_corpus(detector, texts.iter().map(String::as_str));
        let twice = detect_corpus(detector, texts.iter().chain(texts.iter()).map(String::as_str));
        prop_assert_eq!(twice.token_count, 2 * once.token_count);
        prop_assert_eq!(twice.total(), 2 * once.total());
        prop_assert_eq!(once.rates().unwrap(), twice.rates().unwrap());
    }

    #[test]
    fn mixing_is_linear_in_gain(
        speech in proptest::collection::vec(-0.5f32..0.5, 1..400),
        bed in proptest::collection::vec(-0.5f32..0.5, 1..100),
        gain_db in -40.0f64..0.0,
    ) {
        let mixed = mix_tracks(&speech, Some((&bed, gain_db)), &[]);
        let g = db_to_linear(gain_db);
        for (i, (m, s)) in mixed.iter().zip(&speech).enumerate() {
            let expected = f64::from(*s) + g * f64::from(bed[i % bed.len()]);
            prop_assert!((f64::from(*m) - expected).abs() <= 1e-6 * expected.abs().max(1e-3));
        }
    }
}

#[test]
fn normalization_equates_digits_and_words() {
    assert_eq!(
        word_error_rate("it is ten out of ten", "it is 10 out of 10", Normalizer::V1).unwrap(),
        0.0
    );
    assert!(word_error_rate("it is ten", "it is 10", Normalizer::None).unwrap() > 0.0);
    assert!(matches!(
        word_error_rate(" ", "x", Normalizer::V1),
        Err(MetricError::EmptyReference)
    ));
}
