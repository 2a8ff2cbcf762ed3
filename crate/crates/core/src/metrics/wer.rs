//! Word error rate by minimum edit distance over word tokens.

use serde::{Deserialize, Serialize};

use super::text::normalize_v1;
use super::MetricError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalizer {
    /// Whitespace split only.
    None,
    #[default]
    V1,
}

impl Normalizer {
    pub fn words(self, text: &str) -> Vec<String> {
        match self {
            Normalizer::None => text.split_whitespace().map(str::to_string).collect(),
            Normalizer::V1 => normalize_v1(text)
                .split(' ')
                .filter(|w| !w.is_empty())
                .map(str::to_string)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn wer(&self) -> Result<f64, MetricError> {
        if self.reference_len == 0 {
            return Err(MetricError::EmptyReference);
        }
        Ok(self.errors() as f64 / self.reference_len as f64)
    }
}

/// Levenshtein alignment with S/D/I breakdown. Ties prefer the diagonal,
/// then deletions.
pub fn align_words<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut counts = EditCounts {
        reference_len: n,
        ..EditCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let diff = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if d[i][j] == d[i - 1][j - 1] + diff {
                counts.substitutions += diff;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

/// (S + D + I) / N after normalization.
pub fn word_error_rate(reference: &str, hypothesis: &str, normalizer: Normalizer) -> Result<f64, MetricError> {
    let r = normalizer.words(reference);
    if r.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    align_words(&r, &normalizer.words(hypothesis)).wer()
}

/// Corpus-level WER: total errors over total reference words.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WerAccumulator {
    pub counts: EditCounts,
    pub utterances: usize,
}

impl WerAccumulator {
    pub fn add(&mut self, reference: &str, hypothesis: &str, normalizer: Normalizer) {
        let c = align_words(&normalizer.words(reference), &normalizer.words(hypothesis));
        self.counts.substitutions += c.substitutions;
        self.counts.deletions += c.deletions;
        self.counts.insertions += c.insertions;
        self.counts.reference_len += c.reference_len;
        self.utterances += 1;
    }

    pub fn wer(&self) -> Result<f64, MetricError> {
        self.counts.wer()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_zero() {
        assert_eq!(word_error_rate("he fell down", "he fell down", Normalizer::V1), Ok(0.0));
    }

    #[test]
    fn one_deletion_in_three() {
        let w = word_error_rate("he fell down", "he fell", Normalizer::V1).unwrap();
        assert!((w - 1.0 / 3.0).abs() < 1e-15);
        let c = align_words(&["he", "fell", "down"], &["he", "fell"]);
        assert_eq!((c.substitutions, c.deletions, c.insertions), (0, 1, 0));
    }

    #[test]
    fn digits_match_number_words() {
        assert_eq!(
            word_error_rate("ten out of ten", "10 out of 10", Normalizer::V1),
            Ok(0.0)
        );
        assert!(word_error_rate("ten out of ten", "10 out of 10", Normalizer::None).unwrap() > 0.0);
    }

    #[test]
    fn empty_reference_is_an_error() {
        assert_eq!(
            word_error_rate(" ... ", "x", Normalizer::V1),
            Err(MetricError::EmptyReference)
        );
    }

    #[test]
    fn swapping_sides_swaps_deletions_and_insertions() {
        let a = align_words(&["a", "b", "c", "d"], &["a", "x", "d", "e", "f"]);
        let b = align_words(&["a", "x", "d", "e", "f"], &["a", "b", "c", "d"]);
        assert_eq!(a.errors(), b.errors());
        assert_eq!(a.substitutions, b.substitutions);
        assert_eq!(a.deletions, b.insertions);
        assert_eq!(a.insertions, b.deletions);
    }

    #[test]
    fn accumulator_pools_words() {
        let mut acc = WerAccumulator::default();
        acc.add("a b", "a", Normalizer::V1);
        acc.add("c d e f", "c d e f", Normalizer::V1);
        assert!((acc.wer().unwrap() - 1.0 / 6.0).abs() < 1e-15);
    }
}
