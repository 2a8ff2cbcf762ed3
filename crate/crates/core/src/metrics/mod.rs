//! Corpus evaluation: disfluency rates, rank correlation, nurse behaviour,
//! WER, ordinal agreement, embedding similarity, red-flag scoring and corpus
//! statistics. Everything here is a pure function of its inputs.

pub mod behaviour;
pub mod corpus;
pub mod correlation;
pub mod disfluency;
pub mod kappa;
pub mod red_flags;
pub mod text;
pub mod wer;

use thiserror::Error;

pub use behaviour::{behavioural_report, BehaviouralReport, GroupStat};
pub use corpus::{corpus_stats, render_stats_table, CorpusEntry, CorpusStats, StatsRow, STATS_COLUMNS};
pub use correlation::{average_ranks, cosine_similarity, pearson, speaker_consistency, spearman_rho};
pub use disfluency::{
    detect_corpus, detect_disfluencies, DisfluencyCounts, DisfluencyDetector, DisfluencyPatterns, DisfluencyRates,
};
pub use kappa::{quadratic_weighted_kappa, ConfusionMatrix};
pub use red_flags::{normalize_flag, red_flag_prf, RedFlagScores};
pub use text::{normalize_v1, number_to_words, tokenize};
pub use wer::{align_words, word_error_rate, EditCounts, Normalizer, WerAccumulator};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("{0}: input is empty")]
    EmptyInput(&'static str),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("{0}: at least two observations are required")]
    TooFewObservations(&'static str),
    #[error("correlation undefined: zero variance")]
    ZeroVariance,
    #[error("cosine undefined: zero-norm vector")]
    ZeroNorm,
    #[error("kappa undefined: expected weighted disagreement is zero")]
    KappaUndefined,
    #[error("label {label} outside 1..={k}")]
    LabelOutOfRange { label: u8, k: usize },
    #[error("rate undefined: no tokens")]
    NoTokens,
    #[error("WER undefined: reference is empty after normalization")]
    EmptyReference,
    #[error("precision undefined: no predicted flags")]
    NoPredictions,
    #[error("recall undefined: no reference flags")]
    NoReferences,
    #[error("invalid pattern inventory: {0}")]
    Patterns(String),
}
