//! Per-acuity corpus statistics: conversations, distinct speakers, mean
//! utterances, tokens and audio hours.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::text::tokenize;
use crate::dialogue::Transcript;

pub const STATS_COLUMNS: [&str; 6] = ["Acuity", "Di.", "Sp.", "Ut.", "Tokens", "Hours"];

/// One conversation's contribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    /// Ground-truth acuity of the seed case.
    pub acuity: u8,
    /// Voice identities heard in the session.
    pub voice_ids: Vec<String>,
    pub utterances: usize,
    pub tokens: usize,
    /// Session length; zero when no audio was rendered.
    pub duration_s: f64,
}

impl CorpusEntry {
    pub fn from_transcript(transcript: &Transcript, acuity: u8, voice_ids: Vec<String>, duration_s: f64) -> Self {
        let spoken: Vec<_> = transcript.spoken_turns().collect();
        Self {
            acuity,
            voice_ids,
            utterances: spoken.len(),
            tokens: spoken
                .iter()
                .filter_map(|t| t.utterance.as_deref())
                .map(|u| tokenize(u).len())
                .sum(),
            duration_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    /// `None` on the total row.
    pub acuity: Option<u8>,
    pub conversations: usize,
    pub speakers: usize,
    pub mean_utterances: f64,
    pub tokens: usize,
    pub hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub columns: Vec<String>,
    pub rows: Vec<StatsRow>,
    pub total: Option<StatsRow>,
}

fn row<'a>(acuity: Option<u8>, entries: impl Iterator<Item = &'a CorpusEntry>) -> StatsRow {
    let mut speakers = BTreeSet::new();
    let (mut n, mut utt, mut tokens, mut secs) = (0usize, 0usize, 0usize, 0.0f64);
    for e in entries {
        n += 1;
        utt += e.utterances;
        tokens += e.tokens;
        secs += e.duration_s;
        speakers.extend(e.voice_ids.iter().cloned());
    }
    StatsRow {
        acuity,
        conversations: n,
        speakers: speakers.len(),
        mean_utterances: if n == 0 { 0.0 } else { utt as f64 / n as f64 },
        tokens,
        hours: secs / 3600.0,
    }
}

/// Speakers are distinct voice ids within each acuity level, so a voice used
/// at two levels counts once in each row and once in the total.
pub fn corpus_stats(entries: &[CorpusEntry]) -> CorpusStats {
    let mut by_level: BTreeMap<u8, Vec<&CorpusEntry>> = BTreeMap::new();
    for e in entries {
        by_level.entry(e.acuity).or_default().push(e);
    }
    let rows = by_level
        .iter()
        .map(|(&level, es)| row(Some(level), es.iter().copied()))
        .collect();
    CorpusStats {
        columns: STATS_COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows,
        total: (!entries.is_empty()).then(|| row(None, entries.iter())),
    }
}

pub fn render_stats_table(stats: &CorpusStats) -> String {
    let mut out = format!(
        "{:<8}{:>6}{:>6}{:>8}{:>10}{:>9}\n",
        STATS_COLUMNS[0], STATS_COLUMNS[1], STATS_COLUMNS[2], STATS_COLUMNS[3], STATS_COLUMNS[4], STATS_COLUMNS[5]
    );
    for r in stats.rows.iter().chain(stats.total.iter()) {
        let label = r.acuity.map_or_else(|| "Total".to_string(), |a| a.to_string());
        out.push_str(&format!(
            "{:<8}{:>6}{:>6}{:>8.1}{:>10}{:>9.2}\n",
            label, r.conversations, r.speakers, r.mean_utterances, r.tokens, r.hours
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(acuity: u8, voices: &[&str], utterances: usize, tokens: usize, secs: f64) -> CorpusEntry {
        CorpusEntry {
            acuity,
            voice_ids: voices.iter().map(|s| s.to_string()).collect(),
            utterances,
            tokens,
            duration_s: secs,
        }
    }

    #[test]
    fn single_conversation_row() {
        let s = corpus_stats(&[entry(2, &["n1", "p1"], 10, 57, 1800.0)]);
        assert_eq!(s.rows.len(), 1);
        let r = &s.rows[0];
        assert_eq!(
            (
                r.acuity,
                r.conversations,
                r.speakers,
                r.mean_utterances,
                r.tokens,
                r.hours
            ),
            (Some(2), 1, 2, 10.0, 57, 0.5)
        );
    }

    #[test]
    fn empty_corpus() {
        let s = corpus_stats(&[]);
        assert!(s.rows.is_empty() && s.total.is_none());
        assert_eq!(s.columns, STATS_COLUMNS);
    }

    #[test]
    fn reused_voice_counted_per_level() {
        let s = corpus_stats(&[
            entry(2, &["n1", "p1"], 4, 10, 0.0),
            entry(3, &["n1", "p2"], 6, 10, 0.0),
            entry(3, &["n2", "p2"], 8, 10, 0.0),
        ]);
        assert_eq!(s.rows[0].speakers, 2);
        assert_eq!(s.rows[1].speakers, 3);
        assert_eq!(s.rows[1].mean_utterances, 7.0);
        assert_eq!(s.total.as_ref().unwrap().speakers, 4);
        let table = render_stats_table(&s);
        assert!(table.starts_with("Acuity"));
        assert!(table.lines().last().unwrap().starts_with("Total"));
    }
}
