use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::chronology::{Relationship, TimeInterval};
use crate::episode_pipeline::Episode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub episode_count: usize,
    pub session_count: usize,
    pub turn_count: usize,
    pub word_count: usize,
    pub avg_turns_per_session: f64,
    pub avg_words_per_turn: f64,
    pub interval_histogram: BTreeMap<TimeInterval, usize>,
    pub relationship_histogram: BTreeMap<Relationship, usize>,
}

#[derive(Default)]
struct Partial {
    episodes: usize,
    sessions: usize,
    turns: usize,
    words: usize,
    intervals: BTreeMap<TimeInterval, usize>,
    relationships: BTreeMap<Relationship, usize>,
}

impl Partial {
    fn add(mut self, ep: &Episode) -> Self {
        self.episodes += 1;
        *self.relationships.entry(ep.relationship).or_insert(0) += 1;
        for s in &ep.sessions {
            self.sessions += 1;
            if let Some(t) = s.interval {
                *self.intervals.entry(t).or_insert(0) += 1;
            }
            self.turns += s.turns.len();
            self.words += s
                .turns
                .iter()
                .map(|t| t.utterance.split_whitespace().count())
                .sum::<usize>();
        }
        self
    }

    fn merge(mut self, other: Partial) -> Self {
        self.episodes += other.episodes;
        self.sessions += other.sessions;
        self.turns += other.turns;
        self.words += other.words;
        for (k, v) in other.intervals {
            *self.intervals.entry(k).or_insert(0) += v;
        }
        for (k, v) in other.relationships {
            *self.relationships.entry(k).or_insert(0) += v;
        }
        self
    }
}

/// Counts and averages over a non-empty corpus. Words are whitespace tokens.
pub fn compute_stats(episodes: &[Episode]) -> Result<CorpusStats, CorpusError> {
    if episodes.is_empty() {
        return Err(CorpusError::Empty);
    }
    let p = episodes
        .par_iter()
        .fold(Partial::default, Partial::add)
        .reduce(Partial::default, Partial::merge);
    let mut interval_histogram: BTreeMap<TimeInterval, usize> =
        TimeInterval::ALL.iter().map(|t| (*t, 0)).collect();
    interval_histogram.extend(p.intervals);
    let mut relationship_histogram: BTreeMap<Relationship, usize> =
        Relationship::ALL.iter().map(|r| (*r, 0)).collect();
    relationship_histogram.extend(p.relationships);
    Ok(CorpusStats {
        episode_count: p.episodes,
        session_count: p.sessions,
        turn_count: p.turns,
        word_count: p.words,
        avg_turns_per_session: p.turns as f64 / p.sessions as f64,
        avg_words_per_turn: if p.turns == 0 {
            0.0
        } else {
            p.words as f64 / p.turns as f64
        },
        interval_histogram,
        relationship_histogram,
    })
}

fn pct(n: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * n as f64 / total as f64
    }
}

impl CorpusStats {
    /// Checks the count identities that hold for schema-valid episodes.
    pub fn check_invariants(&self) -> Result<(), String> {
        let intervals: usize = self.interval_histogram.values().sum();
        let relationships: usize = self.relationship_histogram.values().sum();
        if self.session_count != 5 * self.episode_count {
            return Err(format!(
                "{} sessions for {} episodes",
                self.session_count, self.episode_count
            ));
        }
        if intervals != 4 * self.episode_count {
            return Err(format!(
                "{intervals} intervals for {} episodes",
                self.episode_count
            ));
        }
        if relationships != self.episode_count {
            return Err(format!(
                "{relationships} relationships for {} episodes",
                self.episode_count
            ));
        }
        Ok(())
    }

    /// Plain-text report: totals, then interval and relationship tables.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28}{:>12}", "Episodes", self.episode_count);
        let _ = writeln!(out, "{:<28}{:>12}", "Sessions", self.session_count);
        let _ = writeln!(out, "{:<28}{:>12}", "Turns", self.turn_count);
        let _ = writeln!(
            out,
            "{:<28}{:>12.2}",
            "Avg. Turns per Session", self.avg_turns_per_session
        );
        let _ = writeln!(
            out,
            "{:<28}{:>12.2}",
            "Avg. Words per Turn", self.avg_words_per_turn
        );

        let total: usize = self.interval_histogram.values().sum();
        let _ = writeln!(out, "\n{:<28}{:>12}{:>9}", "Time Interval", "Count", "Ratio");
        for t in TimeInterval::ALL {
            let n = self.interval_histogram.get(&t).copied().unwrap_or(0);
            let _ = writeln!(out, "{:<28}{:>12}{:>8.2}%", t.display_text(), n, pct(n, total));
        }

        let total: usize = self.relationship_histogram.values().sum();
        let mut rows: Vec<(Relationship, usize)> = self
            .relationship_histogram
            .iter()
            .map(|(r, n)| (*r, *n))
            .collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let _ = writeln!(out, "\n{:<28}{:>12}{:>9}", "Relationship", "Count", "Ratio");
        for (r, n) in rows {
            let _ = writeln!(out, "{:<28}{:>12}{:>8.2}%", r.label(), n, pct(n, total));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode_pipeline::fixtures::episode;

    #[test]
    fn arithmetic() {
        let s = compute_stats(&[episode("a", Relationship::Classmates, 10, 18)]).unwrap();
        assert_eq!(s.avg_turns_per_session, 10.0);
        assert_eq!(s.avg_words_per_turn, 18.0);
        assert_eq!(s.turn_count, 50);
        s.check_invariants().unwrap();
    }

    #[test]
    fn histograms_and_empty() {
        let eps: Vec<_> = (0..20)
            .map(|i| episode(&i.to_string(), Relationship::ALL[i % 3], 2, 1))
            .collect();
        let s = compute_stats(&eps).unwrap();
        s.check_invariants().unwrap();
        assert_eq!(s.relationship_histogram[&Relationship::Classmates], 7);
        assert_eq!(s.relationship_histogram[&Relationship::AthleteAndCoach], 0);
        assert_eq!(s.interval_histogram[&TimeInterval::Years], 0);
        assert_eq!(s.interval_histogram[&TimeInterval::Hours], 20);
        assert!(s.to_table().contains("Avg. Words per Turn"));
        assert!(matches!(compute_stats(&[]), Err(CorpusError::Empty)));
        let json = serde_json::to_value(&s).unwrap();
        assert_eq!(json["interval_histogram"]["a few hours later"], 20);
    }
}
