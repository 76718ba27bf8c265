//! Offline NLI stand-in based on content-word overlap.
//!
//! Content words are the lowercased alphanumeric runs of a text minus a fixed
//! English stopword list. The entailment probability is the Jaccard overlap
//! `|P ∩ H| / |P ∪ H|` of the two content-word sets (0 when both are empty);
//! the rest of the mass is neutral. Contradiction is never emitted.

use std::collections::BTreeSet;

use crate::llm_backend::{BackendError, NliDistribution, NliScorer};

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "again", "all", "am", "an", "and", "any", "are", "as", "at", "be", "because",
    "been", "before", "being", "but", "by", "can", "could", "did", "do", "does", "doing", "for", "from",
    "had", "has", "have", "having", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how",
    "i", "if", "in", "into", "is", "it", "its", "itself", "just", "me", "more", "most", "my", "myself", "no",
    "nor", "not", "now", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "out", "over",
    "own", "s", "same", "she", "should", "so", "some", "such", "t", "than", "that", "the", "their", "theirs",
    "them", "then", "there", "these", "they", "this", "those", "through", "to", "too", "under", "until",
    "up", "very", "was", "we", "were", "what", "when", "where", "which", "while", "who", "whom", "why",
    "will", "with", "would", "you", "your", "yours",
];

pub fn content_words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|tok| !tok.is_empty())
        .map(str::to_lowercase)
        .filter(|tok| STOPWORDS.binary_search(&tok.as_str()).is_err())
        .collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, Default)]
pub struct LexicalScorer;

impl NliScorer for LexicalScorer {
    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliDistribution, BackendError> {
        let overlap = jaccard(&content_words(premise), &content_words(hypothesis));
        Ok(NliDistribution {
            entailment: overlap,
            neutral: 1.0 - overlap,
            contradiction: 0.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_backend::NliLabel;

    #[test]
    fn stopwords_sorted_for_binary_search() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted, STOPWORDS);
    }

    #[test]
    fn content_words_drop_stopwords_and_case() {
        let words = content_words("The Dog chased the CAT, and the cat ran!");
        let expected: BTreeSet<String> = ["dog", "chased", "cat", "ran"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(words, expected);
    }

    #[test]
    fn half_overlap_is_entailment() {
        // 2 shared of 4 distinct
        let d = LexicalScorer
            .classify("apple banana", "apple banana cherry date")
            .unwrap();
        assert_eq!(d.entailment, 0.5);
        assert_eq!(d.label(), NliLabel::Entailment);
    }

    #[test]
    fn stopword_only_texts_score_zero() {
        let d = LexicalScorer.classify("the and of", "it is").unwrap();
        assert_eq!(d.entailment, 0.0);
        assert_eq!(d.label(), NliLabel::Neutral);
    }
}
