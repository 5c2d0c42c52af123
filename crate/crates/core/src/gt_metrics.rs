//! SQuAD-style token-level F1 between a model output and its reference.

use std::collections::HashMap;

use unicode_general_category::{get_general_category, GeneralCategory};

use crate::record_store::GenerationRecord;

const ARTICLES: [&str; 3] = ["a", "an", "the"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenF1Result {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `10 * f1`, the ground-truth quality on the `[0, 10]` scale.
    pub scaled: f64,
}

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// Lowercase, drop punctuation, split on whitespace, drop articles.
pub fn normalize_text(s: &str) -> Vec<String> {
    let cleaned: String = s
        .to_lowercase()
        .chars()
        .filter(|c| !is_punctuation(*c))
        .collect();
    cleaned
        .split_whitespace()
        .filter(|tok| !ARTICLES.contains(tok))
        .map(str::to_owned)
        .collect()
}

pub fn token_f1(prediction: &str, reference: &str) -> TokenF1Result {
    let pred = normalize_text(prediction);
    let gold = normalize_text(reference);

    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for tok in &gold {
        *gold_counts.entry(tok).or_default() += 1;
    }
    let mut overlap = 0usize;
    for tok in &pred {
        if let Some(n) = gold_counts.get_mut(tok.as_str()) {
            if *n > 0 {
                *n -= 1;
                overlap += 1;
            }
        }
    }

    if overlap == 0 {
        // Covers the both-empty case too: an empty output never scores.
        return TokenF1Result {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            scaled: 0.0,
        };
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    let f1 = 2.0 * precision * recall / (precision + recall);
    TokenF1Result {
        precision,
        recall,
        f1,
        scaled: 10.0 * f1,
    }
}

/// Writes `gt_score = token_f1(output, reference).scaled` onto every record.
pub fn score_generations(records: Vec<GenerationRecord>) -> Vec<GenerationRecord> {
    records
        .into_iter()
        .map(|mut rec| {
            rec.gt_score = Some(token_f1(&rec.output, &rec.reference).scaled);
            rec
        })
        .collect()
}
