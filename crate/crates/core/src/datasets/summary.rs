use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{FeedbackRecord, DEFAULT_CLASSES, OTHERS, UNKNOWN};

/// Bucket used for records without any label.
const UNLABELED: &str = "(unlabeled)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassShare {
    pub label: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub total: usize,
    pub classes: Vec<ClassShare>,
    /// Whitespace-token count → number of comments with that length.
    pub token_length_histogram: BTreeMap<usize, usize>,
}

impl DatasetSummary {
    pub fn count(&self, label: &str) -> usize {
        self.classes.iter().find(|c| c.label == label).map_or(0, |c| c.count)
    }

    pub fn percent(&self, label: &str) -> f64 {
        self.classes
            .iter()
            .find(|c| c.label == label)
            .map_or(0.0, |c| c.percent)
    }
}

/// Label counts in taxonomy order (then `Unknown`, `Others`, anything else).
pub fn summarize(records: &[FeedbackRecord]) -> DatasetSummary {
    let mut order: Vec<String> = DEFAULT_CLASSES
        .iter()
        .chain([UNKNOWN, OTHERS].iter())
        .map(|s| s.to_string())
        .collect();
    let mut counts: BTreeMap<String, usize> = order.iter().map(|l| (l.clone(), 0)).collect();
    let mut histogram = BTreeMap::new();
    for r in records {
        let label = r.label.clone().unwrap_or_else(|| UNLABELED.to_string());
        if !counts.contains_key(&label) {
            order.push(label.clone());
        }
        *counts.entry(label).or_insert(0) += 1;
        *histogram.entry(r.comment.split_whitespace().count()).or_insert(0) += 1;
    }
    let total = records.len();
    let classes = order
        .into_iter()
        .map(|label| {
            let count = counts[&label];
            let percent = if total == 0 {
                0.0
            } else {
                100.0 * count as f64 / total as f64
            };
            ClassShare { label, count, percent }
        })
        .collect();
    DatasetSummary {
        total,
        classes,
        token_length_histogram: histogram,
    }
}
