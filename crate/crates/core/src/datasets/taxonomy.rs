use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{
    FeedbackRecord, DAMAGED, DROPPED_OUTSIDE, INCORRECT_ITEM, LATE_DELIVERY, NOT_RECEIVED, PARTIAL_DELIVERY,
    SHIPPING_CHARGES, WRONG_ADDRESS,
};
use crate::{Error, Result};

/// Claims without a comment. Kept in files, never a model class.
pub const UNKNOWN: &str = "Unknown";
/// Catch-all for highly specific issues. Kept in files, never a model class.
pub const OTHERS: &str = "Others";

pub const DEFAULT_CLASSES: [&str; 8] = [
    DROPPED_OUTSIDE,
    INCORRECT_ITEM,
    LATE_DELIVERY,
    NOT_RECEIVED,
    PARTIAL_DELIVERY,
    DAMAGED,
    SHIPPING_CHARGES,
    WRONG_ADDRESS,
];

/// Ordered model classes plus aliases left behind by class merges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTaxonomy {
    classes: Vec<String>,
    merged_aliases: BTreeMap<String, String>,
}

impl Default for LabelTaxonomy {
    fn default() -> Self {
        Self {
            classes: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
            merged_aliases: BTreeMap::new(),
        }
    }
}

impl LabelTaxonomy {
    pub fn new(classes: Vec<String>, merged_aliases: BTreeMap<String, String>) -> Result<Self> {
        let taxonomy = Self {
            classes,
            merged_aliases,
        };
        taxonomy.validate()?;
        Ok(taxonomy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidArgument("taxonomy has no classes".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.classes {
            if c == UNKNOWN || c == OTHERS {
                return Err(Error::InvalidArgument(format!("{c:?} cannot be a model class")));
            }
            if !seen.insert(c.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate class {c:?}")));
            }
        }
        for (from, to) in &self.merged_aliases {
            if seen.contains(from.as_str()) {
                return Err(Error::InvalidArgument(format!("alias {from:?} shadows a live class")));
            }
            if !seen.contains(to.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "alias {from:?} points at {to:?}, which is not a class"
                )));
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn merged_aliases(&self) -> &BTreeMap<String, String> {
        &self.merged_aliases
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class_name(&self, index: usize) -> &str {
        &self.classes[index]
    }

    /// Maps a label to its live class name, following merge aliases.
    pub fn resolve<'a>(&'a self, label: &'a str) -> Option<&'a str> {
        if self.classes.iter().any(|c| c == label) {
            return Some(label);
        }
        self.merged_aliases.get(label).map(String::as_str)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        let name = self.resolve(label)?;
        self.classes.iter().position(|c| c == name)
    }

    /// True for labels a dataset file may carry: model classes, aliases, and
    /// the two non-model tags.
    pub fn accepts_label(&self, label: &str) -> bool {
        label == UNKNOWN || label == OTHERS || self.resolve(label).is_some()
    }

    /// Folds two classes into one named `"<a>/<b>"`, which takes `a`'s slot.
    pub fn merge(&self, class_a: &str, class_b: &str) -> Result<Self> {
        if class_a == class_b {
            return Err(Error::InvalidArgument(format!("cannot merge {class_a:?} with itself")));
        }
        let ia = self
            .classes
            .iter()
            .position(|c| c == class_a)
            .ok_or_else(|| Error::UnknownClass(class_a.to_string()))?;
        if !self.classes.iter().any(|c| c == class_b) {
            return Err(Error::UnknownClass(class_b.to_string()));
        }
        let merged = format!("{class_a}/{class_b}");
        let mut classes = self.classes.clone();
        classes[ia] = merged.clone();
        classes.retain(|c| c != class_b);

        let mut aliases: BTreeMap<String, String> = self
            .merged_aliases
            .iter()
            .map(|(from, to)| {
                let to = if to == class_a || to == class_b {
                    merged.clone()
                } else {
                    to.clone()
                };
                (from.clone(), to)
            })
            .collect();
        aliases.insert(class_a.to_string(), merged.clone());
        aliases.insert(class_b.to_string(), merged);
        Self::new(classes, aliases)
    }

    /// Rewrites labels that were merged away to their surviving class.
    pub fn relabel(&self, records: &[FeedbackRecord]) -> Vec<FeedbackRecord> {
        records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if let Some(label) = &r.label {
                    if let Some(to) = self.merged_aliases.get(label) {
                        r.label = Some(to.clone());
                    }
                }
                r
            })
            .collect()
    }
}
