use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::datasets::{LabelTaxonomy, DAMAGED};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageConfig {
    pub tau_text: f64,
    pub tau_image: f64,
    /// Classes whose claims an image can confirm.
    pub verifiable_classes: BTreeSet<String>,
}

impl Default for TriageConfig {
    fn default() -> Self {
        Self {
            tau_text: 0.7,
            tau_image: 0.7,
            verifiable_classes: [DAMAGED.to_string()].into(),
        }
    }
}

impl TriageConfig {
    pub fn validate(&self, taxonomy: &LabelTaxonomy) -> Result<()> {
        for (name, tau) in [("tau_text", self.tau_text), ("tau_image", self.tau_image)] {
            if !(tau > 0.5 && tau < 1.0) {
                return Err(Error::InvalidArgument(format!("{name} = {tau} must lie in (0.5, 1)")));
            }
        }
        if let Some(c) = self.verifiable_classes.iter().find(|c| taxonomy.index_of(c).is_none()) {
            return Err(Error::UnknownClass(c.clone()));
        }
        Ok(())
    }
}

/// What the image models concluded about a claim's photo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageOutcome {
    /// No image attached.
    None,
    /// An image was attached but could not be decoded.
    Unreadable,
    Irrelevant {
        confidence: f64,
    },
    Damaged {
        confidence: f64,
    },
    NotDamaged {
        confidence: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseState {
    New,
    AutoResolved,
    Escalated,
    AnalystResolved,
}

impl CaseState {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseState::New => "new",
            CaseState::AutoResolved => "auto_resolved",
            CaseState::Escalated => "escalated",
            CaseState::AnalystResolved => "analyst_resolved",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            CaseState::New,
            CaseState::AutoResolved,
            CaseState::Escalated,
            CaseState::AnalystResolved,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
    }
}

/// Rows of the fusion table. `R7` covers a confident not-damaged photo on a
/// claim an image cannot confirm anyway, which rows one to six leave open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
    R7,
}

impl Rule {
    pub const ALL: [Rule; 7] = [Rule::R1, Rule::R2, Rule::R3, Rule::R4, Rule::R5, Rule::R6, Rule::R7];

    pub fn outcome(self) -> (CaseState, &'static str) {
        match self {
            Rule::R1 => (CaseState::Escalated, "low text confidence"),
            Rule::R2 => (CaseState::AutoResolved, "text and image agree"),
            Rule::R3 => (CaseState::Escalated, "text/image conflict"),
            Rule::R4 => (CaseState::Escalated, "image contradicts text class"),
            Rule::R5 => (CaseState::Escalated, "low image confidence"),
            Rule::R6 => (CaseState::AutoResolved, "text-only confident"),
            Rule::R7 => (CaseState::AutoResolved, "image not probative"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub rule: Rule,
    pub state: CaseState,
    pub reason: String,
}

struct Facts {
    text_confident: bool,
    verifiable: bool,
    outcome: ImageOutcome,
    tau_image: f64,
}

impl Facts {
    fn damaged(&self, confident: bool) -> bool {
        matches!(self.outcome, ImageOutcome::Damaged { confidence } if (confidence >= self.tau_image) == confident)
    }

    fn not_damaged(&self, confident: bool) -> bool {
        matches!(self.outcome, ImageOutcome::NotDamaged { confidence } if (confidence >= self.tau_image) == confident)
    }
}

type Row = (Rule, fn(&Facts) -> bool);

/// Evaluated top to bottom; the first matching row wins.
const TABLE: [Row; 7] = [
    (Rule::R1, |f| !f.text_confident),
    (Rule::R2, |f| f.damaged(true) && f.verifiable),
    (Rule::R3, |f| f.not_damaged(true) && f.verifiable),
    (Rule::R4, |f| f.damaged(true) && !f.verifiable),
    (Rule::R5, |f| f.damaged(false) || f.not_damaged(false)),
    (Rule::R6, |f| {
        matches!(
            f.outcome,
            ImageOutcome::None | ImageOutcome::Unreadable | ImageOutcome::Irrelevant { .. }
        )
    }),
    (Rule::R7, |f| f.not_damaged(true) && !f.verifiable),
];

/// Applies the fusion table to one claim.
pub fn decide(text_class: &str, text_confidence: f64, image: ImageOutcome, config: &TriageConfig) -> Decision {
    let facts = Facts {
        text_confident: text_confidence >= config.tau_text,
        verifiable: config.verifiable_classes.contains(text_class),
        outcome: image,
        tau_image: config.tau_image,
    };
    let rule = TABLE
        .iter()
        .find(|(_, applies)| applies(&facts))
        .map(|(rule, _)| *rule)
        .expect("the last rows cover every image outcome");
    let (state, reason) = rule.outcome();
    Decision {
        rule,
        state,
        reason: reason.to_string(),
    }
}
