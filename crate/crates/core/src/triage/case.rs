use serde::{Deserialize, Serialize};

use super::decision::{CaseState, Rule};
use crate::datasets::FeedbackRecord;
use crate::text_model::TextPrediction;

/// What an analyst (or the system, for auto-resolved cases) decided.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    ApproveRefund,
    Reject,
    Reassign { label: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecidedBy {
    System,
    Analyst(String),
}

/// One binary image model's verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageVerdict {
    pub verdict: String,
    pub confidence: f64,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageCase {
    pub id: String,
    pub record: FeedbackRecord,
    pub text_prediction: Option<TextPrediction>,
    pub image_relevance: Option<ImageVerdict>,
    pub image_damage: Option<ImageVerdict>,
    /// Copy of the submitted image, relative to the case store directory.
    pub image_path: Option<String>,
    /// Relative to the case store directory.
    pub heatmap_path: Option<String>,
    pub state: CaseState,
    pub rule: Option<Rule>,
    pub reason: Option<String>,
    pub decision: Option<Action>,
    pub decided_by: Option<DecidedBy>,
    /// Current label: the predicted class, or the analyst's reassignment.
    pub label: Option<String>,
    pub warnings: Vec<String>,
    pub created_at: u64,
    pub updated_at: u64,
}

/// Row of the analyst queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub id: String,
    pub state: CaseState,
    pub reason: Option<String>,
    pub comment: String,
    pub text_class: Option<String>,
    pub text_confidence: Option<f64>,
    pub has_heatmap: bool,
    pub created_at: u64,
}

impl From<&TriageCase> for CaseSummary {
    fn from(c: &TriageCase) -> Self {
        Self {
            id: c.id.clone(),
            state: c.state,
            reason: c.reason.clone(),
            comment: c.record.comment.clone(),
            text_class: c.text_prediction.as_ref().map(|p| p.class.clone()),
            text_confidence: c.text_prediction.as_ref().map(TextPrediction::confidence),
            has_heatmap: c.heatmap_path.is_some(),
            created_at: c.created_at,
        }
    }
}
