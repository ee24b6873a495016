//! Fusion of text and image verdicts into auto-resolve or escalate
//! decisions, and the journal-backed case lifecycle.

mod case;
mod decision;
mod pipeline;
mod store;

pub use case::{Action, CaseSummary, DecidedBy, ImageVerdict, TriageCase};
pub use decision::{decide, CaseState, Decision, ImageOutcome, Rule, TriageConfig};
pub use pipeline::{assess, Assessment, ImageInput, TriageModels};
pub use store::{
    fold_journal, CaseStore, Clock, JournalEntry, JournalEvent, LogicalClock, Page, Stats, SystemClock,
    DEFAULT_PAGE_SIZE, HEATMAP_DIR, IMAGE_DIR, JOURNAL_FILE,
};

use crate::datasets::FeedbackRecord;
use crate::Result;

/// Assesses `record` and stores the result as a new case.
pub fn run_pipeline(
    record: &FeedbackRecord,
    image: ImageInput,
    models: &TriageModels,
    config: &TriageConfig,
    store: &CaseStore,
) -> Result<TriageCase> {
    store.create(assess(record, image, models, config)?)
}
