//! Feedback records, the delivery-issue taxonomy, dataset files, splitting,
//! summaries and the synthetic corpus generator.

mod record;
mod split;
mod summary;
pub mod synthetic;
mod taxonomy;

pub use record::{
    filter_for_training, load_dataset, load_dataset_with, parse_dataset, save_dataset, DamageBox, FeedbackRecord,
    ImageLabel,
};
pub use split::{stratified_indices, stratified_split, Split};
pub use summary::{summarize, ClassShare, DatasetSummary};
pub use synthetic::{generate_synthetic, ImageMix, SyntheticConfig, SyntheticCorpus};
pub use taxonomy::{LabelTaxonomy, DEFAULT_CLASSES, OTHERS, UNKNOWN};

pub const DROPPED_OUTSIDE: &str = "Dropped Outside (No notification)";
pub const INCORRECT_ITEM: &str = "Incorrect item";
pub const LATE_DELIVERY: &str = "Late Delivery";
pub const NOT_RECEIVED: &str = "Not Received";
pub const PARTIAL_DELIVERY: &str = "Partial/Split Delivery";
pub const DAMAGED: &str = "Poor Packaging/Handling/Damaged";
pub const SHIPPING_CHARGES: &str = "Shipping Charges";
pub const WRONG_ADDRESS: &str = "Wrong Address";
