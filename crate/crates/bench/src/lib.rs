//! Inputs shared by the benchmarks.

use triage_core::datasets::synthetic::{generate_image_set, generate_text_records};
use triage_core::datasets::{filter_for_training, FeedbackRecord, ImageMix, SyntheticConfig};
use triage_core::image_model::Image;

pub fn comments(n: usize, seed: u64) -> Vec<FeedbackRecord> {
    let config = SyntheticConfig {
        n_text: n,
        seed,
        ..SyntheticConfig::default()
    };
    filter_for_training(&generate_text_records(&config).expect("valid config"))
}

/// `(label, image)` pairs from the damage-only mix.
pub fn photos(n: usize, seed: u64) -> Vec<(FeedbackRecord, Image)> {
    let config = SyntheticConfig {
        n_text: 0,
        n_images: n,
        seed,
        image_mix: ImageMix::damage_only(),
        ..SyntheticConfig::default()
    };
    generate_image_set(&config).expect("valid config")
}
