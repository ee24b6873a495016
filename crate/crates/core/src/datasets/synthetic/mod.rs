//! Synthetic stand-in for a labeled feedback corpus: template comments at
//! configurable class proportions and procedurally rendered package photos.

mod images;
mod text;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    save_dataset, FeedbackRecord, ImageLabel, DAMAGED, DROPPED_OUTSIDE, INCORRECT_ITEM, LATE_DELIVERY, NOT_RECEIVED,
    OTHERS, PARTIAL_DELIVERY, SHIPPING_CHARGES, UNKNOWN, WRONG_ADDRESS,
};
use crate::image_model::{write_ppm, Image};
use crate::numerics::SeededRng;
use crate::{Error, Result};
use images::{render, RenderKind};

/// Percentage share of each label in the reference distribution.
pub const CLASS_WEIGHTS: [(&str, f64); 10] = [
    (DAMAGED, 36.48),
    (LATE_DELIVERY, 16.20),
    (PARTIAL_DELIVERY, 9.24),
    (NOT_RECEIVED, 9.01),
    (OTHERS, 8.37),
    (UNKNOWN, 7.16),
    (DROPPED_OUTSIDE, 4.97),
    (INCORRECT_ITEM, 4.55),
    (WRONG_ADDRESS, 2.52),
    (SHIPPING_CHARGES, 1.50),
];

/// Relative weights of the three render families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMix {
    pub irrelevant: f64,
    pub damaged: f64,
    pub not_damaged: f64,
}

impl Default for ImageMix {
    fn default() -> Self {
        Self {
            irrelevant: 0.5,
            damaged: 0.25,
            not_damaged: 0.25,
        }
    }
}

impl ImageMix {
    /// Only package photos, half of them damaged.
    pub fn damage_only() -> Self {
        Self {
            irrelevant: 0.0,
            damaged: 0.5,
            not_damaged: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_text: usize,
    pub n_images: usize,
    pub seed: u64,
    pub class_weights: Vec<(String, f64)>,
    pub typo_rate: f64,
    /// Probability that a late or not-received comment uses the shared
    /// ambiguous lexicon.
    pub overlap_late_not_received: f64,
    pub image_mix: ImageMix,
    pub image_size: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_text: 1000,
            n_images: 200,
            seed: 0,
            class_weights: CLASS_WEIGHTS.iter().map(|(l, w)| (l.to_string(), *w)).collect(),
            typo_rate: 0.02,
            overlap_late_not_received: 0.0,
            image_mix: ImageMix::default(),
            image_size: 64,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.class_weights.is_empty() || self.class_weights.iter().any(|(_, w)| w.is_nan() || *w < 0.0) {
            return Err(Error::InvalidArgument("class weights must be nonnegative".into()));
        }
        if self.class_weights.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument("class weights sum to zero".into()));
        }
        for (label, _) in &self.class_weights {
            if label != UNKNOWN && text::lexicon(label).is_none() {
                return Err(Error::UnknownClass(label.clone()));
            }
        }
        let m = self.image_mix;
        if [m.irrelevant, m.damaged, m.not_damaged]
            .iter()
            .any(|w| w.is_nan() || *w < 0.0)
            || m.irrelevant + m.damaged + m.not_damaged <= 0.0
        {
            return Err(Error::InvalidArgument(
                "image mix weights must be nonnegative and not all zero".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.typo_rate) || !(0.0..=1.0).contains(&self.overlap_late_not_received) {
            return Err(Error::InvalidArgument("rates must lie in [0, 1]".into()));
        }
        if self.image_size < 16 {
            return Err(Error::InvalidArgument("image_size must be at least 16".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub text_records: Vec<FeedbackRecord>,
    pub image_records: Vec<FeedbackRecord>,
}

pub fn generate_text_records(config: &SyntheticConfig) -> Result<Vec<FeedbackRecord>> {
    text::assert_lexicons_disjoint();
    config.validate()?;
    let mut rng = SeededRng::new(config.seed).fork(1);
    let weights: Vec<f64> = config.class_weights.iter().map(|(_, w)| *w).collect();
    Ok((0..config.n_text)
        .map(|i| {
            let label = &config.class_weights[rng.weighted_index(&weights)].0;
            let comment = if label == UNKNOWN {
                String::new()
            } else {
                text::compose_comment(label, config.overlap_late_not_received, config.typo_rate, &mut rng)
            };
            FeedbackRecord::text(format!("txt-{:05}", i + 1), comment, Some(label))
        })
        .collect())
}

/// Exact per-family counts by largest remainder, in a seeded random order.
fn render_plan(mix: ImageMix, n: usize, rng: &mut SeededRng) -> Vec<RenderKind> {
    let families = [
        (RenderKind::Irrelevant, mix.irrelevant),
        (RenderKind::Damaged, mix.damaged),
        (RenderKind::NotDamaged, mix.not_damaged),
    ];
    let total: f64 = families.iter().map(|f| f.1).sum();
    let quotas: Vec<f64> = families.iter().map(|f| f.1 / total * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())));
    let mut missing = n - counts.iter().sum::<usize>();
    for &k in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        counts[k] += 1;
        missing -= 1;
    }
    let mut plan: Vec<RenderKind> = families
        .iter()
        .zip(&counts)
        .flat_map(|(f, &c)| std::iter::repeat_n(f.0, c))
        .collect();
    rng.shuffle(&mut plan);
    plan
}

/// Renders `n_images` images in memory. Each record carries a
/// damage-class comment, its image label, and the path the image is
/// stored under by [`generate_synthetic`].
pub fn generate_image_set(config: &SyntheticConfig) -> Result<Vec<(FeedbackRecord, Image)>> {
    text::assert_lexicons_disjoint();
    config.validate()?;
    let mut rng = SeededRng::new(config.seed).fork(2);
    let plan = render_plan(config.image_mix, config.n_images, &mut rng);
    Ok(plan
        .into_iter()
        .enumerate()
        .map(|(i, kind)| {
            let (image, damage_box) = render(kind, config.image_size, &mut rng);
            let id = format!("img-{:05}", i + 1);
            let image_label = match kind {
                RenderKind::Irrelevant => ImageLabel::Irrelevant,
                RenderKind::Damaged => ImageLabel::Damaged,
                RenderKind::NotDamaged => ImageLabel::NotDamaged,
            };
            let record = FeedbackRecord {
                image_path: Some(format!("images/{id}.ppm")),
                comment: text::compose_comment(DAMAGED, 0.0, config.typo_rate, &mut rng),
                label: Some(DAMAGED.to_string()),
                id,
                image_label: Some(image_label),
                damage_box,
            };
            (record, image)
        })
        .collect())
}

/// Writes `records.jsonl`, `images.jsonl` and `images/*.ppm` under `out_dir`.
/// Image paths in `images.jsonl` are relative to `out_dir`.
pub fn generate_synthetic(config: &SyntheticConfig, out_dir: impl AsRef<Path>) -> Result<SyntheticCorpus> {
    let out_dir = out_dir.as_ref();
    let text_records = generate_text_records(config)?;
    let images = generate_image_set(config)?;
    let image_dir = out_dir.join("images");
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    for (record, image) in &images {
        let rel = record.image_path.as_deref().expect("generated records carry a path");
        write_ppm(image, out_dir.join(rel))?;
    }
    let image_records: Vec<FeedbackRecord> = images.into_iter().map(|(r, _)| r).collect();
    save_dataset(&text_records, out_dir.join("records.jsonl"))?;
    save_dataset(&image_records, out_dir.join("images.jsonl"))?;
    Ok(SyntheticCorpus {
        text_records,
        image_records,
    })
}
