use std::path::Path;

use serde::{Deserialize, Serialize};

use super::case::ImageVerdict;
use super::decision::{decide, CaseState, ImageOutcome, Rule, TriageConfig};
use crate::datasets::FeedbackRecord;
use crate::explain::{grad_cam, Heatmap};
use crate::image_model::{argmax, read_ppm, resize_bilinear, ActShape, CnnModel, Image, ImageTask, Mode};
use crate::text_model::{predict_text, TextModel, TextPrediction};
use crate::Result;

/// The three trained models a triage run needs.
#[derive(Debug, Clone)]
pub struct TriageModels {
    pub text: TextModel,
    pub relevance: CnnModel,
    pub damage: CnnModel,
}

#[derive(Debug, Clone)]
pub enum ImageInput {
    None,
    Loaded(Image),
    /// An image was referenced but could not be read; carries the reason.
    Unreadable(String),
}

impl ImageInput {
    /// Reads the record's image, resolving relative paths against `base_dir`.
    pub fn for_record(record: &FeedbackRecord, base_dir: &Path) -> Self {
        match &record.image_path {
            None => ImageInput::None,
            Some(p) => match read_ppm(base_dir.join(p)) {
                Ok(img) => ImageInput::Loaded(img),
                Err(e) => ImageInput::Unreadable(e.to_string()),
            },
        }
    }
}

/// Everything the pipeline concluded about one record, before it becomes a
/// stored case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub record: FeedbackRecord,
    pub text_prediction: Option<TextPrediction>,
    pub image_relevance: Option<ImageVerdict>,
    pub image_damage: Option<ImageVerdict>,
    pub image_outcome: ImageOutcome,
    pub state: CaseState,
    pub rule: Option<Rule>,
    pub reason: String,
    /// The submitted image at model resolution, kept so the store can
    /// archive it next to its heatmap.
    #[serde(skip)]
    pub image: Option<Image>,
    #[serde(skip)]
    pub heatmap: Option<Heatmap>,
    pub warnings: Vec<String>,
}

fn fit_to_model(image: &Image, model: &CnnModel) -> Result<Image> {
    let rgb_or_gray = match model.input_shape() {
        ActShape::Spatial { channels: 3, .. } => image.to_rgb(),
        _ => image.clone(),
    };
    match model.input_shape() {
        ActShape::Spatial { height, width, .. } if (width, height) != (rgb_or_gray.width(), rgb_or_gray.height()) => {
            resize_bilinear(&rgb_or_gray, width, height)
        }
        _ => Ok(rgb_or_gray),
    }
}

fn verdict(model: &CnnModel, image: &Image, task: ImageTask) -> Result<ImageVerdict> {
    let probabilities = model.forward(&[image], Mode::Eval)?.probabilities().remove(0);
    let k = argmax(&probabilities);
    Ok(ImageVerdict {
        verdict: task.class_names()[k].to_string(),
        confidence: probabilities[k],
        probabilities,
    })
}

/// Text classification, then relevance, then (for relevant images) damage
/// with a Grad-CAM heatmap for damaged verdicts, then the fusion table.
pub fn assess(
    record: &FeedbackRecord,
    image: ImageInput,
    models: &TriageModels,
    config: &TriageConfig,
) -> Result<Assessment> {
    let mut warnings = Vec::new();
    let text_prediction = record
        .has_comment()
        .then(|| predict_text(&models.text, &record.comment));

    let mut image_relevance = None;
    let mut image_damage = None;
    let mut heatmap = None;
    let mut kept_image = None;
    let image_outcome = match image {
        ImageInput::None => ImageOutcome::None,
        ImageInput::Unreadable(why) => {
            let msg = format!("image unreadable, treated as absent: {why}");
            log::warn!("{}: {msg}", record.id);
            warnings.push(msg);
            ImageOutcome::Unreadable
        }
        ImageInput::Loaded(raw) => {
            let rel_img = fit_to_model(&raw, &models.relevance)?;
            let rel = verdict(&models.relevance, &rel_img, ImageTask::Relevance)?;
            let relevant = rel.verdict == ImageTask::Relevance.class_names()[1];
            let rel_conf = rel.confidence;
            image_relevance = Some(rel);
            let outcome = if relevant {
                let img = fit_to_model(&raw, &models.damage)?;
                let dmg = verdict(&models.damage, &img, ImageTask::Damage)?;
                let damaged = dmg.verdict == ImageTask::Damage.class_names()[1];
                let confidence = dmg.confidence;
                image_damage = Some(dmg);
                if damaged {
                    heatmap = Some(grad_cam(&models.damage, &img, 1)?);
                    ImageOutcome::Damaged { confidence }
                } else {
                    ImageOutcome::NotDamaged { confidence }
                }
            } else {
                ImageOutcome::Irrelevant { confidence: rel_conf }
            };
            kept_image = Some(rel_img);
            outcome
        }
    };

    let (state, rule, reason) = match &text_prediction {
        Some(p) => {
            let d = decide(&p.class, p.confidence(), image_outcome, config);
            (d.state, Some(d.rule), d.reason)
        }
        None => {
            let reason = match image_outcome {
                ImageOutcome::None | ImageOutcome::Unreadable => "no signal",
                _ => "empty comment",
            };
            (CaseState::Escalated, None, reason.to_string())
        }
    };
    Ok(Assessment {
        record: record.clone(),
        text_prediction,
        image_relevance,
        image_damage,
        image_outcome,
        state,
        rule,
        reason,
        image: kept_image,
        heatmap,
        warnings,
    })
}
