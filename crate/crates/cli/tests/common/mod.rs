#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use triage_cli::api::{router, AppState, FeedbackResponse};
use triage_core::datasets::synthetic::{generate_image_set, generate_text_records};
use triage_core::datasets::LabelTaxonomy;
use triage_core::datasets::{FeedbackRecord, ImageLabel, ImageMix, SyntheticConfig};
use triage_core::image_model::{decode_ppm, encode_ppm, labeled_for_task, train_cnn, CnnTrainConfig, Image, ImageTask};
use triage_core::numerics::SeededRng;
use triage_core::text_model::{train_text, FeaturizerKind, TextTrainConfig};
use triage_core::triage::{assess, CaseStore, ImageInput, LogicalClock, TriageConfig, TriageModels};

pub struct Fixture {
    pub models: TriageModels,
    pub dir: PathBuf,
    pub text_model: PathBuf,
    pub relevance_model: PathBuf,
    pub damage_model: PathBuf,
}

fn image_config(n: usize, seed: u64, mix: ImageMix) -> SyntheticConfig {
    SyntheticConfig {
        n_text: 0,
        n_images: n,
        seed,
        image_mix: mix,
        ..SyntheticConfig::default()
    }
}

/// Small models trained once per test binary.
pub fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let text_records = generate_text_records(&SyntheticConfig {
            n_text: 2000,
            seed: 1,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let train: Vec<FeedbackRecord> = triage_core::datasets::filter_for_training(&text_records);
        let text = train_text(
            &train,
            &LabelTaxonomy::default(),
            &FeaturizerKind::Tfidf,
            &TextTrainConfig::default(),
        )
        .unwrap();

        let relevance_set = generate_image_set(&image_config(300, 2, ImageMix::default())).unwrap();
        let (relevance, _) = train_cnn(
            &labeled_for_task(&relevance_set, ImageTask::Relevance),
            &CnnTrainConfig {
                epochs: 4,
                patience: 2,
                ..CnnTrainConfig::default()
            },
        )
        .unwrap();

        let damage_set = generate_image_set(&image_config(600, 3, ImageMix::damage_only())).unwrap();
        let (damage, _) = train_cnn(
            &labeled_for_task(&damage_set, ImageTask::Damage),
            &CnnTrainConfig {
                epochs: 30,
                patience: 4,
                ..CnnTrainConfig::default()
            },
        )
        .unwrap();

        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("fixture-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let (text_model, relevance_model, damage_model) = (
            dir.join("text.json"),
            dir.join("relevance.json"),
            dir.join("damage.json"),
        );
        text.save(&text_model).unwrap();
        relevance.save(&relevance_model).unwrap();
        damage.save(&damage_model).unwrap();
        Fixture {
            models: TriageModels {
                text,
                relevance,
                damage,
            },
            dir,
            text_model,
            relevance_model,
            damage_model,
        }
    })
}

pub fn app_state(models: &TriageModels, data_dir: &Path) -> Arc<AppState> {
    let store = CaseStore::open(
        data_dir,
        models.text.taxonomy().clone(),
        Arc::new(LogicalClock::default()),
    )
    .unwrap();
    Arc::new(AppState {
        models: models.clone(),
        config: TriageConfig::default(),
        store,
    })
}

pub async fn send(app: &Router, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

pub fn feedback_body(comment: &str, image: Option<&[u8]>) -> String {
    let mut body = json!({ "comment": comment });
    if let Some(bytes) = image {
        body["image"] = Value::String(BASE64.encode(bytes));
    }
    body.to_string()
}

/// One damaged render not seen in training.
pub fn damaged_render(seed: u64) -> Image {
    generate_image_set(&image_config(32, seed, ImageMix::damage_only()))
        .unwrap()
        .into_iter()
        .find(|(r, _)| r.image_label == Some(ImageLabel::Damaged))
        .unwrap()
        .1
}

/// `n` randomized submissions: `(comment, encoded image bytes)`. Images are
/// absent, a synthetic render, or bytes that do not decode.
pub fn randomized_submissions(n: usize, seed: u64) -> Vec<(String, Option<Vec<u8>>)> {
    let comments = generate_text_records(&SyntheticConfig {
        n_text: n,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let images = generate_image_set(&image_config(n, seed + 1, ImageMix::default())).unwrap();
    let mut rng = SeededRng::new(seed).fork(9);
    comments
        .iter()
        .zip(images)
        .map(|(c, (_, img))| {
            let image = match rng.below(6) {
                0 => None,
                1 => Some(b"P6 not really an image".to_vec()),
                _ => Some(encode_ppm(&img)),
            };
            (c.comment.clone(), image)
        })
        .collect()
}

/// Posts each submission to a fresh service and runs the same inputs
/// directly through the pipeline into a second store. Returns one message
/// per response that differs from the direct result.
pub async fn fidelity_mismatches(models: &TriageModels, n: usize, seed: u64) -> Vec<String> {
    let served = tempfile::tempdir().unwrap();
    let direct = tempfile::tempdir().unwrap();
    let app = router(app_state(models, served.path()));
    let direct_store = CaseStore::open(
        direct.path(),
        models.text.taxonomy().clone(),
        Arc::new(LogicalClock::default()),
    )
    .unwrap();
    let config = TriageConfig::default();
    let mut mismatches = Vec::new();
    for (i, (comment, image)) in randomized_submissions(n, seed).into_iter().enumerate() {
        let body = feedback_body(&comment, image.as_deref());
        let (status, response) = send(&app, Method::POST, "/api/feedback", Some(&body)).await;
        if status != StatusCode::CREATED {
            mismatches.push(format!("submission {i}: status {status}"));
            continue;
        }
        let input = match &image {
            None => ImageInput::None,
            Some(bytes) => match decode_ppm(bytes) {
                Ok(img) => ImageInput::Loaded(img),
                Err(e) => ImageInput::Unreadable(e.to_string()),
            },
        };
        let record = FeedbackRecord::text("", comment.clone(), None);
        let case = direct_store
            .create(assess(&record, input, models, &config).unwrap())
            .unwrap();
        let expected = serde_json::to_value(FeedbackResponse::from(&case)).unwrap();
        if response != expected {
            mismatches.push(format!("submission {i}: response {response} != direct {expected}"));
            continue;
        }
        let (status, detail) = send(&app, Method::GET, &format!("/api/cases/{}", case.id), None).await;
        let mut stored = serde_json::to_value(&case).unwrap();
        let mut served_case = detail.clone();
        if let (Value::Object(s), Value::Object(d)) = (&mut served_case, &mut stored) {
            s.remove("image");
            s.remove("heatmap");
            d.remove("image");
            d.remove("heatmap");
        }
        if status != StatusCode::OK || served_case != stored {
            mismatches.push(format!("submission {i}: stored case differs"));
        }
    }
    mismatches
}
