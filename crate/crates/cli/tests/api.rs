mod common;

use axum::http::{Method, StatusCode};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use common::{app_state, damaged_render, feedback_body, fixture, send};
use serde_json::{json, Value};
use triage_cli::api::router;
use triage_core::datasets::{DAMAGED, LATE_DELIVERY};
use triage_core::image_model::encode_ppm;
use triage_core::triage::{CaseStore, LogicalClock};

async fn post_feedback(app: &axum::Router, comment: &str, image: Option<&[u8]>) -> (StatusCode, Value) {
    send(app, Method::POST, "/api/feedback", Some(&feedback_body(comment, image))).await
}

#[tokio::test]
async fn destroyed_box_with_damaged_photo_is_auto_resolved() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let app = router(app_state(&fx.models, dir.path()));
    let photo = encode_ppm(&damaged_render(77));
    let (status, body) = post_feedback(&app, "box totally destroyed", Some(&photo)).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["state"], "auto_resolved", "{body}");
    assert_eq!(body["text_prediction"]["class"], DAMAGED);
    assert_eq!(body["image_verdicts"]["damage"]["verdict"], "damaged");
    assert_eq!(body["case_id"], "case-000001");

    let (status, detail) = send(&app, Method::GET, "/api/cases/case-000001", None).await;
    assert_eq!(status, StatusCode::OK);
    let heat = &detail["heatmap"];
    let bytes = BASE64.decode(heat["rgb_base64"].as_str().unwrap()).unwrap();
    assert_eq!(
        bytes.len(),
        3 * heat["width"].as_u64().unwrap() as usize * heat["height"].as_u64().unwrap() as usize
    );
    assert_eq!(detail["image"]["width"], heat["width"]);
    assert_eq!(detail["decided_by"], "system");
}

#[tokio::test]
async fn decision_on_auto_resolved_case_conflicts() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let app = router(app_state(&fx.models, dir.path()));
    let photo = encode_ppm(&damaged_render(77));
    let (_, body) = post_feedback(&app, "box totally destroyed", Some(&photo)).await;
    assert_eq!(body["state"], "auto_resolved");
    let decision = json!({ "action": "approve_refund", "analyst_id": "a1" }).to_string();
    let (status, err) = send(&app, Method::POST, "/api/cases/case-000001/decision", Some(&decision)).await;
    assert_eq!(status, StatusCode::CONFLICT, "{err}");
}

#[tokio::test]
async fn escalated_case_is_resolved_once() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let app = router(app_state(&fx.models, dir.path()));
    let (status, body) = post_feedback(&app, "", None).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["state"], "escalated");
    assert_eq!(body["reason"], "no signal");

    let decision = json!({ "action": "reassign", "label": LATE_DELIVERY, "analyst_id": "a1" }).to_string();
    let (status, case) = send(&app, Method::POST, "/api/cases/case-000001/decision", Some(&decision)).await;
    assert_eq!(status, StatusCode::OK, "{case}");
    assert_eq!(case["state"], "analyst_resolved");
    assert_eq!(case["label"], LATE_DELIVERY);
    assert_eq!(case["decided_by"], json!({ "analyst": "a1" }));

    let (status, _) = send(&app, Method::POST, "/api/cases/case-000001/decision", Some(&decision)).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (_, stats) = send(&app, Method::GET, "/api/stats", None).await;
    assert_eq!(stats["by_state"]["analyst_resolved"], 1);
    assert_eq!(stats["by_state"]["escalated"], 0);
    assert_eq!(stats["by_predicted_class"]["(none)"], 1);
}

#[tokio::test]
async fn unknown_case_is_not_found() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let app = router(app_state(&fx.models, dir.path()));
    let (status, _) = send(&app, Method::GET, "/api/cases/nonexistent", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let decision = json!({ "action": "reject", "analyst_id": "a1" }).to_string();
    let (status, _) = send(&app, Method::POST, "/api/cases/nonexistent/decision", Some(&decision)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn malformed_bodies_name_the_field() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let app = router(app_state(&fx.models, dir.path()));
    let cases = [
        (json!({ "comment": 5 }).to_string(), Some("comment")),
        (json!({ "comment": "x", "image": "%%%" }).to_string(), Some("image")),
        (json!({ "comment": "x", "extra": 1 }).to_string(), Some("extra")),
        ("not json".to_string(), None),
        ("[1, 2]".to_string(), None),
    ];
    for (body, field) in cases {
        let (status, err) = send(&app, Method::POST, "/api/feedback", Some(&body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(err["field"].as_str(), field, "{body}");
        assert!(!err["error"].as_str().unwrap().is_empty());
    }
    post_feedback(&app, "", None).await;
    let decisions = [
        (json!({ "action": "reject" }), "analyst_id"),
        (json!({ "action": "refund", "analyst_id": "a" }), "action"),
        (json!({ "action": "reassign", "analyst_id": "a" }), "label"),
        (
            json!({ "action": "reassign", "label": "Nope", "analyst_id": "a" }),
            "label",
        ),
    ];
    for (body, field) in decisions {
        let (status, err) = send(
            &app,
            Method::POST,
            "/api/cases/case-000001/decision",
            Some(&body.to_string()),
        )
        .await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(err["field"], field, "{body}");
    }
    let (status, err) = send(&app, Method::GET, "/api/cases?state=bogus", None).await;
    assert_eq!(
        (status, err["field"].as_str()),
        (StatusCode::BAD_REQUEST, Some("state"))
    );
    let (status, err) = send(&app, Method::GET, "/api/cases?page=0", None).await;
    assert_eq!((status, err["field"].as_str()), (StatusCode::BAD_REQUEST, Some("page")));
}

#[tokio::test]
async fn unreadable_image_is_escalated_with_warning() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let app = router(app_state(&fx.models, dir.path()));
    let (status, body) = post_feedback(&app, "", Some(b"P6\n2 2\n255\nxx")).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["state"], "escalated");
    let (_, detail) = send(&app, Method::GET, "/api/cases/case-000001", None).await;
    assert!(!detail["warnings"].as_array().unwrap().is_empty());
    assert!(detail["heatmap"].is_null());
}

#[tokio::test]
async fn queue_pages_in_creation_order() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let app = router(app_state(&fx.models, dir.path()));
    for _ in 0..5 {
        post_feedback(&app, "", None).await;
    }
    let mut seen = Vec::new();
    for (page, expected) in [(1, 2), (2, 2), (3, 1), (4, 0)] {
        let uri = format!("/api/cases?state=escalated&page={page}&page_size=2");
        let (status, body) = send(&app, Method::GET, &uri, None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body["total"], 5);
        assert_eq!(body["pages"], 3);
        let items = body["items"].as_array().unwrap();
        assert_eq!(items.len(), expected);
        seen.extend(items.iter().map(|c| c["id"].as_str().unwrap().to_string()));
    }
    let want: Vec<String> = (1..=5).map(|i| format!("case-{i:06}")).collect();
    assert_eq!(seen, want);
    let (_, body) = send(&app, Method::GET, "/api/cases?state=auto_resolved", None).await;
    assert_eq!(body["total"], 0);
}

#[tokio::test]
async fn taxonomy_lists_model_classes() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let app = router(app_state(&fx.models, dir.path()));
    let (status, body) = send(&app, Method::GET, "/api/taxonomy", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["classes"], json!(fx.models.text.taxonomy().classes()));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_submissions_keep_the_journal_whole() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let app = router(app_state(&fx.models, dir.path()));
    let photo = encode_ppm(&damaged_render(5));
    let mut tasks = Vec::new();
    for i in 0..24 {
        let app = app.clone();
        let photo = photo.clone();
        tasks.push(tokio::spawn(async move {
            let image = (i % 2 == 0).then_some(photo.as_slice());
            post_feedback(&app, "my parcel never arrived", image).await.0
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::CREATED);
    }
    let (_, stats) = send(&app, Method::GET, "/api/stats", None).await;
    assert_eq!(stats["total"], 24);

    let reopened = CaseStore::open(
        dir.path(),
        fx.models.text.taxonomy().clone(),
        std::sync::Arc::new(LogicalClock::default()),
    )
    .unwrap();
    assert_eq!(reopened.len(), 24);
    let mut ids: Vec<String> = reopened.cases().into_iter().map(|c| c.id).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 24);
}

#[tokio::test]
async fn responses_match_direct_pipeline() {
    let fx = fixture();
    let mismatches = common::fidelity_mismatches(&fx.models, 20, 404).await;
    assert!(mismatches.is_empty(), "{mismatches:#?}");
}
