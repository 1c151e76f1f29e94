use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use comt_core::corpus::{Sentence, Split};
use comt_core::decompose::{segment_report, RuleSegmenter};
use comt_core::medihall::{JudgeOutcome, JudgeVerdict, JudgmentRecord, SentenceJudgment};
use comt_core::{HallucinationLabel, RawReport, RecordStore, Stage};
use comt_review::{router, AppState, ReviewerConfig, REVIEWER_HEADER};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn seeded(reports: usize, disagreements: usize) -> (tempfile::TempDir, Router) {
    let dir = tempfile::tempdir().unwrap();
    let mut store = RecordStore::open(dir.path()).unwrap();
    let seg = RuleSegmenter::builtin();
    for i in 0..reports {
        let raw = RawReport::new(format!("r{i}"), Split::Train, "PA chest radiograph. Small left pleural effusion.");
        let rec = segment_report(&raw, &seg).unwrap();
        store.append(&[raw]).unwrap();
        store.append(&[rec]).unwrap();
    }
    for i in 0..disagreements {
        let v = |id: &str, label| {
            JudgeOutcome::Verdict(JudgeVerdict {
                sentence_index: i,
                label,
                judge_id: id.into(),
                rationale: String::new(),
                raw_response: String::new(),
            })
        };
        let s = Sentence { index: i, text: "Large effusion.".into(), span: (0, 15) };
        let judgment = SentenceJudgment::new(
            "r0",
            s,
            [v("oracle", HallucinationLabel::Attribute), v("mock", HallucinationLabel::Correct)],
        )
        .unwrap();
        store.append(&[JudgmentRecord { run_id: "run".into(), judgment }]).unwrap();
    }
    let state = AppState::new(store, ["dr-a".to_string(), "dr-b".to_string()]);
    (dir, router(state, None))
}

async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    reviewer: Option<&str>,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(r) = reviewer {
        req = req.header(REVIEWER_HEADER, r);
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, value)
}

fn adj_path(index: usize) -> String {
    format!("adj:run%2Fr0%23{index}")
}

#[tokio::test]
async fn fresh_store_reports_zeros() {
    let (_d, app) = seeded(0, 0);
    let (s, body) = call(&app, "GET", "/api/progress", Some("dr-a"), None).await;
    assert_eq!(s, StatusCode::OK);
    for kind in ["segmentation_round1", "segmentation_round2", "adjudication"] {
        assert_eq!(body["queues"][kind], json!({"pending": 0, "done": 0}));
    }
    let (s, body) = call(&app, "GET", "/api/queue?kind=adjudication", Some("dr-a"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["items"], json!([]));
}

#[tokio::test]
async fn reviewer_header_is_checked() {
    let (_d, app) = seeded(1, 0);
    assert_eq!(call(&app, "GET", "/api/progress", None, None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "GET", "/api/progress", Some("stranger"), None).await.0, StatusCode::BAD_REQUEST);
    let body = json!({"version": 0, "reviewer_id": "dr-b", "decision": {}});
    let (s, _) = call(&app, "POST", "/api/items/seg1:r0/decision", Some("dr-a"), Some(body)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn queue_kinds_and_items() {
    let (_d, app) = seeded(3, 0);
    let (s, body) = call(&app, "GET", "/api/queue?kind=bogus", Some("dr-a"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("segmentation_round1"));

    let (s, body) = call(&app, "GET", "/api/queue?kind=segmentation_round1&limit=2", Some("dr-a"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["items"].as_array().unwrap().len(), 2);
    let cursor = body["next_cursor"].as_str().unwrap().to_string();
    let (_, body) =
        call(&app, "GET", &format!("/api/queue?kind=segmentation_round1&cursor={cursor}"), Some("dr-a"), None).await;
    assert_eq!(body["items"][0]["item_id"], "seg1:r2");

    let (s, body) = call(&app, "GET", "/api/items/seg1:r1", Some("dr-a"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["version"], 0);
    assert_eq!(call(&app, "GET", "/api/items/seg1:nope", Some("dr-a"), None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn decisions_versions_and_progress() {
    let (_d, app) = seeded(3, 0);
    let accept = json!({"version": 0, "reviewer_id": "dr-a", "decision": {}});
    let (s, body) = call(&app, "POST", "/api/items/seg1:r1/decision", Some("dr-a"), Some(accept.clone())).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(body["state"], "done");
    let (s, body) = call(&app, "POST", "/api/items/seg1:r1/decision", Some("dr-a"), Some(accept)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["current_version"], 1);

    let (_, p) = call(&app, "GET", "/api/progress", Some("dr-a"), None).await;
    assert_eq!(p["queues"]["segmentation_round1"], json!({"pending": 2, "done": 1}));

    let bad = json!({"version": 0, "reviewer_id": "dr-a", "decision": {"dimensions": {"organ": {"action": "nope"}}}});
    assert_eq!(
        call(&app, "POST", "/api/items/seg1:r0/decision", Some("dr-a"), Some(bad)).await.0,
        StatusCode::BAD_REQUEST
    );
    let missing = json!({"reviewer_id": "dr-a", "decision": {}});
    assert_eq!(
        call(&app, "POST", "/api/items/seg1:r0/decision", Some("dr-a"), Some(missing)).await.0,
        StatusCode::BAD_REQUEST
    );
    let unknown = json!({"version": 0, "reviewer_id": "dr-a", "decision": {}});
    assert_eq!(
        call(&app, "POST", "/api/items/seg1:zz/decision", Some("dr-a"), Some(unknown)).await.0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn advance_promotes_to_round_two() {
    let (_d, app) = seeded(2, 0);
    let accept = json!({"version": 0, "reviewer_id": "dr-a", "decision": {}});
    call(&app, "POST", "/api/items/seg1:r0/decision", Some("dr-a"), Some(accept)).await;
    let (s, body) = call(&app, "POST", "/api/rounds/advance", Some("dr-b"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["promoted"], json!(["r0"]));
    let (_, page) = call(&app, "GET", "/api/queue?kind=segmentation_round2", Some("dr-b"), None).await;
    assert_eq!(page["items"][0]["item_id"], "seg2:r0");
    let v = page["items"][0]["version"].clone();
    let accept = json!({"version": v, "reviewer_id": "dr-b", "decision": {}});
    assert_eq!(call(&app, "POST", "/api/items/seg2:r0/decision", Some("dr-b"), Some(accept)).await.0, StatusCode::OK);
}

#[tokio::test]
async fn adjudication_resolves_judgment() {
    let (dir, app) = seeded(1, 2);
    let (_, page) = call(&app, "GET", "/api/queue?kind=adjudication", Some("dr-a"), None).await;
    assert_eq!(page["items"].as_array().unwrap().len(), 2);
    let body = json!({"version": 0, "reviewer_id": "dr-a", "decision": {"label": "Critical"}});
    let (s, item) = call(&app, "POST", &format!("/api/items/{}/decision", adj_path(0)), Some("dr-a"), Some(body)).await;
    assert_eq!(s, StatusCode::OK, "{item}");
    assert_eq!(item["state"], "done");
    let bad = json!({"version": 0, "reviewer_id": "dr-a", "decision": {"label": "Bogus"}});
    let (s, _) = call(&app, "POST", &format!("/api/items/{}/decision", adj_path(1)), Some("dr-a"), Some(bad)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let store = RecordStore::open_read(dir.path()).unwrap();
    let resolved = comt_core::review::resolved_judgments(&store).unwrap();
    assert_eq!(resolved[0].judgment.resolution.label(), Some(HallucinationLabel::Critical));
    assert!(resolved[1].judgment.resolution.is_pending());
    assert_eq!(store.count(Stage::Decisions), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn racing_decisions_exactly_one_wins() {
    let (dir, app) = seeded(1, 1);
    let mut handles = Vec::new();
    for i in 0..8 {
        let app = app.clone();
        let who = if i % 2 == 0 { "dr-a" } else { "dr-b" };
        let label = if i % 2 == 0 { "Critical" } else { "Attribute" };
        handles.push(tokio::spawn(async move {
            let body = json!({"version": 0, "reviewer_id": who, "decision": {"label": label}});
            call(&app, "POST", &format!("/api/items/{}/decision", adj_path(0)), Some(who), Some(body)).await.0
        }));
    }
    let mut statuses = Vec::new();
    for h in handles {
        statuses.push(h.await.unwrap());
    }
    assert_eq!(statuses.iter().filter(|s| **s == StatusCode::OK).count(), 1, "{statuses:?}");
    assert!(statuses.iter().all(|s| *s == StatusCode::OK || *s == StatusCode::CONFLICT));
    let store = RecordStore::open_read(dir.path()).unwrap();
    assert_eq!(store.count(Stage::Decisions), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn progress_matches_store_under_concurrent_reads() {
    let (dir, app) = seeded(12, 0);
    let writer = {
        let app = app.clone();
        tokio::spawn(async move {
            for i in 0..12 {
                let body = json!({"version": 0, "reviewer_id": "dr-a", "decision": {}});
                call(&app, "POST", &format!("/api/items/seg1:r{i}/decision"), Some("dr-a"), Some(body)).await;
            }
        })
    };
    for _ in 0..20 {
        let (s, p) = call(&app, "GET", "/api/progress", Some("dr-b"), None).await;
        assert_eq!(s, StatusCode::OK);
        let c = &p["queues"]["segmentation_round1"];
        assert_eq!(c["pending"].as_u64().unwrap() + c["done"].as_u64().unwrap(), 12);
    }
    writer.await.unwrap();
    let (_, p) = call(&app, "GET", "/api/progress", Some("dr-b"), None).await;
    let store = RecordStore::open_read(dir.path()).unwrap();
    let direct = comt_core::review::progress(&store).unwrap();
    assert_eq!(p, serde_json::to_value(direct).unwrap());
    assert_eq!(p["queues"]["segmentation_round1"], json!({"pending": 0, "done": 12}));
}

#[tokio::test]
async fn serves_static_assets() {
    let assets = tempfile::tempdir().unwrap();
    std::fs::write(assets.path().join("index.html"), "<h1>review</h1>").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::open(dir.path()).unwrap();
    let app = router(AppState::new(store, ["dr-a".to_string()]), Some(assets.path()));
    let req = Request::builder().uri("/index.html").body(Body::empty()).unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
}

#[test]
fn reviewer_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reviewers.toml");
    std::fs::write(&path, "reviewers = [\"dr-a\", \"dr-b\"]\n").unwrap();
    let cfg = ReviewerConfig::load(&path).unwrap();
    assert!(cfg.reviewers.contains("dr-b"));
    std::fs::write(&path, "reviewers = []\n").unwrap();
    assert!(ReviewerConfig::load(&path).is_err());
}
