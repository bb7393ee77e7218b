use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use qagen::categorize::{finalize_subsets, CategoryAssignment, FinalizeConfig, PairedQuestion};
use qagen::data::{read_jsonl, VerificationLabel};
use qagen::Category;
use qagen_service::{load_state, router, Guidance, NextResponse};
use serde_json::{json, Value};
use tower::ServiceExt;

fn assignment(id: &str, category: Category) -> CategoryAssignment {
    CategoryAssignment {
        question_id: id.into(),
        question: format!("test question {id}"),
        category,
        entities: vec![],
        paired_train: if category == Category::Uncategorized {
            vec![]
        } else {
            vec![PairedQuestion {
                id: format!("train-{id}"),
                question: format!("train question {id}"),
                score: 0.8,
            }]
        },
        evidence: vec![],
    }
}

fn app(assignments: &[CategoryAssignment], log: &Path) -> Router {
    let (state, _) = load_state(assignments, log, &Guidance::bundled()).unwrap();
    router(state, None)
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body)
}

async fn next(app: &Router, annotator: &str, category: Option<&str>) -> (StatusCode, Option<NextResponse>) {
    let mut uri = format!("/api/tasks/next?annotator={annotator}");
    if let Some(c) = category {
        uri.push_str(&format!("&category={c}"));
    }
    let (status, body) = call(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (status, serde_json::from_slice(&body).ok())
}

async fn submit(app: &Router, body: Value) -> StatusCode {
    let req = Request::post("/api/labels")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    call(app, req).await.0
}

async fn export(app: &Router) -> Vec<u8> {
    call(app, Request::get("/api/export").body(Body::empty()).unwrap()).await.1
}

fn label(task: &str, annotator: &str, value: bool) -> Value {
    json!({"task_id": task, "annotator": annotator, "label": value})
}

#[tokio::test]
async fn empty_queue_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&[], &dir.path().join("labels.log"));
    let (status, body) = next(&app, "ann", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body.unwrap().task.is_none());
    assert!(export(&app).await.is_empty());
    let (_, body) = call(&app, Request::get("/api/progress").body(Body::empty()).unwrap()).await;
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["tasks"], 0);
    assert_eq!(v["log_records"], 0);
}

#[tokio::test]
async fn single_task_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&[assignment("q1", Category::Overlap), assignment("q2", Category::Uncategorized)], &dir.path().join("l.log"));
    let (_, r) = next(&app, "ann", None).await;
    let task = r.unwrap().task.unwrap();
    assert_eq!(task.task_id, "q1::overlap");
    assert!(!task.guidance.is_empty());
    assert_eq!(task.paired_train.len(), 1);

    assert_eq!(submit(&app, label("q1::overlap", "ann", true)).await, StatusCode::OK);
    assert!(next(&app, "ann", None).await.1.unwrap().task.is_none());
    assert!(next(&app, "other", None).await.1.unwrap().task.is_some());

    let exported: Vec<VerificationLabel> = read_jsonl(export(&app).await.as_slice()).unwrap();
    assert_eq!(exported.len(), 1);
    assert!(exported[0].label);
}

#[tokio::test]
async fn last_write_wins() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&[assignment("q1", Category::CompGen)], &dir.path().join("l.log"));
    submit(&app, label("q1::comp_gen", "ann", true)).await;
    submit(&app, label("q1::comp_gen", "ann", false)).await;
    let exported: Vec<VerificationLabel> = read_jsonl(export(&app).await.as_slice()).unwrap();
    assert_eq!(exported.len(), 1);
    assert!(!exported[0].label);
}

#[tokio::test]
async fn request_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&[assignment("q1", Category::Overlap)], &dir.path().join("l.log"));
    assert_eq!(submit(&app, label("nope::overlap", "ann", true)).await, StatusCode::NOT_FOUND);
    assert_eq!(submit(&app, json!({"task_id": "q1::overlap", "annotator": "ann"})).await, StatusCode::BAD_REQUEST);
    assert_eq!(submit(&app, json!({"task_id": "q1::overlap", "annotator": "", "label": true})).await, StatusCode::BAD_REQUEST);
    let req = Request::post("/api/labels").body(Body::from("{not json")).unwrap();
    assert_eq!(call(&app, req).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(next(&app, "ann", Some("bogus")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(next(&app, "ann", Some("uncategorized")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(next(&app, "", None).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn two_annotators_interleaved() {
    let dir = tempfile::tempdir().unwrap();
    let cats = [Category::Overlap, Category::CompGen, Category::NovelEntity];
    let assignments: Vec<_> = (0..10).map(|i| assignment(&format!("q{i}"), cats[i % 3])).collect();
    let app = app(&assignments, &dir.path().join("l.log"));
    let mut seen: [Vec<String>; 2] = [vec![], vec![]];
    loop {
        let mut progressed = false;
        for (k, who) in ["a", "b"].iter().enumerate() {
            if let Some(t) = next(&app, who, None).await.1.unwrap().task {
                assert!(!seen[k].contains(&t.task_id), "{who} served {} twice", t.task_id);
                seen[k].push(t.task_id.clone());
                assert_eq!(submit(&app, label(&t.task_id, who, k == 0)).await, StatusCode::OK);
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    assert_eq!(seen[0].len(), 10);
    assert_eq!(seen[1].len(), 10);
    let exported: Vec<VerificationLabel> = read_jsonl(export(&app).await.as_slice()).unwrap();
    assert_eq!(exported.len(), 20);

    // disagreement under the default policy admits nothing
    let subsets = finalize_subsets(&assignments, &exported, &FinalizeConfig::default());
    assert_eq!(subsets.uncategorized.len(), 10);
}

#[tokio::test]
async fn category_filter_and_progress() {
    let dir = tempfile::tempdir().unwrap();
    let assignments = [
        assignment("a", Category::Overlap),
        assignment("b", Category::Overlap),
        assignment("c", Category::NovelEntity),
        assignment("d", Category::NovelEntity),
        assignment("e", Category::NovelEntity),
    ];
    let app = app(&assignments, &dir.path().join("l.log"));
    let t = next(&app, "x", Some("novel_entity")).await.1.unwrap().task.unwrap();
    assert_eq!(t.task_id, "c::novel_entity");
    for (task, who) in [("a::overlap", "x"), ("a::overlap", "y"), ("c::novel_entity", "x"), ("d::novel_entity", "x"), ("b::overlap", "y")] {
        assert_eq!(submit(&app, label(task, who, true)).await, StatusCode::OK);
    }
    let (_, body) = call(&app, Request::get("/api/progress").body(Body::empty()).unwrap()).await;
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["categories"]["overlap"]["labeled"], 2);
    assert_eq!(v["categories"]["overlap"]["total"], 2);
    assert_eq!(v["categories"]["novel_entity"]["labeled"], 2);
    assert_eq!(v["categories"]["novel_entity"]["total"], 3);
    assert_eq!(v["log_records"], 5);
}

#[tokio::test]
async fn concurrent_submits_both_kept() {
    let dir = tempfile::tempdir().unwrap();
    let (state, _) = load_state(&[assignment("q", Category::Overlap)], &dir.path().join("l.log"), &Guidance::bundled()).unwrap();
    let app = router(Arc::clone(&state), None);
    let a = tokio::spawn({
        let app = app.clone();
        async move { submit(&app, label("q::overlap", "a", true)).await }
    });
    let b = tokio::spawn({
        let app = app.clone();
        async move { submit(&app, label("q::overlap", "b", false)).await }
    });
    assert_eq!(a.await.unwrap(), StatusCode::OK);
    assert_eq!(b.await.unwrap(), StatusCode::OK);
    assert_eq!(state.store.snapshot().log.len(), 2);
}

#[tokio::test]
async fn restart_replays_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("l.log");
    let assignments: Vec<_> = (0..4).map(|i| assignment(&format!("q{i}"), Category::Overlap)).collect();
    let before = {
        let app = app(&assignments, &log);
        submit(&app, label("q0::overlap", "a", true)).await;
        submit(&app, label("q1::overlap", "a", false)).await;
        submit(&app, label("q0::overlap", "a", false)).await;
        export(&app).await
    };
    let app = app(&assignments, &log);
    assert_eq!(export(&app).await, before);
    let t = next(&app, "a", None).await.1.unwrap().task.unwrap();
    assert_eq!(t.task_id, "q2::overlap");
}

#[tokio::test]
async fn static_placeholder_and_assets() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&[], &dir.path().join("l.log"));
    let (status, body) = call(&app, Request::get("/").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(body).unwrap().contains("/api/tasks/next"));

    let assets = dir.path().join("ui");
    std::fs::create_dir(&assets).unwrap();
    std::fs::write(assets.join("index.html"), "<p>ui</p>").unwrap();
    let (state, _) = load_state(&[], &dir.path().join("l2.log"), &Guidance::bundled()).unwrap();
    let app = router(state, Some(assets));
    let (status, body) = call(&app, Request::get("/").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<p>ui</p>");
}
