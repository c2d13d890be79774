use std::fs;
use std::path::Path;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use chrono::{Duration, TimeZone, Utc};
use cogtrain_core::llm::ScriptedProvider;
use cogtrain_core::StepClock;
use cogtrain_server::{router, ApiConfig, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

const SKETCH: &str = r#"
id = "sketch"
name = "Clock Sketch"
data_source = "random"

[templates]
prompt = "Ask the user to draw a clock."
instruction = "Draw a clock when asked."
"#;

fn app(dir: &Path, replies: &[&str], tweak: impl FnOnce(&mut ApiConfig)) -> (Router, Arc<AppState>) {
    fs::create_dir_all(dir.join("groups")).unwrap();
    fs::write(dir.join("groups/sketch.toml"), SKETCH).unwrap();
    let mut config = ApiConfig::new(dir);
    tweak(&mut config);
    let clock = StepClock::new(Utc.with_ymd_and_hms(2024, 9, 21, 9, 0, 0).unwrap(), Duration::seconds(1));
    let state = AppState::open(
        config,
        Some(Arc::new(ScriptedProvider::replies(replies.iter().copied()))),
        Some(Arc::new(clock)),
    )
    .unwrap();
    (router(state.clone()), state)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn upload(app: &Router, bytes: Vec<u8>, mime: &str) -> (StatusCode, Value) {
    let req = Request::post("/api/media")
        .header(header::CONTENT_TYPE, mime)
        .body(Body::from(bytes))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn create(app: &Router, group: &str) -> (StatusCode, Value) {
    call(app, Method::POST, "/api/sessions", Some(json!({"group": group, "seed": 1}))).await
}

#[tokio::test]
async fn session_lifecycle_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let (app, state) = app(dir.path(), &["<plan>secret plan</plan>Hello! Ask away.", "No", "Yes"], |_| {});
    let (status, env) = create(&app, "guessing-word").await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(env["state"], "active");
    assert_eq!(env["directives"], json!([{"kind": "DisplayText", "payload": {"text": "Hello! Ask away."}}]));
    assert!(!env.to_string().contains("secret plan"));
    let id = env["sessionId"].as_str().unwrap().to_owned();

    let uri = format!("/api/sessions/{id}/messages");
    let (status, env) = call(&app, Method::POST, &uri, Some(json!({"text": "Does it fly?"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(env["turnIndex"], 3);
    let (_, env) = call(&app, Method::POST, &uri, Some(json!({"text": "Is it a sport?"}))).await;
    assert_eq!(env["directives"][0]["payload"]["text"], "Yes");

    let (status, view) = call(&app, Method::GET, &format!("/api/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let transcript = view["transcript"].as_array().unwrap();
    assert_eq!(transcript.len(), 6);
    let stored = state.runtime.load(&id).unwrap();
    for (shown, kept) in transcript.iter().zip(stored.transcript.messages()).skip(1) {
        assert_eq!(shown, &serde_json::to_value(kept).unwrap());
    }
    assert_eq!(transcript[0]["parts"][0]["text"], cogtrain_server::SYSTEM_PROMPT_WITHHELD);
    assert!(!view.to_string().contains("secret plan"));

    let hint = format!("/api/sessions/{id}/hint");
    for _ in 0..3 {
        assert_eq!(call(&app, Method::POST, &hint, None).await.0, StatusCode::OK);
    }
    let (status, err) = call(&app, Method::POST, &hint, None).await;
    assert_eq!(status, StatusCode::TOO_MANY_REQUESTS);
    assert_eq!(err["error"], "HintBudgetExhausted");
}

#[tokio::test]
async fn error_status_mapping() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(
        dir.path(),
        &["Please draw. [[draw kind=\"clock\"]]", "Lovely! [[rating score=\"5\"]] [[end]]"],
        |_| {},
    );
    assert_eq!(create(&app, "nope").await.0, StatusCode::NOT_FOUND);
    assert_eq!(create(&app, "life-recall").await.0, StatusCode::CONFLICT);
    assert_eq!(call(&app, Method::GET, "/api/sessions/missing", None).await.0, StatusCode::NOT_FOUND);

    let (_, env) = create(&app, "sketch").await;
    assert_eq!(env["state"], "awaiting-draw");
    assert_eq!(env["directives"][1], json!({"kind": "ShowCanvas", "payload": {"kind": "clock"}}));
    let id = env["sessionId"].as_str().unwrap().to_owned();
    let uri = format!("/api/sessions/{id}/messages");
    let (status, err) = call(&app, Method::POST, &uri, Some(json!({"text": "done"}))).await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("DrawExpected")));

    let (status, _) = call(&app, Method::POST, &uri, Some(json!({"mediaId": "ab".repeat(32)}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (_, receipt) = upload(&app, b"\x89PNG drawing".to_vec(), "image/png").await;
    let (status, env) = call(&app, Method::POST, &uri, Some(json!({"mediaId": receipt["mediaId"]}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(env["state"], "ended");
    assert_eq!(env["outcome"], "completed");

    let (status, err) = call(&app, Method::POST, &uri, Some(json!({"text": "again"}))).await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::CONFLICT, Some("SessionEnded")));
    assert_eq!(call(&app, Method::POST, &uri, Some(json!({}))).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn guard_and_provider_failures_are_bad_gateway() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), &["Hi", "essay", "essay", "essay"], |_| {});
    let (_, env) = create(&app, "guessing-word").await;
    let uri = format!("/api/sessions/{}/messages", env["sessionId"].as_str().unwrap());
    let (status, err) = call(&app, Method::POST, &uri, Some(json!({"text": "Is it big?"}))).await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::BAD_GATEWAY, Some("GuardViolation")));
    let (status, err) = call(&app, Method::POST, &uri, Some(json!({"text": "Is it big?"}))).await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::BAD_GATEWAY, Some("ProviderError")));
}

#[tokio::test]
async fn media_is_content_addressed_and_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), &[], |c| c.media_limit = 1024);
    let (s1, a) = upload(&app, vec![7; 100], "image/jpeg").await;
    let (_, b) = upload(&app, vec![7; 100], "image/jpeg").await;
    assert_eq!(s1, StatusCode::CREATED);
    assert_eq!(a["mediaId"], b["mediaId"]);
    assert_eq!(upload(&app, vec![7; 2048], "image/jpeg").await.0, StatusCode::PAYLOAD_TOO_LARGE);

    let req = Request::get(format!("/api/media/{}", a["mediaId"].as_str().unwrap()))
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()[header::CONTENT_TYPE], "image/jpeg");
    assert_eq!(to_bytes(resp.into_body(), usize::MAX).await.unwrap().len(), 100);
}

#[tokio::test]
async fn lifelog_recall_and_wipe() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), &["What did you have for lunch yesterday?"], |_| {});
    let (_, photo) = upload(&app, b"lotus".to_vec(), "image/jpeg").await;
    let draft = json!({
        "timestamp": "2024-09-20T12:30:00Z",
        "description": "lunch: lotus root stir-fry",
        "imageIds": [photo["mediaId"]],
    });
    let (status, entry) = call(&app, Method::POST, "/api/lifelog", Some(draft)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert!(entry["entryId"].is_string());
    let future = json!({"timestamp": "2030-01-01T00:00:00Z", "description": "later"});
    assert_eq!(call(&app, Method::POST, "/api/lifelog", Some(future)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let (_, found) = call(
        &app,
        Method::GET,
        "/api/lifelog?from=2024-09-20T00:00:00Z&to=2024-09-21T00:00:00Z",
        None,
    )
    .await;
    assert_eq!(found.as_array().unwrap().len(), 1);
    let bad = "/api/lifelog?from=2024-09-21T00:00:00Z&to=2024-09-20T00:00:00Z";
    assert_eq!(call(&app, Method::GET, bad, None).await.0, StatusCode::BAD_REQUEST);

    let (status, env) = create(&app, "life-recall").await;
    assert_eq!(status, StatusCode::CREATED);
    let id = env["sessionId"].as_str().unwrap().to_owned();

    assert_eq!(call(&app, Method::DELETE, "/api/admin/data", None).await.0, StatusCode::NO_CONTENT);
    let (_, found) = call(&app, Method::GET, "/api/lifelog", None).await;
    assert_eq!(found, json!([]));
    assert_eq!(call(&app, Method::GET, &format!("/api/sessions/{id}"), None).await.0, StatusCode::NOT_FOUND);
    assert!(fs::read_dir(dir.path().join("media")).unwrap().next().is_none());
}

#[tokio::test]
async fn bearer_token_required_when_configured() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), &[], |c| c.api_token = Some("s3cret".into()));
    assert_eq!(call(&app, Method::GET, "/api/groups", None).await.0, StatusCode::UNAUTHORIZED);
    let req = Request::get("/api/groups")
        .header(header::AUTHORIZATION, "Bearer s3cret")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let groups: Value = serde_json::from_slice(&to_bytes(resp.into_body(), usize::MAX).await.unwrap()).unwrap();
    let ids: Vec<&str> = groups.as_array().unwrap().iter().map(|g| g["groupId"].as_str().unwrap()).collect();
    assert_eq!(ids, ["guessing-word", "life-recall", "sketch"]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_posts_to_one_session_are_serialized() {
    let dir = tempfile::tempdir().unwrap();
    let mut replies = vec!["Hi"];
    replies.extend(std::iter::repeat_n("No", 16));
    let (app, state) = app(dir.path(), &replies, |_| {});
    let (_, env) = create(&app, "guessing-word").await;
    let id = env["sessionId"].as_str().unwrap().to_owned();
    let uri = format!("/api/sessions/{id}/messages");
    let tasks: Vec<_> = (0..16)
        .map(|i| {
            let app = app.clone();
            let uri = uri.clone();
            tokio::spawn(async move { call(&app, Method::POST, &uri, Some(json!({"text": format!("Question {i}?")}))).await })
        })
        .collect();
    let mut revisions = Vec::new();
    for t in tasks {
        let (status, env) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        revisions.push(env["revision"].as_u64().unwrap());
    }
    revisions.sort();
    assert_eq!(revisions, (2..=17).collect::<Vec<_>>());
    let stored = state.runtime.load(&id).unwrap();
    stored.check_invariants().unwrap();
    assert_eq!(stored.transcript.len(), 2 + 32);
    assert_eq!(stored.questions_asked.len(), 16);
    let events = state.runtime.store.events(&id).unwrap();
    assert_eq!(cogtrain_core::session::replay(&events).unwrap(), stored);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn long_poll_returns_on_new_revision() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), &["Hi", "Yes"], |_| {});
    let (_, env) = create(&app, "guessing-word").await;
    let id = env["sessionId"].as_str().unwrap().to_owned();
    let poll = {
        let app = app.clone();
        let uri = format!("/api/sessions/{id}?after=1&wait=10");
        tokio::spawn(async move { call(&app, Method::GET, &uri, None).await })
    };
    tokio::time::sleep(std::time::Duration::from_millis(50)).await;
    let uri = format!("/api/sessions/{id}/messages");
    call(&app, Method::POST, &uri, Some(json!({"text": "Is it round?"}))).await;
    let (status, view) = poll.await.unwrap();
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["revision"], 2);

    let started = std::time::Instant::now();
    let (_, view) = call(&app, Method::GET, &format!("/api/sessions/{id}?after=2&wait=1"), None).await;
    assert_eq!(view["revision"], 2);
    assert!(started.elapsed() >= std::time::Duration::from_millis(900));
}
