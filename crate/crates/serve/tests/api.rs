use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use apdraw_core::corpus::synthetic::write_toy_corpus;
use apdraw_core::corpus::{load_manifest, StyleTag};
use apdraw_core::networks::{Generator, GeneratorConfig};
use apdraw_core::ranking::{aggregate_scores, load_answers};
use apdraw_serve::*;
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine;
use candle_core::DType;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tower::ServiceExt;

struct Fixture {
    dir: tempfile::TempDir,
    app: Router,
}

fn state(dir: &Path, drawings: usize, with_model: bool) -> Arc<AppState> {
    let manifest_path = dir.join("corpus/manifest.tsv");
    if !manifest_path.exists() {
        write_toy_corpus(&dir.join("corpus"), 2, drawings, 32, 5).unwrap();
    }
    let generator = with_model.then(|| {
        Generator::new(GeneratorConfig::drawing(4, 1, 32), 9, DType::F32).unwrap()
    });
    AppState::new(ServeOptions {
        manifest: load_manifest(&manifest_path).unwrap(),
        answer_log: dir.join("answers.jsonl"),
        seed: 1,
        generator,
    })
    .unwrap()
}

fn fixture(drawings: usize, with_model: bool) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state(dir.path(), drawings, with_model));
    Fixture { dir, app }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>, Option<String>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let style = resp
        .headers()
        .get(STYLE_HEADER)
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes, style)
}

async fn json_call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b, _) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn session(app: &Router, style: Option<&str>) -> String {
    let (s, v) = json_call(app, "POST", "/api/study/session", Some(json!({"annotator": "a1", "style": style}))).await;
    assert_eq!(s, StatusCode::OK);
    v["session_id"].as_str().unwrap().to_string()
}

async fn next(app: &Router, sid: &str) -> (StatusCode, Value) {
    json_call(app, "GET", &format!("/api/study/next?session={sid}"), None).await
}

fn ids(q: &Value) -> Vec<String> {
    q["drawing_ids"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect()
}

async fn answer(app: &Router, sid: &str, q: &Value, order: &[String]) -> (StatusCode, Value) {
    json_call(
        app,
        "POST",
        "/api/study/answer",
        Some(json!({"session": sid, "question_id": q["question_id"], "order": order})),
    )
    .await
}

async fn raw_scores(app: &Router) -> BTreeMap<String, i64> {
    let (_, v) = json_call(app, "GET", "/api/study/scores", None).await;
    v["scores"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["id"].as_str().unwrap().to_string(), r["raw_score"].as_i64().unwrap()))
        .collect()
}

#[tokio::test]
async fn fresh_session_has_zero_progress() {
    let f = fixture(9, false);
    let sid = session(&f.app, None).await;
    let (s, v) = json_call(&f.app, "GET", &format!("/api/study/progress?session={sid}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!((v["served"].as_u64(), v["answered"].as_u64()), (Some(0), Some(0)));
    for style in ["style1", "style2", "style3"] {
        assert_eq!(v["by_style"][style]["served"], 0);
    }
    let (s, _) = json_call(&f.app, "GET", "/api/study/progress?session=nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = next(&f.app, "nope").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn served_triplets_are_distinct_same_style_and_fetchable() {
    let f = fixture(12, false);
    let manifest = load_manifest(f.dir.path().join("corpus/manifest.tsv")).unwrap();
    let sid = session(&f.app, None).await;
    let mut seen = std::collections::HashSet::new();
    for _ in 0..6 {
        let (s, q) = next(&f.app, &sid).await;
        assert_eq!(s, StatusCode::OK);
        let style: StyleTag = serde_json::from_value(q["style"].clone()).unwrap();
        let ids = ids(&q);
        let mut key = ids.clone();
        key.sort();
        assert!(seen.insert(key), "triplet repeated");
        assert_eq!(ids.iter().collect::<std::collections::HashSet<_>>().len(), 3);
        for (id, url) in ids.iter().zip(q["drawing_urls"].as_array().unwrap()) {
            let rec = manifest.get(id).unwrap();
            assert_eq!(rec.style_tag, Some(style));
            let (s, bytes, _) = call(&f.app, "GET", url.as_str().unwrap(), None).await;
            assert_eq!(s, StatusCode::OK);
            assert_eq!(bytes, std::fs::read(&rec.path).unwrap());
            let hash: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
            assert!(url.as_str().unwrap().ends_with(&hash));
        }
    }
    let (s, _, _) = call(&f.app, "GET", "/api/images/deadbeef", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn answer_applies_deltas_once() {
    let f = fixture(9, false);
    let sid = session(&f.app, None).await;
    let (_, q) = next(&f.app, &sid).await;
    let order = ids(&q);
    let (s, v) = answer(&f.app, &sid, &q, &order).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["accepted"], true);
    assert_eq!(v["progress"]["answered"], 1);
    let scores = raw_scores(&f.app).await;
    assert_eq!([scores[&order[0]], scores[&order[1]], scores[&order[2]]], [-2, 0, 2]);

    let (s, _) = answer(&f.app, &sid, &q, &order).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(raw_scores(&f.app).await, scores);
    assert_eq!(load_answers(f.dir.path().join("answers.jsonl")).unwrap().len(), 1);
}

#[tokio::test]
async fn malformed_orders_are_rejected() {
    let f = fixture(9, false);
    let sid = session(&f.app, None).await;
    let (_, q) = next(&f.app, &sid).await;
    let mut order = ids(&q);
    order[2] = "d999".into();
    assert_eq!(answer(&f.app, &sid, &q, &order).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(answer(&f.app, &sid, &q, &order[..2]).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let other = session(&f.app, None).await;
    assert_eq!(answer(&f.app, &other, &q, &ids(&q)).await.0, StatusCode::NOT_FOUND);
    assert!(raw_scores(&f.app).await.values().all(|&v| v == 0));
    assert_eq!(answer(&f.app, &sid, &q, &ids(&q)).await.0, StatusCode::OK);
}

#[tokio::test]
async fn exhausted_pool_is_a_conflict() {
    let f = fixture(9, false);
    let sid = session(&f.app, Some("style2")).await;
    let (s, q) = next(&f.app, &sid).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(q["style"], "style2");
    assert_eq!(next(&f.app, &sid).await.0, StatusCode::CONFLICT);
    let (s, _) = json_call(&f.app, "POST", "/api/study/session", Some(json!({"annotator": ""}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn restart_replays_the_log() {
    let f = fixture(15, false);
    let sid = session(&f.app, None).await;
    for k in 0..5 {
        let (_, q) = next(&f.app, &sid).await;
        let mut order = ids(&q);
        order.rotate_left(k % 3);
        assert_eq!(answer(&f.app, &sid, &q, &order).await.0, StatusCode::OK);
    }
    let live = raw_scores(&f.app).await;
    let restarted = router(state(f.dir.path(), 15, false));
    assert_eq!(raw_scores(&restarted).await, live);
    assert_eq!(load_answers(f.dir.path().join("answers.jsonl")).unwrap().len(), 5);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_answers_serialize() {
    let f = fixture(30, false);
    let sid = session(&f.app, None).await;
    let mut qs = Vec::new();
    for _ in 0..12 {
        qs.push(next(&f.app, &sid).await.1);
    }
    let mut tasks = Vec::new();
    for q in qs.iter().chain(qs.iter().take(4)) {
        let (app, sid, q) = (f.app.clone(), sid.clone(), q.clone());
        tasks.push(tokio::spawn(async move { answer(&app, &sid, &q, &ids(&q)).await.0 }));
    }
    let mut ok = 0;
    for t in tasks {
        match t.await.unwrap() {
            StatusCode::OK => ok += 1,
            s => assert_eq!(s, StatusCode::CONFLICT),
        }
    }
    assert_eq!(ok, 12);
    let manifest = load_manifest(f.dir.path().join("corpus/manifest.tsv")).unwrap();
    let pool = manifest.drawings().map(|r| (r.id.clone(), r.style_tag.unwrap()));
    let answers = load_answers(f.dir.path().join("answers.jsonl")).unwrap();
    let replayed = aggregate_scores(pool, &answers).unwrap();
    let live = raw_scores(&f.app).await;
    for (id, raw) in live {
        assert_eq!(replayed.raw(&id), Some(raw));
    }
}

#[tokio::test]
async fn generation_errors() {
    let f = fixture(3, false);
    let (s, _) = json_call(&f.app, "POST", "/api/generate", Some(json!({"photo_id": "p000", "style": [1, 0, 0]}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);

    let f = fixture(3, true);
    let (s, _) = json_call(&f.app, "POST", "/api/generate", Some(json!({"photo_id": "p000", "style": [1, 0, 0, 0]}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = json_call(&f.app, "POST", "/api/generate", Some(json!({"photo_id": "nope", "style": [1, 0, 0]}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = json_call(&f.app, "POST", "/api/generate", Some(json!({"photo_id": "d000", "style": [1, 0, 0]}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = json_call(&f.app, "POST", "/api/generate", Some(json!({"style": [1, 0, 0]}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn generation_is_deterministic_and_echoes_style() {
    let f = fixture(3, true);
    let body = json!({"photo_id": "p001", "style": [0.0, 0.5, 0.5]});
    let (s, a, style) = call(&f.app, "POST", "/api/generate", Some(body.clone())).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(&a[1..4], b"PNG");
    assert_eq!(serde_json::from_str::<Vec<f64>>(&style.unwrap()).unwrap(), vec![0.0, 0.5, 0.5]);
    let (_, b, _) = call(&f.app, "POST", "/api/generate", Some(body)).await;
    assert_eq!(a, b);

    let photo = std::fs::read(f.dir.path().join("corpus/photos/p001.png")).unwrap();
    let upload = base64::engine::general_purpose::STANDARD.encode(photo);
    let (s, c, _) = call(&f.app, "POST", "/api/generate", Some(json!({"upload": upload, "style": [0.0, 0.5, 0.5]}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(a, c);
    let (_, d, _) = call(&f.app, "POST", "/api/generate", Some(json!({"photo_id": "p001", "style": [1, 0, 0]}))).await;
    assert_ne!(a, d);
}
