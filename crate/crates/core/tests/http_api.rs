//! HTTP API driven through the router in-process.

use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use matlift::lift::SimilarityCloud;
use matlift::render::raster::{decode_pgm, decode_png};
use matlift::service::{router, Engine, EngineConfig};

fn small_config() -> EngineConfig {
    EngineConfig::default()
        .with_overrides(&json!({"render": {"views": 12, "resolution": 96, "view_resolution": 128}}))
        .unwrap()
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn create(app: &Router, config: Value) -> String {
    let (status, body) = call_json(app, "POST", "/sessions", Some(json!({"asset_id": "demo", "config": config}))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["session_id"].as_str().unwrap().to_string()
}

async fn wait_done(app: &Router, id: &str) -> Value {
    let started = Instant::now();
    loop {
        let (status, body) = call_json(app, "GET", &format!("/sessions/{id}/status"), None).await;
        assert_eq!(status, StatusCode::OK);
        match body["state"].as_str().unwrap() {
            "running" => {
                assert!(started.elapsed() < Duration::from_secs(120), "selection did not finish");
                tokio::time::sleep(Duration::from_millis(20)).await;
            }
            _ => return body,
        }
    }
}

/// Center pixel of the default orbit frame lies on the sphere.
fn center_click(size: u32) -> Value {
    json!({"x": size / 2, "y": size / 2, "polarity": "positive"})
}

fn app_in(dir: &std::path::Path, config: EngineConfig) -> (Arc<Engine>, Router) {
    let engine = Arc::new(Engine::new(config, dir));
    (engine.clone(), router(engine))
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unknown_session_is_404_everywhere() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, app) = app_in(tmp.path(), small_config());
    for (method, uri) in [
        ("GET", "/sessions/nope/status"),
        ("GET", "/sessions/nope/view"),
        ("POST", "/sessions/nope/click"),
        ("PATCH", "/sessions/nope/params"),
        ("POST", "/sessions/nope/segment"),
        ("GET", "/sessions/nope/export/cloud"),
        ("GET", "/sessions/..%2F..%2Fetc/status"),
    ] {
        let (status, _) = call(&app, method, uri, Some(json!({"x": 1, "y": 1}))).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{method} {uri}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn invalid_session_requests_are_422() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, app) = app_in(tmp.path(), small_config());
    let (status, _) = call(&app, "POST", "/sessions", Some(json!({"asset_id": "missing"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, "POST", "/sessions", Some(json!({"asset_id": "../x"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"asset_id": "demo", "config": {"selection": {"bogus": 1}}})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn plain_view_is_the_render() {
    let tmp = tempfile::tempdir().unwrap();
    let (engine, app) = app_in(tmp.path(), small_config());
    let id = create(&app, json!({})).await;
    let (status, png) = call(&app, "GET", &format!("/sessions/{id}/view?yaw=10&pitch=5&overlay=none"), None).await;
    assert_eq!(status, StatusCode::OK);
    let (w, h, rgb) = decode_png(&png).unwrap();
    assert_eq!((w, h), (128, 128));
    let session = engine.session(&id).unwrap();
    let cam = session
        .camera(&matlift::service::Orbit {
            yaw: Some(10.0),
            pitch: Some(5.0),
            ..Default::default()
        })
        .unwrap();
    assert_eq!(rgb, session.scene.render_camera("x", &cam).rgb);
    // no selection yet: a mask overlay is the plain render too
    let (_, masked) = call(&app, "GET", &format!("/sessions/{id}/view?yaw=10&pitch=5&overlay=mask"), None).await;
    assert_eq!(masked, png);
    let (status, _) = call(&app, "GET", &format!("/sessions/{id}/view?overlay=sepia"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn click_select_threshold_and_exports() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, app) = app_in(tmp.path(), small_config());
    let id = create(&app, json!({})).await;

    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/click"), Some(json!({"x": 0, "y": 0}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "background click");
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/click"), Some(json!({"x": 500, "y": 5}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "outside the frame");

    let (status, body) = call_json(&app, "POST", &format!("/sessions/{id}/click"), Some(center_click(128))).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    let done = wait_done(&app, &id).await;
    assert_eq!(done["state"], "done", "{done}");
    assert_eq!(done["stats"]["index_builds"], 1);
    assert_eq!(done["oracle_calls"], 1);
    for field in ["render_ms", "oracle_ms", "backproject_ms", "index_build_ms", "total_ms"] {
        assert!(done["timing"][field].is_number(), "timing.{field}");
    }

    let (_, plain) = call(&app, "GET", &format!("/sessions/{id}/view?overlay=none"), None).await;
    let (_, masked) = call(&app, "GET", &format!("/sessions/{id}/view?overlay=mask"), None).await;
    let (_, heat) = call(&app, "GET", &format!("/sessions/{id}/view?overlay=heatmap"), None).await;
    let (plain, masked, heat) = (
        decode_png(&plain).unwrap().2,
        decode_png(&masked).unwrap().2,
        decode_png(&heat).unwrap().2,
    );
    assert_ne!(plain, masked);
    assert_ne!(masked, heat);
    // the clicked pixel is selected and tinted green
    let c = ((64 * 128 + 64) * 3) as usize;
    assert!(masked[c + 1] > plain[c + 1] && masked[c] <= plain[c], "center pixel not green");

    let started = Instant::now();
    let (status, body) = call_json(&app, "PATCH", &format!("/sessions/{id}/params"), Some(json!({"threshold": 0.8}))).await;
    let elapsed = started.elapsed();
    assert_eq!(status, StatusCode::OK, "{body}");
    assert!(elapsed < Duration::from_millis(200), "patch took {elapsed:?}");
    assert_eq!(body["oracle_calls"], 1);
    assert_eq!(body["stats"]["index_builds"], 1);
    let (status, _) = call(&app, "PATCH", &format!("/sessions/{id}/params"), Some(json!({"k": 4}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (_, st) = call_json(&app, "GET", &format!("/sessions/{id}/status"), None).await;
    assert!((st["params"]["threshold"].as_f64().unwrap() - 0.8).abs() < 1e-6);
    assert_eq!(st["oracle_calls"], 1);

    let (status, bytes) = call(&app, "GET", &format!("/sessions/{id}/export/cloud"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(SimilarityCloud::decode(&bytes).unwrap().len(), st["points"].as_u64().unwrap() as usize);

    let (status, bytes) = call(&app, "GET", &format!("/sessions/{id}/export/uv?mode=ids&size=64"), None).await;
    assert_eq!(status, StatusCode::OK);
    let (w, h, ids) = decode_pgm(&bytes).unwrap();
    assert_eq!((w, h), (64, 64));
    assert!(ids.contains(&1) && ids.contains(&0));

    let (status, bytes) = call(&app, "GET", &format!("/sessions/{id}/export/masks"), None).await;
    assert_eq!(status, StatusCode::OK);
    let mut archive = tar::Archive::new(bytes.as_slice());
    let names: Vec<String> = archive
        .entries()
        .unwrap()
        .map(|e| e.unwrap().path().unwrap().display().to_string())
        .collect();
    // 12 lifting views plus the clicked frame, mask and heatmap each
    assert_eq!(names.len(), 26, "{names:?}");
    assert!(names.contains(&"masks/click.pgm".to_string()));

    let (status, _) = call(&app, "GET", &format!("/sessions/{id}/export/zip"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // same click again reproduces the cached selection
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/click"), Some(center_click(128))).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let again = wait_done(&app, &id).await;
    assert_eq!(again["rebuilt"], false);
    assert_eq!(again["oracle_calls"], 1);

    // a different viewpoint rebuilds
    let (status, _) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/click"),
        Some(json!({"yaw": 200.0, "pitch": -10.0, "x": 60, "y": 70})),
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let rebuilt = wait_done(&app, &id).await;
    assert_eq!(rebuilt["rebuilt"], true);
    assert_eq!(rebuilt["oracle_calls"], 2);
    assert_eq!(rebuilt["stats"]["index_builds"], 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn overlapping_selection_is_409() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, app) = app_in(tmp.path(), small_config());
    let id = create(&app, json!({"render": {"views": 30, "resolution": 256}})).await;
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/click"), Some(center_click(128))).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/click"), Some(center_click(128))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/segment"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    // reads and parameter changes stay available
    let (status, _) = call(&app, "GET", &format!("/sessions/{id}/view?size=64"), None).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&app, "PATCH", &format!("/sessions/{id}/params"), Some(json!({"threshold": 0.6}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(wait_done(&app, &id).await["state"], "done");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn threshold_patch_at_512_is_fast_and_free() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, app) = app_in(tmp.path(), small_config());
    let id = create(&app, json!({"render": {"views": 30, "resolution": 256, "view_resolution": 512}})).await;
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/click"), Some(center_click(512))).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let done = wait_done(&app, &id).await;
    assert_eq!(done["state"], "done", "{done}");
    for t in [0.5, 0.8, 0.3] {
        let started = Instant::now();
        let (status, body) = call_json(&app, "PATCH", &format!("/sessions/{id}/params"), Some(json!({"threshold": t}))).await;
        let elapsed = started.elapsed();
        assert_eq!(status, StatusCode::OK);
        assert!(elapsed < Duration::from_millis(200), "patch took {elapsed:?}");
        assert_eq!(body["oracle_calls"], 1);
        assert_eq!(body["stats"]["index_builds"], 1);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn segment_lists_three_groups_and_overlays() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, app) = app_in(tmp.path(), small_config());
    let id = create(&app, json!({"render": {"views": 16, "resolution": 128}})).await;
    let (status, body) = call_json(&app, "POST", &format!("/sessions/{id}/segment"), Some(json!({"seed": 3}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let groups = body["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 3, "{body}");
    for g in groups {
        assert!(g["points"].as_u64().unwrap() > 0);
        assert_eq!(g["color"].as_array().unwrap().len(), 3);
    }
    let (_, plain) = call(&app, "GET", &format!("/sessions/{id}/view?overlay=none&size=64"), None).await;
    let (status, seg) = call(&app, "GET", &format!("/sessions/{id}/view?overlay=segments&size=64"), None).await;
    assert_eq!(status, StatusCode::OK);
    let (_, one) = call(&app, "GET", &format!("/sessions/{id}/view?overlay=segments&group=0&size=64"), None).await;
    assert_ne!(plain, seg);
    assert_ne!(seg, one);
    let (status, bytes) = call(&app, "GET", &format!("/sessions/{id}/export/uv?mode=ids&size=64"), None).await;
    assert_eq!(status, StatusCode::OK);
    let (_, _, ids) = decode_pgm(&bytes).unwrap();
    for g in 0..3u8 {
        assert!(ids.contains(&g), "group {g} missing from the atlas");
    }
    let (_, st) = call_json(&app, "GET", &format!("/sessions/{id}/status"), None).await;
    assert_eq!(st["segments"], 3);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sessions_reload_from_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let id;
    let points;
    {
        let (_, app) = app_in(tmp.path(), small_config());
        id = create(&app, json!({})).await;
        call(&app, "POST", &format!("/sessions/{id}/click"), Some(center_click(128))).await;
        let done = wait_done(&app, &id).await;
        points = done["points"].clone();
        call(&app, "PATCH", &format!("/sessions/{id}/params"), Some(json!({"threshold": 0.7}))).await;
    }
    let (_, app) = app_in(tmp.path(), small_config());
    let (status, st) = call_json(&app, "GET", &format!("/sessions/{id}/status"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(st["state"], "done");
    assert_eq!(st["points"], points);
    assert_eq!(st["oracle_calls"], 0);
    assert!((st["params"]["threshold"].as_f64().unwrap() - 0.7).abs() < 1e-6);
    let (status, png) = call(&app, "GET", &format!("/sessions/{id}/view?overlay=mask"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(decode_png(&png).is_ok());
}
