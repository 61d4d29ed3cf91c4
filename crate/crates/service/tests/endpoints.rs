use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use http_body_util::BodyExt;
use mlcgan_core::data::Vocabulary;
use mlcgan_core::{Generator, ModelConfig};
use mlcgan_service::api::{router, ErrorBody, ImageJson, InterpolateResponse, Service};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

fn service() -> Arc<Service> {
    let mut g = Generator::<f32>::new(&ModelConfig::tiny(8, 3), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    // a nonzero average so truncation has something to contract toward
    g.w_avg = mlcgan_autodiff::Tensor::randn(&[g.z_dim()], &mut ChaCha8Rng::seed_from_u64(10));
    let vocab = Vocabulary::new(["Pepperoni", "Corn", "Fresh basil"].map(String::from).to_vec()).unwrap();
    Arc::new(Service::new(g, vocab, 2).unwrap())
}

async fn call(svc: &Arc<Service>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let resp = router(svc.clone()).oneshot(req).await.unwrap();
    let (parts, body) = resp.into_parts();
    (parts.status, parts.headers, body.collect().await.unwrap().to_bytes().to_vec())
}

async fn generate(svc: &Arc<Service>, ingredients: &[&str], seed: u64, psi: f64) -> ImageJson {
    let body = json!({"ingredients": ingredients, "seed": seed, "truncation": psi});
    let (status, _, bytes) = call(svc, "POST", "/generate.json", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&bytes));
    serde_json::from_slice(&bytes).unwrap()
}

fn pixels(img: &ImageJson) -> Vec<f64> {
    let png = BASE64.decode(&img.png_base64).unwrap();
    image::load_from_memory(&png).unwrap().to_rgb8().into_raw().into_iter().map(f64::from).collect()
}

#[tokio::test]
async fn health_and_vocabulary() {
    let svc = service();
    let (status, _, body) = call(&svc, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap(), json!({"status": "ok", "resolution": 8, "C": 3}));
    let (_, _, body) = call(&svc, "GET", "/vocabulary", None).await;
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap(), json!(["Pepperoni", "Corn", "Fresh basil"]));
}

#[tokio::test]
async fn png_endpoint_carries_metadata_and_matches_json() {
    let svc = service();
    let body = json!({"ingredients": ["Corn", "Pepperoni"], "seed": 1, "truncation": 0.75});
    let (status, headers, png) = call(&svc, "POST", "/generate", Some(body.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers["content-type"], "image/png");
    assert_eq!(headers["x-labels"], "110");
    assert_eq!(headers["x-truncation"], "0.75");
    assert_eq!(headers["x-ingredients"], r#"["Pepperoni","Corn"]"#);
    let img = generate(&svc, &["Corn", "Pepperoni"], 1, 0.75).await;
    assert_eq!(BASE64.decode(&img.png_base64).unwrap(), png);
    assert_eq!(headers["x-image-sha256"].to_str().unwrap(), img.sha256);
    assert_eq!(img.labels, vec![1, 1, 0]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_identical_requests_agree() {
    let svc = service();
    let jobs: Vec<_> = (0..8)
        .map(|_| {
            let svc = svc.clone();
            tokio::spawn(async move {
                let body = json!({"ingredients": ["Pepperoni"], "seed": 1, "truncation": 0.75});
                call(&svc, "POST", "/generate", Some(body)).await.2
            })
        })
        .collect();
    let mut outputs = Vec::new();
    for j in jobs {
        outputs.push(j.await.unwrap());
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    assert!(!outputs[0].is_empty());
}

#[tokio::test]
async fn truncation_contracts_toward_the_average() {
    let svc = service();
    let l2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut closer = 0;
    for seed in 0..8 {
        let origin = pixels(&generate(&svc, &["Corn"], seed, 0.0).await);
        let full = pixels(&generate(&svc, &["Corn"], seed, 1.0).await);
        let quarter = pixels(&generate(&svc, &["Corn"], seed, 0.25).await);
        closer += usize::from(l2(&quarter, &origin) < l2(&full, &origin));
    }
    assert_eq!(closer, 8);
}

#[tokio::test]
async fn bad_requests_are_rejected_with_codes() {
    let svc = service();
    let cases = [
        (json!({"ingredients": ["Pineapple"], "seed": 1, "truncation": 0.5}), "unknown_ingredient"),
        (json!({"ingredients": [], "seed": 1, "truncation": 1.5}), "truncation_out_of_range"),
        (json!({"ingredients": [], "seed": 1, "truncation": -0.1}), "truncation_out_of_range"),
        (json!({"ingredients": [], "seed": 1, "truncation": 0.5, "resolution": 64}), "unsupported_resolution"),
        (json!({"seed": 1}), "invalid_request"),
    ];
    for (body, code) in cases {
        for uri in ["/generate", "/generate.json"] {
            let (status, _, bytes) = call(&svc, "POST", uri, Some(body.clone())).await;
            assert_eq!(status, StatusCode::BAD_REQUEST);
            let err: ErrorBody = serde_json::from_slice(&bytes).unwrap();
            assert_eq!(err.code, code);
            assert!(!err.message.is_empty());
        }
    }
    let (_, _, bytes) = call(&svc, "POST", "/generate", Some(json!({"ingredients": ["Pineapple"], "seed": 1, "truncation": 0.5}))).await;
    assert_eq!(serde_json::from_slice::<ErrorBody>(&bytes).unwrap().ingredient.as_deref(), Some("Pineapple"));
    for steps in [1, 17] {
        let body = json!({"a": {"ingredients": [], "seed": 0}, "b": {"ingredients": [], "seed": 1}, "steps": steps, "truncation": 1.0});
        let (status, _, bytes) = call(&svc, "POST", "/interpolate", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(serde_json::from_slice::<ErrorBody>(&bytes).unwrap().code, "invalid_steps");
    }
}

async fn interpolate(svc: &Arc<Service>, a: (&[&str], u64), b: (&[&str], u64), steps: usize) -> InterpolateResponse {
    let body = json!({
        "a": {"ingredients": a.0, "seed": a.1},
        "b": {"ingredients": b.0, "seed": b.1},
        "steps": steps,
        "truncation": 0.8,
    });
    let (status, _, bytes) = call(svc, "POST", "/interpolate", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&bytes));
    serde_json::from_slice(&bytes).unwrap()
}

#[tokio::test]
async fn interpolation_corners_match_single_generations() {
    let svc = service();
    let (a, b): (&[&str], &[&str]) = (&["Pepperoni"], &["Corn", "Fresh basil"]);
    let grid = interpolate(&svc, (a, 4), (b, 5), 2).await;
    assert_eq!(grid.cells.len(), 4);
    let expect = [(a, 4), (a, 5), (b, 4), (b, 5)];
    for (cell, (labels, seed)) in grid.cells.iter().zip(expect) {
        assert_eq!(cell.sha256, generate(&svc, labels, seed, 0.8).await.sha256, "cell {},{}", cell.meta.row, cell.meta.col);
    }
    let big = interpolate(&svc, (a, 4), (b, 5), 8).await;
    assert_eq!(big.cells.len(), 64);
}

#[tokio::test]
async fn equal_endpoints_give_constant_rows() {
    let svc = service();
    let grid = interpolate(&svc, (&["Corn"], 2), (&["Corn"], 3), 3).await;
    for col in 0..3 {
        let col_hashes: Vec<&str> = (0..3).map(|row| grid.cells[row * 3 + col].sha256.as_str()).collect();
        assert!(col_hashes.windows(2).all(|w| w[0] == w[1]));
    }
}
