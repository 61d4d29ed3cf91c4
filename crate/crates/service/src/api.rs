//! HTTP inference API over an immutable EMA generator snapshot.

use std::io::Cursor;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use image::{ImageEncoder, RgbImage};
use mlcgan_core::data::{LabelVector, Vocabulary};
use mlcgan_core::evaluation::{interpolate_condition, render_cell, z_from_seed, CellCondition, CellMeta, GridCell};
use mlcgan_core::trainer::load_inference_generator;
use mlcgan_core::{data::labels_tensor, Generator};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

pub const MAX_STEPS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub ingredients: Vec<String>,
    pub seed: u64,
    pub truncation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    pub ingredients: Vec<String>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolateRequest {
    pub a: Endpoint,
    pub b: Endpoint,
    pub steps: usize,
    pub truncation: f64,
}

/// JSON form of one generated image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageJson {
    pub ingredients: Vec<String>,
    /// Resolved label vector as 0/1 in vocabulary order.
    pub labels: Vec<u8>,
    pub seed: u64,
    pub truncation: f64,
    pub resolution: usize,
    pub sha256: String,
    pub png_base64: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolateCell {
    #[serde(flatten)]
    pub meta: CellMeta,
    pub sha256: String,
    pub png_base64: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolateResponse {
    pub steps: usize,
    pub resolution: usize,
    pub a: Endpoint,
    pub b: Endpoint,
    /// Row-major; rows move the labels from A to B, columns the noise.
    pub cells: Vec<InterpolateCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingredient: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, body: ErrorBody { code: code.into(), message: message.into(), ingredient: None } }
    }

    fn internal(message: impl Into<String>) -> Self {
        let body = ErrorBody { code: "internal".into(), message: message.into(), ingredient: None };
        Self { status: StatusCode::INTERNAL_SERVER_ERROR, body }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<mlcgan_core::Error> for ApiError {
    fn from(e: mlcgan_core::Error) -> Self {
        ApiError::internal(e.to_string())
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

/// Loaded model plus the generation worker bound.
pub struct Service {
    generator: Generator<f32>,
    vocab: Vocabulary,
    workers: Semaphore,
}

impl Service {
    pub fn new(generator: Generator<f32>, vocab: Vocabulary, workers: usize) -> mlcgan_core::Result<Self> {
        if generator.num_labels() != vocab.len() {
            return Err(mlcgan_core::Error::InvalidConfig(format!(
                "generator has {} labels but the vocabulary has {}",
                generator.num_labels(),
                vocab.len()
            )));
        }
        Ok(Self { generator, vocab, workers: Semaphore::new(workers.max(1)) })
    }

    pub fn load(checkpoint: impl AsRef<Path>, workers: usize) -> mlcgan_core::Result<Self> {
        let (g, vocab) = load_inference_generator(checkpoint)?;
        Self::new(g, vocab, workers)
    }

    pub fn generator(&self) -> &Generator<f32> {
        &self.generator
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn resolve(&self, ingredients: &[String]) -> ApiResult<LabelVector> {
        self.vocab.encode(ingredients).map_err(|e| match e {
            mlcgan_core::Error::UnknownIngredient(name) => ApiError {
                status: StatusCode::BAD_REQUEST,
                body: ErrorBody {
                    code: "unknown_ingredient".into(),
                    message: format!("unknown ingredient {name:?}"),
                    ingredient: Some(name),
                },
            },
            other => ApiError::bad_request("invalid_ingredients", other.to_string()),
        })
    }

    fn check_truncation(psi: f64) -> ApiResult<()> {
        if (0.0..=1.0).contains(&psi) {
            Ok(())
        } else {
            Err(ApiError::bad_request("truncation_out_of_range", format!("truncation must lie in [0, 1], got {psi}")))
        }
    }

    fn validate_generate(&self, req: &GenerateRequest) -> ApiResult<LabelVector> {
        let labels = self.resolve(&req.ingredients)?;
        Self::check_truncation(req.truncation)?;
        match req.resolution {
            Some(r) if r != self.generator.resolution() => Err(ApiError::bad_request(
                "unsupported_resolution",
                format!("this model generates {0}x{0} images, not {r}", self.generator.resolution()),
            )),
            _ => Ok(labels),
        }
    }

    /// Blocking: the image for a validated request.
    pub fn generate(&self, req: &GenerateRequest) -> ApiResult<ImageJson> {
        let labels = self.validate_generate(req)?;
        let g = &self.generator;
        let cell = GridCell {
            condition: CellCondition::Labels(labels.clone()),
            z: z_from_seed(req.seed, g.z_dim()),
            psi: req.truncation,
            meta: CellMeta::default(),
        };
        let (png, sha256) = encode_png(&render_cell(g, &cell)?.to_rgb())?;
        Ok(ImageJson {
            ingredients: self.vocab.decode(&labels),
            labels: labels.to_bits(),
            seed: req.seed,
            truncation: req.truncation,
            resolution: g.resolution(),
            sha256,
            png_base64: BASE64.encode(png),
        })
    }

    /// Blocking: the `steps × steps` interpolation grid.
    pub fn interpolate(&self, req: &InterpolateRequest) -> ApiResult<InterpolateResponse> {
        let (la, lb) = (self.resolve(&req.a.ingredients)?, self.resolve(&req.b.ingredients)?);
        Self::check_truncation(req.truncation)?;
        if !(2..=MAX_STEPS).contains(&req.steps) {
            return Err(ApiError::bad_request("invalid_steps", format!("steps must lie in 2..={MAX_STEPS}, got {}", req.steps)));
        }
        let g = &self.generator;
        let (te_a, te_b) = mlcgan_autodiff::no_grad(|| {
            Ok::<_, mlcgan_core::Error>((g.embed(&labels_tensor(&[la]))?, g.embed(&labels_tensor(&[lb]))?))
        })?;
        let (za, zb) = (z_from_seed(req.a.seed, g.z_dim()), z_from_seed(req.b.seed, g.z_dim()));
        let spec = interpolate_condition(&te_a, &te_b, &za, &zb, req.steps, req.truncation)?;
        let cells = spec
            .cells
            .iter()
            .map(|cell| {
                let (png, sha256) = encode_png(&render_cell(g, cell)?.to_rgb())?;
                Ok(InterpolateCell { meta: cell.meta.clone(), sha256, png_base64: BASE64.encode(png) })
            })
            .collect::<ApiResult<Vec<_>>>()?;
        Ok(InterpolateResponse { steps: req.steps, resolution: g.resolution(), a: req.a.clone(), b: req.b.clone(), cells })
    }
}

/// PNG bytes and their hex SHA-256.
pub fn encode_png(img: &RgbImage) -> ApiResult<(Vec<u8>, String)> {
    let mut out = Cursor::new(Vec::new());
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let bytes = out.into_inner();
    let digest = hex::encode(Sha256::digest(&bytes));
    Ok((bytes, digest))
}

fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("invalid_request", e.to_string()))
}

async fn run_blocking<T: Send + 'static>(
    svc: Arc<Service>,
    job: impl FnOnce(&Service) -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    let _permit = svc.workers.acquire().await.map_err(|e| ApiError::internal(e.to_string()))?;
    let worker = svc.clone();
    tokio::task::spawn_blocking(move || job(&worker)).await.map_err(|e| ApiError::internal(e.to_string()))?
}

async fn health(State(svc): State<Arc<Service>>) -> impl IntoResponse {
    Json(serde_json::json!({ "status": "ok", "resolution": svc.generator.resolution(), "C": svc.vocab.len() }))
}

async fn vocabulary(State(svc): State<Arc<Service>>) -> impl IntoResponse {
    Json(svc.vocab.names().to_vec())
}

async fn generate_json(State(svc): State<Arc<Service>>, body: Bytes) -> ApiResult<Json<ImageJson>> {
    let req: GenerateRequest = parse(&body)?;
    svc.validate_generate(&req)?;
    Ok(Json(run_blocking(svc, move |s| s.generate(&req)).await?))
}

async fn generate_png(State(svc): State<Arc<Service>>, body: Bytes) -> ApiResult<Response> {
    let Json(img) = generate_json(State(svc), body).await?;
    let png = BASE64.decode(&img.png_base64).map_err(|e| ApiError::internal(e.to_string()))?;
    let mut headers = HeaderMap::new();
    let mut put = |name: &'static str, value: String| {
        if let Ok(v) = HeaderValue::from_str(&value) {
            headers.insert(name, v);
        }
    };
    put("x-ingredients", serde_json::to_string(&img.ingredients).unwrap_or_default());
    put("x-labels", img.labels.iter().map(|b| char::from(b'0' + b)).collect());
    put("x-seed", img.seed.to_string());
    put("x-truncation", img.truncation.to_string());
    put("x-resolution", img.resolution.to_string());
    put("x-image-sha256", img.sha256);
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    Ok((headers, png).into_response())
}

async fn interpolate(State(svc): State<Arc<Service>>, body: Bytes) -> ApiResult<Json<InterpolateResponse>> {
    let req: InterpolateRequest = parse(&body)?;
    Ok(Json(run_blocking(svc, move |s| s.interpolate(&req)).await?))
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/vocabulary", get(vocabulary))
        .route("/generate", post(generate_png))
        .route("/generate.json", post(generate_json))
        .route("/interpolate", post(interpolate))
        .with_state(svc)
}

/// Bind and serve until the process ends.
pub async fn serve(svc: Service, bind: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(svc))).await?;
    Ok(())
}
