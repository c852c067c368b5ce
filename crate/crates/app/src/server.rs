//! HTTP/JSON service. Handlers clone an `Arc` of the current model
//! snapshot and run inference on the blocking pool, so independent
//! requests proceed in parallel and a reload never disturbs a request
//! already in flight.

use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use tower_http::services::ServeDir;
use typogen_core::metrics::{Evaluator, TruthBasis};
use typogen_core::model::TypographyModel;
use typogen_core::quantizer::CodebookSet;
use typogen_core::render::{render_svg, BackgroundMode, RenderSpec};
use typogen_core::sampling::{predict_top1, sample, SamplingConfig};
use typogen_core::Error;

use crate::api::{
    parse_body, FieldError, MetricsRequest, PredictRequest, PredictResponse, SampleRequest, SampleResponse,
};

/// Upper bound on samples per request.
pub const MAX_SAMPLES: usize = 64;

/// Everything inference needs; immutable once built.
pub struct Snapshot {
    pub model: TypographyModel,
    pub codebooks: CodebookSet,
    /// Hex SHA-256 over the checkpoint bytes and the codebook hash.
    pub hash: String,
}

impl Snapshot {
    pub fn new(model: TypographyModel, codebooks: CodebookSet) -> Snapshot {
        let mut h = Sha256::new();
        h.update(model.store().checkpoint_bytes());
        h.update(codebooks.hash().as_bytes());
        let hash = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        Snapshot { model, codebooks, hash }
    }

    pub fn load(checkpoint: &Path, codebooks: &Path) -> typogen_core::Result<Snapshot> {
        let cb = CodebookSet::load(codebooks)?;
        let model = TypographyModel::load(checkpoint, &cb)?;
        Ok(Snapshot::new(model, cb))
    }
}

pub struct ServiceState {
    snapshot: RwLock<Option<Arc<Snapshot>>>,
    sampling: SamplingConfig,
    /// Where `/reload` reads from.
    sources: Option<(PathBuf, PathBuf)>,
}

impl ServiceState {
    pub fn new(snapshot: Option<Snapshot>, sampling: SamplingConfig, sources: Option<(PathBuf, PathBuf)>) -> Self {
        ServiceState {
            snapshot: RwLock::new(snapshot.map(Arc::new)),
            sampling,
            sources,
        }
    }

    pub fn current(&self) -> Option<Arc<Snapshot>> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Swaps in a new snapshot; requests holding the old one finish on it.
    pub fn install(&self, snapshot: Snapshot) {
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(snapshot));
    }

    pub fn reload(&self) -> typogen_core::Result<String> {
        let (ckpt, cb) = self
            .sources
            .as_ref()
            .ok_or_else(|| Error::Config("no checkpoint configured".into()))?;
        let snap = Snapshot::load(ckpt, cb)?;
        let hash = snap.hash.clone();
        self.install(snap);
        info!("model reloaded: {hash}");
        Ok(hash)
    }
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(FieldError),
    Unavailable,
    Internal(String),
}

impl From<FieldError> for ApiError {
    fn from(e: FieldError) -> Self {
        ApiError::BadRequest(e)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation { context, message } => ApiError::BadRequest(FieldError { field: context, message }),
            Error::Parse { field, message, .. } => ApiError::BadRequest(FieldError { field, message }),
            Error::OutOfRange(m) | Error::Config(m) => ApiError::BadRequest(FieldError {
                field: "<body>".into(),
                message: m,
            }),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        match self {
            ApiError::BadRequest(e) => (StatusCode::BAD_REQUEST, Json(json!({"error": e.message, "field": e.field}))),
            ApiError::Unavailable => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "no model loaded"}))),
            ApiError::Internal(m) => {
                warn!("internal error: {m}");
                (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({"error": m})))
            }
        }
        .into_response()
    }
}

type AppState = Arc<ServiceState>;

fn snapshot(state: &ServiceState) -> Result<Arc<Snapshot>, ApiError> {
    state.current().ok_or(ApiError::Unavailable)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

async fn health(State(state): State<AppState>) -> Response {
    match state.current() {
        Some(s) => Json(json!({"status": "ok", "model_hash": s.hash})).into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({"status": "no model loaded", "model_hash": null})),
        )
            .into_response(),
    }
}

async fn predict(State(state): State<AppState>, body: Bytes) -> Result<Json<PredictResponse>, ApiError> {
    let req: PredictRequest = parse_body(&body)?;
    let snap = snapshot(&state)?;
    blocking(move || {
        let doc = req.document.into_document(&snap.codebooks)?;
        let top = predict_top1(&snap.model, &doc)?;
        Ok(Json(PredictResponse {
            doc_id: doc.id.clone(),
            labels: top.labels,
            clusters: top.clusters,
        }))
    })
    .await
}

async fn sample_handler(State(state): State<AppState>, body: Bytes) -> Result<Json<SampleResponse>, ApiError> {
    let req: SampleRequest = parse_body(&body)?;
    if req.n == 0 || req.n > MAX_SAMPLES {
        return Err(FieldError {
            field: "n".into(),
            message: format!("{} outside 1..={MAX_SAMPLES}", req.n),
        }
        .into());
    }
    let snap = snapshot(&state)?;
    let mut cfg = state.sampling.clone();
    cfg.p_k.extend(req.p_k);
    cfg.n_samples = req.n;
    cfg.locks = req.locks;
    if let Some(mode) = req.mode {
        cfg.mode = mode;
    }
    if let Some(seed) = req.seed {
        cfg.seed = seed;
    }
    blocking(move || {
        let doc = req.document.into_document(&snap.codebooks)?;
        let set = sample(&snap.model, &doc, &cfg)?;
        let samples: Vec<_> = (0..set.samples.len()).map(|n| set.sample_labels(n)).collect();
        let mut svgs = Vec::with_capacity(samples.len());
        for labels in &samples {
            let mut spec = RenderSpec::new(&doc, labels, &snap.codebooks);
            spec.background = BackgroundMode::None;
            svgs.push(render_svg(&spec)?);
        }
        Ok(Json(SampleResponse {
            doc_id: set.doc_id,
            mode: set.mode,
            seed: set.seed,
            samples,
            clusters: set.clusters,
            svgs,
        }))
    })
    .await
}

async fn metrics(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: MetricsRequest = parse_body(&body)?;
    let snap = snapshot(&state)?;
    blocking(move || {
        let doc = req.truth.into_document(&snap.codebooks)?;
        if doc.labels.is_none() {
            return Err(FieldError {
                field: "truth.elements".into(),
                message: "every element needs its typography".into(),
            }
            .into());
        }
        let samples = req.pred.into_samples();
        if let Some(bad) = samples.iter().position(|s| s.len() != doc.len()) {
            return Err(FieldError {
                field: format!("pred[{bad}]"),
                message: format!("{} labels for {} elements", samples[bad].len(), doc.len()),
            }
            .into());
        }
        let mut ev = Evaluator::new(&snap.codebooks, req.basis.unwrap_or(TruthBasis::Raw));
        ev.add(&doc, &samples)?;
        Ok(Json(ev.finish()?).into_response())
    })
    .await
}

#[derive(Serialize)]
struct Reloaded {
    model_hash: String,
}

async fn reload(State(state): State<AppState>) -> Result<Json<Reloaded>, ApiError> {
    let st = state.clone();
    blocking(move || {
        st.reload().map(|model_hash| Json(Reloaded { model_hash })).map_err(|e| match e {
            Error::Config(m) => ApiError::BadRequest(FieldError {
                field: "<config>".into(),
                message: m,
            }),
            other => ApiError::Internal(other.to_string()),
        })
    })
    .await
}

pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/predict", post(predict))
        .route("/sample", post(sample_handler))
        .route("/metrics", post(metrics))
        .route("/reload", post(reload))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until ctrl-c. SIGHUP (on unix) reloads the model.
pub async fn serve(state: AppState, bind: std::net::SocketAddr, static_dir: Option<PathBuf>) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    info!("listening on http://{}", listener.local_addr()?);
    #[cfg(unix)]
    {
        let st = state.clone();
        let mut hup = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::hangup())?;
        tokio::spawn(async move {
            while hup.recv().await.is_some() {
                let st = st.clone();
                match tokio::task::spawn_blocking(move || st.reload()).await {
                    Ok(Err(e)) => warn!("reload failed: {e}"),
                    Err(e) => warn!("reload failed: {e}"),
                    Ok(Ok(_)) => {}
                }
            }
        });
    }
    axum::serve(listener, router(state, static_dir.as_deref()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
