//! Cloud node: `POST /v1/classify`, `GET /v1/health`.

use std::io;
use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use earlin_core::io::decode_feature;
use tokio::sync::oneshot;

use crate::backend::{BackendError, ClassifierBackend};
use crate::digest::content_digest;
use crate::record::{codes, ClassificationResult, ErrorBody, HealthBody, CLASSIFY_PATH, HEALTH_PATH};

/// Large enough for a 3×512×512 f32 input.
pub const DEFAULT_MAX_BODY_BYTES: usize = 4 << 20;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    pub max_body_bytes: usize,
    /// Tokio worker threads; `None` uses the runtime default.
    pub workers: Option<usize>,
}

impl ServerConfig {
    pub fn new(addr: SocketAddr) -> Self {
        ServerConfig {
            addr,
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
            workers: None,
        }
    }
}

struct AppState {
    backend: Arc<dyn ClassifierBackend>,
    requests: Arc<AtomicU64>,
}

fn error(status: StatusCode, code: &str) -> Response {
    (status, Json(ErrorBody { error: code.to_string() })).into_response()
}

async fn health() -> Json<HealthBody> {
    Json(HealthBody { status: "ok".into() })
}

async fn classify(State(st): State<Arc<AppState>>, body: Bytes) -> Response {
    let start = Instant::now();
    st.requests.fetch_add(1, Ordering::Relaxed);
    if let Err(e) = decode_feature(&body) {
        tracing::debug!(error = %e, "rejecting malformed body");
        return error(StatusCode::BAD_REQUEST, codes::MALFORMED_TENSOR);
    }
    let digest = content_digest(&body);
    let backend = Arc::clone(&st.backend);
    let outcome = tokio::task::spawn_blocking(move || {
        let r = backend.classify(&body, &digest);
        (r, digest)
    })
    .await;

    let server_ms = start.elapsed().as_secs_f64() * 1e3;
    match outcome {
        Ok((Ok(c), digest)) => {
            tracing::info!(%digest, label = %c.label, server_ms, "classified");
            Json(ClassificationResult {
                label: c.label,
                class_index: c.class_index,
                server_ms,
            })
            .into_response()
        }
        Ok((Err(BackendError::UnknownSample(_)), digest)) => {
            tracing::info!(%digest, server_ms, "unknown sample");
            error(StatusCode::BAD_REQUEST, codes::UNKNOWN_SAMPLE)
        }
        Ok((Err(BackendError::Failure(msg)), digest)) => {
            tracing::warn!(%digest, server_ms, error = %msg, "backend failure");
            error(StatusCode::SERVICE_UNAVAILABLE, codes::BACKEND_FAILURE)
        }
        Err(e) => {
            tracing::error!(error = %e, "backend task panicked");
            error(StatusCode::SERVICE_UNAVAILABLE, codes::BACKEND_FAILURE)
        }
    }
}

/// Builds the router. `requests` counts every classify call, accepted or not.
pub fn router(backend: Arc<dyn ClassifierBackend>, requests: Arc<AtomicU64>, max_body_bytes: usize) -> Router {
    let state = Arc::new(AppState { backend, requests });
    Router::new()
        .route(CLASSIFY_PATH, post(classify))
        .route(HEALTH_PATH, get(health))
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(state)
}

/// A cloud node running on a background thread.
pub struct ServerHandle {
    addr: SocketAddr,
    requests: Arc<AtomicU64>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Classify requests received so far.
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    /// Stops accepting, drains in-flight requests and joins the thread.
    pub fn shutdown(mut self) -> io::Result<()> {
        self.stop()
    }

    fn stop(&mut self) -> io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t
                .join()
                .map_err(|_| io::Error::other("server thread panicked"))?,
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}

fn runtime(workers: Option<usize>) -> io::Result<tokio::runtime::Runtime> {
    let mut b = tokio::runtime::Builder::new_multi_thread();
    if let Some(n) = workers {
        b.worker_threads(n.max(1));
    }
    b.enable_all().build()
}

/// Binds synchronously (so bind errors surface here and port 0 resolves),
/// then serves on a dedicated runtime thread.
pub fn spawn_server(backend: Arc<dyn ClassifierBackend>, config: &ServerConfig) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(config.addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let requests = Arc::new(AtomicU64::new(0));
    let app = router(backend, Arc::clone(&requests), config.max_body_bytes);
    let (tx, rx) = oneshot::channel::<()>();
    let rt = runtime(config.workers)?;

    let thread = thread::Builder::new()
        .name("earlin-server".into())
        .spawn(move || {
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
            })
        })?;
    tracing::info!(%addr, "cloud node listening");
    Ok(ServerHandle {
        addr,
        requests,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

/// Serves in the foreground until Ctrl-C. `ready` receives the bound
/// address once the socket is listening.
pub fn run_server(
    backend: Arc<dyn ClassifierBackend>,
    config: &ServerConfig,
    ready: impl FnOnce(SocketAddr),
) -> io::Result<()> {
    let rt = runtime(config.workers)?;
    let requests = Arc::new(AtomicU64::new(0));
    let app = router(backend, Arc::clone(&requests), config.max_body_bytes);
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(config.addr).await?;
        let addr = listener.local_addr()?;
        tracing::info!(%addr, "cloud node listening");
        ready(addr);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    tracing::info!(requests = requests.load(Ordering::SeqCst), "cloud node stopped");
    Ok(())
}
