//! Annotation backend: serves verification tasks over HTTP, records labels
//! in an append-only log and exports them for subset finalization.
//!
//! Routes:
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/tasks/next?annotator=&category=` | next unlabeled task or `{"task": null}` |
//! | POST | `/api/labels` | `{task_id, annotator, label}` |
//! | GET | `/api/progress` | per-category labeled/total |
//! | GET | `/api/export` | effective labels as JSONL |
//! | GET | `/` | annotation UI assets |

pub mod error;
pub mod store;
pub mod tasks;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::header;
use axum::response::{Html, IntoResponse};
use axum::routing::{get, post};
use axum::{Json, Router};
use qagen::categorize::{Category, CategoryAssignment};
use qagen::data::VerificationLabel;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub use error::{ApiError, ServiceError};
pub use store::LabelStore;
pub use tasks::{Guidance, Task, TaskQueue};

const PLACEHOLDER_PAGE: &str = include_str!("../assets/placeholder.html");

pub struct AppState {
    pub queue: TaskQueue,
    pub store: LabelStore,
}

pub type SharedState = Arc<AppState>;

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    pub annotator: Option<String>,
    pub category: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NextResponse {
    pub task: Option<Task>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRequest {
    pub task_id: String,
    pub annotator: String,
    pub label: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelAck {
    pub ok: bool,
    pub record: VerificationLabel,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProgressResponse {
    pub categories: BTreeMap<Category, tasks::CategoryProgress>,
    pub tasks: usize,
    pub log_records: usize,
}

fn annotator_name(raw: Option<&str>) -> Result<String, ApiError> {
    match raw.map(str::trim) {
        Some(a) if !a.is_empty() => Ok(a.to_string()),
        _ => Err(ApiError::BadRequest("annotator is required".into())),
    }
}

async fn next_task(State(s): State<SharedState>, Query(q): Query<NextQuery>) -> Result<Json<NextResponse>, ApiError> {
    let annotator = annotator_name(q.annotator.as_deref())?;
    let category = match q.category.as_deref().map(str::trim).filter(|c| !c.is_empty()) {
        None => None,
        Some(c) => match c.parse::<Category>() {
            Ok(Category::Uncategorized) | Err(_) => return Err(ApiError::BadRequest(format!("unknown category `{c}`"))),
            Ok(c) => Some(c),
        },
    };
    let snap = s.store.snapshot();
    Ok(Json(NextResponse {
        task: s.queue.next_for(&annotator, category, &snap),
    }))
}

async fn submit_label(State(s): State<SharedState>, body: Bytes) -> Result<Json<LabelAck>, ApiError> {
    let req: LabelRequest = serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(format!("malformed label: {e}")))?;
    let annotator = annotator_name(Some(&req.annotator))?;
    if !s.queue.contains(&req.task_id) {
        return Err(ApiError::NotFound(format!("unknown task `{}`", req.task_id)));
    }
    let state = s.clone();
    let task_id = req.task_id.clone();
    let record = tokio::task::spawn_blocking(move || state.store.append(&task_id, &annotator, req.label))
        .await
        .map_err(|e| ServiceError::Writer(e.to_string()))??;
    Ok(Json(LabelAck { ok: true, record }))
}

async fn progress(State(s): State<SharedState>) -> Json<ProgressResponse> {
    let snap = s.store.snapshot();
    Json(ProgressResponse {
        categories: s.queue.progress(&snap),
        tasks: s.queue.len(),
        log_records: snap.log.len(),
    })
}

async fn export(State(s): State<SharedState>) -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/x-ndjson")], s.store.snapshot().export())
}

async fn placeholder() -> Html<&'static str> {
    Html(PLACEHOLDER_PAGE)
}

/// Builds the router. With `static_dir` the UI assets are served from it;
/// otherwise `/` shows a short page describing the API.
pub fn router(state: SharedState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/labels", post(submit_label))
        .route("/api/progress", get(progress))
        .route("/api/export", get(export))
        .with_state(state);
    match static_dir.filter(|d| d.is_dir()) {
        Some(dir) => api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api.route("/", get(placeholder)),
    }
}

pub struct ServeConfig {
    pub assignments: PathBuf,
    pub labels: PathBuf,
    pub guidance: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    pub addr: SocketAddr,
}

/// Loads assignments, replays the label log and builds the shared state.
pub fn load_state(assignments: &[CategoryAssignment], labels: &std::path::Path, guidance: &Guidance) -> Result<(SharedState, Vec<String>), ServiceError> {
    let (queue, warnings) = TaskQueue::new(assignments, guidance);
    let store = LabelStore::open(labels)?;
    Ok((Arc::new(AppState { queue, store }), warnings))
}

/// Runs the service until interrupted.
pub async fn serve(cfg: ServeConfig) -> Result<(), ServiceError> {
    let assignments: Vec<CategoryAssignment> = qagen::data::load_jsonl(&cfg.assignments)?;
    let guidance = match &cfg.guidance {
        Some(p) => Guidance::load(p)?,
        None => Guidance::bundled(),
    };
    let (state, warnings) = load_state(&assignments, &cfg.labels, &guidance)?;
    for w in warnings {
        log::warn!("{w}");
    }
    log::info!(
        "{} tasks, {} label records replayed from {}",
        state.queue.len(),
        state.store.snapshot().log.len(),
        cfg.labels.display()
    );
    let app = router(state, cfg.static_dir);
    let listener = tokio::net::TcpListener::bind(cfg.addr).await.map_err(|e| ServiceError::Io(PathBuf::from(cfg.addr.to_string()), e))?;
    log::info!("listening on http://{}", cfg.addr);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Io(PathBuf::from(cfg.addr.to_string()), e))
}
