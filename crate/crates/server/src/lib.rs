//! HTTP service for adaptive translation projects.
//!
//! Every route takes and returns JSON. Errors come back as
//! `{code, message, detail}` with a matching status.

pub mod config;
pub mod error;
mod routes;
pub mod state;

use std::sync::Arc;

use axum::extract::{Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;

pub use config::{ConfigError, RefreshMode, ServerConfig};
pub use error::ApiError;
pub use routes::{TranslateMode, TranslateResponse};
pub use state::{AppState, StateError};

async fn require_key(State(app): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let Some(key) = app.cfg.api_key.as_deref() else {
        return next.run(req).await;
    };
    let headers = req.headers();
    let given = headers.get("x-api-key").and_then(|v| v.to_str().ok()).or_else(|| {
        headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
    });
    if given == Some(key) {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong API key").into_response()
    }
}

pub fn router(app: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/projects", get(routes::list_projects).post(routes::create_project))
        .route("/projects/{id}", get(routes::get_project))
        .route("/projects/{id}/units", post(routes::upload_units))
        .route("/projects/{id}/index/rebuild", post(routes::rebuild_index))
        .route("/projects/{id}/translate", post(routes::translate))
        .route("/projects/{id}/autocomplete", post(routes::autocomplete_word))
        .route("/projects/{id}/approve", post(routes::approve))
        .route("/projects/{id}/terms/ape", post(routes::term_ape))
        .route("/projects/{id}/glossary/compile", post(routes::compile))
        .route("/projects/{id}/glossary", get(routes::get_glossary))
        .route("/projects/{id}/evaluate/terms", post(routes::evaluate_terms))
        .route_layer(middleware::from_fn_with_state(app.clone(), require_key));
    Router::new()
        .route("/healthz", get(routes::healthz))
        .merge(api)
        .with_state(app)
}

/// Serves on an already bound listener until the future is dropped.
pub async fn serve_on(listener: tokio::net::TcpListener, app: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(app)).await
}

/// Binds `cfg.bind` and serves.
pub async fn serve(cfg: ServerConfig) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let bind = cfg.bind.clone();
    let app = Arc::new(AppState::from_config(cfg)?);
    let listener = tokio::net::TcpListener::bind(&bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    serve_on(listener, app).await?;
    Ok(())
}
