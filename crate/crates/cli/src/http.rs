//! The JSON API consumed by the web UI.
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | POST | `/api/routes` | `RouteQuery` | `AnnotatedRouteSet` |
//! | GET | `/api/routes/{rid}/{side}/images` | `at_m`, `window`, `region` | `[ImageDescriptor]` |
//! | GET | `/api/patterns` | `region` | `PatternCatalog` |
//! | PUT | `/api/patterns/{id}` | `{name?, color?}`, `region` | `VaPattern` |
//! | GET | `/api/regions` | | `[RegionSummary]` |
//!
//! `region` may be omitted while a single region is loaded. Errors come
//! back as `{"error": "..."}` with a 4xx/5xx status.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use streetpattern_core::datastore::to_json_bytes;
use streetpattern_core::service::{PatternUpdate, RegionRegistry, RouteQuery, ServiceError};
use streetpattern_core::Side;

/// Marker image window used when the request names none.
pub const DEFAULT_WINDOW: usize = 8;

/// Upper bound on one image window.
pub const MAX_WINDOW: usize = 200;

type Registry = Arc<RegionRegistry>;

struct ApiError(StatusCode, String);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

/// Same bytes the CLI writes, so responses are stable across runs.
fn json_body<T: Serialize>(value: &T) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], to_json_bytes(value)).into_response()
}

/// Runs a blocking service call off the async workers.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(result) => result.map_err(ApiError::from),
        Err(e) => Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

#[derive(Debug, Deserialize)]
struct RegionParam {
    region: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ImagesParams {
    #[serde(default)]
    at_m: f64,
    window: Option<usize>,
    region: Option<String>,
}

async fn post_routes(State(reg): State<Registry>, Json(q): Json<RouteQuery>) -> Result<Response, ApiError> {
    let set = blocking(move || reg.handle_route_query(&q)).await?;
    Ok(json_body(&set))
}

async fn get_images(
    State(reg): State<Registry>,
    Path((rid, side)): Path<(String, String)>,
    Query(p): Query<ImagesParams>,
) -> Result<Response, ApiError> {
    let side: Side = side.parse().map_err(bad_request)?;
    let window = p.window.unwrap_or(DEFAULT_WINDOW);
    if window == 0 || window > MAX_WINDOW {
        return Err(bad_request(format!("window must be between 1 and {MAX_WINDOW}")));
    }
    if !p.at_m.is_finite() {
        return Err(bad_request("at_m must be a finite number"));
    }
    let images = blocking(move || reg.resolve(p.region.as_deref())?.images(&rid, side, p.at_m, window)).await?;
    Ok(json_body(&images))
}

async fn get_patterns(State(reg): State<Registry>, Query(p): Query<RegionParam>) -> Result<Response, ApiError> {
    Ok(json_body(&reg.resolve(p.region.as_deref())?.patterns()))
}

async fn put_pattern(
    State(reg): State<Registry>,
    Path(id): Path<u32>,
    Query(p): Query<RegionParam>,
    Json(update): Json<PatternUpdate>,
) -> Result<Response, ApiError> {
    let pattern = blocking(move || reg.resolve(p.region.as_deref())?.update_pattern(id, &update)).await?;
    Ok(json_body(&pattern))
}

async fn get_regions(State(reg): State<Registry>) -> Response {
    json_body(&reg.summaries())
}

pub fn router(registry: Registry) -> Router {
    Router::new()
        .route("/api/routes", post(post_routes))
        .route("/api/routes/{rid}/{side}/images", get(get_images))
        .route("/api/patterns", get(get_patterns))
        .route("/api/patterns/{id}", put(put_pattern))
        .route("/api/regions", get(get_regions))
        .with_state(registry)
}

/// Serves until Ctrl-C.
pub async fn serve(registry: Registry, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(registry))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
