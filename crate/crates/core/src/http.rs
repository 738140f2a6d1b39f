//! REST interfaces of the Core and the three components.
//!
//! The Core authenticates with HTTP Basic credentials. Component
//! interfaces receive jobs the Core has already authenticated and are
//! meant for a trusted network; only their revocation routes check
//! credentials themselves.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::gateway::{parse_basic_auth, Gateway};
use crate::protocol::{Credentials, ForwardedJob};

impl IntoResponse for Error {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.to_body())).into_response()
    }
}

type Shared = State<Arc<Gateway>>;

fn credentials(headers: &HeaderMap) -> Result<Credentials> {
    let h = headers
        .get(axum::http::header::AUTHORIZATION)
        .ok_or_else(|| Error::AuthenticationFailed("missing Authorization header".into()))?;
    let h = h.to_str().map_err(|_| Error::AuthenticationFailed("Authorization header is not ASCII".into()))?;
    parse_basic_auth(h)
}

fn reply<T: serde::Serialize>(r: Result<T>) -> Response {
    match r {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T> {
    serde_json::from_slice(body).map_err(|e| Error::MalformedRequest(e.to_string()))
}

/// Every interface on one router.
pub fn app(gw: Arc<Gateway>) -> Router {
    Router::new()
        .merge(core_router())
        .merge(security_router())
        .merge(offloading_router())
        .merge(analytics_router())
        .route("/health", get(|| async { Json(json!({"status": "ok"})) }))
        .with_state(gw)
}

/// Serves [`app`] on `listener` until the task is dropped.
pub async fn serve(gw: Arc<Gateway>, listener: tokio::net::TcpListener) -> Result<()> {
    axum::serve(listener, app(gw)).await.map_err(|e| Error::Io(e.to_string()))
}

// ---- Core ----

pub fn core_router() -> Router<Arc<Gateway>> {
    Router::new()
        .route("/core/", post(core_submit))
        .route("/core/{job_id}", get(core_get).put(core_put).delete(core_delete))
}

#[derive(Debug, Deserialize)]
struct SubmitParams {
    #[serde(default)]
    wait: bool,
}

/// A body without `initiator` takes it from the Authorization header.
///
/// With `?wait=true` the reply is the settled job view instead of the bare
/// id, unless the job keeps a PUT channel open.
async fn core_submit(State(gw): Shared, headers: HeaderMap, Query(p): Query<SubmitParams>, body: Bytes) -> Response {
    let res = async {
        let mut raw: Value = parse_json(&body)?;
        if let Some(obj) = raw.as_object_mut() {
            if !obj.contains_key("initiator") && headers.contains_key(axum::http::header::AUTHORIZATION) {
                let who = credentials(&headers)?;
                obj.insert("initiator".into(), serde_json::to_value(who).expect("credentials serialize"));
            }
        }
        gw.submit_job(&raw).await
    }
    .await;
    let id = match res {
        Ok(id) => id,
        Err(e) => return e.into_response(),
    };
    let open = gw.jobs().get(id.as_str()).map(|e| e.is_open()).unwrap_or(false);
    if !p.wait || open {
        return (StatusCode::ACCEPTED, Json(json!({ "job_id": id }))).into_response();
    }
    reply(gw.wait(id.as_str()).await)
}

async fn core_get(State(gw): Shared, headers: HeaderMap, Path(job_id): Path<String>) -> Response {
    reply(credentials(&headers).and_then(|who| gw.get_job(&job_id, &who)))
}

#[derive(Debug, Deserialize)]
struct PutParams {
    #[serde(default)]
    last: bool,
}

async fn core_put(
    State(gw): Shared,
    headers: HeaderMap,
    Path(job_id): Path<String>,
    Query(p): Query<PutParams>,
    body: Bytes,
) -> Response {
    let res = async {
        let who = credentials(&headers)?;
        gw.stream_put(&job_id, &body, p.last, &who).await?;
        Ok(json!({ "job_id": job_id, "accepted": body.len(), "last": p.last }))
    }
    .await;
    reply(res)
}

async fn core_delete(State(gw): Shared, headers: HeaderMap, Path(job_id): Path<String>) -> Response {
    let res = async {
        let who = credentials(&headers)?;
        gw.delete_job(&job_id, &who).await?;
        Ok(json!({ "deleted": job_id }))
    }
    .await;
    reply(res)
}

// ---- security engine ----

pub fn security_router() -> Router<Arc<Gateway>> {
    Router::new()
        .route("/security_engine/", post(security_submit).put(put_disabled))
        .route("/security_engine/health", get(health))
        .route("/security_engine/audit", get(security_audit).put(put_disabled))
        .route("/security_engine/{*dataset_id}", delete(security_revoke).put(put_disabled))
}

async fn put_disabled() -> Response {
    Error::MethodNotAllowed("PUT is disabled on the security engine".into()).into_response()
}

async fn security_submit(State(gw): Shared, body: Bytes) -> Response {
    reply(parse_json::<ForwardedJob>(&body).and_then(|job| gw.security().execute(&job)))
}

/// Strips every grant on the dataset.
async fn security_revoke(State(gw): Shared, headers: HeaderMap, Path(dataset_id): Path<String>) -> Response {
    let res = credentials(&headers).and_then(|who| {
        let who = gw.authenticate(&who)?;
        gw.security().revoke(&who, &dataset_id)?;
        Ok(json!({ "revoked": dataset_id, "policy_version": gw.security().version() }))
    });
    reply(res)
}

async fn security_audit(State(gw): Shared, headers: HeaderMap) -> Response {
    reply(credentials(&headers).and_then(|who| gw.security().read_audit(&gw.authenticate(&who)?)))
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

// ---- off-loading APIs ----

pub fn offloading_router() -> Router<Arc<Gateway>> {
    Router::new()
        .route("/off_loading_apis/", post(offloading_submit))
        .route("/off_loading_apis/health", get(health))
        .route("/off_loading_apis/{job_id}", delete(offloading_cancel))
}

async fn offloading_submit(State(gw): Shared, body: Bytes) -> Response {
    let res = async {
        let job: ForwardedJob = parse_json(&body)?;
        gw.offload().execute(&job).await
    }
    .await;
    reply(res)
}

async fn offloading_cancel(State(gw): Shared, Path(job_id): Path<String>) -> Response {
    reply(gw.offload().cancel(&job_id).map(|()| json!({ "cancelled": job_id })))
}

// ---- analytics engine ----

pub fn analytics_router() -> Router<Arc<Gateway>> {
    Router::new()
        .route("/analytics_engine/", post(analytics_submit))
        .route("/analytics_engine/health", get(health))
        .route("/analytics_engine/modules", post(analytics_register).get(analytics_modules))
        .route("/analytics_engine/{request_id}", delete(analytics_revoke))
}

async fn analytics_submit(State(gw): Shared, body: Bytes) -> Response {
    let res = async {
        let job: ForwardedJob = parse_json(&body)?;
        gw.analytics().execute(&job).await
    }
    .await;
    reply(res)
}

/// With credentials this is a client revoking its request; without, it is
/// the Core cancelling a forwarded one.
async fn analytics_revoke(State(gw): Shared, headers: HeaderMap, Path(request_id): Path<String>) -> Response {
    let res = async {
        if headers.contains_key(axum::http::header::AUTHORIZATION) {
            let who = credentials(&headers)?;
            gw.revoke_analytics(&request_id, &who).await?;
        } else {
            gw.analytics().revoke_request(&request_id)?;
        }
        Ok(json!({ "revoked": request_id }))
    }
    .await;
    reply(res)
}

#[derive(Debug, Deserialize)]
struct ModuleBody {
    module_id: String,
    endpoint: String,
}

async fn analytics_register(State(gw): Shared, headers: HeaderMap, body: Bytes) -> Response {
    let res = async {
        let who = credentials(&headers)?;
        let b: ModuleBody = parse_json(&body)?;
        let (registration, creds) = gw.register_module(&who, &b.module_id, &b.endpoint).await?;
        Ok::<_, Error>(json!({ "registration": registration, "credentials": creds }))
    }
    .await;
    match res {
        Ok(v) => (StatusCode::CREATED, Json(v)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn analytics_modules(State(gw): Shared) -> Response {
    Json(gw.analytics().modules()).into_response()
}
