use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use super::{codes, CapabilitySet, SnapshotEntry, SnapshotRequest, Wrapper, WrapperHealth, WrapperRequest, WrapperResponse};
use crate::error::{Error, ErrorBody, Result};

/// Serves any [`Wrapper`] over the wrapper wire protocol.
pub fn router(wrapper: Arc<dyn Wrapper>) -> Router {
    Router::new()
        .route("/handle", post(handle))
        .route("/capabilities", get(capabilities))
        .route("/health", get(health))
        .route("/snapshot", post(snapshot))
        .with_state(wrapper)
}

async fn handle(State(w): State<Arc<dyn Wrapper>>, body: axum::body::Bytes) -> Response {
    match WrapperRequest::from_slice(&body) {
        Ok(req) => Json(w.handle(req).await).into_response(),
        Err(e) => {
            // Echo the id when the body was at least a JSON object carrying one.
            let id = serde_json::from_slice::<serde_json::Value>(&body)
                .ok()
                .and_then(|v| v.get("request_id").and_then(|x| x.as_u64()))
                .unwrap_or(0);
            Json(WrapperResponse::error(id, codes::BAD_REQUEST, e.detail())).into_response()
        }
    }
}

async fn capabilities(State(w): State<Arc<dyn Wrapper>>) -> Response {
    reply(w.capabilities().await)
}

async fn health(State(w): State<Arc<dyn Wrapper>>) -> Response {
    reply(w.health().await)
}

async fn snapshot(State(w): State<Arc<dyn Wrapper>>, body: axum::body::Bytes) -> Response {
    let req: SnapshotRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(&Error::MalformedRequest(e.to_string())),
    };
    reply(w.snapshot(&req.access_point, &req.collection).await)
}

fn reply<T: serde::Serialize>(r: Result<T>) -> Response {
    match r {
        Ok(v) => Json(v).into_response(),
        Err(e) => error_response(&e),
    }
}

pub(crate) fn error_response(e: &Error) -> Response {
    let status = StatusCode::from_u16(e.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(e.to_body())).into_response()
}

/// Client side of the wrapper wire protocol.
#[derive(Clone)]
pub struct HttpWrapper {
    base: String,
    client: reqwest::Client,
}

impl HttpWrapper {
    pub fn new(endpoint: &str) -> Self {
        let client = reqwest::Client::builder().timeout(Duration::from_secs(30)).build().expect("http client");
        HttpWrapper { base: endpoint.trim_end_matches('/').to_owned(), client }
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    async fn decode<T: serde::de::DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| Error::Transport(e.to_string()))?;
        if status.is_success() {
            serde_json::from_slice(&bytes).map_err(|e| Error::Transport(format!("bad wrapper reply: {e}")))
        } else {
            match serde_json::from_slice::<ErrorBody>(&bytes) {
                Ok(body) => Err(Error::from_body(body)),
                Err(_) => Err(Error::Transport(format!("wrapper answered {status}"))),
            }
        }
    }

    fn unreachable(&self, e: reqwest::Error) -> Error {
        Error::Unreachable(format!("{}: {e}", self.base))
    }
}

#[async_trait]
impl Wrapper for HttpWrapper {
    async fn handle(&self, req: WrapperRequest) -> WrapperResponse {
        let id = req.request_id;
        let sent = self.client.post(format!("{}/handle", self.base)).json(&req).send().await;
        let resp = match sent {
            Ok(r) => r,
            Err(e) => return WrapperResponse::error(id, codes::STORE_UNAVAILABLE, self.unreachable(e).detail()),
        };
        let bytes = match resp.bytes().await {
            Ok(b) => b,
            Err(e) => return WrapperResponse::error(id, codes::INTERNAL, e.to_string()),
        };
        match WrapperResponse::from_slice(&bytes) {
            Ok(r) if r.request_id == id => r,
            Ok(r) => WrapperResponse::error(id, codes::INTERNAL, format!("response echoed id {}", r.request_id)),
            Err(e) => WrapperResponse::error(id, codes::INTERNAL, e.detail()),
        }
    }

    async fn capabilities(&self) -> Result<CapabilitySet> {
        let r = self.client.get(format!("{}/capabilities", self.base)).send().await.map_err(|e| self.unreachable(e))?;
        Self::decode(r).await
    }

    async fn health(&self) -> Result<WrapperHealth> {
        let r = self.client.get(format!("{}/health", self.base)).send().await.map_err(|e| self.unreachable(e))?;
        Self::decode(r).await
    }

    async fn snapshot(&self, access_point: &str, collection: &str) -> Result<Vec<SnapshotEntry>> {
        let body = SnapshotRequest { access_point: access_point.to_owned(), collection: collection.to_owned() };
        let r = self
            .client
            .post(format!("{}/snapshot", self.base))
            .json(&body)
            .send()
            .await
            .map_err(|e| self.unreachable(e))?;
        Self::decode(r).await
    }
}
