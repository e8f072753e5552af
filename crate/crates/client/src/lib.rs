//! Async client for the hint retrieval service.

use hintforge_core::api::{
    DocsSearchRequest, DocsSearchResponse, EpisodeHintsRequest, ErrorBody, HealthResponse, HintsResponse,
    StatsResponse, StepHintsRequest,
};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server returned {status} ({code}): {message}")]
    Api { status: u16, code: String, message: String },
    #[error("undecodable response ({status}): {body}")]
    Decode { status: u16, body: String },
}

impl ClientError {
    /// True for 4xx responses.
    pub fn is_client_error(&self) -> bool {
        matches!(self, ClientError::Api { status, .. } if (400..500).contains(status))
    }
}

#[derive(Clone, Debug)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status().as_u16();
        let body = resp.text().await?;
        if (200..300).contains(&status) {
            return serde_json::from_str(&body).map_err(|_| ClientError::Decode { status, body });
        }
        match serde_json::from_str::<ErrorBody>(&body) {
            Ok(e) => Err(ClientError::Api {
                status,
                code: e.error.code,
                message: e.error.message,
            }),
            Err(_) => Err(ClientError::Decode { status, body }),
        }
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let resp = self.http.post(format!("{}{path}", self.base)).json(body).send().await?;
        Self::decode(resp).await
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        let resp = self.http.get(format!("{}{path}", self.base)).send().await?;
        Self::decode(resp).await
    }

    pub async fn episode_hints(&self, req: &EpisodeHintsRequest) -> Result<HintsResponse, ClientError> {
        self.post("/v1/hints/episode", req).await
    }

    pub async fn step_hints(&self, req: &StepHintsRequest) -> Result<HintsResponse, ClientError> {
        self.post("/v1/hints/step", req).await
    }

    pub async fn docs_search(&self, req: &DocsSearchRequest) -> Result<DocsSearchResponse, ClientError> {
        self.post("/v1/docs/search", req).await
    }

    pub async fn stats(&self) -> Result<StatsResponse, ClientError> {
        self.get("/v1/stats").await
    }

    pub async fn health(&self) -> Result<HealthResponse, ClientError> {
        self.get("/v1/healthz").await
    }
}
