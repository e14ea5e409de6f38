//! Client for a remote embedding service.
//!
//! `POST {endpoint}/embed` with
//! `{"items":[{"id":..,"kind":"text","text":..} | {"id":..,"kind":"image","image_b64":..}]}`,
//! answered by `{"dim":N,"vectors":[{"id":..,"values":[..]}]}`.

use std::collections::HashMap;
use std::io::Read;
use std::thread;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::dataset::{EmbeddingDataset, Kind};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    Text(String),
    Image(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FetchItem {
    pub id: String,
    pub payload: Payload,
}

impl FetchItem {
    pub fn text(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            payload: Payload::Text(text.into()),
        }
    }

    pub fn image(id: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            id: id.into(),
            payload: Payload::Image(bytes),
        }
    }

    pub fn kind(&self) -> Kind {
        match self.payload {
            Payload::Text(_) => Kind::Text,
            Payload::Image(_) => Kind::Image,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClientConfig {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub initial_backoff: Duration,
    pub timeout: Duration,
    pub max_request_bytes: usize,
    pub max_response_bytes: usize,
    pub bearer_token: Option<String>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(250),
            timeout: Duration::from_secs(60),
            max_request_bytes: 64 << 20,
            max_response_bytes: 256 << 20,
            bearer_token: None,
        }
    }
}

#[derive(Serialize)]
struct WireItem<'a> {
    id: &'a str,
    kind: Kind,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_b64: Option<String>,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    items: Vec<WireItem<'a>>,
}

#[derive(Deserialize)]
struct WireVector {
    id: String,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct WireResponse {
    dim: usize,
    vectors: Vec<WireVector>,
}

fn request_body(items: &[FetchItem]) -> Result<Vec<u8>> {
    let b64 = base64::engine::general_purpose::STANDARD;
    let items = items
        .iter()
        .map(|it| match &it.payload {
            Payload::Text(t) => WireItem {
                id: &it.id,
                kind: Kind::Text,
                text: Some(t),
                image_b64: None,
            },
            Payload::Image(bytes) => WireItem {
                id: &it.id,
                kind: Kind::Image,
                text: None,
                image_b64: Some(b64.encode(bytes)),
            },
        })
        .collect();
    Ok(serde_json::to_vec(&WireRequest { items })?)
}

/// Checks the response against the request and assembles a dataset in
/// request order.
fn assemble(items: &[FetchItem], body: &[u8]) -> Result<EmbeddingDataset> {
    let resp: WireResponse =
        serde_json::from_slice(body).map_err(|e| Error::BadResponse(format!("invalid JSON: {e}")))?;
    let dim = u32::try_from(resp.dim)
        .ok()
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::BadResponse(format!("invalid dim {}", resp.dim)))?;
    let mut by_id: HashMap<&str, &[f64]> = HashMap::with_capacity(resp.vectors.len());
    for v in &resp.vectors {
        if v.values.len() != resp.dim {
            return Err(Error::DimMismatch {
                left: resp.dim,
                right: v.values.len(),
            });
        }
        if by_id.insert(&v.id, &v.values).is_some() {
            return Err(Error::BadResponse(format!("id {} returned twice", v.id)));
        }
    }
    let mut ds = EmbeddingDataset::new(dim)?;
    for it in items {
        let values = by_id
            .remove(it.id.as_str())
            .ok_or_else(|| Error::MissingId(it.id.clone()))?;
        if values.iter().any(|v| !v.is_finite() || v.abs() > f64::from(f32::MAX)) {
            return Err(Error::BadResponse(format!("{} has values outside f32 range", it.id)));
        }
        ds.push(it.id.clone(), it.kind(), values.iter().map(|&v| v as f32).collect())?;
    }
    if let Some(extra) = by_id.keys().next() {
        return Err(Error::BadResponse(format!("unrequested id {extra}")));
    }
    Ok(ds)
}

enum Failure {
    Transient(Error),
    Fatal(Error),
}

fn attempt(client: &reqwest::blocking::Client, url: &str, body: &[u8], cfg: &ClientConfig) -> std::result::Result<Vec<u8>, Failure> {
    let mut req = client
        .post(url)
        .header(reqwest::header::CONTENT_TYPE, "application/json")
        .body(body.to_vec());
    if let Some(token) = &cfg.bearer_token {
        req = req.bearer_auth(token);
    }
    let resp = req
        .send()
        .map_err(|e| Failure::Transient(Error::Network(e.to_string())))?;
    let status = resp.status();
    if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
        return Err(Failure::Transient(Error::Network(format!("server returned {status}"))));
    }
    if !status.is_success() {
        return Err(Failure::Fatal(Error::BadResponse(format!("server returned {status}"))));
    }
    let mut out = Vec::new();
    resp.take(cfg.max_response_bytes as u64 + 1)
        .read_to_end(&mut out)
        .map_err(|e| Failure::Transient(Error::Network(e.to_string())))?;
    if out.len() > cfg.max_response_bytes {
        return Err(Failure::Fatal(Error::BadResponse(format!(
            "response exceeds {} bytes",
            cfg.max_response_bytes
        ))));
    }
    Ok(out)
}

/// Embeds `items` remotely. An empty list returns an empty dataset
/// without touching the network.
pub fn fetch_embeddings(endpoint: &str, items: &[FetchItem], cfg: &ClientConfig) -> Result<EmbeddingDataset> {
    if items.is_empty() {
        return EmbeddingDataset::new(1);
    }
    let body = request_body(items)?;
    if body.len() > cfg.max_request_bytes {
        return Err(Error::Config(format!(
            "request of {} bytes exceeds the {} byte cap",
            body.len(),
            cfg.max_request_bytes
        )));
    }
    let client = reqwest::blocking::Client::builder()
        .timeout(cfg.timeout)
        .build()
        .map_err(|e| Error::Network(e.to_string()))?;
    let url = format!("{}/embed", endpoint.trim_end_matches('/'));
    let mut delay = cfg.initial_backoff;
    let attempts = cfg.attempts.max(1);
    for n in 1..=attempts {
        match attempt(&client, &url, &body, cfg) {
            Ok(bytes) => return assemble(items, &bytes),
            Err(Failure::Fatal(e)) => return Err(e),
            Err(Failure::Transient(e)) if n == attempts => return Err(e),
            Err(Failure::Transient(e)) => {
                log::warn!("attempt {n}/{attempts} failed: {e}; retrying in {delay:?}");
                thread::sleep(delay);
                delay *= 2;
            }
        }
    }
    unreachable!("loop returns on the last attempt")
}
