#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use marginalia_core::config::{EngineConfig, SessionIdStrategy};
use marginalia_core::engine::Engine;
use marginalia_core::gateway::{Gateway, LlmSettings, MockBackend};

pub struct Harness {
    pub app: Router,
    pub engine: Arc<Engine>,
    pub mock: Arc<MockBackend>,
}

pub fn harness(root: &Path) -> Harness {
    harness_with(root, MockBackend::new())
}

pub fn harness_with(root: &Path, mock: MockBackend) -> Harness {
    let mock = Arc::new(mock);
    let gw = Gateway::new(mock.clone(), LlmSettings::default());
    let config = EngineConfig {
        data_root: root.to_path_buf(),
        session_ids: SessionIdStrategy::Sequential,
        ..EngineConfig::default()
    };
    let engine = Arc::new(Engine::with_gateway(config, gw).unwrap());
    Harness {
        app: marginalia_server::router(engine.clone()),
        engine,
        mock,
    }
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("not JSON ({e}): {}", String::from_utf8_lossy(&self.body)))
    }

    pub fn text(&self) -> String {
        String::from_utf8(self.body.clone()).unwrap()
    }

    pub fn error_code(&self) -> String {
        self.json()["error"]["code"].as_str().unwrap_or_default().to_string()
    }
}

pub async fn send(app: &Router, req: Request<Body>) -> Reply {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let content_type = res
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
        .to_string();
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, content_type, body }
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    send(app, req.body(body).unwrap()).await
}

const BOUNDARY: &str = "marginalia-test-boundary";

pub fn multipart(fields: &[(&str, &[u8])]) -> Request<Body> {
    let mut body = Vec::new();
    for (name, value) in fields {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        body.extend_from_slice(
            format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{name}\"\r\n\r\n").as_bytes(),
        );
        body.extend_from_slice(value);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    Request::builder()
        .method(Method::POST)
        .uri("/sessions")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap()
}

pub async fn upload(app: &Router, bytes: &[u8]) -> String {
    let reply = send(app, multipart(&[("manuscript", bytes)])).await;
    assert_eq!(reply.status, StatusCode::CREATED, "{}", reply.text());
    reply.json()["session_id"].as_str().unwrap().to_string()
}
