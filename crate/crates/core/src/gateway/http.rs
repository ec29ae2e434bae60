//! OpenAI-compatible chat-completions backend.

use serde_json::{json, Value};

use super::{Backend, BackendKind, Completion, GatewayError, GatewayRequest, LlmSettings};

#[derive(Debug, Clone)]
pub struct HttpBackend {
    endpoint: String,
    model_name: String,
    credential_env: String,
    timeout: std::time::Duration,
}

impl HttpBackend {
    pub fn from_settings(settings: &LlmSettings) -> Result<Self, GatewayError> {
        let endpoint = settings
            .endpoint
            .clone()
            .filter(|e| !e.trim().is_empty())
            .ok_or_else(|| GatewayError::InvalidRequest("llm.endpoint is required for the http backend".into()))?;
        Ok(HttpBackend {
            endpoint,
            model_name: settings.model_name.clone(),
            credential_env: settings.credential_env.clone(),
            timeout: settings.timeout(),
        })
    }

    fn credential(&self) -> Result<String, GatewayError> {
        match std::env::var(&self.credential_env) {
            Ok(v) if !v.trim().is_empty() => Ok(v),
            _ => Err(GatewayError::AuthFailure(format!(
                "environment variable {} is not set",
                self.credential_env
            ))),
        }
    }
}

impl Backend for HttpBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Http
    }

    fn complete(&self, request: &GatewayRequest) -> Result<Completion, GatewayError> {
        let key = self.credential()?;
        // A blocking client owns a runtime, so it is built on the calling
        // worker thread rather than shared.
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| GatewayError::BackendError {
                message: e.to_string(),
                transient: false,
            })?;
        let body = json!({
            "model": self.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let response = client
            .post(&self.endpoint)
            .bearer_auth(key)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    GatewayError::Timeout(self.timeout)
                } else {
                    GatewayError::BackendError {
                        message: e.to_string(),
                        transient: true,
                    }
                }
            })?;
        let status = response.status();
        let text = response.text().unwrap_or_default();
        match status.as_u16() {
            200..=299 => parse_chat_completion(&text),
            401 | 403 => Err(GatewayError::AuthFailure(format!("backend answered {status}"))),
            429 => Err(GatewayError::RateLimited),
            s => Err(GatewayError::BackendError {
                message: format!("backend answered {status}: {}", text.chars().take(200).collect::<String>()),
                transient: s >= 500,
            }),
        }
    }
}

fn parse_chat_completion(body: &str) -> Result<Completion, GatewayError> {
    let bad = |what: &str| GatewayError::BackendError {
        message: format!("malformed completion: {what}"),
        transient: false,
    };
    let v: Value = serde_json::from_str(body).map_err(|_| bad("not JSON"))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("no choices[0].message.content"))?;
    let usage = match (
        v.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        v.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    ) {
        (Some(i), Some(o)) => Some((i, o)),
        _ => None,
    };
    Ok(Completion {
        text: text.to_string(),
        token_usage: usage,
    })
}
