//! OpenAI-compatible chat-completions transport.
//!
//! Parts map to one user message in bundle order: text parts become `text`
//! items and image refs become `image_url` items holding base64 PNG data
//! URLs. Temperature is fixed at 0.

use std::sync::OnceLock;
use std::time::Duration;

use base64::Engine;
use lumen_core::prompt::MessagePart;
use serde_json::{json, Value};

use super::{redact, LvmRequest, LvmTransport, TransportError, TransportReply};

pub const OPENAI_PROVIDER: &str = "openai";
pub const DEFAULT_MODEL: &str = "gpt-4o";

pub struct OpenAiTransport {
    client: OnceLock<Result<reqwest::blocking::Client, String>>,
}

impl OpenAiTransport {
    pub fn new() -> Self {
        Self {
            client: OnceLock::new(),
        }
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, TransportError> {
        self.client
            .get_or_init(|| {
                let _ = rustls::crypto::ring::default_provider().install_default();
                reqwest::blocking::Client::builder()
                    .build()
                    .map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|e| TransportError::Transient(format!("http client: {e}")))
    }
}

impl Default for OpenAiTransport {
    fn default() -> Self {
        Self::new()
    }
}

/// Request body for `req`.
pub fn request_body(req: &LvmRequest<'_>) -> Value {
    let mut images = req.images.iter();
    let content: Vec<Value> = req
        .bundle
        .parts
        .iter()
        .map(|p| match p {
            MessagePart::Text { text } => json!({"type": "text", "text": text}),
            MessagePart::ImageRef { .. } => {
                let (_, png) = images.next().expect("one image per image ref");
                let b64 = base64::engine::general_purpose::STANDARD.encode(png);
                json!({
                    "type": "image_url",
                    "image_url": {"url": format!("data:image/png;base64,{b64}")}
                })
            }
        })
        .collect();
    json!({
        "model": req.config.model.as_deref().unwrap_or(DEFAULT_MODEL),
        "temperature": 0,
        "max_tokens": req.config.max_output_tokens,
        "messages": [{"role": "user", "content": content}],
    })
}

/// Debug rendering of a request body with image payloads elided.
fn loggable(body: &Value) -> String {
    let mut b = body.clone();
    if let Some(items) = b
        .pointer_mut("/messages/0/content")
        .and_then(Value::as_array_mut)
    {
        for item in items {
            if let Some(url) = item.pointer_mut("/image_url/url") {
                let n = url.as_str().map_or(0, str::len);
                *url = Value::String(format!("<{n} bytes of image data>"));
            }
        }
    }
    b.to_string()
}

pub fn parse_reply(body: &str) -> Result<TransportReply, TransportError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| TransportError::Malformed(e.to_string()))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| TransportError::Malformed("no choices[0].message.content".into()))?;
    let usage = match (
        v.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        v.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    ) {
        (Some(i), Some(o)) => Some((i, o)),
        _ => None,
    };
    Ok(TransportReply {
        text: text.to_string(),
        token_usage: usage,
    })
}

impl LvmTransport for OpenAiTransport {
    fn requires_credential(&self) -> bool {
        true
    }

    fn send(&self, req: &LvmRequest<'_>) -> Result<TransportReply, TransportError> {
        let body = request_body(req);
        let secret = req.credential;
        tracing::debug!(
            endpoint = %req.config.endpoint,
            body = %redact(&loggable(&body), secret),
            "lvm request"
        );
        let mut builder = self
            .client()?
            .post(&req.config.endpoint)
            .timeout(Duration::from_secs_f64(req.config.timeout))
            .json(&body);
        if let Some(key) = secret {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| {
            let msg = redact(&e.to_string(), secret);
            if e.is_timeout() {
                TransportError::Timeout(msg)
            } else {
                TransportError::Transient(msg)
            }
        })?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout(e.to_string())
            } else {
                TransportError::Transient(e.to_string())
            }
        })?;
        let text = redact(&text, secret);
        tracing::debug!(status, body = %text, "lvm response");
        match status {
            200..=299 => parse_reply(&text),
            401 | 403 => Err(TransportError::Auth(format!("status {status}"))),
            429 => Err(TransportError::RateLimited(text)),
            500..=599 => Err(TransportError::Transient(format!("status {status}"))),
            _ => Err(TransportError::Rejected {
                status,
                message: text,
            }),
        }
    }
}
