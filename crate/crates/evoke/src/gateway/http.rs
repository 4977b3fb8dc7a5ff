//! HTTP backend speaking chat-completion-style JSON endpoints.
//!
//! Chat goes to `POST {base}/chat/completions` with inline base64 image
//! attachments; embeddings go to `POST {base}/embeddings`, where image inputs
//! are sent as `{"image": "<base64>"}` objects. Connection errors, timeouts,
//! and 5xx/429 statuses are transient (retryable); other non-success statuses
//! are refusals.

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::backend::{Backend, BackendReply, ChatRequest, GatewayError, LoadedImage, TokenUsage};

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    base_url: String,
    auth_token: Option<String>,
    backend_id: String,
}

impl HttpBackend {
    pub fn new(base_url: &str, auth_token: Option<String>) -> Result<HttpBackend, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .connect_timeout(Duration::from_secs(10))
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| GatewayError::Transport {
                message: e.to_string(),
                attempts: 0,
            })?;
        Ok(HttpBackend {
            client,
            base_url: base_url.trim_end_matches('/').to_string(),
            auth_token,
            backend_id: base_url.trim_end_matches('/').to_string(),
        })
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let mut req = self
            .client
            .post(format!("{}{}", self.base_url, path))
            .json(body);
        if let Some(token) = &self.auth_token {
            req = req.bearer_auth(token);
        }
        let response = req.send().map_err(|e| GatewayError::Transport {
            message: e.to_string(),
            attempts: 1,
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| GatewayError::Transport {
            message: e.to_string(),
            attempts: 1,
        })?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(GatewayError::Transport {
                message: format!("status {status}: {text}"),
                attempts: 1,
            });
        }
        if !status.is_success() {
            return Err(GatewayError::Refusal {
                status: status.as_u16(),
                message: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| GatewayError::Transport {
            message: format!("unparseable response body: {e}"),
            attempts: 1,
        })
    }
}

fn data_url(image: &LoadedImage) -> String {
    format!(
        "data:application/octet-stream;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(&image.bytes)
    )
}

fn extract_embedding(body: &Value) -> Result<Vec<f64>, GatewayError> {
    body["data"][0]["embedding"]
        .as_array()
        .map(|values| values.iter().filter_map(Value::as_f64).collect::<Vec<_>>())
        .filter(|v: &Vec<f64>| !v.is_empty())
        .ok_or_else(|| GatewayError::Transport {
            message: "embeddings response lacks data[0].embedding".into(),
            attempts: 1,
        })
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.backend_id
    }

    fn kind(&self) -> &'static str {
        "http"
    }

    fn chat(
        &self,
        request: &ChatRequest,
        images: &[LoadedImage],
        _request_digest: &str,
    ) -> Result<BackendReply, GatewayError> {
        let user_content = if images.is_empty() {
            json!(request.user_text)
        } else {
            let mut parts = vec![json!({"type": "text", "text": request.user_text})];
            for image in images {
                parts.push(json!({
                    "type": "image_url",
                    "image_url": {"url": data_url(image)}
                }));
            }
            json!(parts)
        };
        let mut messages = Vec::new();
        if let Some(system) = &request.system_text {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": user_content}));
        let body = json!({
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let reply = self.post("/chat/completions", &body)?;
        let text = reply["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| GatewayError::Transport {
                message: "chat response lacks choices[0].message.content".into(),
                attempts: 1,
            })?
            .to_string();
        let usage = TokenUsage {
            prompt_tokens: reply["usage"]["prompt_tokens"].as_u64().unwrap_or(0) as u32,
            completion_tokens: reply["usage"]["completion_tokens"].as_u64().unwrap_or(0) as u32,
        };
        Ok(BackendReply { text, usage })
    }

    fn embed_text(&self, model_id: &str, text: &str) -> Result<Vec<f64>, GatewayError> {
        let body = json!({"model": model_id, "input": text});
        extract_embedding(&self.post("/embeddings", &body)?)
    }

    fn embed_image(&self, model_id: &str, image: &LoadedImage) -> Result<Vec<f64>, GatewayError> {
        let encoded = base64::engine::general_purpose::STANDARD.encode(&image.bytes);
        let body = json!({"model": model_id, "input": [{"image": encoded}]});
        extract_embedding(&self.post("/embeddings", &body)?)
    }
}
