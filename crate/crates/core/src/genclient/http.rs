//! Hosted text-to-image services. Both adapters speak JSON over HTTP and
//! return base64 PNG payloads; they differ in request shape and in how a
//! content-policy refusal is signalled.

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};
use ureq::Agent;

use super::{Backend, BackendConfig, GenError, GenRequest};

const MAX_BODY: u64 = 64 * 1024 * 1024;

struct HttpClient {
    backend: String,
    endpoint: String,
    key: String,
    model: Option<String>,
    agent: Agent,
}

struct Reply {
    status: u16,
    body: Value,
}

impl HttpClient {
    fn new(cfg: &BackendConfig) -> Result<Self, GenError> {
        cfg.validate()?;
        let key = cfg.credential()?;
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpClient {
            backend: cfg.backend_id.clone(),
            endpoint: cfg.endpoint.clone().unwrap_or_default(),
            key,
            model: cfg.model.clone(),
            agent,
        })
    }

    fn transient(&self, message: impl Into<String>) -> GenError {
        GenError::Transient {
            backend: self.backend.clone(),
            message: message.into(),
        }
    }

    fn post(&self, body: &Value) -> Result<Reply, GenError> {
        let resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.key))
            .header("Content-Type", "application/json")
            .header("Accept", "application/json")
            .send(body.to_string());
        let mut resp = match resp {
            Ok(r) => r,
            // connection refused, reset, timeouts
            Err(e) => return Err(self.transient(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY)
            .read_to_string()
            .map_err(|e| self.transient(e.to_string()))?;
        let body = serde_json::from_str(&text).unwrap_or(Value::String(text));
        Ok(Reply { status, body })
    }

    /// Maps status codes not already claimed by the adapter.
    fn status_error(&self, reply: &Reply, message: String) -> GenError {
        if reply.status == 429 || reply.status >= 500 {
            self.transient(format!("HTTP {}: {message}", reply.status))
        } else {
            GenError::Http {
                backend: self.backend.clone(),
                status: reply.status,
                message,
            }
        }
    }

    fn decode(&self, b64: Option<&str>) -> Result<Vec<u8>, GenError> {
        let b64 = b64.ok_or_else(|| GenError::BadImage {
            backend: self.backend.clone(),
            message: "response carries no image payload".into(),
        })?;
        base64::engine::general_purpose::STANDARD
            .decode(b64)
            .map_err(|e| GenError::BadImage {
                backend: self.backend.clone(),
                message: format!("base64: {e}"),
            })
    }
}

fn message_of(body: &Value) -> String {
    body.pointer("/error/message")
        .or_else(|| body.get("message"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| body.to_string())
}

/// `POST {prompt, n: 1, size: "WxH", response_format: "b64_json"}`.
/// Refusals arrive as HTTP 400 with `error.code == "content_policy_violation"`.
pub struct OpenAiImagesBackend {
    http: HttpClient,
}

impl OpenAiImagesBackend {
    pub fn new(cfg: &BackendConfig) -> Result<Self, GenError> {
        Ok(OpenAiImagesBackend {
            http: HttpClient::new(cfg)?,
        })
    }

    fn body(&self, req: &GenRequest) -> Value {
        let mut body = json!({
            "prompt": req.prompt,
            "n": 1,
            "size": format!("{}x{}", req.width, req.height),
            "response_format": "b64_json",
        });
        if let Some(m) = &self.http.model {
            body["model"] = json!(m);
        }
        body
    }
}

impl Backend for OpenAiImagesBackend {
    fn id(&self) -> &str {
        &self.http.backend
    }

    fn call(&self, req: &GenRequest) -> Result<Vec<u8>, GenError> {
        let reply = self.http.post(&self.body(req))?;
        if reply.status == 200 {
            return self
                .http
                .decode(reply.body.pointer("/data/0/b64_json").and_then(Value::as_str));
        }
        let code = reply.body.pointer("/error/code").and_then(Value::as_str);
        if reply.status == 400 && code == Some("content_policy_violation") {
            return Err(GenError::PolicyRejected {
                backend: self.http.backend.clone(),
                reason: message_of(&reply.body),
            });
        }
        Err(self.http.status_error(&reply, message_of(&reply.body)))
    }
}

/// `POST {text_prompts: [{text}], width, height, seed, samples: 1}`.
/// Refusals arrive either as HTTP 400 `{name: "invalid_prompts"}` or as a 200
/// whose artifact has `finishReason == "CONTENT_FILTERED"`.
pub struct StabilityBackend {
    http: HttpClient,
}

impl StabilityBackend {
    pub fn new(cfg: &BackendConfig) -> Result<Self, GenError> {
        Ok(StabilityBackend {
            http: HttpClient::new(cfg)?,
        })
    }

    fn body(&self, req: &GenRequest) -> Value {
        let mut body = json!({
            "text_prompts": [{"text": req.prompt}],
            "width": req.width,
            "height": req.height,
            "samples": 1,
        });
        if let Some(seed) = req.seed {
            // the service takes a 32-bit seed
            body["seed"] = json!(seed % (1u64 << 32));
        }
        body
    }
}

impl Backend for StabilityBackend {
    fn id(&self) -> &str {
        &self.http.backend
    }

    fn call(&self, req: &GenRequest) -> Result<Vec<u8>, GenError> {
        let reply = self.http.post(&self.body(req))?;
        if reply.status == 200 {
            let art = reply.body.pointer("/artifacts/0");
            let finish = art
                .and_then(|a| a.get("finishReason"))
                .and_then(Value::as_str)
                .unwrap_or("SUCCESS");
            if finish == "CONTENT_FILTERED" {
                return Err(GenError::PolicyRejected {
                    backend: self.http.backend.clone(),
                    reason: "CONTENT_FILTERED".into(),
                });
            }
            return self
                .http
                .decode(art.and_then(|a| a.get("base64")).and_then(Value::as_str));
        }
        if reply.status == 400
            && reply.body.get("name").and_then(Value::as_str) == Some("invalid_prompts")
        {
            return Err(GenError::PolicyRejected {
                backend: self.http.backend.clone(),
                reason: message_of(&reply.body),
            });
        }
        Err(self.http.status_error(&reply, message_of(&reply.body)))
    }
}
