//! OpenAI-compatible `POST <base_url>/chat/completions` client.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{
    backoff_delay, AssessmentRequest, AssessmentResponse, ProviderConfig, ProviderError,
    ProviderErrorKind, TokenUsage, VisionProvider,
};
use crate::http::{redact, HttpRequest, HttpTransport, Method, TransportError};

pub struct OpenAiProvider {
    config: ProviderConfig,
    transport: Arc<dyn HttpTransport>,
    sleep: fn(Duration),
}

impl OpenAiProvider {
    pub fn new(config: ProviderConfig, transport: Arc<dyn HttpTransport>) -> Result<Self, ProviderError> {
        config.validate()?;
        Ok(Self {
            config,
            transport,
            sleep: std::thread::sleep,
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn scrub(&self, text: &str) -> String {
        redact(text, self.config.api_key.expose())
    }
}

/// Chat-completions body: optional system message, one user message carrying
/// text and the image as a data URL, then any re-ask turns.
pub fn build_chat_body(
    model_name: &str,
    temperature: Option<f64>,
    request: &AssessmentRequest,
) -> Value {
    let mut messages = Vec::new();
    if !request.bundle.system_text.is_empty() {
        messages.push(json!({"role": "system", "content": request.bundle.system_text}));
    }
    let (before, after) = request.bundle.split_at_image();
    let mut parts = Vec::new();
    if !before.is_empty() {
        parts.push(json!({"type": "text", "text": before}));
    }
    parts.push(json!({"type": "image_url", "image_url": {"url": request.image.data_url()}}));
    if !after.is_empty() {
        parts.push(json!({"type": "text", "text": after}));
    }
    messages.push(json!({"role": "user", "content": parts}));
    for f in &request.followups {
        messages.push(json!({"role": "assistant", "content": f.assistant_reply}));
        messages.push(json!({"role": "user", "content": f.user_correction}));
    }
    let mut body = json!({"model": model_name, "messages": messages});
    if let Some(t) = temperature {
        body["temperature"] = json!(t);
    }
    body
}

enum AttemptError {
    Retryable(ProviderErrorKind),
    Fatal(ProviderErrorKind),
}

fn extract_content(body: &[u8]) -> Result<(String, Option<TokenUsage>), ProviderErrorKind> {
    let value: Value = serde_json::from_slice(body)
        .map_err(|e| ProviderErrorKind::InvalidResponse(format!("body is not JSON: {e}")))?;
    let content = &value["choices"][0]["message"]["content"];
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(""),
        _ => {
            return Err(ProviderErrorKind::InvalidResponse(
                "missing choices[0].message.content".into(),
            ))
        }
    };
    let usage = value.get("usage").and_then(|u| {
        Some(TokenUsage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
            completion_tokens: u.get("completion_tokens")?.as_u64()?,
        })
    });
    Ok((text, usage))
}

impl OpenAiProvider {
    fn attempt(&self, payload: &[u8]) -> Result<(String, Option<TokenUsage>), AttemptError> {
        let request = HttpRequest {
            method: Method::Post,
            url: self.endpoint(),
            headers: vec![
                ("Content-Type".into(), "application/json".into()),
                (
                    "Authorization".into(),
                    format!("Bearer {}", self.config.api_key.expose()),
                ),
            ],
            body: Some(payload.to_vec()),
            timeout: self.config.request_timeout,
        };
        let response = match self.transport.execute(&request) {
            Ok(r) => r,
            Err(TransportError::Timeout) => return Err(AttemptError::Retryable(ProviderErrorKind::Timeout)),
            Err(TransportError::Io(msg)) => {
                return Err(AttemptError::Fatal(ProviderErrorKind::Transport(self.scrub(&msg))))
            }
        };
        let detail = || {
            let text = String::from_utf8_lossy(&response.body);
            let text: String = text.chars().take(500).collect();
            self.scrub(&text)
        };
        match response.status {
            200..=299 => extract_content(&response.body).map_err(AttemptError::Fatal),
            401 | 403 => Err(AttemptError::Fatal(ProviderErrorKind::Auth)),
            408 => Err(AttemptError::Retryable(ProviderErrorKind::Timeout)),
            429 => Err(AttemptError::Retryable(ProviderErrorKind::RateLimited)),
            500..=599 => Err(AttemptError::Retryable(ProviderErrorKind::Server(response.status))),
            status => Err(AttemptError::Fatal(ProviderErrorKind::BadRequest(format!(
                "HTTP {status}: {}",
                detail()
            )))),
        }
    }
}

impl VisionProvider for OpenAiProvider {
    fn descriptor(&self) -> String {
        format!(
            "openai-compatible:{}@{}",
            self.config.model_name, self.config.base_url
        )
    }

    fn assess_image(&self, request: &AssessmentRequest) -> Result<AssessmentResponse, ProviderError> {
        if request.image.base64_payload.is_empty() {
            return Err(ProviderError::new(
                ProviderErrorKind::BadRequest("image payload is empty".into()),
                0,
            ));
        }
        let body = build_chat_body(&self.config.model_name, self.config.temperature, request);
        let payload = serde_json::to_vec(&body).expect("request body serializes");
        let started = Instant::now();
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.attempt(&payload) {
                Ok((raw_text, token_usage)) => {
                    return Ok(AssessmentResponse {
                        raw_text,
                        latency: started.elapsed(),
                        token_usage,
                        attempts_used: attempt,
                    })
                }
                Err(AttemptError::Fatal(kind)) => return Err(ProviderError::new(kind, attempt)),
                Err(AttemptError::Retryable(kind)) => {
                    if attempt >= self.config.max_attempts {
                        return Err(ProviderError::new(kind, attempt));
                    }
                    log::debug!("transient failure ({kind}); retrying, attempt {attempt}");
                    (self.sleep)(backoff_delay(self.config.backoff_base, attempt));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::{HttpResponse, ScriptedTransport};
    use crate::ingestion::EncodedImage;
    use crate::llm::FollowUp;
    use crate::prompting::{builtin_model_config, render_prompt};
    use crate::secret::ApiKey;

    const KEY: &str = "sk-test-SECRET";

    fn request() -> AssessmentRequest {
        let bundle = render_prompt(
            &builtin_model_config("model2").unwrap(),
            &crate::domain::builtin_psci_rubric(),
        );
        AssessmentRequest {
            bundle,
            image: EncodedImage::from_bytes("img1", b"\xFF\xD8\xFFjpeg").unwrap(),
            run_index: 0,
            followups: Vec::new(),
        }
    }

    fn provider(script: Vec<Result<HttpResponse, TransportError>>, max_attempts: u32) -> (OpenAiProvider, Arc<ScriptedTransport>) {
        let transport = Arc::new(ScriptedTransport::new(script));
        let mut cfg = ProviderConfig::new("http://llm.local/v1/", "vision-model", ApiKey::new(KEY));
        cfg.max_attempts = max_attempts;
        cfg.backoff_base = Duration::ZERO;
        let p = OpenAiProvider::new(cfg, transport.clone()).unwrap();
        (p, transport)
    }

    fn ok(text: &str) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse::new(
            200,
            Some("application/json"),
            json!({"choices":[{"message":{"role":"assistant","content":text}}],
                   "usage":{"prompt_tokens":900,"completion_tokens":1}})
            .to_string(),
        ))
    }

    fn status(code: u16, body: &str) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse::new(code, Some("application/json"), body))
    }

    #[test]
    fn success_returns_text_and_usage() {
        let (p, t) = provider(vec![ok("7")], 3);
        let resp = p.assess_image(&request()).unwrap();
        assert_eq!(resp.raw_text, "7");
        assert_eq!(resp.attempts_used, 1);
        assert_eq!(resp.token_usage.unwrap().prompt_tokens, 900);
        let sent = &t.requests()[0];
        assert_eq!(sent.url, "http://llm.local/v1/chat/completions");
        assert!(sent.headers.iter().any(|(k, v)| k == "Authorization" && v == &format!("Bearer {KEY}")));
    }

    #[test]
    fn unauthorized_is_not_retried() {
        let (p, t) = provider(vec![status(401, "{}")], 3);
        let err = p.assess_image(&request()).unwrap_err();
        assert_eq!(err.kind, ProviderErrorKind::Auth);
        assert_eq!(err.attempts_used, 1);
        assert_eq!(t.calls(), 1);
    }

    #[test]
    fn rate_limit_then_success() {
        let (p, t) = provider(vec![status(429, ""), status(429, ""), ok("5")], 3);
        let resp = p.assess_image(&request()).unwrap();
        assert_eq!(resp.attempts_used, 3);
        assert_eq!(resp.raw_text, "5");
        assert_eq!(t.calls(), 3);
    }

    #[test]
    fn exhausted_retries_report_last_kind() {
        let (p, t) = provider(vec![status(429, "")], 2);
        let err = p.assess_image(&request()).unwrap_err();
        assert_eq!(err.kind, ProviderErrorKind::RateLimited);
        assert_eq!(err.attempts_used, 2);
        assert_eq!(t.calls(), 2);

        let (p, _) = provider(vec![Err(TransportError::Timeout)], 3);
        let err = p.assess_image(&request()).unwrap_err();
        assert_eq!(err.kind, ProviderErrorKind::Timeout);
        assert_eq!(err.attempts_used, 3);

        let (p, _) = provider(vec![status(503, "")], 2);
        assert_eq!(p.assess_image(&request()).unwrap_err().kind, ProviderErrorKind::Server(503));
    }

    #[test]
    fn client_errors_are_fatal_and_scrubbed() {
        for code in [400u16, 404] {
            let (p, t) = provider(vec![status(code, &format!("bad key {KEY}"))], 3);
            let err = p.assess_image(&request()).unwrap_err();
            assert!(matches!(err.kind, ProviderErrorKind::BadRequest(_)));
            assert_eq!(t.calls(), 1);
            assert!(!err.to_string().contains(KEY));
        }
        let (p, _) = provider(vec![Err(TransportError::Io(format!("dns failure {KEY}")))], 3);
        let err = p.assess_image(&request()).unwrap_err();
        assert!(!err.to_string().contains(KEY));
        assert!(!format!("{:?}", p.config()).contains(KEY));
    }

    #[test]
    fn body_shape() {
        let mut req = request();
        req.followups.push(FollowUp {
            assistant_reply: "maybe".into(),
            user_correction: "Reply with one integer from 1 to 10 only.".into(),
        });
        let body = build_chat_body("m", None, &req);
        let msgs = body["messages"].as_array().unwrap();
        assert_eq!(msgs[0]["role"], "system");
        let parts = msgs[1]["content"].as_array().unwrap();
        let images: Vec<_> = parts.iter().filter(|p| p["type"] == "image_url").collect();
        assert_eq!(images.len(), 1);
        assert!(images[0]["image_url"]["url"]
            .as_str()
            .unwrap()
            .starts_with("data:image/jpeg;base64,"));
        assert_eq!(msgs[2]["role"], "assistant");
        assert_eq!(msgs[3]["role"], "user");
        assert!(body.get("temperature").is_none());
        assert_eq!(build_chat_body("m", Some(0.2), &req)["temperature"], 0.2);
    }

    #[test]
    fn array_content_is_concatenated() {
        let body = json!({"choices":[{"message":{"content":[{"type":"text","text":"6"}]}}]}).to_string();
        assert_eq!(extract_content(body.as_bytes()).unwrap().0, "6");
        assert!(extract_content(b"not json").is_err());
    }
}
