//! Vision chat-completion providers: the HTTP client and a deterministic mock.

mod mock;
mod openai;

use std::fmt;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingestion::EncodedImage;
use crate::prompting::PromptBundle;
use crate::secret::ApiKey;

pub use mock::{make_mock_provider, MockMode, MockProvider, MockProviderSpec, MALFORMED_REPLY};
pub use openai::{build_chat_body, OpenAiProvider};

pub const API_KEY_ENV: &str = "PSCI_LLM_API_KEY";
pub const BASE_URL_ENV: &str = "PSCI_LLM_BASE_URL";
pub const MODEL_ENV: &str = "PSCI_LLM_MODEL";

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_BACKOFF_BASE: Duration = Duration::from_secs(1);

#[derive(Clone)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key: ApiKey,
    pub temperature: Option<f64>,
    pub request_timeout: Duration,
    pub max_attempts: u32,
    pub backoff_base: Duration,
}

impl fmt::Debug for ProviderConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProviderConfig")
            .field("base_url", &self.base_url)
            .field("model_name", &self.model_name)
            .field("api_key", &self.api_key)
            .field("temperature", &self.temperature)
            .field("request_timeout", &self.request_timeout)
            .field("max_attempts", &self.max_attempts)
            .field("backoff_base", &self.backoff_base)
            .finish()
    }
}

impl ProviderConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>, api_key: ApiKey) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key,
            temperature: None,
            request_timeout: DEFAULT_TIMEOUT,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            backoff_base: DEFAULT_BACKOFF_BASE,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        let bad = |msg: &str| ProviderError::new(ProviderErrorKind::BadRequest(msg.to_string()), 0);
        if self.max_attempts < 1 {
            return Err(bad("max_attempts must be at least 1"));
        }
        if self.request_timeout.is_zero() {
            return Err(bad("request_timeout must be positive"));
        }
        if let Some(t) = self.temperature {
            if !(t >= 0.0) {
                return Err(bad("temperature must be non-negative"));
            }
        }
        Ok(())
    }
}

/// An earlier assistant reply and the corrective user message that followed it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FollowUp {
    pub assistant_reply: String,
    pub user_correction: String,
}

#[derive(Debug, Clone)]
pub struct AssessmentRequest {
    pub bundle: PromptBundle,
    pub image: EncodedImage,
    /// Which run of the model this request belongs to.
    pub run_index: u32,
    /// Conversation continuation for re-asks; empty on the first ask.
    pub followups: Vec<FollowUp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssessmentResponse {
    pub raw_text: String,
    pub latency: Duration,
    pub token_usage: Option<TokenUsage>,
    pub attempts_used: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderErrorKind {
    #[error("authentication rejected")]
    Auth,
    #[error("rate limited")]
    RateLimited,
    #[error("request timed out")]
    Timeout,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("server error (HTTP {0})")]
    Server(u16),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    InvalidResponse(String),
    #[error("no truth rating for image '{0}'")]
    MissingTruth(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} (attempts used: {attempts_used})")]
pub struct ProviderError {
    pub kind: ProviderErrorKind,
    pub attempts_used: u32,
}

impl ProviderError {
    pub fn new(kind: ProviderErrorKind, attempts_used: u32) -> Self {
        Self {
            kind,
            attempts_used,
        }
    }
}

/// A shareable handle that turns one prompt plus one image into raw text.
pub trait VisionProvider: Send + Sync {
    /// Human-readable identity, never containing credentials.
    fn descriptor(&self) -> String;

    fn assess_image(&self, request: &AssessmentRequest) -> Result<AssessmentResponse, ProviderError>;
}

/// Full-jitter exponential delay before retry number `attempt` (1-based count
/// of failed attempts so far): uniform in `[0, base * 2^(attempt-1)]`.
pub fn backoff_delay(base: Duration, attempt: u32) -> Duration {
    let cap = base.saturating_mul(1u32 << (attempt.saturating_sub(1)).min(16));
    if cap.is_zero() {
        return Duration::ZERO;
    }
    let nanos = rand::rng().random_range(0..=cap.as_nanos().min(u128::from(u64::MAX)) as u64);
    Duration::from_nanos(nanos)
}

/// Runs `provider.assess_image` for one request.
pub fn assess_image(
    provider: &dyn VisionProvider,
    request: &AssessmentRequest,
) -> Result<AssessmentResponse, ProviderError> {
    provider.assess_image(request)
}
