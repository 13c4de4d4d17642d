//! Offline provider whose replies are a pure function of
//! `(mode, truth, image_id, run_index, re-ask count)`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AssessmentRequest, AssessmentResponse, ProviderError, ProviderErrorKind, VisionProvider};
use crate::domain::Rating;

/// Reply used by [`MockMode::MalformedThenValid`] before it answers.
pub const MALFORMED_REPLY: &str = "The pavement looks weathered; I cannot give a grade yet.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MockMode {
    EchoTruth,
    Fixed { value: Rating },
    Offset { delta: i64 },
    Noisy { seed: u64, sigma: f64 },
    MalformedThenValid { n_bad: u32 },
}

impl MockMode {
    pub fn needs_truth(&self) -> bool {
        !matches!(self, MockMode::Fixed { .. })
    }

    pub fn name(&self) -> String {
        match self {
            MockMode::EchoTruth => "echo_truth".into(),
            MockMode::Fixed { value } => format!("fixed({value})"),
            MockMode::Offset { delta } => format!("offset({delta:+})"),
            MockMode::Noisy { seed, sigma } => format!("noisy(seed={seed},sigma={sigma})"),
            MockMode::MalformedThenValid { n_bad } => format!("malformed_then_valid({n_bad})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockProviderSpec {
    pub mode: MockMode,
    pub truth: HashMap<String, Rating>,
}

#[derive(Debug)]
pub struct MockProvider {
    spec: MockProviderSpec,
    calls: AtomicUsize,
}

pub fn make_mock_provider(spec: MockProviderSpec) -> MockProvider {
    MockProvider {
        spec,
        calls: AtomicUsize::new(0),
    }
}

fn noise_seed(seed: u64, image_id: &str, run_index: u32) -> u64 {
    let digest = Sha256::digest(format!("{seed}\u{1f}{image_id}\u{1f}{run_index}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl MockProvider {
    /// Number of `assess_image` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn spec(&self) -> &MockProviderSpec {
        &self.spec
    }

    /// Fails on the first image id lacking a truth entry, when the mode needs one.
    pub fn check_coverage<'a>(&self, image_ids: impl IntoIterator<Item = &'a str>) -> Result<(), ProviderError> {
        if !self.spec.mode.needs_truth() {
            return Ok(());
        }
        for id in image_ids {
            if !self.spec.truth.contains_key(id) {
                return Err(ProviderError::new(ProviderErrorKind::MissingTruth(id.to_string()), 0));
            }
        }
        Ok(())
    }

    fn truth(&self, image_id: &str) -> Result<Rating, ProviderError> {
        self.spec
            .truth
            .get(image_id)
            .copied()
            .ok_or_else(|| ProviderError::new(ProviderErrorKind::MissingTruth(image_id.to_string()), 1))
    }

    /// The reply for a request, without counting it as a call.
    pub fn reply(&self, image_id: &str, run_index: u32, reasks: usize) -> Result<String, ProviderError> {
        let rating = match &self.spec.mode {
            MockMode::EchoTruth => self.truth(image_id)?,
            MockMode::Fixed { value } => *value,
            MockMode::Offset { delta } => {
                Rating::clamped(i64::from(self.truth(image_id)?.value()) + delta)
            }
            MockMode::Noisy { seed, sigma } => {
                let truth = self.truth(image_id)?;
                let g = if *sigma > 0.0 {
                    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(*seed, image_id, run_index));
                    Normal::new(0.0, *sigma)
                        .expect("finite sigma")
                        .sample(&mut rng)
                } else {
                    0.0
                };
                Rating::clamped((truth.as_f64() + g).round() as i64)
            }
            MockMode::MalformedThenValid { n_bad } => {
                let truth = self.truth(image_id)?;
                if reasks < *n_bad as usize {
                    return Ok(MALFORMED_REPLY.to_string());
                }
                truth
            }
        };
        Ok(rating.to_string())
    }
}

impl VisionProvider for MockProvider {
    fn descriptor(&self) -> String {
        format!("mock:{}", self.spec.mode.name())
    }

    fn assess_image(&self, request: &AssessmentRequest) -> Result<AssessmentResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let MockMode::Noisy { sigma, .. } = self.spec.mode {
            if !(sigma >= 0.0) || !sigma.is_finite() {
                return Err(ProviderError::new(
                    ProviderErrorKind::BadRequest("sigma must be finite and non-negative".into()),
                    1,
                ));
            }
        }
        let raw_text = self.reply(&request.image.image_id, request.run_index, request.followups.len())?;
        Ok(AssessmentResponse {
            raw_text,
            latency: Duration::ZERO,
            token_usage: None,
            attempts_used: 1,
        })
    }
}
