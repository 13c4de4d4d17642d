//! Pavement surface condition (PSCI) rating with vision-capable chat models.
//!
//! The crate covers the full batch pipeline: dataset manifests and image
//! acquisition, prompt construction for five prompt-strategy profiles, an
//! OpenAI-compatible client with a deterministic mock, a resumable run store,
//! and the agreement statistics used to compare model runs with human raters.

pub mod domain;
pub mod evaluation;
pub mod http;
pub mod ingestion;
pub mod llm;
pub mod prompting;
pub mod report;
pub mod runner;
pub mod secret;

pub use domain::{
    builtin_psci_rubric, validate_rating, AssessorId, AssessorKind, PsciRubric, Rating,
    RatingMatrix,
};
