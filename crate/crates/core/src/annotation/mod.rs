//! Candidate annotation with a multimodal LLM and the human review workflow.

mod client;
mod overlay;
mod pipeline;
mod prompt;
mod response;
pub mod review;

pub use client::{
    request_annotation, request_fingerprint, CandidateAnnotation, ClientError, MllmClient,
    OpenAiCompatClient, RetryPolicy, DEFAULT_API_KEY_ENV,
};
pub use overlay::{render_grayscale_overlay, DEFAULT_DIM_FACTOR};
pub use pipeline::{
    annotate_records, load_candidates, prepare_request, write_candidates, AnnotationOutcome,
    CandidateCache, PipelineConfig, RateLimiter,
};
pub use prompt::{
    build_annotation_prompt, PromptTemplate, ScenarioFamily, ATTENTION_SENTENCE, PLACEHOLDERS,
    RESPONSE_FORMAT, STEP_MARKERS,
};
pub use response::{format_response, parse_mllm_response, ParsedResponse};

use std::time::Duration;

use thiserror::Error;

use crate::data_model::DataError;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("shape mismatch: image {0}x{1} vs map {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("template family {template:?} does not match context family {context:?}")]
    FamilyMismatch {
        template: ScenarioFamily,
        context: ScenarioFamily,
    },
    #[error("no value or default for placeholder `{0}`")]
    MissingContext(String),
    #[error("unparseable response ({rule})")]
    Parse { rule: String, raw_response: String },
    #[error("request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("rate limited (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
