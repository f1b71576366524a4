//! Perspectivist in-context learning: per-annotator prompts built from the
//! annotator's own history, completions from a pluggable backend, label
//! parsing with a mode fallback, and aggregation into soft labels.

pub mod backend;
pub mod embed;
pub mod parse;
pub mod pipeline;
pub mod prompt;

pub use backend::{
    complete, sha256_hex, Backend, BackendError, CompletionRequest, CompletionResult, HttpBackend,
    MockBackend, ResponseCache, RetryPolicy, API_KEY_ENV, TEMPERATURE,
};
pub use embed::{hashed_bag_of_words, HttpEmbedder};
pub use parse::parse_label;
pub use pipeline::{
    aggregate_soft, aggregate_split, assemble, complete_jobs, fallback_label, pair_seed, predict_annotator,
    prepare_job, render_selection, resolve, run_pipeline, select_demonstrations, PerspectivistPrediction,
    PipelineConfig, PromptJob, Selection,
};
pub use prompt::{render_prompt, Demonstration, PromptProfile, PromptSpec};
