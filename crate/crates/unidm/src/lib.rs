//! Engine for LLM-driven data manipulation over tabular data lakes: context
//! retrieval, context parsing, target prompt construction, and a benchmark
//! harness, with every stage individually switchable.

pub mod contextparse;
pub mod datalake;
pub mod evalharness;
pub mod llmclient;
pub mod pipeline;
pub mod promptgen;
pub mod retrieval;
pub mod taskmodel;

pub use datalake::{DataLake, GroundTruth, Table};
pub use llmclient::{LlmClient, RequestTemplate};
pub use pipeline::{run_task, PipelineConfig, TaskOutcome};
pub use taskmodel::{TaskInstance, TaskKind};
