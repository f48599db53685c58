//! End-to-end execution of one task: context acquisition, parsing into logic
//! text, and the final answer round trips, honoring every ablation flag.

use thiserror::Error;

use crate::contextparse::{self, ParsedContext, SerializedContext};
use crate::datalake::DataLake;
use crate::llmclient::{LlmClient, LlmError, RequestTemplate};
use crate::promptgen::{self, Answer, DemoLibrary, PromptError};
use crate::retrieval::{self, Context, RetrievalConfig, RetrievalError};
use crate::taskmodel::{
    build_query, DescriptionTable, TaskError, TaskInstance, TaskKind,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("transformation task carries no example pairs")]
    MissingTransformExamples,
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    ContextParse(#[from] crate::contextparse::ContextParseError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error(transparent)]
    DataLake(#[from] crate::datalake::DataLakeError),
}

/// Stage switches mirroring the pipeline's conditional branches. The meta and
/// instance flags only matter when `retrieval_enabled` is set.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PipelineConfig {
    pub retrieval_enabled: bool,
    pub meta_wise_enabled: bool,
    pub instance_wise_enabled: bool,
    pub parsing_enabled: bool,
    pub prompt_construction_enabled: bool,
    pub sample_size: usize,
    pub top_k: usize,
    pub attr_count: usize,
    pub score_batch_size: usize,
    pub include_target_attribute: bool,
    pub model: String,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let retrieval = RetrievalConfig::default();
        Self {
            retrieval_enabled: true,
            meta_wise_enabled: true,
            instance_wise_enabled: true,
            parsing_enabled: true,
            prompt_construction_enabled: true,
            sample_size: retrieval.sample_size,
            top_k: retrieval.top_k,
            attr_count: retrieval.attr_count,
            score_batch_size: retrieval.score_batch_size,
            include_target_attribute: retrieval.include_target_attribute,
            model: "mock".to_string(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn retrieval_config(&self, seed: u64) -> RetrievalConfig {
        RetrievalConfig {
            sample_size: self.sample_size,
            top_k: self.top_k,
            attr_count: self.attr_count,
            score_batch_size: self.score_batch_size,
            seed,
            include_target_attribute: self.include_target_attribute,
        }
    }

    pub fn template(&self) -> RequestTemplate {
        RequestTemplate {
            model: self.model.clone(),
            ..RequestTemplate::default()
        }
    }
}

/// One prompt/response round trip recorded for tracing and token accounting.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Exchange {
    pub kind: String,
    pub prompt: String,
    pub response: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cached: bool,
}

/// Everything one task run produced.
#[derive(Debug)]
pub struct TaskOutcome {
    pub answer: Answer,
    pub context: Option<Context>,
    pub serialized: SerializedContext,
    pub parsed: ParsedContext,
    pub exchanges: Vec<Exchange>,
}

impl TaskOutcome {
    pub fn prompt_tokens(&self) -> u64 {
        self.exchanges.iter().map(|e| e.prompt_tokens).sum()
    }

    pub fn completion_tokens(&self) -> u64 {
        self.exchanges.iter().map(|e| e.completion_tokens).sum()
    }
}

struct Recorder<'a> {
    client: &'a LlmClient,
    template: RequestTemplate,
    exchanges: Vec<Exchange>,
}

impl<'a> Recorder<'a> {
    fn ask(&mut self, kind: &str, prompt: &str) -> Result<String, LlmError> {
        let response = self.client.complete(&self.template.request(prompt))?;
        self.exchanges.push(Exchange {
            kind: kind.to_string(),
            prompt: prompt.to_string(),
            response: response.text.clone(),
            prompt_tokens: response.prompt_tokens,
            completion_tokens: response.completion_tokens,
            cached: response.cached,
        });
        Ok(response.text)
    }
}

/// Build the context for a transformation task from its example pairs; no
/// retrieval is involved.
fn transform_context_text(task: &TaskInstance) -> Result<String, PipelineError> {
    let examples = task
        .examples
        .as_ref()
        .filter(|e| !e.is_empty())
        .ok_or(PipelineError::MissingTransformExamples)?;
    Ok(examples
        .iter()
        .map(|(before, after)| {
            format!("data before transformation: {before} data after transformation: {after}")
        })
        .collect::<Vec<_>>()
        .join("\n"))
}

/// Context for information extraction: the target rows over all attributes,
/// as pre-defined by the task.
fn extraction_context(task: &TaskInstance, lake: &DataLake) -> Result<Context, PipelineError> {
    let table = lake.table(&task.table)?;
    let attributes = table.attribute_names();
    let rows = if task.rows.is_empty() {
        (0..table.records.len()).collect()
    } else {
        task.rows.clone()
    };
    let mut records = Vec::with_capacity(rows.len());
    for row in rows {
        let record = table
            .records
            .get(row)
            .ok_or(crate::datalake::DataLakeError::RowOutOfRange(row))?;
        records.push(crate::retrieval::ContextRecord {
            row,
            cells: record.cells.clone(),
        });
    }
    Ok(Context {
        attributes,
        records,
        provenance: Default::default(),
    })
}

/// Run one task through the full pipeline. `seed` is the per-task seed; the
/// harness derives it from the run seed and the task index.
pub fn run_task(
    task: &TaskInstance,
    lake: &DataLake,
    config: &PipelineConfig,
    client: &LlmClient,
    library: &DemoLibrary,
    descriptions: &DescriptionTable,
    seed: u64,
) -> Result<TaskOutcome, PipelineError> {
    task.validate()?;
    let description = descriptions.get(task.kind);
    let query = build_query(task, lake)?;
    let mut recorder = Recorder {
        client,
        template: config.template(),
        exchanges: Vec::new(),
    };

    // Context acquisition.
    let (context, serialized) = match task.kind {
        TaskKind::Transformation => (
            None,
            SerializedContext {
                text: transform_context_text(task)?,
                pair_count: 0,
                skipped_missing: 0,
            },
        ),
        TaskKind::InformationExtraction => {
            let context = extraction_context(task, lake)?;
            let serialized = contextparse::serialize(&context);
            (Some(context), serialized)
        }
        _ => {
            let retrieval_config = config.retrieval_config(seed);
            let context = if config.retrieval_enabled {
                let template = recorder.template.clone();
                let exchanges = &mut recorder.exchanges;
                retrieval::retrieve_context(
                    task,
                    lake,
                    &retrieval_config,
                    client,
                    &template,
                    &description,
                    &query,
                    config.meta_wise_enabled,
                    config.instance_wise_enabled,
                    |kind, prompt, response| {
                        exchanges.push(Exchange {
                            kind: kind.to_string(),
                            prompt: prompt.to_string(),
                            response: response.text.clone(),
                            prompt_tokens: response.prompt_tokens,
                            completion_tokens: response.completion_tokens,
                            cached: response.cached,
                        });
                    },
                )?
            } else {
                retrieval::sample_context(task, lake, &retrieval_config)?
            };
            let serialized = contextparse::serialize(&context);
            (Some(context), serialized)
        }
    };

    // Parsing into logic text.
    let parse_query = (task.kind == TaskKind::InformationExtraction).then(|| query.as_str());
    let parsed = if config.parsing_enabled && !serialized.text.is_empty() {
        let prompt = contextparse::render_parse_prompt(&serialized.text, parse_query)?;
        let reply = recorder.ask("parse", &prompt)?;
        ParsedContext {
            text: reply.trim().to_string(),
            parsed_by_llm: true,
        }
    } else {
        ParsedContext {
            text: serialized.text.clone(),
            parsed_by_llm: false,
        }
    };

    // Final answer.
    let raw = if config.prompt_construction_enabled {
        let claim = promptgen::build_claim(&description, &parsed, &query);
        let cq_prompt = promptgen::render_cq_prompt(library, &claim, task.kind);
        let cloze_reply = recorder.ask("cloze", &cq_prompt)?;
        let cloze = cloze_reply.trim().to_string();
        if !cloze.contains(promptgen::BLANK) {
            return Err(PromptError::NoBlankInCloze(cloze).into());
        }
        let reply = recorder.ask("answer", &cloze)?;
        first_line(&reply)?
    } else {
        // single direct prompt: logic text, then the query
        let prompt = format!("{}\n{}?", parsed.text, query.as_str());
        let reply = recorder.ask("direct", &prompt)?;
        first_line(&reply)?
    };

    let answer = promptgen::extract_answer(&raw, task.kind)?;
    Ok(TaskOutcome {
        answer,
        context,
        serialized,
        parsed,
        exchanges: recorder.exchanges,
    })
}

fn first_line(reply: &str) -> Result<String, PromptError> {
    reply
        .lines()
        .map(str::trim)
        .find(|line| !line.is_empty())
        .map(str::to_string)
        .ok_or(PromptError::EmptyAnswer)
}
