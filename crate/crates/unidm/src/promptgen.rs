//! Target prompt construction: assemble the claim, render the cloze-question
//! prompt over the shipped demonstration library, obtain the cloze, issue it
//! and extract the final answer.

use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contextparse::ParsedContext;
use crate::llmclient::{LlmClient, LlmError, RequestTemplate};
use crate::taskmodel::{QueryString, TaskDescription, TaskKind};

/// The blank marker a cloze question must contain.
pub const BLANK: &str = "_";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("cloze reply contains no blank marker: {0:?}")]
    NoBlankInCloze(String),
    #[error("backend returned an empty answer")]
    EmptyAnswer,
    #[error("no yes/no token in binary answer: {0:?}")]
    AmbiguousBinaryAnswer(String),
    #[error("demonstration library line {line}: {message}")]
    BadLibrary { line: usize, message: String },
    #[error(transparent)]
    Backend(#[from] LlmError),
}

/// One claim/cloze example pair. An empty `kinds` set marks a task-agnostic
/// demonstration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Demonstration {
    pub claim: String,
    pub cloze: String,
    #[serde(default)]
    pub kinds: Vec<TaskKind>,
}

/// Ordered demonstration library; order is preserved into the prompt.
#[derive(Debug, Clone)]
pub struct DemoLibrary {
    pub demonstrations: Vec<Demonstration>,
}

impl Default for DemoLibrary {
    fn default() -> Self {
        Self::shipped()
    }
}

impl DemoLibrary {
    /// The four shipped demonstrations: imputation, transformation, error
    /// detection and entity resolution.
    pub fn shipped() -> Self {
        let pair = |kind: TaskKind, claim: &str, cloze: &str| Demonstration {
            claim: claim.to_string(),
            cloze: cloze.to_string(),
            kinds: vec![kind],
        };
        Self {
            demonstrations: vec![
                pair(
                    TaskKind::Imputation,
                    "The task is data imputation which produces the missing data with some value to retain most of the data. The context is Wenham, Marysville, and Westmont are cities in the United States, identified by the ISO3 code USA. The target is city:New Cassel, iso3:USA, country:?",
                    "Wenham, Marysville, and Westmont are cities in the United States, identified by the ISO3 code USA. New Cassel is the name of a city whose ISO3 country code is USA. New Kassel belongs to the country _.",
                ),
                pair(
                    TaskKind::Transformation,
                    "The task is data transformation which is the process of converting data from one format to another required format within a record. The context is data before transformation: 20000101 data after transformation: 2000-01-01. The target is 19990415:?",
                    "20000101 can be transformed to 2000-01-01, and 19990415 can be transformed to _.",
                ),
                pair(
                    TaskKind::ErrorDetection,
                    "The task is error detection which detect attribute error within a record in a data cleaning system. The context is the address of 2505 u s highway 431 north is not an error, the county name of mxrshxll is an error. The target is whether there is an error in city:sheffxeld.",
                    "The address \"2505 U.S. Highway 431 North\" has no error, whereas the county name \"mxrshxll\" contains an error. It is required to identify if there is an error in the city name \"sheffxeld\". Is there an error in the city name? Yes or No. _",
                ),
                pair(
                    TaskKind::EntityResolution,
                    "The task is entity resolution which is the process of predicting whether two records are referencing the same real-world thing. The context is A is the Punch! Home Design Architectural Series 4000 v10, manufactured by Punch! Software, is priced at $199.99. B is The Punch Software 41100 Punch! Home Design Architectural Series 18, manufactured by Punch Software, is priced at $18.99. The target is are A and B the same?",
                    "Punch! Home Design Architectural Series 4000 v10, manufactured by Punch! Software, is priced at $199.99, whereas Punch Software 41100 Punch! Home Design Architectural Series 18, also manufactured by Punch Software, is priced at $18.99. Are these two products the same? Yes or No. _",
                ),
            ],
        }
    }

    /// Load a JSON Lines library with fields `claim`, `cloze`, `kinds`.
    pub fn from_jsonl<R: Read>(source: R) -> Result<Self, PromptError> {
        let reader = BufReader::new(source);
        let mut demonstrations = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| PromptError::BadLibrary {
                line: i + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let demo: Demonstration =
                serde_json::from_str(&line).map_err(|e| PromptError::BadLibrary {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if demo.claim.is_empty() || demo.cloze.is_empty() || !demo.cloze.contains(BLANK) {
                return Err(PromptError::BadLibrary {
                    line: i + 1,
                    message: "claim and cloze must be non-empty and the cloze must contain \"_\""
                        .to_string(),
                });
            }
            demonstrations.push(demo);
        }
        Ok(Self { demonstrations })
    }
}

/// The extracted final answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub raw: String,
    pub normalized: String,
    /// Present only for yes/no task kinds.
    pub boolean_value: Option<bool>,
}

/// Assemble the claim fed to cloze generation.
pub fn build_claim(
    description: &TaskDescription,
    context: &ParsedContext,
    query: &QueryString,
) -> String {
    // Parsed context usually ends with its own sentence period; avoid "..".
    let context_text = context.text.trim_end().trim_end_matches('.');
    format!(
        "The task is {}. The context is {}. The target query is {}.",
        description.as_str(),
        context_text,
        query.as_str()
    )
}

/// Render the cloze-generation prompt: instruction header, every library
/// demonstration (kind-matching ones first, then task-agnostic, then the
/// rest), and the open completion slot for the target claim.
pub fn render_cq_prompt(library: &DemoLibrary, claim: &str, kind: TaskKind) -> String {
    let mut ordered: Vec<&Demonstration> = Vec::new();
    let matching = |d: &&Demonstration| d.kinds.contains(&kind);
    let agnostic = |d: &&Demonstration| d.kinds.is_empty();
    ordered.extend(library.demonstrations.iter().filter(matching));
    ordered.extend(library.demonstrations.iter().filter(agnostic));
    ordered.extend(
        library
            .demonstrations
            .iter()
            .filter(|d| !matching(d) && !agnostic(d)),
    );

    let mut prompt = String::from("Write the claim as a cloze question.\n");
    for demo in ordered {
        prompt.push_str(&format!(
            "Claim:\n{}\nCloze question:\n{}\n",
            demo.claim, demo.cloze
        ));
    }
    prompt.push_str(&format!("Claim:\n{claim}\nCloze question:\n"));
    prompt
}

/// One completion turning the claim prompt into a cloze question; the reply
/// must contain the blank marker.
pub fn generate_cloze(
    prompt: &str,
    client: &LlmClient,
    template: &RequestTemplate,
) -> Result<String, PromptError> {
    let reply = client.complete(&template.request(prompt))?;
    let cloze = reply.text.trim().to_string();
    if !cloze.contains(BLANK) {
        return Err(PromptError::NoBlankInCloze(cloze));
    }
    Ok(cloze)
}

/// Issue the target prompt and take the first non-empty line of the reply.
pub fn answer(
    target_prompt: &str,
    client: &LlmClient,
    template: &RequestTemplate,
) -> Result<String, PromptError> {
    let reply = client.complete(&template.request(target_prompt))?;
    reply
        .text
        .lines()
        .map(str::trim)
        .find(|line| !line.is_empty())
        .map(str::to_string)
        .ok_or(PromptError::EmptyAnswer)
}

/// Lowercase, collapse whitespace, trim, strip trailing punctuation.
pub fn normalize(raw: &str) -> String {
    let collapsed = raw
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    collapsed
        .trim_end_matches(['.', '?', '!', ',', ';', ':'])
        .trim()
        .to_string()
}

/// Normalize the raw answer; for binary kinds, the first yes/no token wins.
pub fn extract_answer(raw: &str, kind: TaskKind) -> Result<Answer, PromptError> {
    let normalized = normalize(raw);
    let boolean_value = if kind.is_binary() {
        let hit = normalized.split_whitespace().find_map(|token| {
            match token.trim_matches(|c: char| ".,?!;:\"'".contains(c)) {
                "yes" => Some(true),
                "no" => Some(false),
                _ => None,
            }
        });
        match hit {
            Some(value) => Some(value),
            None => return Err(PromptError::AmbiguousBinaryAnswer(raw.to_string())),
        }
    } else {
        None
    };
    Ok(Answer {
        raw: raw.to_string(),
        normalized,
        boolean_value,
    })
}
