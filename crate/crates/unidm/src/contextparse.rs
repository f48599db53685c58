//! Serialization of retrieved context into `attr:value` text, and the LLM
//! round trip that turns that text into a natural-language rendering.
//!
//! The serialized form is lossless: fields containing the pair separator,
//! the `:` delimiter, a double quote or a newline are wrapped in double
//! quotes with internal quotes doubled, so a reference reader can recover
//! the exact attribute/value/record structure.

use thiserror::Error;

use crate::datalake::CellValue;
use crate::llmclient::{LlmClient, LlmError, RequestTemplate};
use crate::retrieval::Context;

#[derive(Debug, Error)]
pub enum ContextParseError {
    #[error("context is empty, nothing to parse")]
    EmptyContext,
    #[error(transparent)]
    Backend(#[from] LlmError),
}

/// The serialized context text `V` plus bookkeeping on emitted and skipped
/// (missing-cell) pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerializedContext {
    pub text: String,
    /// Emitted `attr:value` pairs.
    pub pair_count: usize,
    /// Missing cells skipped; `pair_count + skipped_missing` equals
    /// records x attributes.
    pub skipped_missing: usize,
}

/// Natural-language context `C'`. When parsing is disabled this is `V`
/// byte-for-byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedContext {
    pub text: String,
    pub parsed_by_llm: bool,
}

fn needs_quoting(field: &str) -> bool {
    field.contains(',') || field.contains(':') || field.contains('"') || field.contains('\n')
}

fn escape_field(field: &str) -> String {
    if needs_quoting(field) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Serialize one record's present cells as `attr:value` pairs joined by ", ".
pub fn serialize_record(attributes: &[String], cells: &[CellValue]) -> String {
    attributes
        .iter()
        .zip(cells)
        .filter_map(|(attr, cell)| {
            cell.text()
                .map(|v| format!("{}:{}", escape_field(attr), escape_field(v)))
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Serialize a context: one line per record, pairs in attribute order,
/// missing cells skipped.
pub fn serialize(context: &Context) -> SerializedContext {
    let mut lines = Vec::with_capacity(context.records.len());
    let mut pair_count = 0;
    let mut skipped_missing = 0;
    for record in &context.records {
        for cell in &record.cells {
            if cell.is_missing() {
                skipped_missing += 1;
            } else {
                pair_count += 1;
            }
        }
        lines.push(serialize_record(&context.attributes, &record.cells));
    }
    SerializedContext {
        text: lines.join("\n"),
        pair_count,
        skipped_missing,
    }
}

/// Render the data-parsing prompt over `V`. `query` is appended for tasks
/// whose parsing step must also see the target query (information
/// extraction).
pub fn render_parse_prompt(v: &str, query: Option<&str>) -> Result<String, ContextParseError> {
    if v.is_empty() {
        return Err(ContextParseError::EmptyContext);
    }
    let mut prompt = format!(
        "Given the data, convert the items into a textual format that encompasses all relevant information in a logical order: {v}"
    );
    if let Some(q) = query {
        prompt.push_str(&format!(" The target query is {q}."));
    }
    Ok(prompt)
}

/// Convert `V` into logic text `C'` via one completion, or pass `V` through
/// unchanged when parsing is disabled.
pub fn parse_context(
    serialized: &SerializedContext,
    client: &LlmClient,
    template: &RequestTemplate,
    enabled: bool,
    query: Option<&str>,
) -> Result<ParsedContext, ContextParseError> {
    if !enabled || serialized.text.is_empty() {
        return Ok(ParsedContext {
            text: serialized.text.clone(),
            parsed_by_llm: false,
        });
    }
    let prompt = render_parse_prompt(&serialized.text, query)?;
    let response = client.complete(&template.request(&prompt))?;
    Ok(ParsedContext {
        text: response.text.trim().to_string(),
        parsed_by_llm: true,
    })
}
