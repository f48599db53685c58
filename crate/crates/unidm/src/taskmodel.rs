//! The unified task form: task kind, target records and attributes, the
//! rendered query, candidate attribute sets and shipped task descriptions.
//!
//! Benchmark files carry one task per line (JSON Lines); see the CLI
//! reference in the README for the field names.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contextparse::serialize_record;
use crate::datalake::{DataLake, DataLakeError};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("task references a missing cell: {table} row {row} attribute {attribute}")]
    MissingCellInQuery {
        table: String,
        row: usize,
        attribute: String,
    },
    #[error("task is malformed: {0}")]
    Malformed(String),
    #[error("unreadable task file line {line}: {message}")]
    Unreadable { line: usize, message: String },
    #[error(transparent)]
    DataLake(#[from] DataLakeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Imputation,
    Transformation,
    ErrorDetection,
    EntityResolution,
    TableQa,
    JoinDiscovery,
    InformationExtraction,
}

impl TaskKind {
    pub fn all() -> [TaskKind; 7] {
        [
            TaskKind::Imputation,
            TaskKind::Transformation,
            TaskKind::ErrorDetection,
            TaskKind::EntityResolution,
            TaskKind::TableQa,
            TaskKind::JoinDiscovery,
            TaskKind::InformationExtraction,
        ]
    }

    /// Kinds whose answer is a yes/no decision.
    pub fn is_binary(&self) -> bool {
        matches!(
            self,
            TaskKind::ErrorDetection | TaskKind::EntityResolution | TaskKind::JoinDiscovery
        )
    }

    /// Kinds that run the automatic context retrieval stage.
    pub fn uses_retrieval(&self) -> bool {
        !matches!(
            self,
            TaskKind::Transformation | TaskKind::InformationExtraction
        )
    }

    pub fn label(&self) -> &'static str {
        match self {
            TaskKind::Imputation => "imputation",
            TaskKind::Transformation => "transformation",
            TaskKind::ErrorDetection => "error_detection",
            TaskKind::EntityResolution => "entity_resolution",
            TaskKind::TableQa => "table_qa",
            TaskKind::JoinDiscovery => "join_discovery",
            TaskKind::InformationExtraction => "information_extraction",
        }
    }
}

/// One task over the lake. `rows` carries the target record indices for
/// instance-level tasks; `table2` names the second table for join discovery
/// or cross-table entity resolution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub table: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table2: Option<String>,
    #[serde(default)]
    pub rows: Vec<usize>,
    #[serde(default)]
    pub attributes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    /// Attribute names to extract (information extraction); the first entry
    /// is the extraction target for this task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<Vec<String>>,
    /// (before, after) demonstration pairs for transformation tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub examples: Option<Vec<(String, String)>>,
    /// Display-key attribute; defaults to the first schema attribute.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_attribute: Option<String>,
}

impl TaskInstance {
    pub fn validate(&self) -> Result<(), TaskError> {
        let malformed = |m: &str| Err(TaskError::Malformed(m.to_string()));
        match self.kind {
            TaskKind::Imputation | TaskKind::Transformation | TaskKind::ErrorDetection => {
                if self.rows.len() != 1 || self.attributes.len() != 1 {
                    return malformed("instance-level tasks take exactly one row and one attribute");
                }
            }
            TaskKind::EntityResolution => {
                if self.rows.len() != 2 {
                    return malformed("entity resolution takes exactly two rows");
                }
            }
            TaskKind::TableQa => {
                if self.question.as_deref().unwrap_or("").is_empty() {
                    return malformed("table_qa requires a question");
                }
            }
            TaskKind::JoinDiscovery => {
                if self.table2.is_none() || self.attributes.len() != 2 {
                    return malformed("join_discovery takes two tables and two column names");
                }
            }
            TaskKind::InformationExtraction => {
                if self.schema.as_ref().map_or(true, |s| s.is_empty()) {
                    return malformed("information_extraction requires a non-empty schema");
                }
            }
        }
        Ok(())
    }

    /// Target row indices within the primary table, used to exclude targets
    /// from sampling.
    pub fn target_rows(&self) -> Vec<usize> {
        self.rows.clone()
    }
}

/// The rendered target query `Q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryString(pub String);

impl QueryString {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Render the per-kind query form.
pub fn build_query(task: &TaskInstance, lake: &DataLake) -> Result<QueryString, TaskError> {
    task.validate()?;
    let table = lake.table(&task.table)?;

    let present_cell = |row: usize, attribute: &str| -> Result<String, TaskError> {
        match table.cell(row, attribute)? {
            crate::datalake::CellValue::Present(text) => Ok(text.clone()),
            crate::datalake::CellValue::Missing => Err(TaskError::MissingCellInQuery {
                table: task.table.clone(),
                row,
                attribute: attribute.to_string(),
            }),
        }
    };

    let text = match task.kind {
        TaskKind::Imputation => {
            let key_attr = task
                .key_attribute
                .clone()
                .unwrap_or_else(|| table.schema[0].name.clone());
            // The key cell may itself be missing for imputation; render what
            // is there.
            let key = table
                .cell(task.rows[0], &key_attr)?
                .text()
                .unwrap_or_default()
                .to_string();
            format!("{key}, {}", task.attributes[0])
        }
        TaskKind::Transformation => present_cell(task.rows[0], &task.attributes[0])?,
        TaskKind::ErrorDetection => {
            let value = present_cell(task.rows[0], &task.attributes[0])?;
            format!("{}: {value}?", task.attributes[0])
        }
        TaskKind::EntityResolution => {
            let serialized = |row: usize| -> Result<String, TaskError> {
                let (table_name, row) = (&task.table, row);
                let t = lake.table(table_name)?;
                let record = t
                    .records
                    .get(row)
                    .ok_or(DataLakeError::RowOutOfRange(row))?;
                Ok(serialize_record(&t.attribute_names(), &record.cells))
            };
            let r1 = serialized(task.rows[0])?;
            let r2 = match &task.table2 {
                None => serialized(task.rows[1])?,
                Some(other) => {
                    let t = lake.table(other)?;
                    let record = t
                        .records
                        .get(task.rows[1])
                        .ok_or(DataLakeError::RowOutOfRange(task.rows[1]))?;
                    serialize_record(&t.attribute_names(), &record.cells)
                }
            };
            format!("Entity A is {r1}, Entity B is {r2}")
        }
        TaskKind::TableQa => task.question.clone().unwrap_or_default(),
        TaskKind::JoinDiscovery => {
            let other = task.table2.as_deref().unwrap_or(&task.table);
            lake.table(other)?;
            format!(
                "{}.{} and {}.{}",
                task.table, task.attributes[0], other, task.attributes[1]
            )
        }
        TaskKind::InformationExtraction => task
            .schema
            .as_ref()
            .and_then(|s| s.first())
            .cloned()
            .unwrap_or_default(),
    };
    Ok(QueryString(text))
}

/// Candidate attribute set `S'` for meta-wise retrieval, in schema order.
pub fn candidate_attributes(
    task: &TaskInstance,
    lake: &DataLake,
) -> Result<Vec<String>, TaskError> {
    let table = lake.table(&task.table)?;
    let names = table.attribute_names();
    let candidates = match task.kind {
        // TableQA retrieves over the full attribute set.
        TaskKind::TableQa => names,
        // Retrieval is disabled for information extraction.
        TaskKind::InformationExtraction => Vec::new(),
        _ => names
            .into_iter()
            .filter(|n| !task.attributes.contains(n))
            .collect(),
    };
    Ok(candidates)
}

/// The rendered task description `T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDescription(pub String);

impl TaskDescription {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

fn default_description(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Imputation => {
            "data imputation which produces the missing data with some value to retain most of the data"
        }
        TaskKind::Transformation => {
            "data transformation which is the process of converting data from one format to another required format within a record"
        }
        TaskKind::ErrorDetection => {
            "error detection which detect attribute error within a record in a data cleaning system"
        }
        TaskKind::EntityResolution => {
            "entity resolution which is the process of predicting whether two records are referencing the same real-world thing"
        }
        TaskKind::TableQa => {
            "table question answering which asks a question to retrieve answers from a data table"
        }
        TaskKind::JoinDiscovery => {
            "join discovery which finds semantically joinable columns across different tables"
        }
        TaskKind::InformationExtraction => {
            "information extraction which constructs a structured view of a semi-structured document"
        }
    }
}

/// The shipped per-kind description table, overridable per kind.
#[derive(Debug, Clone, Default)]
pub struct DescriptionTable {
    overrides: HashMap<TaskKind, String>,
}

impl DescriptionTable {
    pub fn with_overrides(overrides: HashMap<TaskKind, String>) -> Self {
        Self { overrides }
    }

    pub fn get(&self, kind: TaskKind) -> TaskDescription {
        TaskDescription(
            self.overrides
                .get(&kind)
                .cloned()
                .unwrap_or_else(|| default_description(kind).to_string()),
        )
    }
}

pub fn task_description(kind: TaskKind) -> TaskDescription {
    DescriptionTable::default().get(kind)
}

/// Load a JSON Lines task file.
pub fn load_tasks<R: Read>(source: R) -> Result<Vec<TaskInstance>, TaskError> {
    let reader = BufReader::new(source);
    let mut tasks = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| TaskError::Unreadable {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let task: TaskInstance = serde_json::from_str(&line).map_err(|e| TaskError::Unreadable {
            line: i + 1,
            message: e.to_string(),
        })?;
        task.validate()?;
        tasks.push(task);
    }
    Ok(tasks)
}
