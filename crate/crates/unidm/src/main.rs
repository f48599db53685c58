//! Command-line entry point: inspect data, run one task, run benchmarks,
//! manage the response cache.

use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use unidm::datalake::{load_table, DataLake};
use unidm::evalharness::{self, load_truths, run_benchmark};
use unidm::llmclient::{
    Backend, EndpointStyle, HttpBackend, LlmClient, MockBackend, ResponseCache,
};
use unidm::pipeline::{run_task, PipelineConfig};
use unidm::promptgen::DemoLibrary;
use unidm::taskmodel::{load_tasks, DescriptionTable, TaskInstance, TaskKind};

#[derive(Parser)]
#[command(name = "unidm", version, about = "LLM-driven data manipulation over tabular data lakes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a CSV file's schema and row count.
    Inspect {
        csv: PathBuf,
        /// Cell value treated as missing (besides the empty string).
        #[arg(long, default_value = "")]
        missing: String,
    },
    /// Run one task and print the answer.
    Run(Box<RunArgs>),
    /// Run a benchmark and write report files.
    Bench(Box<BenchArgs>),
    /// Inspect or clear the response cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    Stats {
        #[arg(long)]
        cache: PathBuf,
    },
    Clear {
        #[arg(long)]
        cache: PathBuf,
    },
}

/// Flags shared by `run` and `bench`. Every field falls back to the config
/// file, then to a built-in default.
#[derive(Args, Default, Clone)]
struct EngineArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mock backend script (JSONL rules); selects the mock backend.
    #[arg(long = "mock")]
    mock_script: Option<PathBuf>,
    /// HTTP backend base URL; selects the HTTP backend.
    #[arg(long)]
    base_url: Option<String>,
    /// "completions" or "chat".
    #[arg(long)]
    endpoint_style: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Response cache path (JSONL, append-only).
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Demonstration library (JSONL); defaults to the shipped pairs.
    #[arg(long)]
    demos: Option<PathBuf>,
    /// Cell value treated as missing when loading tables.
    #[arg(long)]
    missing: Option<String>,
    #[arg(long)]
    no_retrieval: bool,
    #[arg(long)]
    no_meta: bool,
    #[arg(long)]
    no_instance: bool,
    #[arg(long)]
    no_parsing: bool,
    #[arg(long)]
    no_prompt_construction: bool,
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    attr_count: Option<usize>,
    #[arg(long)]
    score_batch_size: Option<usize>,
    /// Drop the target attribute from the retrieved context columns.
    #[arg(long)]
    exclude_target_attribute: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Task kind label, e.g. "imputation".
    #[arg(long)]
    kind: Option<String>,
    /// CSV file backing the task's table; the table name is the file stem.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Second CSV file (join discovery, cross-table entity resolution).
    #[arg(long)]
    table2: Option<PathBuf>,
    /// Target row index; repeat for multi-row tasks.
    #[arg(long = "row")]
    rows: Vec<usize>,
    /// Target attribute; repeat for multi-attribute tasks.
    #[arg(long = "attr")]
    attrs: Vec<String>,
    #[arg(long)]
    question: Option<String>,
    /// Extraction schema attribute; repeat to pass several.
    #[arg(long = "schema")]
    schema: Vec<String>,
    /// Transformation example as "before=>after"; repeatable.
    #[arg(long = "example")]
    examples: Vec<String>,
    #[arg(long)]
    key_attribute: Option<String>,
    /// Full TaskInstance as inline JSON; replaces the per-field flags.
    #[arg(long)]
    task_json: Option<String>,
    /// Print every prompt and response round trip.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Task file (JSONL, one TaskInstance per line).
    #[arg(long)]
    tasks: PathBuf,
    /// Truth file (JSONL, one {"truth": ...} per line).
    #[arg(long)]
    truth: PathBuf,
    /// CSV file backing one table; repeatable. Also settable via the config
    /// file key "tables" (comma-separated paths).
    #[arg(long = "table")]
    tables: Vec<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "report.json")]
    report: PathBuf,
    #[arg(long, default_value = "report.csv")]
    summary: PathBuf,
}

/// Exit status 2: bad invocation. Exit status 1: runtime failure.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Run(String),
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self::Usage(message.into())
    }

    fn run(message: impl std::fmt::Display) -> Self {
        Self::Run(message.to_string())
    }
}

/// The merged configuration: command-line flags override config-file keys,
/// which override built-in defaults.
struct RunConfig {
    pipeline: PipelineConfig,
    backend: BackendChoice,
    endpoint_style: EndpointStyle,
    cache: Option<PathBuf>,
    demos: Option<PathBuf>,
    missing: String,
    workers: usize,
    tables: Vec<PathBuf>,
}

enum BackendChoice {
    Mock(PathBuf),
    Http(String),
}

fn parse_config_file(path: &Path) -> Result<HashMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config file {}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::usage(format!("config line {} is not key=value: {line:?}", i + 1))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CliError::usage(format!("config key {key} is not a boolean: {value:?}"))),
    }
}

fn parse_number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::usage(format!("config key {key} is not a number: {value:?}")))
}

impl RunConfig {
    fn resolve(args: &EngineArgs, workers_flag: Option<usize>) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(path) => parse_config_file(path)?,
            None => HashMap::new(),
        };
        let get = |key: &str| file.get(key).map(String::as_str);

        let mut pipeline = PipelineConfig::default();
        let stage = |flag_off: bool, key: &str, default: bool| -> Result<bool, CliError> {
            if flag_off {
                return Ok(false);
            }
            match get(key) {
                Some(value) => parse_bool(key, value),
                None => Ok(default),
            }
        };
        pipeline.retrieval_enabled = stage(args.no_retrieval, "retrieval_enabled", true)?;
        pipeline.meta_wise_enabled = stage(args.no_meta, "meta_wise_enabled", true)?;
        pipeline.instance_wise_enabled = stage(args.no_instance, "instance_wise_enabled", true)?;
        pipeline.parsing_enabled = stage(args.no_parsing, "parsing_enabled", true)?;
        pipeline.prompt_construction_enabled = stage(
            args.no_prompt_construction,
            "prompt_construction_enabled",
            true,
        )?;
        pipeline.include_target_attribute = stage(
            args.exclude_target_attribute,
            "include_target_attribute",
            true,
        )?;

        macro_rules! numeric {
            ($field:ident, $key:literal) => {
                if let Some(value) = args.$field {
                    pipeline.$field = value;
                } else if let Some(raw) = get($key) {
                    pipeline.$field = parse_number($key, raw)?;
                }
            };
        }
        numeric!(sample_size, "sample_size");
        numeric!(top_k, "top_k");
        numeric!(attr_count, "attr_count");
        numeric!(score_batch_size, "score_batch_size");
        numeric!(seed, "seed");

        if let Some(model) = &args.model {
            pipeline.model = model.clone();
        } else if let Some(model) = get("model") {
            pipeline.model = model.to_string();
        }

        let mock_script = args
            .mock_script
            .clone()
            .or_else(|| get("mock_script").map(PathBuf::from));
        let base_url = args
            .base_url
            .clone()
            .or_else(|| get("base_url").map(str::to_string))
            .or_else(|| std::env::var("UNIDM_BASE_URL").ok());
        let backend_key = get("backend");
        let backend = match (backend_key, &mock_script, &base_url) {
            (Some("mock"), Some(script), _) | (None, Some(script), _) => {
                BackendChoice::Mock(script.clone())
            }
            (Some("mock"), None, _) => {
                return Err(CliError::usage("backend=mock requires a mock script"));
            }
            (Some("http"), _, Some(url)) | (None, None, Some(url)) => {
                BackendChoice::Http(url.clone())
            }
            (Some("http"), _, None) => {
                return Err(CliError::usage(
                    "backend=http requires a base URL (flag, config, or UNIDM_BASE_URL)",
                ));
            }
            (Some(other), _, _) => {
                return Err(CliError::usage(format!("unknown backend {other:?}")));
            }
            (None, None, None) => {
                return Err(CliError::usage(
                    "no backend selected; pass --mock <script> or a base URL",
                ));
            }
        };

        let style_raw = args
            .endpoint_style
            .clone()
            .or_else(|| get("endpoint_style").map(str::to_string));
        let endpoint_style = match style_raw.as_deref() {
            Some(raw) => EndpointStyle::parse(raw)
                .ok_or_else(|| CliError::usage(format!("unknown endpoint style {raw:?}")))?,
            None => EndpointStyle::Completions,
        };

        let workers = match workers_flag {
            Some(n) => n,
            None => match get("workers") {
                Some(raw) => parse_number("workers", raw)?,
                None => 4,
            },
        };

        let tables = match get("tables") {
            Some(raw) => raw
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(PathBuf::from)
                .collect(),
            None => Vec::new(),
        };

        Ok(Self {
            pipeline,
            backend,
            endpoint_style,
            cache: args.cache.clone().or_else(|| get("cache").map(PathBuf::from)),
            demos: args.demos.clone().or_else(|| get("demos").map(PathBuf::from)),
            missing: args
                .missing
                .clone()
                .or_else(|| get("missing").map(str::to_string))
                .unwrap_or_default(),
            workers,
            tables,
        })
    }

    fn client(&self) -> Result<LlmClient, CliError> {
        let backend: Arc<dyn Backend> = match &self.backend {
            BackendChoice::Mock(script) => {
                let file = File::open(script).map_err(|e| {
                    CliError::usage(format!("cannot read mock script {}: {e}", script.display()))
                })?;
                Arc::new(MockBackend::from_script(file).map_err(CliError::run)?)
            }
            BackendChoice::Http(url) => {
                let api_key = std::env::var("UNIDM_API_KEY")
                    .map_err(|_| CliError::usage("UNIDM_API_KEY is not set"))?;
                Arc::new(HttpBackend::new(url, &api_key, self.endpoint_style))
            }
        };
        let cache = match &self.cache {
            Some(path) => Some(ResponseCache::open(path).map_err(CliError::run)?),
            None => None,
        };
        Ok(LlmClient::new(backend, cache))
    }

    fn library(&self) -> Result<DemoLibrary, CliError> {
        match &self.demos {
            Some(path) => {
                let file = File::open(path).map_err(|e| {
                    CliError::usage(format!("cannot read demos {}: {e}", path.display()))
                })?;
                DemoLibrary::from_jsonl(file).map_err(CliError::run)
            }
            None => Ok(DemoLibrary::shipped()),
        }
    }
}

fn table_name(path: &Path) -> Result<String, CliError> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| CliError::usage(format!("cannot derive a table name from {}", path.display())))
}

fn load_lake(paths: &[PathBuf], missing: &str) -> Result<DataLake, CliError> {
    let mut lake = DataLake::default();
    for path in paths {
        let name = table_name(path)?;
        let file = File::open(path)
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
        lake.add_table(load_table(file, &name, missing).map_err(CliError::run)?);
    }
    Ok(lake)
}

fn parse_kind(label: &str) -> Result<TaskKind, CliError> {
    TaskKind::all()
        .into_iter()
        .find(|kind| kind.label() == label)
        .ok_or_else(|| CliError::usage(format!("unknown task kind {label:?}")))
}

fn inspect(csv: &Path, missing: &str) -> Result<(), CliError> {
    let name = table_name(csv)?;
    let file = File::open(csv)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", csv.display())))?;
    let table = load_table(file, &name, missing).map_err(CliError::run)?;
    let attributes = table.attribute_names();
    println!(
        "{name}: {} attributes, {} records",
        attributes.len(),
        table.records.len()
    );
    for attribute in &attributes {
        let missing_count = table
            .records
            .iter()
            .filter(|r| {
                table
                    .attribute_position(attribute)
                    .ok()
                    .and_then(|i| r.cells.get(i))
                    .is_some_and(|c| c.is_missing())
            })
            .count();
        println!("  {attribute} ({missing_count} missing)");
    }
    Ok(())
}

fn build_task(args: &RunArgs) -> Result<TaskInstance, CliError> {
    if let Some(json) = &args.task_json {
        let task: TaskInstance = serde_json::from_str(json)
            .map_err(|e| CliError::usage(format!("bad --task-json: {e}")))?;
        return Ok(task);
    }
    let kind = args
        .kind
        .as_deref()
        .ok_or_else(|| CliError::usage("--kind is required without --task-json"))?;
    let table = args
        .table
        .as_ref()
        .ok_or_else(|| CliError::usage("--table is required without --task-json"))?;
    let examples: Vec<(String, String)> = args
        .examples
        .iter()
        .map(|raw| {
            raw.split_once("=>")
                .map(|(b, a)| (b.to_string(), a.to_string()))
                .ok_or_else(|| CliError::usage(format!("--example is not before=>after: {raw:?}")))
        })
        .collect::<Result<_, _>>()?;
    Ok(TaskInstance {
        kind: parse_kind(kind)?,
        table: table_name(table)?,
        table2: args.table2.as_deref().map(table_name).transpose()?,
        rows: args.rows.clone(),
        attributes: args.attrs.clone(),
        question: args.question.clone(),
        schema: (!args.schema.is_empty()).then(|| args.schema.clone()),
        examples: (!examples.is_empty()).then_some(examples),
        key_attribute: args.key_attribute.clone(),
    })
}

fn run_one(args: &RunArgs) -> Result<(), CliError> {
    let config = RunConfig::resolve(&args.engine, None)?;
    let task = build_task(args)?;
    let mut paths: Vec<PathBuf> = Vec::new();
    paths.extend(args.table.clone());
    paths.extend(args.table2.clone());
    paths.extend(config.tables.clone());
    let lake = load_lake(&paths, &config.missing)?;
    let client = config.client()?;
    let library = config.library()?;
    let descriptions = DescriptionTable::default();

    task.validate().map_err(CliError::run)?;
    let outcome = run_task(
        &task,
        &lake,
        &config.pipeline,
        &client,
        &library,
        &descriptions,
        config.pipeline.seed,
    )
    .map_err(CliError::run)?;

    if args.trace {
        for exchange in &outcome.exchanges {
            println!("=== {} prompt ===", exchange.kind);
            println!("{}", exchange.prompt);
            println!("=== {} response ===", exchange.kind);
            println!("{}", exchange.response);
        }
    }
    println!("answer: {}", outcome.answer.normalized);
    let ledger = client.ledger();
    println!(
        "tokens: {} prompt, {} completion ({} calls, {} cache hits)",
        ledger.logical_prompt_tokens,
        ledger.logical_completion_tokens,
        ledger.call_count,
        ledger.cache_hit_count
    );
    Ok(())
}

fn bench(args: &BenchArgs) -> Result<(), CliError> {
    let config = RunConfig::resolve(&args.engine, args.workers)?;
    let mut paths = args.tables.clone();
    paths.extend(config.tables.clone());
    if paths.is_empty() {
        return Err(CliError::usage(
            "no tables given; pass --table or set tables= in the config file",
        ));
    }
    let lake = load_lake(&paths, &config.missing)?;

    let tasks_file = File::open(&args.tasks)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", args.tasks.display())))?;
    let tasks = load_tasks(tasks_file).map_err(CliError::run)?;
    let truth_file = File::open(&args.truth)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", args.truth.display())))?;
    let truths = load_truths(truth_file).map_err(CliError::run)?;

    let client = config.client()?;
    let library = config.library()?;
    let report = run_benchmark(
        &tasks,
        &truths,
        &lake,
        &config.pipeline,
        &client,
        &library,
        &DescriptionTable::default(),
        config.workers,
    )
    .map_err(CliError::run)?;

    let json_out = File::create(&args.report)
        .map_err(|e| CliError::run(format!("cannot write {}: {e}", args.report.display())))?;
    evalharness::write_report_json(&report, json_out).map_err(CliError::run)?;
    let csv_out = File::create(&args.summary)
        .map_err(|e| CliError::run(format!("cannot write {}: {e}", args.summary.display())))?;
    evalharness::write_report_csv(&report, csv_out).map_err(CliError::run)?;

    println!(
        "{} tasks, accuracy {:.4}, {} errors",
        report.metrics.task_count, report.metrics.accuracy, report.metrics.error_count
    );
    println!(
        "tokens: {} logical, {} billed",
        report.logical_tokens(),
        report.ledger.billed_prompt_tokens + report.ledger.billed_completion_tokens
    );
    println!(
        "wrote {} and {}",
        args.report.display(),
        args.summary.display()
    );
    Ok(())
}

fn cache_command(action: &CacheAction) -> Result<(), CliError> {
    match action {
        CacheAction::Stats { cache } => {
            if !cache.exists() {
                println!("{}: 0 entries (no cache file)", cache.display());
                return Ok(());
            }
            let opened = ResponseCache::open(cache).map_err(CliError::run)?;
            println!("{}: {} entries", cache.display(), opened.len());
            Ok(())
        }
        CacheAction::Clear { cache } => {
            match std::fs::remove_file(cache) {
                Ok(()) => println!("cleared {}", cache.display()),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    println!("{} already absent", cache.display())
                }
                Err(e) => return Err(CliError::run(format!("cannot clear {}: {e}", cache.display()))),
            }
            Ok(())
        }
    }
}


fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Inspect { csv, missing } => inspect(csv, missing),
        Command::Run(args) => run_one(args),
        Command::Bench(args) => bench(args),
        Command::Cache { action } => cache_command(action),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Run(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(message)) => {
            eprintln!("usage error: {message}");
            ExitCode::from(2)
        }
    }
}
