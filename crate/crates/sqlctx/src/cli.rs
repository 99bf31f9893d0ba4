//! Command-line interface: argument grammar, config-file layering, dispatch.
//!
//! Precedence for every tunable is flags > config file > built-in defaults;
//! `suite run --manifest` additionally pins seed, tokenizer, template, and
//! collision policy from the manifest being rerun (explicit flags still win).
//! All randomness flows from the single `--seed` value — no subcommand reads
//! system entropy — so any artifact-producing command is byte-reproducible
//! from its recorded configuration. Logs go to standard error; standard
//! output carries data only where a subcommand's contract says so.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{ArgGroup, Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{
    augment_slice, base_example_length, derive_seed, to_record, AugmentationConfig,
    AugmentedExample, CollisionPolicy, Mode, SchemaSlot,
};
use crate::dataset::{load_dataset, Dataset, DatasetName};
use crate::error::{Error, Result};
use crate::exec_match::{score_suite, write_report_csv, ScoreItem};
use crate::jsonl::{read_jsonl_iter, sha256_hex_file, JsonlWriter, Prediction, SuiteRecord};
use crate::placement::{generate_offset_suite, placement_suite_seed, select_eligible, PlacementSpec};
use crate::pool::{
    build_pool, pool_cache_counter, pool_stats, read_pool_cache, write_pool_cache, SchemaPool,
};
use crate::prompt::PromptTemplate;
use crate::suite::{
    plan_default_suites, pool_source_for, read_manifest, run_plan, suite_stats, write_json_atomic,
    DatasetRoots, RunOptions, DEFAULT_HISTOGRAM_BIN,
};
use crate::token::{CounterSpec, TokenCounter};

#[derive(Debug, Parser)]
#[command(
    name = "sqlctx",
    version,
    about = "Token-budgeted schema augmentation and evaluation for long-context NL2SQL",
    propagate_version = true
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

/// Options accepted by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Master seed; every random draw derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Token counter: `approx` or `bpe:<definition.json>`.
    #[arg(long, global = true, value_name = "SPEC")]
    pub tokenizer: Option<String>,

    /// TOML config file; flags override its keys.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for parallel stages (default: all cores). Output bytes
    /// do not depend on this.
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,

    /// Prompt template TOML file overriding the default wording.
    #[arg(long, global = true, value_name = "FILE")]
    pub template: Option<PathBuf>,

    /// Stderr log filter (off, error, warn, info, debug, trace).
    #[arg(long, global = true, value_name = "LEVEL")]
    pub log_level: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and cache distractor schema pools.
    Pool {
        #[command(subcommand)]
        cmd: PoolCmd,
    },
    /// Generate augmented datasets from one split.
    Augment {
        #[command(subcommand)]
        cmd: AugmentCmd,
    },
    /// Plan and generate the benchmark suite grid; recompute suite statistics.
    Suite {
        #[command(subcommand)]
        cmd: SuiteCmd,
    },
    /// Generate positional-robustness suites with the original schema at a
    /// controlled token offset.
    Placement {
        #[command(subcommand)]
        cmd: PlacementCmd,
    },
    /// Score model predictions against gold SQL by execution.
    Eval {
        #[command(subcommand)]
        cmd: EvalCmd,
    },
    /// Examine generated artifacts.
    Inspect {
        #[command(subcommand)]
        cmd: InspectCmd,
    },
}

#[derive(Debug, Subcommand)]
pub enum PoolCmd {
    /// Extract, deduplicate, and measure every schema in a dataset's
    /// database directory, writing a reusable pool cache.
    Build(PoolBuildArgs),
}

#[derive(Debug, Args)]
pub struct PoolBuildArgs {
    /// Dataset layout name (spider-train, bird-train, custom, ...).
    #[arg(long, value_parser = parse_dataset_name, default_value = "custom")]
    pub dataset: DatasetName,
    /// Dataset root directory.
    #[arg(long, value_name = "DIR")]
    pub input: PathBuf,
    /// Pool cache file to write (JSONL).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Print pool statistics as JSON on standard output.
    #[arg(long)]
    pub stats: bool,
}

#[derive(Debug, Subcommand)]
pub enum AugmentCmd {
    /// Training set: each example's budget is drawn uniformly from the
    /// configured grid.
    Finetune(AugmentArgs),
    /// Evaluation suite: every example gets the same fixed budget.
    Benchmark(AugmentArgs),
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Dataset layout name.
    #[arg(long, value_parser = parse_dataset_name)]
    pub dataset: DatasetName,
    /// Dataset root directory.
    #[arg(long, value_name = "DIR")]
    pub input: PathBuf,
    /// Output JSONL file; a provenance manifest is written next to it.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Pool cache file from `pool build`.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["pool_input", "pool_dataset"])]
    pub pool_cache: Option<PathBuf>,
    /// Root directory of the distractor pool's source dataset.
    #[arg(long, value_name = "DIR")]
    pub pool_input: Option<PathBuf>,
    /// Layout name of the distractor pool's source dataset.
    #[arg(long, value_parser = parse_dataset_name)]
    pub pool_dataset: Option<DatasetName>,
    /// Fixed context budget in tokens (benchmark mode only).
    #[arg(long)]
    pub budget: Option<usize>,
    /// Smallest budget in the finetune grid.
    #[arg(long)]
    pub start_budget: Option<usize>,
    /// Largest budget in the finetune grid.
    #[arg(long)]
    pub end_budget: Option<usize>,
    /// Spacing of the finetune budget grid.
    #[arg(long)]
    pub budget_step: Option<usize>,
    /// Also emit each example unmodified (id suffixed `-orig`) directly
    /// before its augmented copy; finetune mode only.
    #[arg(long)]
    pub include_originals: bool,
    /// Collision policy: no-duplicate-names (default) or original-only.
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<CollisionPolicy>,
    /// Skip re-tokenizing each assembled prompt into
    /// `meta.retokenized_length`.
    #[arg(long)]
    pub no_verify: bool,
    /// Examples per write batch; bounds peak memory.
    #[arg(long)]
    pub chunk_size: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum SuiteCmd {
    /// Print the generation plan, one target per line (dataset, budget,
    /// pool source, suite seed, output path).
    Plan(SuitePlanArgs),
    /// Generate every planned suite under an output directory, with a
    /// manifest and summary statistics.
    Run(SuiteRunArgs),
    /// Recompute statistics for one generated suite file and print them as
    /// JSON.
    Stats(SuiteStatsArgs),
}

#[derive(Debug, Args)]
pub struct SuitePlanArgs {
    /// Keep only these datasets (repeatable).
    #[arg(long = "dataset", value_parser = parse_dataset_name)]
    pub datasets: Vec<DatasetName>,
    /// Keep only these budgets (repeatable).
    #[arg(long = "budget")]
    pub budgets: Vec<usize>,
    /// Print the full plan as JSON instead.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SuiteRunArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Spider distribution root; serves every Spider-family dataset that has
    /// no dedicated --root entry.
    #[arg(long, value_name = "DIR")]
    pub spider_root: Option<PathBuf>,
    /// BIRD distribution root; serves bird-train and bird-dev likewise.
    #[arg(long, value_name = "DIR")]
    pub bird_root: Option<PathBuf>,
    /// Per-dataset root override, `name=path` (repeatable).
    #[arg(long = "root", value_parser = parse_root_spec, value_name = "NAME=PATH")]
    pub roots: Vec<(DatasetName, PathBuf)>,
    /// Rerun an existing manifest: pins seed, tokenizer, template, and
    /// collision policy (explicit flags still override).
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Keep only these datasets (repeatable).
    #[arg(long = "dataset", value_parser = parse_dataset_name)]
    pub datasets: Vec<DatasetName>,
    /// Keep only these budgets (repeatable).
    #[arg(long = "budget")]
    pub budgets: Vec<usize>,
    /// Collision policy: no-duplicate-names (default) or original-only.
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<CollisionPolicy>,
    /// Skip the per-record retokenization pass.
    #[arg(long)]
    pub no_verify: bool,
    /// Examples per write batch; bounds peak memory.
    #[arg(long)]
    pub chunk_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SuiteStatsArgs {
    /// Suite JSONL file.
    #[arg(long, value_name = "FILE")]
    pub suite: PathBuf,
    /// Histogram bin width in tokens.
    #[arg(long)]
    pub bin_width: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum PlacementCmd {
    /// Generate one suite per offset on the configured grid, each placing
    /// the original schema at that token offset inside a fixed-size prompt.
    Run(PlacementArgs),
}

#[derive(Debug, Args)]
pub struct PlacementArgs {
    /// Dataset layout name.
    #[arg(long, value_parser = parse_dataset_name)]
    pub dataset: DatasetName,
    /// Dataset root directory.
    #[arg(long, value_name = "DIR")]
    pub input: PathBuf,
    /// Output directory; suites land in `offset-<D>/data.jsonl`.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Pool cache file from `pool build`.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["pool_input", "pool_dataset"])]
    pub pool_cache: Option<PathBuf>,
    /// Root directory of the distractor pool's source dataset.
    #[arg(long, value_name = "DIR")]
    pub pool_input: Option<PathBuf>,
    /// Layout name of the distractor pool's source dataset.
    #[arg(long, value_parser = parse_dataset_name)]
    pub pool_dataset: Option<DatasetName>,
    /// Total prompt + SQL budget every placed example is filled to.
    #[arg(long)]
    pub total_budget: Option<usize>,
    /// Offset grid spacing in tokens.
    #[arg(long)]
    pub offset_step: Option<usize>,
    /// Number of offsets on the grid.
    #[arg(long)]
    pub n_offsets: Option<usize>,
    /// Eligibility ceiling on an example's own prompt + SQL token length.
    #[arg(long)]
    pub max_sample_length: Option<usize>,
    /// Use at most this many eligible examples per suite (first N in
    /// dataset order).
    #[arg(long)]
    pub max_samples: Option<usize>,
    /// Collision policy: no-duplicate-names (default) or original-only.
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<CollisionPolicy>,
    /// Placed examples per write batch; bounds peak memory.
    #[arg(long)]
    pub chunk_size: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// Execute gold and predicted SQL and compare result sets.
    Exec(EvalArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Suite JSONL file carrying ids, db_ids, and gold SQL.
    #[arg(long, value_name = "FILE")]
    pub suite: PathBuf,
    /// Predictions JSONL file: one {"id", "sql"} object per line.
    #[arg(long, value_name = "FILE")]
    pub predictions: PathBuf,
    /// Directory containing the benchmark's SQLite databases.
    #[arg(long, value_name = "DIR")]
    pub db_root: PathBuf,
    /// Wall-clock limit per query in milliseconds.
    #[arg(long, default_value_t = 30_000)]
    pub timeout_ms: u64,
    /// Report JSON file to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Summary CSV path (default: report path with .csv extension).
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum InspectCmd {
    /// Print one record from a suite file.
    Example(InspectArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("selector").required(true)))]
pub struct InspectArgs {
    /// Suite JSONL file to search.
    #[arg(long, value_name = "FILE")]
    pub suite: PathBuf,
    /// Record id to find.
    #[arg(long, group = "selector")]
    pub id: Option<String>,
    /// Zero-based record position in the file.
    #[arg(long, group = "selector")]
    pub index: Option<usize>,
    /// Print only the prompt text instead of the full record JSON.
    #[arg(long)]
    pub prompt_only: bool,
}

fn parse_dataset_name(s: &str) -> std::result::Result<DatasetName, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_policy(s: &str) -> std::result::Result<CollisionPolicy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_root_spec(s: &str) -> std::result::Result<(DatasetName, PathBuf), String> {
    let (name, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=PATH, got {s:?}"))?;
    let name: DatasetName = name.parse().map_err(|e: Error| e.to_string())?;
    if path.is_empty() {
        return Err(format!("empty path in {s:?}"));
    }
    Ok((name, PathBuf::from(path)))
}

/// Config-file schema. Every key is optional; section names group the keys
/// the same way the flags do. Unknown keys are rejected so typos surface.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    tokenizer: Option<String>,
    workers: Option<usize>,
    collision_policy: Option<CollisionPolicy>,
    augment: AugmentSection,
    template: Option<PromptTemplate>,
    placement: PlacementSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AugmentSection {
    start_budget: Option<usize>,
    end_budget: Option<usize>,
    budget_step: Option<usize>,
    benchmark_budget: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PlacementSection {
    total_budget: Option<usize>,
    offset_step: Option<usize>,
    n_offsets: Option<usize>,
    max_sample_length: Option<usize>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Everything a handler needs, resolved from defaults, config file, and
/// flags (in increasing precedence).
#[derive(Debug)]
pub struct Settings {
    pub seed: u64,
    /// The tokenizer spec exactly as given, echoed into manifests.
    pub counter_spec_string: String,
    pub counter: TokenCounter,
    pub template: PromptTemplate,
    pub workers: Option<usize>,
    pub augment: AugmentationConfig,
    pub placement: PlacementSpec,
    pub policy: CollisionPolicy,
}

pub fn resolve_settings(global: &GlobalOpts) -> Result<Settings> {
    let file = load_file_config(global.config.as_deref())?;

    let seed = global.seed.or(file.seed).unwrap_or(0);
    let counter_spec_string = global
        .tokenizer
        .clone()
        .or(file.tokenizer)
        .unwrap_or_else(|| "approx".into());
    let counter = TokenCounter::load(&CounterSpec::parse(&counter_spec_string)?)?;

    let template = match &global.template {
        Some(path) => PromptTemplate::from_file(path)?,
        None => file.template.unwrap_or_default(),
    };

    let workers = global.workers.or(file.workers);
    if workers == Some(0) {
        return Err(Error::Config("workers must be positive".into()));
    }

    let policy = file.collision_policy.unwrap_or(CollisionPolicy::NoDuplicateNames);

    let mut augment = AugmentationConfig {
        seed,
        collision_policy: policy,
        ..AugmentationConfig::default()
    };
    if let Some(v) = file.augment.start_budget {
        augment.start_budget = v;
    }
    if let Some(v) = file.augment.end_budget {
        augment.end_budget = v;
    }
    if let Some(v) = file.augment.budget_step {
        augment.budget_step = v;
    }
    if let Some(v) = file.augment.benchmark_budget {
        augment.benchmark_budget = v;
    }

    let mut placement = PlacementSpec::default();
    if let Some(v) = file.placement.total_budget {
        placement.total_budget = v;
    }
    if let Some(v) = file.placement.offset_step {
        placement.offset_step = v;
    }
    if let Some(v) = file.placement.n_offsets {
        placement.n_offsets = v;
    }
    if let Some(v) = file.placement.max_sample_length {
        placement.max_sample_length = v;
    }

    Ok(Settings {
        seed,
        counter_spec_string,
        counter,
        template,
        workers,
        augment,
        placement,
        policy,
    })
}

/// Runs a parsed invocation to completion. Success returns 0; domain
/// failures print one JSON object (`{"error", "message"}`) to standard error
/// and return 1. Argument errors never reach here — clap exits 2.
pub fn run(cli: Cli) -> i32 {
    init_logging(cli.global.log_level.as_deref());
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            1
        }
    }
}

fn init_logging(level: Option<&str>) {
    let env = env_logger::Env::default().default_filter_or("info");
    let mut builder = env_logger::Builder::from_env(env);
    if let Some(level) = level {
        builder.parse_filters(level);
    }
    builder.format_timestamp(None);
    let _ = builder.try_init();
}

fn execute(cli: Cli) -> Result<()> {
    let settings = resolve_settings(&cli.global)?;
    match settings.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot build {n}-thread worker pool: {e}")))?
            .install(|| dispatch(cli.command, &cli.global, settings)),
        None => dispatch(cli.command, &cli.global, settings),
    }
}

fn dispatch(command: Command, global: &GlobalOpts, settings: Settings) -> Result<()> {
    match command {
        Command::Pool { cmd: PoolCmd::Build(args) } => cmd_pool_build(args, settings),
        Command::Augment { cmd } => match cmd {
            AugmentCmd::Finetune(args) => cmd_augment(args, Mode::Finetune, settings),
            AugmentCmd::Benchmark(args) => cmd_augment(args, Mode::Benchmark, settings),
        },
        Command::Suite { cmd } => match cmd {
            SuiteCmd::Plan(args) => cmd_suite_plan(args, settings),
            SuiteCmd::Run(args) => cmd_suite_run(args, global, settings),
            SuiteCmd::Stats(args) => cmd_suite_stats(args),
        },
        Command::Placement { cmd: PlacementCmd::Run(args) } => cmd_placement_run(args, settings),
        Command::Eval { cmd: EvalCmd::Exec(args) } => cmd_eval_exec(args),
        Command::Inspect { cmd: InspectCmd::Example(args) } => cmd_inspect_example(args),
    }
}

fn cmd_pool_build(args: PoolBuildArgs, settings: Settings) -> Result<()> {
    let dataset = load_dataset(&args.input, args.dataset)?;
    let pool = build_pool(&dataset, &settings.counter);
    write_pool_cache(&pool, &args.out)?;
    log::info!(
        "pool from {}: {} items, {} tokens -> {}",
        dataset.name,
        pool.len(),
        pool.total_tokens(),
        args.out.display()
    );
    if args.stats {
        stdout_line(to_json_pretty(&pool_stats(&pool))?)?;
    }
    Ok(())
}

/// Provenance record written next to each `augment` output file.
#[derive(Debug, Serialize, Deserialize)]
pub struct AugmentManifest {
    pub tool: String,
    pub command: String,
    pub dataset: String,
    pub pool_source: String,
    pub master_seed: u64,
    pub counter_spec: String,
    pub counter_name: String,
    /// Effective generation parameters; `config.seed` is the derived
    /// run seed.
    pub config: AugmentationConfig,
    pub include_originals: bool,
    pub template: PromptTemplate,
    pub file: String,
    pub sha256: String,
    pub records: usize,
    pub passthroughs: usize,
}

fn cmd_augment(args: AugmentArgs, mode: Mode, settings: Settings) -> Result<()> {
    if args.include_originals && mode == Mode::Benchmark {
        return Err(Error::Config(
            "--include-originals applies to finetune mode only".into(),
        ));
    }
    if args.budget.is_some() && mode == Mode::Finetune {
        return Err(Error::Config(
            "--budget sets the fixed benchmark budget; the finetune grid is configured \
             with --start-budget/--end-budget/--budget-step"
                .into(),
        ));
    }

    let mut config = settings.augment.clone();
    config.mode = mode;
    if let Some(p) = args.policy {
        config.collision_policy = p;
    }
    if let Some(v) = args.start_budget {
        config.start_budget = v;
    }
    if let Some(v) = args.end_budget {
        config.end_budget = v;
    }
    if let Some(v) = args.budget_step {
        config.budget_step = v;
    }
    if let Some(v) = args.budget {
        config.benchmark_budget = v;
    }
    // Benchmark runs share the suite grid's seed derivation, so a standalone
    // `augment benchmark` reproduces the corresponding `suite run` file
    // byte-for-byte when given the same pool.
    config.seed = match mode {
        Mode::Benchmark => derive_seed(
            settings.seed,
            args.dataset.as_str(),
            config.benchmark_budget as u64,
        ),
        Mode::Finetune => derive_seed(settings.seed, &format!("finetune-{}", args.dataset), 0),
    };
    config.validate()?;

    let dataset = load_dataset(&args.input, args.dataset)?;
    let (default_pool_dataset, fallback_input) = match mode {
        // Finetuning draws distractors from the training corpus itself.
        Mode::Finetune => (args.dataset, Some(args.input.as_path())),
        Mode::Benchmark => (pool_source_for(args.dataset), None),
    };
    let (pool, pool_source) = load_pool(
        args.pool_cache.as_deref(),
        args.pool_input.as_deref(),
        args.pool_dataset,
        default_pool_dataset,
        fallback_input,
        &settings.counter,
    )?;

    let label = args.dataset.to_string();
    let chunk_size = args.chunk_size.unwrap_or_else(|| RunOptions::default().chunk_size);
    let (records, passthroughs) = write_augmented(
        &dataset,
        &pool,
        &config,
        &settings.counter,
        &settings.template,
        &args.out,
        chunk_size,
        !args.no_verify,
        args.include_originals,
        &label,
    )?;

    let manifest = AugmentManifest {
        tool: crate::tool_version(),
        command: match mode {
            Mode::Finetune => "augment finetune",
            Mode::Benchmark => "augment benchmark",
        }
        .into(),
        dataset: label,
        pool_source,
        master_seed: settings.seed,
        counter_spec: settings.counter_spec_string.clone(),
        counter_name: settings.counter.name().to_string(),
        config,
        include_originals: args.include_originals,
        template: settings.template.clone(),
        file: args
            .out
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sha256: sha256_hex_file(&args.out)?,
        records,
        passthroughs,
    };
    write_json_atomic(&args.out.with_extension("manifest.json"), &manifest)?;
    log::info!("{records} records -> {}", args.out.display());
    Ok(())
}

/// Streams one augmented dataset to disk in bounded-memory batches,
/// returning (records written, passthrough count among augmented records).
#[allow(clippy::too_many_arguments)]
fn write_augmented(
    dataset: &Dataset,
    pool: &SchemaPool,
    config: &AugmentationConfig,
    counter: &TokenCounter,
    template: &PromptTemplate,
    out: &Path,
    chunk_size: usize,
    verify: bool,
    include_originals: bool,
    dataset_label: &str,
) -> Result<(usize, usize)> {
    let chunk_size = chunk_size.max(1);
    let mut writer = JsonlWriter::create(out)?;
    let mut records_written = 0usize;
    let mut passthroughs = 0usize;
    for (chunk_index, chunk) in dataset.examples.chunks(chunk_size).enumerate() {
        let first_index = (chunk_index * chunk_size) as u64;
        let augmented = augment_slice(chunk, first_index, pool, config, counter, template);
        let rendered: Vec<(Option<SuiteRecord>, SuiteRecord)> = augmented
            .par_iter()
            .zip(chunk.par_iter())
            .map(|(aug, ex)| {
                let original = include_originals.then(|| {
                    // The unmodified copy is the passthrough case: its own
                    // length stands in for the budget and no randomness is
                    // consumed.
                    let own_length = base_example_length(ex, template, counter);
                    let copy = AugmentedExample {
                        base: ex.clone(),
                        distractors: Vec::new(),
                        final_order: (0..ex.schema.items.len())
                            .map(SchemaSlot::Original)
                            .collect(),
                        budget: own_length,
                        accounted_length: own_length,
                        retokenized_length: None,
                        passthrough: true,
                    };
                    let mut record =
                        to_record(&copy, pool, template, counter, dataset_label, config.seed, verify);
                    record.id = format!("{}-orig", record.id);
                    record
                });
                let record =
                    to_record(aug, pool, template, counter, dataset_label, config.seed, verify);
                (original, record)
            })
            .collect();
        for (original, augmented_record) in rendered {
            if let Some(record) = original {
                writer.write(&record)?;
                records_written += 1;
            }
            if augmented_record.meta.passthrough {
                passthroughs += 1;
            }
            writer.write(&augmented_record)?;
            records_written += 1;
        }
    }
    writer.finish()?;
    Ok((records_written, passthroughs))
}

fn cmd_suite_plan(args: SuitePlanArgs, settings: Settings) -> Result<()> {
    let mut plan = plan_default_suites(settings.seed);
    plan.restrict(&args.datasets, &args.budgets);
    if args.json {
        stdout_line(to_json_pretty(&plan)?)?;
        return Ok(());
    }
    for target in &plan.targets {
        stdout_line(format_args!(
            "{}\t{}\t{}\t{}\t{}",
            target.dataset,
            target.budget,
            target.pool_source,
            target.suite_seed(plan.seed),
            target.rel_path()
        ))?;
    }
    Ok(())
}

fn cmd_suite_run(args: SuiteRunArgs, global: &GlobalOpts, settings: Settings) -> Result<()> {
    let mut roots = DatasetRoots::new();
    if let Some(path) = &args.spider_root {
        roots.set(DatasetName::SpiderTrain, path);
    }
    if let Some(path) = &args.bird_root {
        roots.set(DatasetName::BirdTrain, path);
    }
    for (name, path) in &args.roots {
        roots.set(*name, path);
    }

    let (mut plan, counter_spec_string, counter, template, policy) =
        if let Some(manifest_path) = &args.manifest {
            let manifest = read_manifest(manifest_path)?;
            let mut plan = manifest.to_plan()?;
            if let Some(seed) = global.seed {
                plan.seed = seed;
            }
            let counter_spec_string = match &global.tokenizer {
                Some(s) => s.clone(),
                None => manifest.counter_spec.clone(),
            };
            let counter = TokenCounter::load(&CounterSpec::parse(&counter_spec_string)?)?;
            let template = match &global.template {
                Some(path) => PromptTemplate::from_file(path)?,
                None => manifest.template.clone(),
            };
            let policy = args.policy.unwrap_or(manifest.collision_policy);
            (plan, counter_spec_string, counter, template, policy)
        } else {
            (
                plan_default_suites(settings.seed),
                settings.counter_spec_string,
                settings.counter,
                settings.template,
                args.policy.unwrap_or(settings.policy),
            )
        };

    plan.restrict(&args.datasets, &args.budgets);
    if plan.targets.is_empty() {
        return Err(Error::Config(
            "plan is empty after dataset/budget filters".into(),
        ));
    }

    let options = RunOptions {
        collision_policy: policy,
        chunk_size: args.chunk_size.unwrap_or_else(|| RunOptions::default().chunk_size),
        verify: !args.no_verify,
    };
    let manifest = run_plan(
        &plan,
        &roots,
        &args.out,
        &counter_spec_string,
        &counter,
        &template,
        &options,
    )?;

    let failed = manifest.targets.iter().filter(|t| t.error.is_some()).count();
    let total = manifest.targets.len();
    if failed > 0 {
        return Err(Error::TargetsFailed {
            failed,
            total,
            manifest: args.out.join("manifest.json"),
        });
    }
    log::info!("{total} suites written under {}", args.out.display());
    Ok(())
}

fn cmd_suite_stats(args: SuiteStatsArgs) -> Result<()> {
    let stats = suite_stats(&args.suite, args.bin_width.unwrap_or(DEFAULT_HISTOGRAM_BIN))?;
    stdout_line(to_json_pretty(&stats)?)?;
    Ok(())
}

/// Per-offset result recorded in a placement manifest.
#[derive(Debug, Serialize, Deserialize)]
pub struct PlacementSuiteReport {
    pub offset_target: usize,
    pub suite_seed: u64,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    pub records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Provenance and per-offset results of a placement run.
#[derive(Debug, Serialize, Deserialize)]
pub struct PlacementRunManifest {
    pub tool: String,
    pub master_seed: u64,
    pub counter_spec: String,
    pub counter_name: String,
    pub collision_policy: CollisionPolicy,
    pub template: PromptTemplate,
    pub spec: PlacementSpec,
    pub dataset: String,
    pub pool_source: String,
    /// Examples short enough to be placed.
    pub eligible: usize,
    /// Examples actually used per suite (after --max-samples).
    pub samples_used: usize,
    pub suites: Vec<PlacementSuiteReport>,
}

fn cmd_placement_run(args: PlacementArgs, settings: Settings) -> Result<()> {
    let mut spec = settings.placement;
    if let Some(v) = args.total_budget {
        spec.total_budget = v;
    }
    if let Some(v) = args.offset_step {
        spec.offset_step = v;
    }
    if let Some(v) = args.n_offsets {
        spec.n_offsets = v;
    }
    if let Some(v) = args.max_sample_length {
        spec.max_sample_length = v;
    }
    spec.validate()?;
    let policy = args.policy.unwrap_or(settings.policy);

    let dataset = load_dataset(&args.input, args.dataset)?;
    let (pool, pool_source) = load_pool(
        args.pool_cache.as_deref(),
        args.pool_input.as_deref(),
        args.pool_dataset,
        pool_source_for(args.dataset),
        None,
        &settings.counter,
    )?;

    let counter = &settings.counter;
    let template = &settings.template;
    let eligible = select_eligible(&dataset.examples, counter, template, spec.max_sample_length);
    if eligible.is_empty() {
        return Err(Error::Config(format!(
            "no examples at or below {} tokens; raise --max-sample-length",
            spec.max_sample_length
        )));
    }
    let samples = match args.max_samples {
        Some(n) => &eligible[..eligible.len().min(n.max(1))],
        None => &eligible[..],
    };
    let dataset_label = args.dataset.to_string();
    let chunk_size = args.chunk_size.unwrap_or(16).max(1);

    let mut suites = Vec::with_capacity(spec.n_offsets);
    for offset_target in spec.offsets() {
        let suite_seed = placement_suite_seed(settings.seed, offset_target);
        let rel = format!("offset-{offset_target}/data.jsonl");
        let path = args.out.join(&rel);
        let mut report = PlacementSuiteReport {
            offset_target,
            suite_seed,
            file: rel,
            sha256: None,
            records: 0,
            error: None,
        };
        let outcome = (|| -> std::result::Result<(), String> {
            let placed = generate_offset_suite(
                samples,
                &pool,
                &spec,
                offset_target,
                counter,
                template,
                policy,
                suite_seed,
            )
            .map_err(|e| e.to_string())?;
            let mut writer = JsonlWriter::create(&path).map_err(|e| e.to_string())?;
            for batch in placed.chunks(chunk_size) {
                let records: Vec<SuiteRecord> = batch
                    .par_iter()
                    .map(|p| p.to_record(&pool, template, counter, &dataset_label, suite_seed))
                    .collect();
                for record in &records {
                    writer.write(record).map_err(|e| e.to_string())?;
                    report.records += 1;
                }
            }
            writer.finish().map_err(|e| e.to_string())?;
            report.sha256 = Some(sha256_hex_file(&path).map_err(|e| e.to_string())?);
            Ok(())
        })();
        match outcome {
            Ok(()) => log::info!("offset {offset_target}: {} records", report.records),
            Err(message) => {
                log::error!("offset {offset_target}: {message}");
                report.error = Some(message);
            }
        }
        suites.push(report);
    }

    let manifest = PlacementRunManifest {
        tool: crate::tool_version(),
        master_seed: settings.seed,
        counter_spec: settings.counter_spec_string.clone(),
        counter_name: counter.name().to_string(),
        collision_policy: policy,
        template: template.clone(),
        spec,
        dataset: dataset_label,
        pool_source,
        eligible: eligible.len(),
        samples_used: samples.len(),
        suites,
    };
    let manifest_path = args.out.join("manifest.json");
    write_json_atomic(&manifest_path, &manifest)?;

    let failed = manifest.suites.iter().filter(|s| s.error.is_some()).count();
    if failed > 0 {
        return Err(Error::TargetsFailed {
            failed,
            total: manifest.suites.len(),
            manifest: manifest_path,
        });
    }
    log::info!(
        "{} offset suites written under {}",
        manifest.suites.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_eval_exec(args: EvalArgs) -> Result<()> {
    let mut items = Vec::new();
    for record in read_jsonl_iter::<SuiteRecord>(&args.suite)? {
        let record = record?;
        items.push(ScoreItem {
            id: record.id,
            db_id: record.db_id,
            gold_sql: record.target_sql,
        });
    }
    let mut predictions = HashMap::new();
    for prediction in read_jsonl_iter::<Prediction>(&args.predictions)? {
        let prediction = prediction?;
        if predictions.insert(prediction.id.clone(), prediction.sql).is_some() {
            log::warn!("duplicate prediction for id {}; keeping the last", prediction.id);
        }
    }

    let report = score_suite(
        &items,
        &predictions,
        &args.db_root,
        Duration::from_millis(args.timeout_ms),
    );
    write_json_atomic(&args.out, &report)?;
    let csv_path = args.csv.clone().unwrap_or_else(|| args.out.with_extension("csv"));
    write_report_csv(&csv_path, &report)?;
    stdout_line(serde_json::json!({
        "total": report.total,
        "matches": report.matches,
        "accuracy_pct": report.accuracy_pct,
    }))?;
    Ok(())
}

fn cmd_inspect_example(args: InspectArgs) -> Result<()> {
    for (position, record) in read_jsonl_iter::<SuiteRecord>(&args.suite)?.enumerate() {
        let record = record?;
        let hit = match (&args.id, args.index) {
            (Some(id), _) => record.id == *id,
            (None, Some(index)) => position == index,
            (None, None) => unreachable!("clap enforces the selector group"),
        };
        if !hit {
            continue;
        }
        if args.prompt_only {
            stdout_line(&record.prompt)?;
        } else {
            stdout_line(to_json_pretty(&record)?)?;
        }
        return Ok(());
    }
    Err(Error::Config(match (&args.id, args.index) {
        (Some(id), _) => format!("no record with id {id:?} in {}", args.suite.display()),
        (None, index) => format!(
            "index {} is past the end of {}",
            index.unwrap_or_default(),
            args.suite.display()
        ),
    }))
}

/// Loads the distractor pool from a cache file or by building it from a
/// dataset directory. Returns the pool and a human-readable description of
/// where it came from, for manifests.
fn load_pool(
    cache: Option<&Path>,
    pool_input: Option<&Path>,
    pool_dataset: Option<DatasetName>,
    default_dataset: DatasetName,
    fallback_input: Option<&Path>,
    counter: &TokenCounter,
) -> Result<(SchemaPool, String)> {
    if let Some(path) = cache {
        let pool = read_pool_cache(path, counter.name())?.ok_or_else(|| {
            Error::PoolCounterMismatch {
                pool: pool_cache_counter(path).unwrap_or_else(|_| "<unknown>".into()),
                active: counter.name().to_string(),
            }
        })?;
        return Ok((pool, format!("cache:{}", path.display())));
    }
    let root = pool_input.or(fallback_input).ok_or_else(|| {
        Error::Config("a distractor source is required: --pool-cache or --pool-input".into())
    })?;
    let name = pool_dataset.unwrap_or(default_dataset);
    let source = load_dataset(root, name)?;
    Ok((build_pool(&source, counter), format!("{name}:{}", root.display())))
}

fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::json("<memory>", e))
}

/// Writes one line of data to standard output. A consumer that closed the
/// pipe early (`sqlctx ... | head`) ends the process quietly, as Unix tools
/// conventionally do; any other write failure is a real error.
fn stdout_line(text: impl std::fmt::Display) -> Result<()> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        Err(e) => Err(Error::io(Path::new("<stdout>"), e)),
    }
}
