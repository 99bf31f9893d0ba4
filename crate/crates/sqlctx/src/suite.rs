//! Benchmark suite orchestration: the default 45-target plan (5 datasets ×
//! 9 budgets with cross-pool distractor wiring), streaming suite generation
//! with a reproducibility manifest, and per-suite statistics.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_slice, derive_seed, to_record, AugmentationConfig, CollisionPolicy, Mode};
use crate::dataset::{load_dataset, Dataset, DatasetName};
use crate::error::{Error, Result};
use crate::jsonl::{sha256_hex_file, JsonlWriter, SuiteRecord};
use crate::pool::{build_pool, SchemaPool};
use crate::prompt::PromptTemplate;
use crate::token::TokenCounter;

/// The nine context budgets of the default plan: 8k through 64k in 8k steps,
/// then 128k, all as binary-power token counts.
pub const DEFAULT_BUDGETS: [usize; 9] = [
    8_192, 16_384, 24_576, 32_768, 40_960, 49_152, 57_344, 65_536, 131_072,
];

/// The five evaluation datasets of the default plan.
pub const BENCHMARK_DATASETS: [DatasetName; 5] = [
    DatasetName::SpiderDev,
    DatasetName::SpiderTest,
    DatasetName::SpiderRealistic,
    DatasetName::SpiderSyn,
    DatasetName::BirdDev,
];

/// Distractor pool source for a dataset: Spider-family suites draw from the
/// BIRD training schemas and BIRD suites from the Spider training schemas,
/// so no distractor can echo an evaluation schema.
pub fn pool_source_for(dataset: DatasetName) -> DatasetName {
    if dataset.is_spider_family() {
        DatasetName::BirdTrain
    } else {
        DatasetName::SpiderTrain
    }
}

/// One suite to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteTarget {
    pub dataset: DatasetName,
    pub budget: usize,
    pub pool_source: DatasetName,
}

impl SuiteTarget {
    pub fn new(dataset: DatasetName, budget: usize) -> Self {
        SuiteTarget {
            dataset,
            budget,
            pool_source: pool_source_for(dataset),
        }
    }

    /// Suite file path relative to the output root.
    pub fn rel_path(&self) -> String {
        format!("{}/{}/data.jsonl", self.dataset, self.budget)
    }

    /// This suite's seed, derived from the master seed.
    pub fn suite_seed(&self, master_seed: u64) -> u64 {
        derive_seed(master_seed, self.dataset.as_str(), self.budget as u64)
    }
}

/// An ordered list of suites to produce under one master seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuitePlan {
    pub targets: Vec<SuiteTarget>,
    pub seed: u64,
}

impl SuitePlan {
    /// Keeps only targets matching the given dataset/budget filters (empty
    /// filter = keep all).
    pub fn restrict(&mut self, datasets: &[DatasetName], budgets: &[usize]) {
        self.targets.retain(|t| {
            (datasets.is_empty() || datasets.contains(&t.dataset))
                && (budgets.is_empty() || budgets.contains(&t.budget))
        });
    }
}

/// The full default plan: every benchmark dataset at every default budget.
pub fn plan_default_suites(seed: u64) -> SuitePlan {
    let mut targets = Vec::with_capacity(BENCHMARK_DATASETS.len() * DEFAULT_BUDGETS.len());
    for dataset in BENCHMARK_DATASETS {
        for budget in DEFAULT_BUDGETS {
            targets.push(SuiteTarget::new(dataset, budget));
        }
    }
    SuitePlan { targets, seed }
}

/// Where each dataset lives on disk. Spider-family names fall back to the
/// spider-train root and BIRD names to the bird-train root, so the common
/// case needs only two entries.
#[derive(Debug, Clone, Default)]
pub struct DatasetRoots {
    map: BTreeMap<DatasetName, PathBuf>,
}

impl DatasetRoots {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: DatasetName, root: impl Into<PathBuf>) {
        self.map.insert(name, root.into());
    }

    pub fn resolve(&self, name: DatasetName) -> Result<&Path> {
        if let Some(p) = self.map.get(&name) {
            return Ok(p);
        }
        let fallback = if name.is_spider_family() {
            self.map.get(&DatasetName::SpiderTrain)
        } else if name != DatasetName::Custom {
            self.map.get(&DatasetName::BirdTrain)
        } else {
            None
        };
        fallback.map(|p| p.as_path()).ok_or_else(|| {
            Error::Config(format!(
                "no root configured for dataset {name}; pass --root {name}=<dir>"
            ))
        })
    }
}

/// Tunables for a plan run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub collision_policy: CollisionPolicy,
    /// Examples rendered per write batch; bounds peak memory.
    pub chunk_size: usize,
    /// Re-tokenize each assembled prompt into `retokenized_length`.
    pub verify: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            collision_policy: CollisionPolicy::NoDuplicateNames,
            chunk_size: 64,
            verify: true,
        }
    }
}

/// Per-target result recorded in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetReport {
    pub dataset: String,
    pub budget: usize,
    pub pool_source: String,
    pub suite_seed: u64,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    pub records: usize,
    pub passthroughs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<SuiteStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Run provenance and per-target results. Contains everything needed to
/// reproduce the run byte-for-byte (plus the dataset roots, which are
/// machine-local and passed on the command line).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub master_seed: u64,
    /// Counter spec string (`approx` or `bpe:<path>`).
    pub counter_spec: String,
    pub counter_name: String,
    pub collision_policy: CollisionPolicy,
    pub template: PromptTemplate,
    pub targets: Vec<TargetReport>,
}

impl Manifest {
    /// Rebuilds the plan this manifest describes, for reruns.
    pub fn to_plan(&self) -> Result<SuitePlan> {
        let mut targets = Vec::with_capacity(self.targets.len());
        for t in &self.targets {
            targets.push(SuiteTarget {
                dataset: t.dataset.parse()?,
                budget: t.budget,
                pool_source: t.pool_source.parse()?,
            });
        }
        Ok(SuitePlan {
            targets,
            seed: self.master_seed,
        })
    }
}

/// Generates every suite in the plan under `out_dir`, returning the manifest
/// (also written to `<out_dir>/manifest.json`, with a summary CSV next to
/// it). A failing target is recorded and the rest proceed.
pub fn run_plan(
    plan: &SuitePlan,
    roots: &DatasetRoots,
    out_dir: &Path,
    counter_spec_str: &str,
    counter: &TokenCounter,
    template: &PromptTemplate,
    options: &RunOptions,
) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut datasets: BTreeMap<DatasetName, std::result::Result<Arc<Dataset>, String>> =
        BTreeMap::new();
    let mut pools: BTreeMap<DatasetName, std::result::Result<Arc<SchemaPool>, String>> =
        BTreeMap::new();

    let load = |cache: &mut BTreeMap<DatasetName, std::result::Result<Arc<Dataset>, String>>,
                name: DatasetName|
     -> std::result::Result<Arc<Dataset>, String> {
        cache
            .entry(name)
            .or_insert_with(|| {
                roots
                    .resolve(name)
                    .and_then(|root| load_dataset(root, name))
                    .map(Arc::new)
                    .map_err(|e| e.to_string())
            })
            .clone()
    };

    let mut reports = Vec::with_capacity(plan.targets.len());
    for target in &plan.targets {
        let mut report = TargetReport {
            dataset: target.dataset.to_string(),
            budget: target.budget,
            pool_source: target.pool_source.to_string(),
            suite_seed: target.suite_seed(plan.seed),
            file: target.rel_path(),
            sha256: None,
            records: 0,
            passthroughs: 0,
            stats: None,
            error: None,
        };

        let outcome = (|| -> std::result::Result<(), String> {
            let dataset = load(&mut datasets, target.dataset)?;
            let pool = pools
                .entry(target.pool_source)
                .or_insert_with(|| {
                    roots
                        .resolve(target.pool_source)
                        .and_then(|root| load_dataset(root, target.pool_source))
                        .map(|ds| Arc::new(build_pool(&ds, counter)))
                        .map_err(|e| e.to_string())
                })
                .clone()?;

            let path = out_dir.join(target.rel_path());
            let written = write_suite(
                &dataset,
                &pool,
                target,
                plan.seed,
                &path,
                counter,
                template,
                options,
            )
            .map_err(|e| e.to_string())?;
            report.records = written.records;
            report.passthroughs = written.passthroughs;
            report.stats = Some(written.stats);
            report.sha256 = Some(sha256_hex_file(&path).map_err(|e| e.to_string())?);
            Ok(())
        })();
        if let Err(message) = outcome {
            log::error!("target {} @ {}: {message}", target.dataset, target.budget);
            report.error = Some(message);
        }
        reports.push(report);
    }

    let manifest = Manifest {
        tool: crate::tool_version(),
        master_seed: plan.seed,
        counter_spec: counter_spec_str.to_string(),
        counter_name: counter.name().to_string(),
        collision_policy: options.collision_policy,
        template: template.clone(),
        targets: reports,
    };
    write_json_atomic(&out_dir.join("manifest.json"), &manifest)?;
    write_stats_csv(&out_dir.join("stats.csv"), &manifest.targets)?;
    Ok(manifest)
}

struct WrittenSuite {
    records: usize,
    passthroughs: usize,
    stats: SuiteStats,
}

/// Streams one suite to disk in chunks: augment a batch in parallel, render
/// its records in parallel, write them in order, drop the batch.
fn write_suite(
    dataset: &Dataset,
    pool: &SchemaPool,
    target: &SuiteTarget,
    master_seed: u64,
    path: &Path,
    counter: &TokenCounter,
    template: &PromptTemplate,
    options: &RunOptions,
) -> Result<WrittenSuite> {
    let suite_seed = target.suite_seed(master_seed);
    let config = AugmentationConfig {
        mode: Mode::Benchmark,
        benchmark_budget: target.budget,
        seed: suite_seed,
        collision_policy: options.collision_policy,
        ..AugmentationConfig::default()
    };
    let dataset_label = target.dataset.to_string();

    let mut writer = JsonlWriter::create(path)?;
    let mut acc = StatsAccumulator::default();
    for (chunk_index, chunk) in dataset.examples.chunks(options.chunk_size.max(1)).enumerate() {
        let first_index = (chunk_index * options.chunk_size.max(1)) as u64;
        let augmented = augment_slice(chunk, first_index, pool, &config, counter, template);
        let records: Vec<SuiteRecord> = augmented
            .par_iter()
            .map(|aug| {
                to_record(aug, pool, template, counter, &dataset_label, suite_seed, options.verify)
            })
            .collect();
        for record in &records {
            acc.add(record);
            writer.write(record)?;
        }
    }
    writer.finish()?;
    let (records, passthroughs) = (acc.count, acc.passthroughs);
    Ok(WrittenSuite {
        records,
        passthroughs,
        stats: acc.finish(DEFAULT_HISTOGRAM_BIN),
    })
}

/// Default token-length histogram bin width.
pub const DEFAULT_HISTOGRAM_BIN: usize = 4_096;

/// Incremental per-suite statistics over record metadata.
#[derive(Debug, Default)]
pub struct StatsAccumulator {
    tables: Vec<usize>,
    tokens: Vec<usize>,
    count: usize,
    passthroughs: usize,
}

impl StatsAccumulator {
    pub fn add(&mut self, record: &SuiteRecord) {
        self.tables.push(record.meta.n_tables);
        self.tokens.push(record.meta.accounted_length);
        self.count += 1;
        if record.meta.passthrough {
            self.passthroughs += 1;
        }
    }

    pub fn finish(&self, bin_width: usize) -> SuiteStats {
        let (mean_tables, std_tables) = crate::pool::mean_and_population_std(&self.tables);
        let (mean_tokens, std_tokens) = crate::pool::mean_and_population_std(&self.tokens);
        let mut bins: BTreeMap<usize, usize> = BTreeMap::new();
        for &t in &self.tokens {
            *bins.entry(t / bin_width.max(1) * bin_width.max(1)).or_default() += 1;
        }
        SuiteStats {
            records: self.count,
            passthroughs: self.passthroughs,
            mean_tables,
            std_tables,
            mean_tokens,
            std_tokens,
            histogram_bin_width: bin_width,
            histogram: bins
                .into_iter()
                .map(|(start, count)| HistogramBin { start, count })
                .collect(),
        }
    }
}

/// Table-count and token-length statistics of one suite. Standard deviations
/// are the population form; token lengths are the accounted prompt + SQL
/// counts from record metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteStats {
    pub records: usize,
    pub passthroughs: usize,
    pub mean_tables: f64,
    pub std_tables: f64,
    pub mean_tokens: f64,
    pub std_tokens: f64,
    pub histogram_bin_width: usize,
    pub histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Inclusive lower edge of the bin.
    pub start: usize,
    pub count: usize,
}

/// Computes statistics for an existing suite file.
pub fn suite_stats(path: &Path, bin_width: usize) -> Result<SuiteStats> {
    let mut acc = StatsAccumulator::default();
    for record in crate::jsonl::read_jsonl_iter::<SuiteRecord>(path)? {
        acc.add(&record?);
    }
    Ok(acc.finish(bin_width))
}

/// Writes the per-target summary CSV. Standard deviations are population
/// form, as noted in the header.
pub fn write_stats_csv(path: &Path, targets: &[TargetReport]) -> Result<()> {
    let mut out = String::new();
    out.push_str(
        "dataset,budget,records,passthroughs,mean_tables,std_tables_population,\
         mean_tokens,std_tokens_population,error\n",
    );
    for t in targets {
        match (&t.stats, &t.error) {
            (Some(s), _) => out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6},\n",
                t.dataset, t.budget, s.records, s.passthroughs,
                s.mean_tables, s.std_tables, s.mean_tokens, s.std_tokens
            )),
            (None, err) => out.push_str(&format!(
                "{},{},0,0,,,,,{}\n",
                t.dataset,
                t.budget,
                err.as_deref().unwrap_or("unknown").replace(',', ";")
            )),
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Serializes `value` as pretty JSON to `path` via a temp file + rename, so
/// a crash never leaves a half-written file.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(json.as_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads a manifest back.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::json(path, e))
}
