//! The distractor schema pool: every unique schema item from a training
//! dataset, with parallel name and token-length arrays used by the
//! augmentation loop's additive budget accounting.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::ddl::{SchemaItem, ITEM_SEPARATOR};
use crate::error::{Error, Result};
use crate::jsonl::{read_jsonl_iter, JsonlWriter};
use crate::token::TokenCounter;

/// Deduplicated schema items plus the parallel arrays the sampling loop
/// consumes. Immutable after build; shared read-only across workers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaPool {
    pub items: Vec<SchemaItem>,
    /// Canonical table name of each item (parallel to `items`). Names may
    /// repeat across items from different source databases.
    pub names: Vec<String>,
    /// Token length of each item's rendered block including its trailing
    /// separator (parallel to `items`).
    pub lengths: Vec<usize>,
    pub source_dataset: String,
    pub counter_name: String,
}

impl SchemaPool {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Sum of all item lengths: the total distractor token mass available.
    pub fn total_tokens(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// Largest single item length; 0 for an empty pool.
    pub fn max_length(&self) -> usize {
        self.lengths.iter().copied().max().unwrap_or(0)
    }

    pub fn empty(source_dataset: &str, counter_name: &str) -> Self {
        SchemaPool {
            items: Vec::new(),
            names: Vec::new(),
            lengths: Vec::new(),
            source_dataset: source_dataset.into(),
            counter_name: counter_name.into(),
        }
    }
}

/// Collects every unique (ddl_text, rows_text) item across all databases of
/// `train`, in first-occurrence order over db_id-sorted databases. Lengths
/// are measured on the item block plus the inter-item separator, matching
/// how items later contribute to an assembled prompt.
pub fn build_pool(train: &Dataset, counter: &TokenCounter) -> SchemaPool {
    let mut pool = SchemaPool::empty(train.name.as_str(), counter.name());
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for schema in train.databases.values() {
        for item in &schema.items {
            let key = (item.ddl_text.clone(), item.rows_text.clone());
            if !seen.insert(key) {
                continue;
            }
            pool.lengths
                .push(counter.count(&format!("{}{ITEM_SEPARATOR}", item.block())));
            pool.names.push(item.table_name.clone());
            pool.items.push(item.clone());
        }
    }
    pool
}

/// Summary numbers for a pool. Standard deviation is the population form
/// (divide by N).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolStats {
    pub item_count: usize,
    pub mean_length: f64,
    pub std_length: f64,
    /// Items whose canonical name is shared with at least one other item.
    pub duplicate_name_count: usize,
    pub total_tokens: usize,
}

pub fn pool_stats(pool: &SchemaPool) -> PoolStats {
    let (mean, std) = mean_and_population_std(&pool.lengths);
    let mut name_counts: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for name in &pool.names {
        *name_counts.entry(name).or_default() += 1;
    }
    let duplicate_name_count = pool
        .names
        .iter()
        .filter(|n| name_counts[n.as_str()] > 1)
        .count();
    PoolStats {
        item_count: pool.len(),
        mean_length: mean,
        std_length: std,
        duplicate_name_count,
        total_tokens: pool.total_tokens(),
    }
}

/// Mean and population standard deviation; (0, 0) for an empty slice.
pub fn mean_and_population_std(values: &[usize]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

/// Cache file header, stored as the first JSONL line.
#[derive(Debug, Serialize, Deserialize)]
struct CacheHeader {
    source_dataset: String,
    counter_name: String,
    item_count: usize,
}

/// Cached pool entry: one item plus its precomputed length.
#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    #[serde(flatten)]
    item: SchemaItem,
    length: usize,
}

/// Writes the pool as JSONL: a header line, then one line per item.
pub fn write_pool_cache(pool: &SchemaPool, path: &Path) -> Result<()> {
    let mut writer = JsonlWriter::create(path)?;
    writer.write(&CacheHeader {
        source_dataset: pool.source_dataset.clone(),
        counter_name: pool.counter_name.clone(),
        item_count: pool.len(),
    })?;
    for (item, &length) in pool.items.iter().zip(&pool.lengths) {
        writer.write(&CacheEntry {
            item: item.clone(),
            length,
        })?;
    }
    writer.finish()
}

/// Counter name recorded in a cache file's header, without loading the
/// items. Lets callers that cannot rebuild report a precise mismatch.
pub fn pool_cache_counter(path: &Path) -> Result<String> {
    let mut lines = read_jsonl_iter::<serde_json::Value>(path)?;
    let header_value = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{}: empty pool cache", path.display())))??;
    let header: CacheHeader = serde_json::from_value(header_value)
        .map_err(|e| Error::Config(format!("{}: bad pool cache header: {e}", path.display())))?;
    Ok(header.counter_name)
}

/// Reads a cached pool. Returns `Ok(None)` when the cache was produced with
/// a different counter, signaling the caller to rebuild.
pub fn read_pool_cache(path: &Path, counter_name: &str) -> Result<Option<SchemaPool>> {
    let mut lines = read_jsonl_iter::<serde_json::Value>(path)?;
    let header_value = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{}: empty pool cache", path.display())))??;
    let header: CacheHeader = serde_json::from_value(header_value)
        .map_err(|e| Error::Config(format!("{}: bad pool cache header: {e}", path.display())))?;
    if header.counter_name != counter_name {
        return Ok(None);
    }
    let mut pool = SchemaPool::empty(&header.source_dataset, &header.counter_name);
    for line in lines {
        let entry: CacheEntry = serde_json::from_value(line?)
            .map_err(|e| Error::Config(format!("{}: bad pool cache entry: {e}", path.display())))?;
        pool.lengths.push(entry.length);
        pool.names.push(entry.item.table_name.clone());
        pool.items.push(entry.item);
    }
    if pool.len() != header.item_count {
        return Err(Error::Config(format!(
            "{}: pool cache truncated: header says {} items, found {}",
            path.display(),
            header.item_count,
            pool.len()
        )));
    }
    Ok(Some(pool))
}
