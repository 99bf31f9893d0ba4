//! Token-budgeted distractor injection.
//!
//! For each example: pick a context budget, walk the schema pool in a seeded
//! random permutation, add every item that (a) is not already part of the
//! original schema, (b) does not collide on table name, and (c) still fits
//! under the budget with additive accounting — then shuffle the combined
//! schema into its final order. The scan never stops early: an item that
//! overflows the budget is skipped and scanning continues, so smaller items
//! later in the permutation can still be used.
//!
//! Randomness contract: each example gets its own generator derived from
//! (master seed, example index). Within one example the draw order is fixed:
//! budget first (finetune mode only — benchmark mode consumes nothing), then
//! the pool permutation, then the final shuffle. Output is therefore
//! independent of worker count and scheduling.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Example};
use crate::error::{Error, Result};
use crate::jsonl::{RecordMeta, SuiteRecord};
use crate::pool::SchemaPool;
use crate::prompt::PromptTemplate;
use crate::token::TokenCounter;

/// Budget selection mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Draw each example's budget uniformly from the configured range.
    Finetune,
    /// Use the fixed benchmark budget for every example.
    Benchmark,
}

/// How table-name collisions among distractors are handled.
///
/// `OriginalOnly` checks candidate names only against the original schema,
/// which can let two same-named distractors from different source databases
/// into one prompt. `NoDuplicateNames` (default) additionally tracks names
/// already added, so every table name in the final schema is unique.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollisionPolicy {
    OriginalOnly,
    NoDuplicateNames,
}

impl std::str::FromStr for CollisionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original-only" => Ok(CollisionPolicy::OriginalOnly),
            "no-duplicate-names" => Ok(CollisionPolicy::NoDuplicateNames),
            other => Err(Error::Config(format!(
                "unknown collision policy {other:?}; expected original-only or no-duplicate-names"
            ))),
        }
    }
}

/// Generation parameters. Defaults: budgets drawn from 4096..=32768 in steps
/// of 512 for finetuning, fixed 8192 for benchmarks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    /// Smallest finetune budget.
    pub start_budget: usize,
    /// Largest finetune budget.
    pub end_budget: usize,
    /// Spacing of the finetune budget grid.
    pub budget_step: usize,
    /// Fixed budget used in benchmark mode.
    pub benchmark_budget: usize,
    pub mode: Mode,
    pub seed: u64,
    pub collision_policy: CollisionPolicy,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            start_budget: 4096,
            end_budget: 32768,
            budget_step: 512,
            benchmark_budget: 8192,
            mode: Mode::Benchmark,
            seed: 0,
            collision_policy: CollisionPolicy::NoDuplicateNames,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.start_budget > self.end_budget {
            return Err(Error::Config(format!(
                "start_budget {} exceeds end_budget {}",
                self.start_budget, self.end_budget
            )));
        }
        if self.budget_step == 0 {
            return Err(Error::Config("budget_step must be positive".into()));
        }
        if self.benchmark_budget == 0 {
            return Err(Error::Config("benchmark_budget must be positive".into()));
        }
        Ok(())
    }

    /// Number of values in the finetune budget grid.
    pub fn budget_grid_size(&self) -> usize {
        (self.end_budget - self.start_budget) / self.budget_step + 1
    }
}

/// Selects the context budget for one example. Finetune mode draws uniformly
/// from {start, start+step, …, end}; benchmark mode returns the fixed budget
/// without consuming any randomness.
pub fn choose_budget(config: &AugmentationConfig, rng: &mut ChaCha8Rng) -> usize {
    match config.mode {
        Mode::Benchmark => config.benchmark_budget,
        Mode::Finetune => {
            let k = rng.random_range(0..config.budget_grid_size());
            config.start_budget + k * config.budget_step
        }
    }
}

/// Derives the per-example generator from the master seed and the example's
/// index. The 32-byte seed is: master seed (LE), index (LE), the constant
/// 0x9E3779B97F4A7C15 (LE), zeros.
pub fn example_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&index.to_le_bytes());
    seed[16..24].copy_from_slice(&0x9E37_79B9_7F4A_7C15u64.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// Derives a labeled sub-seed from a master seed via FNV-1a over
/// (master, label, n). Used to give each generated suite its own seed while
/// everything still flows from one configured value.
pub fn derive_seed(master_seed: u64, label: &str, n: u64) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = FNV_OFFSET;
    for byte in master_seed
        .to_le_bytes()
        .into_iter()
        .chain(label.bytes())
        .chain(n.to_le_bytes())
    {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// One position in the final schema ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemaSlot {
    /// Index into the example's original schema items.
    Original(usize),
    /// Index into the distractor pool.
    Pool(usize),
}

/// The outcome of augmenting one example. Prompt text is rendered on demand
/// (see [`AugmentedExample::render_prompt`]) so large sets can stream.
#[derive(Debug, Clone)]
pub struct AugmentedExample {
    pub base: Example,
    /// Pool indices of the added distractors, in insertion order.
    pub distractors: Vec<usize>,
    /// Final arrangement of original and distractor items.
    pub final_order: Vec<SchemaSlot>,
    pub budget: usize,
    /// Additively accounted token length of prompt + target SQL.
    pub accounted_length: usize,
    /// Filled by [`verify_budget`].
    pub retokenized_length: Option<usize>,
    /// True when the original prompt already met or exceeded the budget and
    /// the example was emitted untouched.
    pub passthrough: bool,
}

impl AugmentedExample {
    pub fn n_tables(&self) -> usize {
        self.final_order.len()
    }

    pub fn n_distractors(&self) -> usize {
        self.distractors.len()
    }

    /// Assembles the full prompt in final order.
    pub fn render_prompt(&self, pool: &SchemaPool, template: &PromptTemplate) -> String {
        let blocks: Vec<String> = self
            .final_order
            .iter()
            .map(|slot| match slot {
                SchemaSlot::Original(i) => self.base.schema.items[*i].block(),
                SchemaSlot::Pool(i) => pool.items[*i].block(),
            })
            .collect();
        template.render_from_blocks(&blocks, &self.base.question, self.base.evidence.as_deref())
    }
}

/// Joins a prompt with its target SQL the way budget accounting sees them:
/// one newline between prompt and SQL.
pub fn scored_text(prompt: &str, target_sql: &str) -> String {
    format!("{prompt}\n{target_sql}")
}

/// Token length of the example as originally given: instructions, original
/// schema, evidence, question, plus the target SQL.
pub fn base_example_length(
    ex: &Example,
    template: &PromptTemplate,
    counter: &TokenCounter,
) -> usize {
    let prompt = template.render_prompt(&ex.schema.items, &ex.question, ex.evidence.as_deref());
    counter.count(&scored_text(&prompt, &ex.target_sql))
}

/// The greedy filter loop over an explicit visit order. Returns pool indices
/// added, in visit order. Exposed separately so tests can drive it with a
/// hand-picked permutation.
pub fn select_distractors_ordered(
    pool: &SchemaPool,
    original: &crate::ddl::ParsedSchema,
    original_length: usize,
    budget: usize,
    policy: CollisionPolicy,
    visit_order: &[usize],
) -> Vec<usize> {
    let original_keys: std::collections::HashSet<(&str, &str)> = original
        .items
        .iter()
        .map(|i| (i.ddl_text.as_str(), i.rows_text.as_str()))
        .collect();
    let mut blocked_names: std::collections::HashSet<&str> =
        original.items.iter().map(|i| i.table_name.as_str()).collect();

    let mut running = original_length;
    let mut added = Vec::new();
    for &idx in visit_order {
        let item = &pool.items[idx];
        if original_keys.contains(&(item.ddl_text.as_str(), item.rows_text.as_str())) {
            continue;
        }
        let name = pool.names[idx].as_str();
        if blocked_names.contains(name) {
            continue;
        }
        let item_length = pool.lengths[idx];
        if running + item_length < budget {
            running += item_length;
            added.push(idx);
            if policy == CollisionPolicy::NoDuplicateNames {
                blocked_names.insert(name);
            }
        }
        // Overflowing items are skipped, not terminal: keep scanning.
    }
    added
}

/// Seeded-permutation distractor selection: shuffles the pool index range
/// with `rng`, then runs the greedy filter loop over it.
pub fn select_distractors(
    pool: &SchemaPool,
    original: &crate::ddl::ParsedSchema,
    original_length: usize,
    budget: usize,
    policy: CollisionPolicy,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(rng);
    select_distractors_ordered(pool, original, original_length, budget, policy, &order)
}

/// Augments one example against `budget`. The caller supplies the example's
/// generator, already past its budget draw. An example whose original length
/// meets or exceeds the budget is passed through untouched (flagged); an
/// empty pool likewise leaves the example unmodified.
pub fn augment_example(
    ex: &Example,
    pool: &SchemaPool,
    budget: usize,
    counter: &TokenCounter,
    template: &PromptTemplate,
    policy: CollisionPolicy,
    rng: &mut ChaCha8Rng,
) -> AugmentedExample {
    let original_length = base_example_length(ex, template, counter);
    let identity: Vec<SchemaSlot> = (0..ex.schema.items.len()).map(SchemaSlot::Original).collect();

    if original_length >= budget {
        log::warn!(
            "{}: original length {original_length} ≥ budget {budget}; passing through unaugmented",
            ex.id
        );
        return AugmentedExample {
            base: ex.clone(),
            distractors: Vec::new(),
            final_order: identity,
            budget,
            accounted_length: original_length,
            retokenized_length: None,
            passthrough: true,
        };
    }
    if pool.is_empty() {
        return AugmentedExample {
            base: ex.clone(),
            distractors: Vec::new(),
            final_order: identity,
            budget,
            accounted_length: original_length,
            retokenized_length: None,
            passthrough: false,
        };
    }

    let added = select_distractors(pool, &ex.schema, original_length, budget, policy, rng);
    let accounted_length =
        original_length + added.iter().map(|&i| pool.lengths[i]).sum::<usize>();

    let mut final_order = identity;
    final_order.extend(added.iter().copied().map(SchemaSlot::Pool));
    final_order.shuffle(rng);

    AugmentedExample {
        base: ex.clone(),
        distractors: added,
        final_order,
        budget,
        accounted_length,
        retokenized_length: None,
        passthrough: false,
    }
}

/// Augments every example of a dataset in parallel. Output order equals
/// input order and bytes are independent of worker count: example `i` always
/// uses `example_rng(config.seed, i)`.
pub fn augment_set(
    dataset: &Dataset,
    pool: &SchemaPool,
    config: &AugmentationConfig,
    counter: &TokenCounter,
    template: &PromptTemplate,
) -> Vec<AugmentedExample> {
    augment_slice(&dataset.examples, 0, pool, config, counter, template)
}

/// Augments `examples`, numbering them from `first_index` for seed
/// derivation. Used by streaming writers that process a dataset in chunks.
pub fn augment_slice(
    examples: &[Example],
    first_index: u64,
    pool: &SchemaPool,
    config: &AugmentationConfig,
    counter: &TokenCounter,
    template: &PromptTemplate,
) -> Vec<AugmentedExample> {
    examples
        .par_iter()
        .enumerate()
        .map(|(offset, ex)| {
            let mut rng = example_rng(config.seed, first_index + offset as u64);
            let budget = choose_budget(config, &mut rng);
            augment_example(ex, pool, budget, counter, template, config.collision_policy, &mut rng)
        })
        .collect()
}

/// Post-hoc budget verification: re-tokenizes the fully assembled prompt +
/// target SQL as one string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetVerification {
    pub retokenized_length: usize,
    /// retokenized_length ≤ budget.
    pub within_budget: bool,
    /// Tokens over budget; 0 when within.
    pub overflow: usize,
}

pub fn verify_budget(
    aug: &AugmentedExample,
    pool: &SchemaPool,
    template: &PromptTemplate,
    counter: &TokenCounter,
) -> BudgetVerification {
    let prompt = aug.render_prompt(pool, template);
    let retokenized_length = counter.count(&scored_text(&prompt, &aug.base.target_sql));
    BudgetVerification {
        retokenized_length,
        within_budget: retokenized_length <= aug.budget,
        overflow: retokenized_length.saturating_sub(aug.budget),
    }
}

/// Renders an augmented example into its output record. `verify` fills
/// `retokenized_length` from a fresh recount of the assembled prompt.
pub fn to_record(
    aug: &AugmentedExample,
    pool: &SchemaPool,
    template: &PromptTemplate,
    counter: &TokenCounter,
    dataset_name: &str,
    seed: u64,
    verify: bool,
) -> SuiteRecord {
    let prompt = aug.render_prompt(pool, template);
    let retokenized_length = if verify {
        Some(counter.count(&scored_text(&prompt, &aug.base.target_sql)))
    } else {
        None
    };
    SuiteRecord {
        id: aug.base.id.clone(),
        dataset: dataset_name.to_string(),
        db_id: aug.base.db_id.clone(),
        prompt,
        target_sql: aug.base.target_sql.clone(),
        meta: RecordMeta {
            budget: aug.budget,
            accounted_length: aug.accounted_length,
            retokenized_length,
            n_tables: aug.n_tables(),
            n_distractors: aug.n_distractors(),
            seed,
            tokenizer: counter.name().to_string(),
            offset_target: None,
            offset_actual: None,
            passthrough: aug.passthrough,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddl::{parse_schema_script, SchemaItem};
    use std::sync::Arc;

    fn item(name: &str, source: &str, pad_cols: usize) -> SchemaItem {
        let cols: Vec<String> = (0..pad_cols).map(|i| format!("c{i} INT")).collect();
        SchemaItem {
            ddl_text: format!("CREATE TABLE {name} ({});", cols.join(", ")),
            rows_text: String::new(),
            table_name: name.to_string(),
            source_db: source.to_string(),
        }
    }

    fn pool_of(items: Vec<SchemaItem>, lengths: Vec<usize>) -> SchemaPool {
        let names = items.iter().map(|i| i.table_name.clone()).collect();
        SchemaPool {
            names,
            lengths,
            items,
            source_dataset: "fixture".into(),
            counter_name: "approx".into(),
        }
    }

    fn example_with_schema(script: &str) -> Example {
        let schema = parse_schema_script(script, "db").unwrap();
        Example {
            id: "ex-0".into(),
            db_id: "db".into(),
            question: "How many rows?".into(),
            evidence: None,
            target_sql: "SELECT count(*) FROM a".into(),
            schema: Arc::new(schema),
        }
    }

    #[test]
    fn budget_grid_has_57_values_at_defaults() {
        let config = AugmentationConfig {
            mode: Mode::Finetune,
            ..AugmentationConfig::default()
        };
        assert_eq!(config.budget_grid_size(), 57);
        let mut rng = example_rng(1, 0);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..5000 {
            let b = choose_budget(&config, &mut rng);
            assert!(b >= 4096 && b <= 32768 && (b - 4096) % 512 == 0);
            seen.insert(b);
        }
        assert_eq!(seen.len(), 57, "all grid values reachable");
    }

    #[test]
    fn benchmark_mode_always_fixed_budget() {
        let config = AugmentationConfig::default();
        let mut rng = example_rng(1, 0);
        for _ in 0..10 {
            assert_eq!(choose_budget(&config, &mut rng), 8192);
        }
    }

    #[test]
    fn degenerate_range_is_constant() {
        let config = AugmentationConfig {
            start_budget: 4096,
            end_budget: 4096,
            mode: Mode::Finetune,
            ..AugmentationConfig::default()
        };
        let mut rng = example_rng(1, 0);
        assert_eq!(choose_budget(&config, &mut rng), 4096);
    }

    #[test]
    fn config_validation_catches_bad_ranges() {
        let mut config = AugmentationConfig::default();
        assert!(config.validate().is_ok());
        config.start_budget = 50_000;
        assert!(config.validate().is_err());
        config = AugmentationConfig {
            budget_step: 0,
            ..AugmentationConfig::default()
        };
        assert!(config.validate().is_err());
    }

    /// Hand-simulated greedy walk: base 100, budget 130, item lengths
    /// (40, 20, 15) visited in that order. 40 overflows (140 ≥ 130) and is
    /// skipped; 20 fits (120 < 130); 15 then overflows (135 ≥ 130). The scan
    /// does not stop at the first overflow.
    #[test]
    fn greedy_loop_matches_hand_simulation() {
        let pool = pool_of(
            vec![item("p0", "src", 1), item("p1", "src", 1), item("p2", "src", 1)],
            vec![40, 20, 15],
        );
        let original = parse_schema_script("CREATE TABLE a (x INT);", "db").unwrap();
        let added = select_distractors_ordered(
            &pool,
            &original,
            100,
            130,
            CollisionPolicy::NoDuplicateNames,
            &[0, 1, 2],
        );
        assert_eq!(added, vec![1], "exactly the 20-token item is added");
    }

    #[test]
    fn name_collision_with_original_is_never_added() {
        let pool = pool_of(
            vec![item("a", "other", 3), item("fresh", "other", 1)],
            vec![5, 5],
        );
        let original = parse_schema_script("CREATE TABLE a (x INT);", "db").unwrap();
        let added = select_distractors_ordered(
            &pool,
            &original,
            10,
            10_000,
            CollisionPolicy::NoDuplicateNames,
            &[0, 1],
        );
        assert_eq!(added, vec![1], "name `a` collides with the original schema");
    }

    #[test]
    fn textual_member_of_original_schema_is_never_added() {
        let original = parse_schema_script("CREATE TABLE a (x INT);", "db").unwrap();
        let mut member = original.items[0].clone();
        member.table_name = "a".into();
        // same (ddl, rows) content, so it is filtered before the name check
        let pool = pool_of(vec![member, item("b", "other", 1)], vec![5, 5]);
        let added = select_distractors_ordered(
            &pool,
            &original,
            10,
            10_000,
            CollisionPolicy::OriginalOnly,
            &[0, 1],
        );
        assert_eq!(added, vec![1]);
    }

    #[test]
    fn collision_policies_differ_on_added_names() {
        // two distinct pool items sharing the name "dup"
        let mut first = item("dup", "src1", 1);
        first.ddl_text.push(' ');
        let pool = pool_of(vec![first, item("dup", "src2", 2)], vec![5, 5]);
        let original = parse_schema_script("CREATE TABLE a (x INT);", "db").unwrap();

        let strict = select_distractors_ordered(
            &pool, &original, 10, 10_000, CollisionPolicy::NoDuplicateNames, &[0, 1],
        );
        assert_eq!(strict, vec![0], "second `dup` blocked by the first");

        let loose = select_distractors_ordered(
            &pool, &original, 10, 10_000, CollisionPolicy::OriginalOnly, &[0, 1],
        );
        assert_eq!(loose, vec![0, 1], "original-only admits both same-named items");
    }

    #[test]
    fn empty_pool_passes_example_through() {
        let ex = example_with_schema("CREATE TABLE a (x INT);\n\nCREATE TABLE b (y INT);");
        let pool = SchemaPool::empty("fixture", "approx");
        let counter = TokenCounter::Approximate;
        let template = PromptTemplate::default();
        let mut rng = example_rng(7, 0);
        let aug = augment_example(
            &ex, &pool, 10_000, &counter, &template,
            CollisionPolicy::NoDuplicateNames, &mut rng,
        );
        assert!(aug.distractors.is_empty());
        assert_eq!(aug.final_order.len(), 2);
        assert_eq!(aug.accounted_length, base_example_length(&ex, &template, &counter));
        assert!(!aug.passthrough);
        assert_eq!(
            aug.render_prompt(&pool, &template),
            template.render_prompt(&ex.schema.items, &ex.question, None)
        );
    }

    #[test]
    fn oversized_original_passes_through_flagged() {
        let ex = example_with_schema("CREATE TABLE a (x INT);");
        let pool = pool_of(vec![item("b", "src", 1)], vec![5]);
        let counter = TokenCounter::Approximate;
        let template = PromptTemplate::default();
        let mut rng = example_rng(7, 0);
        let aug = augment_example(
            &ex, &pool, 4, &counter, &template,
            CollisionPolicy::NoDuplicateNames, &mut rng,
        );
        assert!(aug.passthrough);
        assert!(aug.distractors.is_empty());
        assert!(aug.accounted_length >= aug.budget);
        let verification = verify_budget(&aug, &pool, &template, &counter);
        assert_eq!(verification.retokenized_length, aug.accounted_length);
        assert!(!verification.within_budget);
    }

    #[test]
    fn accounted_length_is_strictly_under_budget_and_exact() {
        let ex = example_with_schema("CREATE TABLE a (x INT);");
        let items: Vec<SchemaItem> = (0..40).map(|i| item(&format!("t{i}"), "src", i % 5 + 1)).collect();
        let counter = TokenCounter::Approximate;
        let template = PromptTemplate::default();
        let lengths: Vec<usize> = items
            .iter()
            .map(|it| counter.count(&format!("{}\n\n", it.block())))
            .collect();
        let pool = pool_of(items, lengths);
        for seed in 0..20 {
            let mut rng = example_rng(seed, 0);
            let aug = augment_example(
                &ex, &pool, 120, &counter, &template,
                CollisionPolicy::NoDuplicateNames, &mut rng,
            );
            assert!(aug.accounted_length < 120);
            let v = verify_budget(&aug, &pool, &template, &counter);
            assert_eq!(
                v.retokenized_length, aug.accounted_length,
                "additive accounting is exact under the whitespace-blind counter"
            );
        }
    }

    #[test]
    fn originals_and_target_survive_byte_identical() {
        let ex = example_with_schema(
            "CREATE TABLE a (x INT);\n/* 1 example rows:\nSELECT * FROM \"a\" LIMIT 3;\nx\n3\n*/\n\nCREATE TABLE b (y INT);",
        );
        let items: Vec<SchemaItem> = (0..10).map(|i| item(&format!("t{i}"), "src", 2)).collect();
        let counter = TokenCounter::Approximate;
        let lengths: Vec<usize> = items
            .iter()
            .map(|it| counter.count(&format!("{}\n\n", it.block())))
            .collect();
        let pool = pool_of(items, lengths);
        let template = PromptTemplate::default();
        let mut rng = example_rng(3, 0);
        let aug = augment_example(
            &ex, &pool, 400, &counter, &template,
            CollisionPolicy::NoDuplicateNames, &mut rng,
        );
        assert!(!aug.distractors.is_empty());
        let prompt = aug.render_prompt(&pool, &template);
        for original in &ex.schema.items {
            assert!(prompt.contains(&original.block()), "original block missing");
        }
        assert!(prompt.contains(&ex.question));
        assert_eq!(aug.base.target_sql, ex.target_sql);
        // every original appears in final_order exactly once
        for i in 0..ex.schema.items.len() {
            let occurrences = aug
                .final_order
                .iter()
                .filter(|s| **s == SchemaSlot::Original(i))
                .count();
            assert_eq!(occurrences, 1);
        }
    }

    #[test]
    fn shuffle_marginals_are_uniform() {
        // 4 original items, pool present but nothing fits → the final
        // shuffle acts on exactly 4 items. Each item should land in each
        // position about a quarter of the time.
        let ex = example_with_schema(
            "CREATE TABLE a (w INT);\n\nCREATE TABLE b (x INT);\n\nCREATE TABLE c (y INT);\n\nCREATE TABLE d (z INT);",
        );
        let pool = pool_of(vec![item("huge", "src", 1)], vec![1_000_000]);
        let counter = TokenCounter::Approximate;
        let template = PromptTemplate::default();
        let base = base_example_length(&ex, &template, &counter);
        let budget = base + 10; // admits the shuffle path but no distractor
        let n_seeds = 10_000u32;
        let mut counts = [[0u32; 4]; 4];
        for seed in 0..n_seeds {
            let mut rng = example_rng(seed as u64, 0);
            let aug = augment_example(
                &ex, &pool, budget, &counter, &template,
                CollisionPolicy::NoDuplicateNames, &mut rng,
            );
            assert!(aug.distractors.is_empty());
            for (pos, slot) in aug.final_order.iter().enumerate() {
                let SchemaSlot::Original(i) = slot else { panic!() };
                counts[*i][pos] += 1;
            }
        }
        for row in counts {
            for c in row {
                let freq = c as f64 / n_seeds as f64;
                assert!(
                    (freq - 0.25).abs() < 0.02,
                    "position frequency {freq} strays from 0.25"
                );
            }
        }
    }

    #[test]
    fn augment_slice_is_deterministic_and_index_stable() {
        let ex = example_with_schema("CREATE TABLE a (x INT);");
        let examples: Vec<Example> = (0..6)
            .map(|i| Example {
                id: format!("ex-{i}"),
                ..ex.clone()
            })
            .collect();
        let items: Vec<SchemaItem> = (0..30).map(|i| item(&format!("t{i}"), "src", 2)).collect();
        let counter = TokenCounter::Approximate;
        let lengths: Vec<usize> = items
            .iter()
            .map(|it| counter.count(&format!("{}\n\n", it.block())))
            .collect();
        let pool = pool_of(items, lengths);
        let template = PromptTemplate::default();
        let config = AugmentationConfig {
            benchmark_budget: 300,
            seed: 11,
            ..AugmentationConfig::default()
        };

        let whole = augment_slice(&examples, 0, &pool, &config, &counter, &template);
        let head = augment_slice(&examples[..3], 0, &pool, &config, &counter, &template);
        let tail = augment_slice(&examples[3..], 3, &pool, &config, &counter, &template);
        let stitched: Vec<_> = head.iter().chain(tail.iter()).collect();
        for (a, b) in whole.iter().zip(stitched) {
            assert_eq!(a.distractors, b.distractors);
            assert_eq!(a.final_order, b.final_order);
            assert_eq!(a.accounted_length, b.accounted_length);
        }
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let a = derive_seed(1, "spider-dev", 8192);
        assert_eq!(a, derive_seed(1, "spider-dev", 8192));
        assert_ne!(a, derive_seed(1, "spider-dev", 16384));
        assert_ne!(a, derive_seed(1, "bird-dev", 8192));
        assert_ne!(a, derive_seed(2, "spider-dev", 8192));
    }

    #[test]
    fn record_meta_round_trip() {
        let ex = example_with_schema("CREATE TABLE a (x INT);");
        let items = vec![item("b", "src", 2)];
        let counter = TokenCounter::Approximate;
        let lengths: Vec<usize> = items
            .iter()
            .map(|it| counter.count(&format!("{}\n\n", it.block())))
            .collect();
        let pool = pool_of(items, lengths);
        let template = PromptTemplate::default();
        let mut rng = example_rng(5, 0);
        let aug = augment_example(
            &ex, &pool, 200, &counter, &template,
            CollisionPolicy::NoDuplicateNames, &mut rng,
        );
        let record = to_record(&aug, &pool, &template, &counter, "custom", 5, true);
        assert_eq!(record.id, "ex-0");
        assert_eq!(record.meta.n_tables, aug.final_order.len());
        assert_eq!(record.meta.retokenized_length, Some(record.meta.accounted_length));
        assert_eq!(record.meta.tokenizer, "approx");
        assert_eq!(record.target_sql, ex.target_sql);
    }
}
