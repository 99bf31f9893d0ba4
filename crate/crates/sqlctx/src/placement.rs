//! Positional-robustness suites: fixed-size prompts with the original schema
//! planted at a controlled token offset.
//!
//! For each offset D the prompt is assembled as instructions, then
//! distractors until the running token count first reaches D, then the
//! original schema items contiguously in their original order, then more
//! distractors up to the total budget, and finally the question. The offset
//! actually achieved is recorded next to the requested one; it can overshoot
//! by at most one distractor item.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{
    base_example_length, derive_seed, example_rng, scored_text, to_record, AugmentedExample,
    CollisionPolicy, SchemaSlot,
};
use crate::dataset::Example;
use crate::ddl::{ParsedSchema, ITEM_SEPARATOR};
use crate::error::{Error, Result};
use crate::jsonl::SuiteRecord;
use crate::pool::SchemaPool;
use crate::prompt::PromptTemplate;
use crate::token::TokenCounter;

/// Parameters of a placement run. Defaults: 125 offsets at 512-token steps
/// (512 … 64000) inside a 65536-token total budget, over samples no longer
/// than 384 tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlacementSpec {
    pub total_budget: usize,
    pub offset_step: usize,
    pub n_offsets: usize,
    /// Eligibility ceiling on prompt + target SQL token length.
    pub max_sample_length: usize,
}

impl Default for PlacementSpec {
    fn default() -> Self {
        PlacementSpec {
            total_budget: 65_536,
            offset_step: 512,
            n_offsets: 125,
            max_sample_length: 384,
        }
    }
}

impl PlacementSpec {
    pub fn validate(&self) -> Result<()> {
        if self.offset_step == 0 || self.n_offsets == 0 {
            return Err(Error::Config("offset_step and n_offsets must be positive".into()));
        }
        if self.offset_step * self.n_offsets > self.total_budget {
            return Err(Error::Config(format!(
                "largest offset {} exceeds total_budget {}",
                self.offset_step * self.n_offsets,
                self.total_budget
            )));
        }
        if self.max_sample_length >= self.total_budget {
            return Err(Error::Config(format!(
                "max_sample_length {} must be below total_budget {}",
                self.max_sample_length, self.total_budget
            )));
        }
        Ok(())
    }

    /// The offset grid: step, 2·step, …, n·step.
    pub fn offsets(&self) -> Vec<usize> {
        (1..=self.n_offsets).map(|k| k * self.offset_step).collect()
    }
}

/// Filters examples to those short enough for placement: token count of
/// prompt + target SQL at most `max_sample_length`, dataset order preserved.
pub fn select_eligible(
    examples: &[Example],
    counter: &TokenCounter,
    template: &PromptTemplate,
    max_sample_length: usize,
) -> Vec<Example> {
    examples
        .iter()
        .filter(|ex| base_example_length(ex, template, counter) <= max_sample_length)
        .cloned()
        .collect()
}

/// One placed example: an augmented example plus its offset bookkeeping.
#[derive(Debug, Clone)]
pub struct PlacedExample {
    pub aug: AugmentedExample,
    pub offset_target: usize,
    pub offset_actual: usize,
}

impl PlacedExample {
    pub fn to_record(
        &self,
        pool: &SchemaPool,
        template: &PromptTemplate,
        counter: &TokenCounter,
        dataset_name: &str,
        seed: u64,
    ) -> SuiteRecord {
        let mut record = to_record(&self.aug, pool, template, counter, dataset_name, seed, true);
        record.meta.offset_target = Some(self.offset_target);
        record.meta.offset_actual = Some(self.offset_actual);
        record
    }
}

/// Places one sample at offset `offset_target` within a `spec.total_budget`
/// prompt. `rng` drives the pool permutation; there is no final shuffle —
/// placement controls the order.
pub fn place_example(
    ex: &Example,
    pool: &SchemaPool,
    spec: &PlacementSpec,
    offset_target: usize,
    counter: &TokenCounter,
    template: &PromptTemplate,
    policy: CollisionPolicy,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<PlacedExample> {
    let original_length = base_example_length(ex, template, counter);
    let mut accounted = original_length;

    // Token length of everything rendered before the first schema block.
    let mut running: usize = template
        .preamble_sections(true)
        .iter()
        .map(|s| counter.count(&format!("{s}{ITEM_SEPARATOR}")))
        .sum();

    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(rng);

    let original_keys: std::collections::HashSet<(&str, &str)> = ex
        .schema
        .items
        .iter()
        .map(|i| (i.ddl_text.as_str(), i.rows_text.as_str()))
        .collect();
    let mut blocked_names: std::collections::HashSet<&str> =
        ex.schema.items.iter().map(|i| i.table_name.as_str()).collect();

    let eligible = |idx: usize,
                    blocked: &std::collections::HashSet<&str>|
     -> bool {
        let item = &pool.items[idx];
        !original_keys.contains(&(item.ddl_text.as_str(), item.rows_text.as_str()))
            && !blocked.contains(pool.names[idx].as_str())
    };

    let mut pre: Vec<usize> = Vec::new();
    let mut post: Vec<usize> = Vec::new();
    let mut cursor = 0usize;

    // Fill until the original schema's start position reaches the target.
    while running < offset_target {
        let Some(&idx) = order.get(cursor) else {
            return Err(Error::PoolExhausted {
                required: offset_target,
                available: running,
            });
        };
        cursor += 1;
        if !eligible(idx, &blocked_names) {
            continue;
        }
        let len = pool.lengths[idx];
        if accounted + len >= spec.total_budget {
            continue;
        }
        pre.push(idx);
        running += len;
        accounted += len;
        if policy == CollisionPolicy::NoDuplicateNames {
            blocked_names.insert(pool.names[idx].as_str());
        }
    }
    let offset_actual = running;

    // Fill the remainder of the budget after the original block.
    while cursor < order.len() {
        let idx = order[cursor];
        cursor += 1;
        if !eligible(idx, &blocked_names) {
            continue;
        }
        let len = pool.lengths[idx];
        if accounted + len < spec.total_budget {
            post.push(idx);
            accounted += len;
            if policy == CollisionPolicy::NoDuplicateNames {
                blocked_names.insert(pool.names[idx].as_str());
            }
        }
    }

    let mut final_order: Vec<SchemaSlot> = pre.iter().copied().map(SchemaSlot::Pool).collect();
    final_order.extend((0..ex.schema.items.len()).map(SchemaSlot::Original));
    final_order.extend(post.iter().copied().map(SchemaSlot::Pool));

    let mut distractors = pre;
    distractors.extend(post);

    Ok(PlacedExample {
        aug: AugmentedExample {
            base: ex.clone(),
            distractors,
            final_order,
            budget: spec.total_budget,
            accounted_length: accounted,
            retokenized_length: None,
            passthrough: false,
        },
        offset_target,
        offset_actual,
    })
}

/// Generates one offset suite: every sample placed at `offset_target`.
/// Sample `i` uses `example_rng(suite_seed, i)`, so suites are reproducible
/// independently of each other.
pub fn generate_offset_suite(
    samples: &[Example],
    pool: &SchemaPool,
    spec: &PlacementSpec,
    offset_target: usize,
    counter: &TokenCounter,
    template: &PromptTemplate,
    policy: CollisionPolicy,
    suite_seed: u64,
) -> Result<Vec<PlacedExample>> {
    if let Some(min_base) = samples
        .iter()
        .map(|ex| base_example_length(ex, template, counter))
        .min()
    {
        let available = pool.total_tokens() + min_base;
        if available < spec.total_budget {
            return Err(Error::PoolExhausted {
                required: spec.total_budget,
                available,
            });
        }
    }
    samples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut rng = example_rng(suite_seed, i as u64);
            place_example(ex, pool, spec, offset_target, counter, template, policy, &mut rng)
        })
        .collect()
}

/// Seed for one offset suite, derived from the master seed.
pub fn placement_suite_seed(master_seed: u64, offset_target: usize) -> u64 {
    derive_seed(master_seed, "placement", offset_target as u64)
}

/// Measures where the original schema begins inside a prompt: the token
/// count of the prefix strictly before the first original item's block.
pub fn measure_offset(
    prompt: &str,
    original: &ParsedSchema,
    counter: &TokenCounter,
) -> Result<usize> {
    let first = original.items.first().ok_or(Error::SchemaNotFound)?;
    let needle = first.block();
    let at = prompt.find(&needle).ok_or(Error::SchemaNotFound)?;
    Ok(counter.count(&prompt[..at]))
}

/// Verifies `scored_text` length of a placed record against the accounting —
/// convenience used by tests and the CLI's verification pass.
pub fn placed_lengths_agree(
    placed: &PlacedExample,
    pool: &SchemaPool,
    template: &PromptTemplate,
    counter: &TokenCounter,
) -> bool {
    let prompt = placed.aug.render_prompt(pool, template);
    counter.count(&scored_text(&prompt, &placed.aug.base.target_sql)) == placed.aug.accounted_length
}
