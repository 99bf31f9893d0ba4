//! Property tests for the pipeline's load-bearing invariants: token-count
//! additivity across whitespace seams, schema script round-tripping, greedy
//! selection correctness under arbitrary visit orders, budget-grid closure,
//! and offset measurement.

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use proptest::prelude::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use sqlctx::augment::{choose_budget, select_distractors_ordered, AugmentationConfig, CollisionPolicy, Mode};
use sqlctx::dataset::Example;
use sqlctx::ddl::{canonical_table_name, parse_schema_script, ParsedSchema, SchemaItem, ITEM_SEPARATOR};
use sqlctx::placement::measure_offset;
use sqlctx::pool::SchemaPool;
use sqlctx::prompt::PromptTemplate;
use sqlctx::token::{CounterSpec, TokenCounter};

fn approx() -> TokenCounter {
    TokenCounter::load(&CounterSpec::approximate()).unwrap()
}

fn tiny_bpe() -> TokenCounter {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny_bpe.json");
    TokenCounter::load(&CounterSpec::bpe(path)).unwrap()
}

/// Text over a mixed alphabet: identifiers, digits, punctuation, whitespace,
/// and a couple of non-ASCII letters.
fn text() -> impl Strategy<Value = String> {
    proptest::string::string_regex("[a-zA-Z0-9_ \\t\\nàß économie.,;:(){}<>*/'\"=+-]{0,60}")
        .unwrap()
}

/// Whitespace seams like the ones prompt assembly inserts.
fn seam() -> impl Strategy<Value = &'static str> {
    prop_oneof![
        Just("\n\n"),
        Just("\n"),
        Just(" "),
        Just("\t"),
        Just(" \n "),
    ]
}

/// Space-separated words over the tiny BPE fixture's alphabet.
fn bpe_text() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        proptest::string::string_regex("[abceflrst]{1,8}").unwrap(),
        0..6,
    )
    .prop_map(|words| words.join(" "))
}

proptest! {
    /// The approximate counter is exactly additive across any whitespace
    /// seam — the property that makes per-item accounting equal a recount
    /// of the assembled prompt.
    #[test]
    fn approx_count_additive_across_whitespace(a in text(), b in text(), s in seam()) {
        let counter = approx();
        prop_assert_eq!(
            counter.count(&format!("{a}{s}{b}")),
            counter.count(&a) + counter.count(&b)
        );
    }

    /// Direct concatenation can merge at most the two boundary runs, so the
    /// count drops by at most one and never grows (joint_bound 0).
    #[test]
    fn approx_count_concat_bounds(a in text(), b in text()) {
        let counter = approx();
        let sum = counter.count(&a) + counter.count(&b);
        let joined = counter.count(&format!("{a}{b}"));
        prop_assert!(joined <= sum + counter.joint_bound());
        prop_assert!(joined + 1 >= sum);
    }

    /// The byte-pair counter never merges across whitespace, so it is also
    /// exactly additive over whitespace seams, and direct concatenation
    /// overshoots by at most its declared joint bound.
    #[test]
    fn bpe_count_additive_and_bounded(a in bpe_text(), b in bpe_text(), s in seam()) {
        let counter = tiny_bpe();
        let sum = counter.count(&a) + counter.count(&b);
        let seamed = counter.count(&format!("{a}{s}{b}"));
        let joined = counter.count(&format!("{a}{b}"));
        prop_assert_eq!(seamed, sum);
        prop_assert!(joined <= sum + counter.joint_bound());
    }
}

// ---------------------------------------------------------------------------
// Schema script round-trip.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct TableSpec {
    raw_name: String,
    if_not_exists: bool,
    cols: usize,
    rows: bool,
}

fn schema_spec() -> impl Strategy<Value = Vec<TableSpec>> {
    proptest::collection::vec(
        (
            proptest::string::string_regex("[A-Za-z][A-Za-z0-9_]{0,8}").unwrap(),
            proptest::bool::ANY,
            proptest::bool::ANY,
            1..5usize,
            proptest::bool::ANY,
        ),
        1..6,
    )
    .prop_map(|raw| {
        raw.into_iter()
            .enumerate()
            .map(|(idx, (stem, quoted, if_not_exists, cols, rows))| {
                // A per-table suffix keeps canonical names distinct.
                let base = format!("{stem}_{idx}");
                let raw_name = if quoted { format!("\"{base}\"") } else { base };
                TableSpec {
                    raw_name,
                    if_not_exists,
                    cols,
                    rows,
                }
            })
            .collect()
    })
}

fn render_table(spec: &TableSpec) -> String {
    let cols: Vec<String> = (0..spec.cols)
        .map(|k| format!("col{k} {}", ["INT", "TEXT", "REAL", "BLOB"][k % 4]))
        .collect();
    let ine = if spec.if_not_exists { "IF NOT EXISTS " } else { "" };
    let ddl = format!("CREATE TABLE {ine}{} (\n  {}\n);", spec.raw_name, cols.join(",\n  "));
    if spec.rows {
        let header: Vec<String> = (0..spec.cols).map(|k| format!("col{k}")).collect();
        format!(
            "{ddl}\n/* 1 example rows:\nSELECT * FROM {} LIMIT 3;\n{}\n{}\n*/",
            spec.raw_name,
            header.join("\t"),
            (0..spec.cols).map(|k| k.to_string()).collect::<Vec<_>>().join("\t")
        )
    } else {
        ddl
    }
}

proptest! {
    /// Rendering tables to a script and parsing it back preserves every byte
    /// of DDL and sample-row text and canonicalizes names predictably.
    #[test]
    fn schema_script_round_trips(specs in schema_spec()) {
        let script = specs.iter().map(render_table).collect::<Vec<_>>().join(ITEM_SEPARATOR);
        let parsed = parse_schema_script(&script, "prop-db").unwrap();
        prop_assert_eq!(parsed.items.len(), specs.len());
        for (item, spec) in parsed.items.iter().zip(&specs) {
            let rendered = render_table(spec);
            prop_assert_eq!(&rendered, &item.block());
            prop_assert!(rendered.starts_with(&item.ddl_text));
            prop_assert_eq!(&item.table_name, &canonical_table_name(&spec.raw_name));
            prop_assert_eq!(&item.source_db, "prop-db");
        }
    }
}

// ---------------------------------------------------------------------------
// Greedy selection under arbitrary visit orders.
// ---------------------------------------------------------------------------

fn mk_item(name: &str, cols: usize, rows: bool) -> SchemaItem {
    let cols_text: Vec<String> = (0..cols.max(1)).map(|k| format!("c{k} INT")).collect();
    let ddl_text = format!("CREATE TABLE {name} ({});", cols_text.join(", "));
    let rows_text = if rows {
        format!("/* 1 example rows:\nSELECT * FROM \"{name}\" LIMIT 3;\nc0\n4\n*/")
    } else {
        String::new()
    };
    SchemaItem {
        ddl_text,
        rows_text,
        table_name: name.to_string(),
        source_db: "prop".to_string(),
    }
}

#[derive(Debug, Clone)]
struct SelectionCase {
    pool_shape: Vec<(u8, u8, bool)>,
    orig_shape: Vec<(u8, u8, bool)>,
    base_len: usize,
    budget: usize,
    order_seed: u64,
    dedup_names: bool,
}

fn selection_case() -> impl Strategy<Value = SelectionCase> {
    (
        proptest::collection::vec((0u8..12, 1u8..5, proptest::bool::ANY), 0..24),
        proptest::collection::vec((0u8..12, 1u8..5, proptest::bool::ANY), 1..3),
        0..300usize,
        1..600usize,
        proptest::num::u64::ANY,
        proptest::bool::ANY,
    )
        .prop_map(
            |(pool_shape, orig_shape, base_len, budget, order_seed, dedup_names)| SelectionCase {
                pool_shape,
                orig_shape,
                base_len,
                budget,
                order_seed,
                dedup_names,
            },
        )
}

proptest! {
    /// Under an arbitrary visit order, selection preserves relative order,
    /// never admits original content or blocked names, stays strictly under
    /// budget, and is maximal: every skipped item was either filtered or
    /// would have overflowed at the moment it was visited.
    #[test]
    fn selection_is_sound_and_visit_maximal(case in selection_case()) {
        let counter = approx();
        let policy = if case.dedup_names {
            CollisionPolicy::NoDuplicateNames
        } else {
            CollisionPolicy::OriginalOnly
        };

        // Original schema: distinct names within the shared n<idx> namespace.
        let mut seen_idx = HashSet::new();
        let orig_items: Vec<SchemaItem> = case
            .orig_shape
            .iter()
            .filter(|(idx, ..)| seen_idx.insert(*idx))
            .map(|&(idx, cols, rows)| mk_item(&format!("n{idx}"), cols as usize, rows))
            .collect();
        let original = ParsedSchema {
            db_id: "prop-db".to_string(),
            items: orig_items,
        };

        // Pool over the same namespace, so name and content collisions with
        // the original schema occur naturally.
        let items: Vec<SchemaItem> = case
            .pool_shape
            .iter()
            .map(|&(idx, cols, rows)| mk_item(&format!("n{idx}"), cols as usize, rows))
            .collect();
        let mut pool = SchemaPool::empty("prop-pool", counter.name());
        for item in items {
            pool.lengths.push(counter.count(&format!("{}{ITEM_SEPARATOR}", item.block())));
            pool.names.push(item.table_name.clone());
            pool.items.push(item);
        }

        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(case.order_seed));

        let added = select_distractors_ordered(
            &pool,
            &original,
            case.base_len,
            case.budget,
            policy,
            &order,
        );

        // Replay the walk independently and verify every decision.
        let position: std::collections::HashMap<usize, usize> =
            order.iter().enumerate().map(|(at, &idx)| (idx, at)).collect();
        let original_content: HashSet<(&str, &str)> = original
            .items
            .iter()
            .map(|i| (i.ddl_text.as_str(), i.rows_text.as_str()))
            .collect();
        let mut blocked: HashSet<&str> =
            original.items.iter().map(|i| i.table_name.as_str()).collect();
        let added_set: HashSet<usize> = added.iter().copied().collect();
        prop_assert_eq!(added_set.len(), added.len(), "an item was added twice");

        let mut last_position = None;
        for &idx in &added {
            let at = position[&idx];
            prop_assert!(last_position < Some(at), "additions out of visit order");
            last_position = Some(at);
        }

        let mut running = case.base_len;
        for &idx in &order {
            let item = &pool.items[idx];
            let filtered_content =
                original_content.contains(&(item.ddl_text.as_str(), item.rows_text.as_str()));
            let filtered_name = blocked.contains(pool.names[idx].as_str());
            let fits = running + pool.lengths[idx] < case.budget;
            let should_add = !filtered_content && !filtered_name && fits;
            prop_assert_eq!(
                added_set.contains(&idx),
                should_add,
                "visit decision diverged at pool index {}",
                idx
            );
            if should_add {
                running += pool.lengths[idx];
                if policy == CollisionPolicy::NoDuplicateNames {
                    blocked.insert(pool.names[idx].as_str());
                }
            }
        }
        prop_assert!(
            added.is_empty() || running < case.budget,
            "accounted total {} reached the budget {}",
            running,
            case.budget
        );
    }

    /// Finetune draws always land on the configured grid; benchmark mode
    /// returns the fixed budget without consuming any randomness.
    #[test]
    fn budget_draws_stay_on_grid(
        start_step in (1..64usize, 1..32usize),
        levels in 0..40usize,
        bench in 1..100_000usize,
        seed in proptest::num::u64::ANY,
    ) {
        let (start_raw, step) = start_step;
        let start = start_raw * 16;
        let config = AugmentationConfig {
            mode: Mode::Finetune,
            start_budget: start,
            end_budget: start + step * levels,
            budget_step: step,
            benchmark_budget: bench,
            seed,
            ..AugmentationConfig::default()
        };
        config.validate().unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let drawn = choose_budget(&config, &mut rng);
        prop_assert!(drawn >= config.start_budget && drawn <= config.end_budget);
        prop_assert_eq!((drawn - config.start_budget) % config.budget_step, 0);

        let bench_config = AugmentationConfig { mode: Mode::Benchmark, ..config };
        let mut rng_a = ChaCha8Rng::seed_from_u64(seed ^ 0xD1CE);
        let mut rng_b = rng_a.clone();
        prop_assert_eq!(choose_budget(&bench_config, &mut rng_a), bench);
        prop_assert_eq!(rng_a.random::<u64>(), rng_b.random::<u64>(), "benchmark draw consumed randomness");
    }
}

// ---------------------------------------------------------------------------
// Offset measurement on synthetic prompts.
// ---------------------------------------------------------------------------

proptest! {
    /// Measuring where the original schema starts agrees with summing the
    /// sections rendered ahead of it, for any number of leading distractors.
    #[test]
    fn measured_offset_equals_prefix_sum(
        n_before in 0..12usize,
        n_after in 0..6usize,
        cols in 1..5usize,
        question in proptest::string::string_regex("[A-Za-z0-9 ?]{1,40}").unwrap(),
    ) {
        let counter = approx();
        let template = PromptTemplate::default();

        let original = ParsedSchema {
            db_id: "probe".to_string(),
            items: vec![mk_item("og_target", cols, true)],
        };
        let example = Example {
            id: "probe".to_string(),
            db_id: "probe".to_string(),
            question: question.clone(),
            evidence: None,
            target_sql: "SELECT 1".to_string(),
            schema: Arc::new(original),
        };

        let mut blocks: Vec<String> = (0..n_before)
            .map(|i| mk_item(&format!("px_before{i}"), 1 + i % 4, i % 2 == 0).block())
            .collect();
        let expected: usize = counter.count(&template.instruction_text)
            + counter.count(template.schema_header.as_deref().unwrap_or(""))
            + blocks.iter().map(|b| counter.count(b)).sum::<usize>();
        blocks.extend(example.schema.items.iter().map(|i| i.block()));
        blocks.extend(
            (0..n_after).map(|i| mk_item(&format!("px_after{i}"), 2, false).block()),
        );
        let prompt = template.render_from_blocks(&blocks, &example.question, None);

        let measured = measure_offset(&prompt, &example.schema, &counter).unwrap();
        prop_assert_eq!(measured, expected);
    }
}
