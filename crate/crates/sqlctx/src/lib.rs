//! Token-budgeted schema augmentation for long-context NL2SQL datasets.
//!
//! The pipeline takes NL2SQL examples (question, database schema, gold SQL),
//! pads each prompt with distractor `CREATE TABLE` blocks sampled from a
//! schema pool built over a training corpus, and emits long-context
//! finetuning sets, fixed-budget benchmark suites, and positional-robustness
//! suites where the relevant schema sits at a controlled token offset.
//! An execution-match scorer evaluates predicted SQL against gold SQL over
//! the benchmark's SQLite databases.
//!
//! ```text
//! dataset ──► schema pool ──► augment (greedy, token-budgeted) ──► JSONL suites
//!                  │                                                   │
//!                  └────────► placement (offset-controlled)            └──► exec-match scoring
//! ```
//!
//! Everything downstream of a seed is deterministic: identical
//! (seed, dataset, pool, tokenizer) inputs produce byte-identical output
//! files regardless of worker count.

pub mod augment;
pub mod cli;
pub mod dataset;
pub mod ddl;
pub mod error;
pub mod exec_match;
pub mod jsonl;
pub mod placement;
pub mod pool;
pub mod prompt;
pub mod suite;
pub mod token;

pub use augment::{AugmentationConfig, AugmentedExample, CollisionPolicy, Mode};
pub use dataset::{Dataset, DatasetName, Example};
pub use ddl::{ParsedSchema, SchemaItem};
pub use error::{Error, Result};
pub use placement::PlacementSpec;
pub use pool::SchemaPool;
pub use prompt::PromptTemplate;
pub use suite::{SuitePlan, SuiteTarget};
pub use token::{CounterKind, CounterSpec, TokenCounter};

/// Tool identifier embedded in manifests for provenance.
pub fn tool_version() -> String {
    format!("sqlctx {}", env!("CARGO_PKG_VERSION"))
}
