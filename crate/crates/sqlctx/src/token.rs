//! Token counting for budget accounting.
//!
//! Two counters are provided. The approximate counter needs no external
//! assets: it counts each maximal alphanumeric/underscore run as one unit and
//! each other non-whitespace character as one unit, so whitespace contributes
//! nothing and counts are exactly additive across whitespace seams. The BPE
//! counter loads a JSON definition (vocabulary + ordered merge rules) and
//! reproduces greedy lowest-rank-first pair merging within whitespace-
//! delimited words; see `docs/tokenizer-format.md` for the file schema.
//!
//! Budget arithmetic in the rest of the pipeline is additive (base length
//! plus precomputed per-item lengths), so each counter declares a joint
//! bound `c_join` with `count(a+b) ≤ count(a) + count(b) + c_join`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which counting scheme a spec refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CounterKind {
    Approximate,
    BpeFile,
}

/// Unloaded counter description, as given on the command line or in config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSpec {
    pub kind: CounterKind,
    /// Definition file; required for (and only meaningful to) `BpeFile`.
    pub definition_path: Option<PathBuf>,
}

impl CounterSpec {
    pub fn approximate() -> Self {
        CounterSpec {
            kind: CounterKind::Approximate,
            definition_path: None,
        }
    }

    pub fn bpe(path: impl Into<PathBuf>) -> Self {
        CounterSpec {
            kind: CounterKind::BpeFile,
            definition_path: Some(path.into()),
        }
    }

    /// Parses the CLI form: `approx` or `bpe:<path>`.
    pub fn parse(s: &str) -> Result<Self> {
        if s == "approx" {
            return Ok(CounterSpec::approximate());
        }
        if let Some(path) = s.strip_prefix("bpe:") {
            if path.is_empty() {
                return Err(Error::Config("bpe counter needs a path: bpe:<path>".into()));
            }
            return Ok(CounterSpec::bpe(path));
        }
        Err(Error::Config(format!(
            "unknown tokenizer spec {s:?}; expected `approx` or `bpe:<path>`"
        )))
    }
}

impl fmt::Display for CounterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            CounterKind::Approximate => write!(f, "approx"),
            CounterKind::BpeFile => write!(
                f,
                "bpe:{}",
                self.definition_path.as_deref().unwrap_or(Path::new("?")).display()
            ),
        }
    }
}

/// A loaded counter. Immutable after load; safe to share across threads.
#[derive(Debug, Clone)]
pub enum TokenCounter {
    Approximate,
    Bpe(BpeCounter),
}

impl TokenCounter {
    pub fn load(spec: &CounterSpec) -> Result<Self> {
        match spec.kind {
            CounterKind::Approximate => Ok(TokenCounter::Approximate),
            CounterKind::BpeFile => {
                let path = spec.definition_path.as_deref().ok_or_else(|| Error::TokenizerInit {
                    path: "<unset>".to_string(),
                    reason: "bpe counter requires a definition path".into(),
                })?;
                Ok(TokenCounter::Bpe(BpeCounter::from_file(path)?))
            }
        }
    }

    /// Token count of `text`. Deterministic; `count("") == 0`.
    pub fn count(&self, text: &str) -> usize {
        match self {
            TokenCounter::Approximate => approx_count(text),
            TokenCounter::Bpe(bpe) => bpe.count(text),
        }
    }

    /// Id recorded in generated metadata.
    pub fn name(&self) -> &str {
        match self {
            TokenCounter::Approximate => "approx",
            TokenCounter::Bpe(bpe) => &bpe.name,
        }
    }

    /// Declared bound on concatenation overshoot:
    /// count(a+b) ≤ count(a) + count(b) + joint_bound().
    pub fn joint_bound(&self) -> usize {
        match self {
            TokenCounter::Approximate => 0,
            TokenCounter::Bpe(bpe) => bpe.joint_bound,
        }
    }
}

/// Counts units without any external definition: each maximal run of
/// `[A-Za-z0-9_]` (plus non-ASCII word characters) is one unit, each other
/// non-whitespace character is one unit, whitespace is zero. Exactly additive
/// over whitespace boundaries.
fn approx_count(text: &str) -> usize {
    let mut count = 0usize;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_whitespace() {
            in_word = false;
        } else if c.is_alphanumeric() || c == '_' {
            if !in_word {
                count += 1;
                in_word = true;
            }
        } else {
            count += 1;
            in_word = false;
        }
    }
    count
}

/// On-disk JSON schema of a BPE definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct BpeDefinition {
    name: String,
    /// token text → id. Ids are carried for provenance only; counting never
    /// consults them.
    vocab: BTreeMap<String, u32>,
    /// Ordered merge rules, highest priority first.
    merges: Vec<(String, String)>,
    /// Declared concatenation overshoot bound for this rule set.
    #[serde(default)]
    joint_bound: usize,
}

/// Byte-pair counter over whitespace-delimited words. Merges never cross
/// whitespace; characters absent from the vocabulary count one unit each.
#[derive(Debug, Clone)]
pub struct BpeCounter {
    name: String,
    ranks: HashMap<(String, String), usize>,
    joint_bound: usize,
}

impl BpeCounter {
    pub fn from_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::TokenizerInit {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let def: BpeDefinition = serde_json::from_str(&raw).map_err(|e| Error::TokenizerInit {
            path: path.display().to_string(),
            reason: format!("invalid definition: {e}"),
        })?;
        if def.vocab.is_empty() {
            return Err(Error::TokenizerInit {
                path: path.display().to_string(),
                reason: "empty vocabulary".into(),
            });
        }
        let mut ranks = HashMap::with_capacity(def.merges.len());
        for (rank, (a, b)) in def.merges.iter().enumerate() {
            if a.is_empty() || b.is_empty() {
                return Err(Error::TokenizerInit {
                    path: path.display().to_string(),
                    reason: format!("merge rule {rank} has an empty side"),
                });
            }
            let merged = format!("{a}{b}");
            if !def.vocab.contains_key(&merged) {
                return Err(Error::TokenizerInit {
                    path: path.display().to_string(),
                    reason: format!("merge rule {rank} produces {merged:?}, absent from vocab"),
                });
            }
            ranks.insert((a.clone(), b.clone()), rank);
        }
        Ok(BpeCounter {
            name: def.name,
            ranks,
            joint_bound: def.joint_bound,
        })
    }

    pub fn count(&self, text: &str) -> usize {
        text.split_whitespace().map(|w| self.count_word(w)).sum()
    }

    /// Greedy BPE: repeatedly pick the present pair with the lowest rank and
    /// merge all its non-overlapping occurrences left to right.
    fn count_word(&self, word: &str) -> usize {
        let mut symbols: Vec<String> = word.chars().map(String::from).collect();
        loop {
            let mut best: Option<(usize, (String, String))> = None;
            for pair in symbols.windows(2) {
                let key = (pair[0].clone(), pair[1].clone());
                if let Some(&rank) = self.ranks.get(&key) {
                    if best.as_ref().is_none_or(|(r, _)| rank < *r) {
                        best = Some((rank, key));
                    }
                }
            }
            let Some((_, (a, b))) = best else { break };
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
                    merged.push(format!("{a}{b}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols.len()
    }
}
