//! Execution-match scoring: run gold and predicted SQL against the
//! benchmark databases and compare result sets.
//!
//! Comparison policy: column order is significant; row order matters only
//! when the gold query has a top-level ORDER BY, otherwise rows compare as
//! multisets. Integer-valued reals normalize to integers, text compares
//! exactly, NULLs equal NULLs. Execution is read-only with a wall-clock
//! timeout per query.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::sha256_hex;

/// Verdict for one example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Match,
    Mismatch,
    GoldError,
    PredError,
    Timeout,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Match => "match",
            Verdict::Mismatch => "mismatch",
            Verdict::GoldError => "gold_error",
            Verdict::PredError => "pred_error",
            Verdict::Timeout => "timeout",
        }
    }
}

/// Scoring outcome for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub example_id: String,
    pub verdict: Verdict,
    /// Multiset digest of the gold result, when gold executed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_rows: Option<String>,
    /// Multiset digest of the predicted result, when the prediction executed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_rows: Option<String>,
    pub elapsed_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// One result cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Scalar {
    fn from_value(value: ValueRef<'_>) -> Scalar {
        match value {
            ValueRef::Null => Scalar::Null,
            ValueRef::Integer(i) => Scalar::Int(i),
            ValueRef::Real(f) => Scalar::Real(f),
            ValueRef::Text(t) => Scalar::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => Scalar::Blob(b.to_vec()),
        }
    }

    /// Folds integer-valued reals into integers so `2` and `2.0` compare
    /// equal across queries that differ only in arithmetic type.
    pub fn normalize(&self) -> Scalar {
        match self {
            Scalar::Real(f)
                if f.fract() == 0.0 && f.is_finite() && f.abs() < i64::MAX as f64 =>
            {
                Scalar::Int(*f as i64)
            }
            other => other.clone(),
        }
    }

    /// Unambiguous text encoding used for sorting and digests.
    fn encode_into(&self, out: &mut String) {
        match self.normalize() {
            Scalar::Null => out.push('n'),
            Scalar::Int(i) => {
                out.push_str("i:");
                out.push_str(&i.to_string());
            }
            Scalar::Real(f) => {
                out.push_str("r:");
                out.push_str(&f.to_string());
            }
            Scalar::Text(t) => {
                out.push_str("t:");
                out.push_str(&t.len().to_string());
                out.push(':');
                out.push_str(&t);
            }
            Scalar::Blob(b) => {
                out.push_str("b:");
                for byte in b {
                    out.push_str(&format!("{byte:02x}"));
                }
            }
        }
    }
}

/// An executed result: rows of scalars, column order as returned.
pub type Rows = Vec<Vec<Scalar>>;

/// Execution failure modes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecError {
    /// Preparation or execution error (syntax, missing table, …).
    Sql(String),
    /// Wall-clock cap exceeded.
    Timeout,
}

/// Guard against result-set explosions (cross joins and the like): past this
/// many rows execution aborts as an error.
pub const MAX_RESULT_ROWS: usize = 1_000_000;

/// Runs one read-only query against a database file with a wall-clock
/// timeout enforced through a progress handler.
pub fn execute_sql(
    db_file: &Path,
    sql: &str,
    timeout: Duration,
) -> std::result::Result<Rows, ExecError> {
    let conn = Connection::open_with_flags(
        db_file,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(|e| ExecError::Sql(e.to_string()))?;

    let start = Instant::now();
    conn.progress_handler(1_000, Some(move || start.elapsed() >= timeout));

    let to_err = |e: rusqlite::Error| {
        if is_interrupt(&e) {
            ExecError::Timeout
        } else {
            ExecError::Sql(e.to_string())
        }
    };
    let mut stmt = conn.prepare(sql).map_err(to_err)?;
    let n_cols = stmt.column_count();
    let mut rows = Vec::new();
    let mut result = stmt.query([]).map_err(to_err)?;
    loop {
        match result.next() {
            Ok(Some(row)) => {
                let mut cells = Vec::with_capacity(n_cols);
                for i in 0..n_cols {
                    cells.push(Scalar::from_value(row.get_ref(i).map_err(to_err)?));
                }
                rows.push(cells);
                if rows.len() > MAX_RESULT_ROWS {
                    return Err(ExecError::Sql(format!(
                        "result exceeds {MAX_RESULT_ROWS} rows"
                    )));
                }
            }
            Ok(None) => break,
            Err(e) => return Err(to_err(e)),
        }
    }
    Ok(rows)
}

fn is_interrupt(e: &rusqlite::Error) -> bool {
    matches!(
        e,
        rusqlite::Error::SqliteFailure(
            rusqlite::ffi::Error {
                code: rusqlite::ffi::ErrorCode::OperationInterrupted,
                ..
            },
            _,
        )
    )
}

/// True when `sql` has an ORDER BY outside any subquery, string, or comment
/// — i.e. the query's row order is semantically fixed.
pub fn has_top_level_order_by(sql: &str) -> bool {
    let bytes = sql.as_bytes();
    let mut depth = 0i32;
    let mut i = 0usize;
    let mut pending_order = false;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                depth += 1;
                i += 1;
            }
            b')' => {
                depth -= 1;
                i += 1;
            }
            b'\'' | b'"' | b'`' => {
                i = skip_sql_quoted(bytes, i);
            }
            b'[' => {
                while i < bytes.len() && bytes[i] != b']' {
                    i += 1;
                }
                i += 1;
            }
            b'-' if bytes[i..].starts_with(b"--") => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if bytes[i..].starts_with(b"/*") => {
                i += 2;
                while i + 1 < bytes.len() && !(bytes[i] == b'*' && bytes[i + 1] == b'/') {
                    i += 1;
                }
                i = (i + 2).min(bytes.len());
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                let word = &sql[start..i];
                if depth == 0 {
                    if pending_order && word.eq_ignore_ascii_case("by") {
                        return true;
                    }
                    pending_order = word.eq_ignore_ascii_case("order");
                } else {
                    pending_order = false;
                }
            }
            _ => i += 1,
        }
    }
    false
}

fn skip_sql_quoted(bytes: &[u8], pos: usize) -> usize {
    let quote = bytes[pos];
    let mut i = pos + 1;
    while i < bytes.len() {
        if bytes[i] == quote {
            if i + 1 < bytes.len() && bytes[i + 1] == quote {
                i += 2;
                continue;
            }
            return i + 1;
        }
        i += 1;
    }
    bytes.len()
}

fn encode_row(row: &[Scalar]) -> String {
    let mut s = String::new();
    for cell in row {
        cell.encode_into(&mut s);
        s.push('|');
    }
    s
}

/// Compares executed results under the scoring policy: ordered when the gold
/// query fixes row order, multiset otherwise.
pub fn compare_results(gold: &Rows, pred: &Rows, gold_sql: &str) -> bool {
    if gold.len() != pred.len() {
        return false;
    }
    let mut gold_enc: Vec<String> = gold.iter().map(|r| encode_row(r)).collect();
    let mut pred_enc: Vec<String> = pred.iter().map(|r| encode_row(r)).collect();
    if !has_top_level_order_by(gold_sql) {
        gold_enc.sort_unstable();
        pred_enc.sort_unstable();
    }
    gold_enc == pred_enc
}

/// Order-insensitive fingerprint of a result set: SHA-256 over the sorted
/// canonical row encodings.
pub fn multiset_digest(rows: &Rows) -> String {
    let mut encoded: Vec<String> = rows.iter().map(|r| encode_row(r)).collect();
    encoded.sort_unstable();
    let mut joined = String::new();
    for row in &encoded {
        joined.push_str(row);
        joined.push('\n');
    }
    sha256_hex(joined.as_bytes())
}

/// Minimal view of a suite record needed for scoring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreItem {
    pub id: String,
    pub db_id: String,
    pub gold_sql: String,
}

/// Aggregate scoring report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    /// Comparison policy, spelled out for the record.
    pub policy: String,
    pub total: usize,
    pub matches: usize,
    /// matches / total in percent; 0 for an empty suite.
    pub accuracy_pct: f64,
    pub verdicts: BTreeMap<String, usize>,
    pub outcomes: Vec<ExecOutcome>,
}

/// Scores a suite: executes gold and predicted SQL per item and compares.
/// Missing predictions score as mismatches; a missing database file is a
/// gold-side error. Items run in parallel, each on its own connection.
pub fn score_suite(
    items: &[ScoreItem],
    predictions: &HashMap<String, String>,
    db_root: &Path,
    timeout: Duration,
) -> ScoreReport {
    let outcomes: Vec<ExecOutcome> = items
        .par_iter()
        .map(|item| score_one(item, predictions.get(&item.id).map(|s| s.as_str()), db_root, timeout))
        .collect();

    let mut verdicts: BTreeMap<String, usize> = BTreeMap::new();
    for v in [
        Verdict::Match,
        Verdict::Mismatch,
        Verdict::GoldError,
        Verdict::PredError,
        Verdict::Timeout,
    ] {
        verdicts.insert(v.as_str().to_string(), 0);
    }
    for o in &outcomes {
        *verdicts.entry(o.verdict.as_str().to_string()).or_default() += 1;
    }
    let matches = verdicts["match"];
    let total = outcomes.len();
    ScoreReport {
        policy: "column order significant; row order significant only under top-level \
                 ORDER BY in gold; integer-valued reals normalized to integers; NULL \
                 equals NULL; text compared exactly"
            .into(),
        total,
        matches,
        accuracy_pct: if total == 0 {
            0.0
        } else {
            matches as f64 * 100.0 / total as f64
        },
        verdicts,
        outcomes,
    }
}

fn score_one(
    item: &ScoreItem,
    prediction: Option<&str>,
    db_root: &Path,
    timeout: Duration,
) -> ExecOutcome {
    let started = Instant::now();
    let mut outcome = ExecOutcome {
        example_id: item.id.clone(),
        verdict: Verdict::Mismatch,
        gold_rows: None,
        pred_rows: None,
        elapsed_ms: 0,
        detail: None,
    };
    let finish = |mut o: ExecOutcome, started: Instant| {
        o.elapsed_ms = started.elapsed().as_millis() as u64;
        o
    };

    let Some(db_file) = resolve_db_file(db_root, &item.db_id) else {
        outcome.verdict = Verdict::GoldError;
        outcome.detail = Some(format!("database {} not found under {}", item.db_id, db_root.display()));
        return finish(outcome, started);
    };

    let gold = match execute_sql(&db_file, &item.gold_sql, timeout) {
        Ok(rows) => rows,
        Err(ExecError::Timeout) => {
            outcome.verdict = Verdict::Timeout;
            outcome.detail = Some("gold query timed out".into());
            return finish(outcome, started);
        }
        Err(ExecError::Sql(message)) => {
            outcome.verdict = Verdict::GoldError;
            outcome.detail = Some(message);
            return finish(outcome, started);
        }
    };
    outcome.gold_rows = Some(multiset_digest(&gold));

    let Some(pred_sql) = prediction else {
        outcome.detail = Some("no prediction".into());
        return finish(outcome, started);
    };
    let pred = match execute_sql(&db_file, pred_sql, timeout) {
        Ok(rows) => rows,
        Err(ExecError::Timeout) => {
            outcome.verdict = Verdict::Timeout;
            outcome.detail = Some("predicted query timed out".into());
            return finish(outcome, started);
        }
        Err(ExecError::Sql(message)) => {
            outcome.verdict = Verdict::PredError;
            outcome.detail = Some(message);
            return finish(outcome, started);
        }
    };
    outcome.pred_rows = Some(multiset_digest(&pred));

    outcome.verdict = if compare_results(&gold, &pred, &item.gold_sql) {
        Verdict::Match
    } else {
        Verdict::Mismatch
    };
    finish(outcome, started)
}

fn resolve_db_file(db_root: &Path, db_id: &str) -> Option<PathBuf> {
    crate::dataset::find_db_file(&db_root.join(db_id), db_id)
        .or_else(|| crate::dataset::find_db_file(db_root, db_id))
}

/// Writes the verdict-count summary CSV next to the JSON report.
pub fn write_report_csv(path: &Path, report: &ScoreReport) -> Result<()> {
    let mut out = String::new();
    out.push_str("metric,value\n");
    out.push_str(&format!("total,{}\n", report.total));
    out.push_str(&format!("matches,{}\n", report.matches));
    out.push_str(&format!("accuracy_pct,{:.4}\n", report.accuracy_pct));
    for (verdict, count) in &report.verdicts {
        out.push_str(&format!("verdict_{verdict},{count}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
