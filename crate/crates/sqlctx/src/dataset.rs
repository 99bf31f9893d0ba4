//! Dataset loading: benchmark JSON files plus SQLite database introspection.
//!
//! A dataset root holds one JSON file of (question, gold SQL, db_id) entries
//! and a directory of SQLite databases, one subdirectory per database id.
//! Schemas are read from the database catalog itself so CREATE TABLE text is
//! byte-faithful, and each table carries up to three sample rows rendered
//! into a comment block.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

use crate::ddl::{canonical_table_name, ParsedSchema, SchemaItem};
use crate::error::{Error, Result};

/// Known benchmark layouts plus a free-form custom layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetName {
    SpiderTrain,
    SpiderDev,
    SpiderTest,
    SpiderRealistic,
    SpiderSyn,
    BirdTrain,
    BirdDev,
    Custom,
}

impl DatasetName {
    pub const ALL: [DatasetName; 8] = [
        DatasetName::SpiderTrain,
        DatasetName::SpiderDev,
        DatasetName::SpiderTest,
        DatasetName::SpiderRealistic,
        DatasetName::SpiderSyn,
        DatasetName::BirdTrain,
        DatasetName::BirdDev,
        DatasetName::Custom,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetName::SpiderTrain => "spider-train",
            DatasetName::SpiderDev => "spider-dev",
            DatasetName::SpiderTest => "spider-test",
            DatasetName::SpiderRealistic => "spider-realistic",
            DatasetName::SpiderSyn => "spider-syn",
            DatasetName::BirdTrain => "bird-train",
            DatasetName::BirdDev => "bird-dev",
            DatasetName::Custom => "custom",
        }
    }

    /// Spider and its dev-set variants, as opposed to BIRD.
    pub fn is_spider_family(&self) -> bool {
        matches!(
            self,
            DatasetName::SpiderTrain
                | DatasetName::SpiderDev
                | DatasetName::SpiderTest
                | DatasetName::SpiderRealistic
                | DatasetName::SpiderSyn
        )
    }

    /// Candidate example-file paths under a dataset root, tried in order.
    fn example_file_candidates(&self) -> &'static [&'static str] {
        match self {
            DatasetName::SpiderTrain => &["train_spider.json", "train.json", "examples.json"],
            DatasetName::SpiderDev => &["dev.json", "examples.json"],
            DatasetName::SpiderTest => &["test.json", "examples.json"],
            DatasetName::SpiderRealistic => {
                &["spider-realistic.json", "dev_realistic.json", "examples.json"]
            }
            DatasetName::SpiderSyn => &["dev_syn.json", "spider-syn.json", "examples.json"],
            DatasetName::BirdTrain => &["train/train.json", "train.json", "examples.json"],
            DatasetName::BirdDev => &["dev/dev.json", "dev.json", "examples.json"],
            DatasetName::Custom => &["examples.json"],
        }
    }

    /// Candidate database directories under a dataset root, tried in order.
    fn database_dir_candidates(&self) -> &'static [&'static str] {
        match self {
            DatasetName::BirdTrain => &["train/train_databases", "train_databases", "database", "databases"],
            DatasetName::BirdDev => &["dev/dev_databases", "dev_databases", "database", "databases"],
            _ => &["database", "databases"],
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown dataset {s:?}; expected one of {}",
                    DatasetName::ALL.map(|n| n.as_str()).join(", ")
                ))
            })
    }
}

/// One NL2SQL example with its database schema attached.
#[derive(Debug, Clone)]
pub struct Example {
    /// Stable identifier, unique within its dataset.
    pub id: String,
    pub db_id: String,
    pub question: String,
    /// Auxiliary external-knowledge text; present in BIRD-style data.
    pub evidence: Option<String>,
    /// Gold SQL; empty for evaluation-only examples whose distribution
    /// withholds gold queries.
    pub target_sql: String,
    /// Schema of `db_id`, shared with the owning dataset's database map.
    pub schema: Arc<ParsedSchema>,
}

/// A loaded benchmark split: examples in file order plus all schemas found
/// in the database directory (including databases no example references —
/// pool building wants every training schema).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: DatasetName,
    pub examples: Vec<Example>,
    pub databases: BTreeMap<String, Arc<ParsedSchema>>,
}

/// Raw example entry as found in benchmark JSON files. Field spellings vary
/// across distributions, so gold SQL is probed under several keys.
#[derive(Debug, Deserialize)]
struct RawExample {
    #[serde(default)]
    question_id: Option<serde_json::Value>,
    db_id: String,
    question: String,
    #[serde(default)]
    evidence: Option<String>,
    #[serde(default)]
    query: Option<String>,
    #[serde(default, rename = "SQL")]
    sql_upper: Option<String>,
    #[serde(default)]
    sql: Option<String>,
}

impl RawExample {
    fn gold_sql(&self) -> String {
        self.query
            .as_deref()
            .or(self.sql_upper.as_deref())
            .or(self.sql.as_deref())
            .unwrap_or_default()
            .trim()
            .to_string()
    }
}

/// Loads a dataset from `root` using `name`'s layout conventions.
pub fn load_dataset(root: &Path, name: DatasetName) -> Result<Dataset> {
    let examples_path = find_first(root, name.example_file_candidates()).ok_or_else(|| {
        Error::DatasetLayout {
            root: root.to_path_buf(),
            expected: format!(
                "one of {{{}}} plus a database directory ({})",
                name.example_file_candidates().join(", "),
                name.database_dir_candidates().join(", ")
            ),
        }
    })?;
    let db_dir = find_first(root, name.database_dir_candidates()).ok_or_else(|| {
        Error::DatasetLayout {
            root: root.to_path_buf(),
            expected: format!(
                "database directory: one of {{{}}}",
                name.database_dir_candidates().join(", ")
            ),
        }
    })?;

    let databases = load_database_dir(&db_dir)?;

    let raw = std::fs::read_to_string(&examples_path).map_err(|e| Error::io(&examples_path, e))?;
    let raw_examples: Vec<RawExample> =
        serde_json::from_str(&raw).map_err(|e| Error::json(&examples_path, e))?;

    let mut examples = Vec::with_capacity(raw_examples.len());
    for (idx, raw) in raw_examples.into_iter().enumerate() {
        let id = match &raw.question_id {
            Some(v) => format!("{name}-{}", json_scalar_to_string(v)),
            None => format!("{name}-{idx}"),
        };
        let schema = databases.get(&raw.db_id).cloned().ok_or_else(|| Error::UnknownDb {
            example_id: id.clone(),
            db_id: raw.db_id.clone(),
        })?;
        let target_sql = raw.gold_sql();
        examples.push(Example {
            id,
            db_id: raw.db_id,
            question: raw.question,
            evidence: raw.evidence.filter(|e| !e.trim().is_empty()),
            target_sql,
            schema,
        });
    }

    Ok(Dataset {
        name,
        examples,
        databases,
    })
}

fn json_scalar_to_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn find_first(root: &Path, candidates: &[&str]) -> Option<PathBuf> {
    candidates.iter().map(|c| root.join(c)).find(|p| p.exists())
}

/// Reads every `<dir>/<db_id>/<db_id>.sqlite` into a schema map. Iteration
/// is sorted by db_id, so two loads of the same tree are identical.
fn load_database_dir(dir: &Path) -> Result<BTreeMap<String, Arc<ParsedSchema>>> {
    let mut databases = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if !entry.path().is_dir() {
            continue;
        }
        let db_id = entry.file_name().to_string_lossy().into_owned();
        let db_file = find_db_file(&entry.path(), &db_id);
        let Some(db_file) = db_file else {
            log::warn!("no database file under {}", entry.path().display());
            continue;
        };
        let schema = extract_schema_from_db(&db_file)?;
        databases.insert(db_id, Arc::new(schema));
    }
    Ok(databases)
}

pub(crate) fn find_db_file(dir: &Path, db_id: &str) -> Option<PathBuf> {
    ["sqlite", "db", "sqlite3"]
        .iter()
        .map(|ext| dir.join(format!("{db_id}.{ext}")))
        .find(|p| p.exists())
}

/// Maximum sample rows rendered under each CREATE TABLE.
pub const SAMPLE_ROW_LIMIT: usize = 3;

/// Reads one SQLite file into a schema: each user table's CREATE TABLE text
/// verbatim from the catalog, plus its first rows in storage order rendered
/// as a comment block. Tables whose rows cannot be read (e.g. virtual tables
/// without their module) keep an empty rows block.
pub fn extract_schema_from_db(db_file: &Path) -> Result<ParsedSchema> {
    let conn = Connection::open_with_flags(
        db_file,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(|e| Error::io(db_file, std::io::Error::other(e.to_string())))?;

    let db_id = db_file
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let mut stmt = conn.prepare(
        "SELECT name, sql FROM sqlite_schema \
         WHERE type = 'table' AND sql IS NOT NULL AND name NOT LIKE 'sqlite_%'",
    )?;
    let tables: Vec<(String, String)> = stmt
        .query_map([], |row| Ok((row.get::<_, String>(0)?, row.get::<_, String>(1)?)))?
        .collect::<std::result::Result<_, _>>()?;
    drop(stmt);

    let mut items = Vec::with_capacity(tables.len());
    for (name, sql) in tables {
        let rows_text = match sample_rows_block(&conn, &name) {
            Ok(text) => text,
            Err(e) => {
                log::warn!("{}: cannot read rows of {name}: {e}", db_file.display());
                String::new()
            }
        };
        items.push(SchemaItem {
            ddl_text: sql,
            rows_text,
            table_name: canonical_table_name(&name),
            source_db: db_id.clone(),
        });
    }

    let schema = ParsedSchema { db_id, items };
    schema.validate_unique_names()?;
    Ok(schema)
}

/// Renders up to [`SAMPLE_ROW_LIMIT`] rows of `table` as the standard
/// comment block, or an empty string for an empty table:
///
/// ```text
/// /* 2 example rows:
/// SELECT * FROM "t" LIMIT 3;
/// col_a	col_b
/// 1	x
/// 2	y
/// */
/// ```
fn sample_rows_block(conn: &Connection, table: &str) -> rusqlite::Result<String> {
    let quoted = quote_identifier(table);
    let query = format!("SELECT * FROM {quoted} LIMIT {SAMPLE_ROW_LIMIT}");
    let mut stmt = conn.prepare(&query)?;
    let n_cols = stmt.column_count();
    let header: Vec<String> = stmt.column_names().iter().map(|c| c.to_string()).collect();

    let mut lines: Vec<String> = Vec::new();
    let mut rows = stmt.query([])?;
    while let Some(row) = rows.next()? {
        let mut cells = Vec::with_capacity(n_cols);
        for i in 0..n_cols {
            cells.push(render_cell(row.get_ref(i)?));
        }
        lines.push(cells.join("\t"));
    }
    if lines.is_empty() {
        return Ok(String::new());
    }
    Ok(format!(
        "/* {} example rows:\n{query};\n{}\n{}\n*/",
        lines.len(),
        header.join("\t"),
        lines.join("\n")
    ))
}

fn quote_identifier(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

/// Renders one cell for the sample block: single line, comment-safe.
fn render_cell(value: ValueRef<'_>) -> String {
    match value {
        ValueRef::Null => "NULL".to_string(),
        ValueRef::Integer(i) => i.to_string(),
        ValueRef::Real(f) => f.to_string(),
        ValueRef::Text(bytes) => sanitize_text(&String::from_utf8_lossy(bytes)),
        ValueRef::Blob(bytes) => {
            let mut s = String::with_capacity(bytes.len() * 2 + 3);
            s.push_str("X'");
            for b in bytes {
                s.push_str(&format!("{b:02X}"));
            }
            s.push('\'');
            s
        }
    }
}

/// Collapses whitespace runs to single spaces and defuses `*/`, so a cell
/// can never break the row-block comment or the line-per-row layout.
fn sanitize_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_ws = false;
    for c in s.chars() {
        if c.is_whitespace() {
            if !in_ws {
                out.push(' ');
                in_ws = true;
            }
        } else {
            in_ws = false;
            out.push(c);
        }
    }
    out.replace("*/", "* /")
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn dataset_name_round_trip() {
        for name in DatasetName::ALL {
            assert_eq!(name.as_str().parse::<DatasetName>().unwrap(), name);
        }
        assert!("spider".parse::<DatasetName>().is_err());
        assert!(DatasetName::SpiderSyn.is_spider_family());
        assert!(!DatasetName::BirdDev.is_spider_family());
    }

    #[test]
    fn extract_three_of_five_rows() {
        let dir = tempfile::tempdir().unwrap();
        let db = make_db(
            dir.path(),
            "pets",
            "CREATE TABLE pet (id INTEGER PRIMARY KEY, name TEXT);
             INSERT INTO pet(name) VALUES ('Rex'),('Milo'),('Iris'),('Ava'),('Bo');",
        );
        let schema = extract_schema_from_db(&db).unwrap();
        assert_eq!(schema.items.len(), 1);
        let item = &schema.items[0];
        assert_eq!(item.table_name, "pet");
        assert!(item.ddl_text.starts_with("CREATE TABLE pet"));
        assert!(item.rows_text.starts_with("/* 3 example rows:"));
        let data_lines: Vec<&str> = item.rows_text.lines().collect();
        // comment open, SELECT, header, 3 rows, comment close
        assert_eq!(data_lines.len(), 7);
        assert!(item.rows_text.contains("1\tRex"));
        assert!(item.rows_text.contains("3\tIris"));
        assert!(!item.rows_text.contains("Ava"));
    }

    #[test]
    fn extract_fewer_rows_and_empty_table() {
        let dir = tempfile::tempdir().unwrap();
        let db = make_db(
            dir.path(),
            "mix",
            "CREATE TABLE two_rows (x INT);
             INSERT INTO two_rows VALUES (1),(2);
             CREATE TABLE no_rows (y TEXT);",
        );
        let schema = extract_schema_from_db(&db).unwrap();
        assert_eq!(schema.items.len(), 2);
        assert!(schema.items[0].rows_text.starts_with("/* 2 example rows:"));
        assert!(schema.items[1].rows_text.is_empty());
    }

    #[test]
    fn extract_empty_database() {
        let dir = tempfile::tempdir().unwrap();
        let db = make_db(dir.path(), "blank", "CREATE TABLE t (x INT); DROP TABLE t;");
        let schema = extract_schema_from_db(&db).unwrap();
        assert!(schema.items.is_empty());
    }

    #[test]
    fn cell_rendering_handles_all_storage_classes() {
        let dir = tempfile::tempdir().unwrap();
        let db = make_db(
            dir.path(),
            "vals",
            "CREATE TABLE v (a, b, c, d, e);
             INSERT INTO v VALUES (NULL, 42, 1.5, 'line\none*/two', X'0aff');",
        );
        let schema = extract_schema_from_db(&db).unwrap();
        let rows = &schema.items[0].rows_text;
        assert!(rows.contains("NULL\t42\t1.5\tline one* /two\tX'0AFF'"));
    }

    #[test]
    fn load_dataset_resolves_schemas_and_order() {
        let dir = tempfile::tempdir().unwrap();
        make_dataset_root(
            dir.path(),
            &[
                serde_json::json!({"db_id": "zoo", "question": "How many cages?", "query": "SELECT count(*) FROM cage"}),
                serde_json::json!({"db_id": "farm", "question": "List barns.", "query": "SELECT name FROM barn", "evidence": "barns are buildings"}),
            ],
            &[
                ("farm", "CREATE TABLE barn (name TEXT);"),
                ("zoo", "CREATE TABLE cage (id INT);"),
            ],
        );
        let ds = load_dataset(dir.path(), DatasetName::Custom).unwrap();
        assert_eq!(ds.examples.len(), 2);
        assert_eq!(ds.databases.len(), 2);
        assert_eq!(ds.examples[0].db_id, "zoo");
        assert_eq!(ds.examples[0].id, "custom-0");
        assert_eq!(ds.examples[0].schema.items[0].table_name, "cage");
        assert_eq!(ds.examples[1].evidence.as_deref(), Some("barns are buildings"));
        // loading twice gives the same thing
        let again = load_dataset(dir.path(), DatasetName::Custom).unwrap();
        assert_eq!(again.examples.len(), ds.examples.len());
        assert_eq!(
            again.databases.keys().collect::<Vec<_>>(),
            ds.databases.keys().collect::<Vec<_>>()
        );
    }

    #[test]
    fn load_dataset_empty_examples_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        make_dataset_root(dir.path(), &[], &[("zoo", "CREATE TABLE cage (id INT);")]);
        let ds = load_dataset(dir.path(), DatasetName::Custom).unwrap();
        assert!(ds.examples.is_empty());
        assert_eq!(ds.databases.len(), 1);
    }

    #[test]
    fn load_dataset_unknown_db_names_example() {
        let dir = tempfile::tempdir().unwrap();
        make_dataset_root(
            dir.path(),
            &[serde_json::json!({"db_id": "ghost", "question": "?", "query": "SELECT 1"})],
            &[("zoo", "CREATE TABLE cage (id INT);")],
        );
        let err = load_dataset(dir.path(), DatasetName::Custom).unwrap_err();
        match err {
            Error::UnknownDb { example_id, db_id } => {
                assert_eq!(example_id, "custom-0");
                assert_eq!(db_id, "ghost");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_dataset_missing_layout_lists_expectation() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(dir.path(), DatasetName::SpiderDev).unwrap_err();
        match err {
            Error::DatasetLayout { expected, .. } => assert!(expected.contains("dev.json")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bird_style_fields_are_understood() {
        let dir = tempfile::tempdir().unwrap();
        make_dataset_root(
            dir.path(),
            &[serde_json::json!({
                "question_id": 17,
                "db_id": "zoo",
                "question": "How many cages?",
                "SQL": "SELECT count(*) FROM cage",
                "evidence": ""
            })],
            &[("zoo", "CREATE TABLE cage (id INT);")],
        );
        let ds = load_dataset(dir.path(), DatasetName::Custom).unwrap();
        assert_eq!(ds.examples[0].id, "custom-17");
        assert_eq!(ds.examples[0].target_sql, "SELECT count(*) FROM cage");
        assert_eq!(ds.examples[0].evidence, None); // blank evidence dropped
    }

    #[test]
    fn missing_gold_sql_loads_as_empty() {
        let dir = tempfile::tempdir().unwrap();
        make_dataset_root(
            dir.path(),
            &[serde_json::json!({"db_id": "zoo", "question": "How many cages?"})],
            &[("zoo", "CREATE TABLE cage (id INT);")],
        );
        let ds = load_dataset(dir.path(), DatasetName::Custom).unwrap();
        assert_eq!(ds.examples[0].target_sql, "");
    }
}
