//! CREATE TABLE script parsing and deterministic schema rendering.
//!
//! A schema script is a sequence of `CREATE TABLE` statements, each optionally
//! followed by a `/* ... */` comment block holding up to three sample data
//! rows. Statement text is preserved byte-exactly: augmentation never edits
//! DDL internals, it only rearranges whole items.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separator between rendered schema items: exactly one blank line.
pub const ITEM_SEPARATOR: &str = "\n\n";

/// One CREATE TABLE command plus its sample-row block. The atomic unit of
/// the schema pool and of augmentation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SchemaItem {
    /// Exact CREATE TABLE command text, terminating `;` included.
    pub ddl_text: String,
    /// Comment block listing up to 3 sample rows; empty when the table has
    /// no rows. Stored opaquely: the pipeline only needs byte-faithful
    /// reproduction and token counting.
    pub rows_text: String,
    /// Canonical table identifier (quotes stripped, case-folded).
    pub table_name: String,
    /// Identifier of the originating database.
    pub source_db: String,
}

impl SchemaItem {
    /// The item's rendered block: DDL, then the rows comment directly under
    /// it when present.
    pub fn block(&self) -> String {
        if self.rows_text.is_empty() {
            self.ddl_text.clone()
        } else {
            format!("{}\n{}", self.ddl_text, self.rows_text)
        }
    }

    /// Exact-content identity used for pool dedup and membership tests.
    pub fn dedup_key(&self) -> (&str, &str) {
        (&self.ddl_text, &self.rows_text)
    }
}

/// An ordered set of schema items for one database.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedSchema {
    pub db_id: String,
    pub items: Vec<SchemaItem>,
}

impl ParsedSchema {
    pub fn empty(db_id: impl Into<String>) -> Self {
        ParsedSchema {
            db_id: db_id.into(),
            items: Vec::new(),
        }
    }

    /// Canonical table names in item order.
    pub fn table_names(&self) -> Vec<&str> {
        self.items.iter().map(|i| i.table_name.as_str()).collect()
    }

    /// Checks that canonical table names are pairwise distinct.
    pub fn validate_unique_names(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for item in &self.items {
            if !seen.insert(item.table_name.as_str()) {
                return Err(Error::DuplicateTable {
                    name: item.table_name.clone(),
                    db_id: self.db_id.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Parses a schema script into items, preserving source order and byte-exact
/// statement text. A block comment immediately following a statement is
/// attached to it as the sample-row block. Line comments between statements
/// are skipped.
pub fn parse_schema_script(script: &str, db_id: &str) -> Result<ParsedSchema> {
    let bytes = script.as_bytes();
    let mut items: Vec<SchemaItem> = Vec::new();
    let mut pos = 0usize;

    while pos < bytes.len() {
        pos = skip_whitespace(bytes, pos);
        if pos >= bytes.len() {
            break;
        }
        if bytes[pos..].starts_with(b"--") {
            pos = skip_line(bytes, pos);
            continue;
        }
        if bytes[pos..].starts_with(b"/*") {
            return Err(Error::Parse {
                offset: pos,
                message: "sample-row block with no preceding CREATE TABLE".into(),
            });
        }

        let start = pos;
        let end = scan_statement(bytes, pos);
        let ddl_text = script[start..end].trim_end().to_string();
        let table_name = extract_table_name(&ddl_text).map_err(|e| match e {
            Error::Parse { offset, message } => Error::Parse {
                offset: start + offset,
                message,
            },
            other => other,
        })?;
        pos = end;

        // Attach the next block comment, if one directly follows.
        let mut rows_text = String::new();
        let after_ws = skip_whitespace(bytes, pos);
        if bytes[after_ws..].starts_with(b"/*") {
            let comment_end = scan_block_comment(bytes, after_ws).ok_or(Error::Parse {
                offset: after_ws,
                message: "unterminated block comment".into(),
            })?;
            rows_text = script[after_ws..comment_end].to_string();
            pos = comment_end;
        }

        items.push(SchemaItem {
            ddl_text,
            rows_text,
            table_name,
            source_db: db_id.to_string(),
        });
    }

    let schema = ParsedSchema {
        db_id: db_id.to_string(),
        items,
    };
    schema.validate_unique_names()?;
    Ok(schema)
}

/// Extracts the canonical table name from the head of a CREATE TABLE
/// statement. Skips `TEMP`/`TEMPORARY`/`VIRTUAL` and `IF NOT EXISTS`; for a
/// schema-qualified name the last component wins.
pub fn extract_table_name(ddl_text: &str) -> Result<String> {
    let mut cursor = WordCursor::new(ddl_text);

    let create = cursor.next_word().ok_or_else(|| cursor.error("empty statement"))?;
    if !create.eq_ignore_ascii_case("CREATE") {
        return Err(cursor.error("statement does not begin with CREATE"));
    }
    let mut word = cursor
        .next_word()
        .ok_or_else(|| cursor.error("truncated CREATE statement"))?;
    if word.eq_ignore_ascii_case("TEMP")
        || word.eq_ignore_ascii_case("TEMPORARY")
        || word.eq_ignore_ascii_case("VIRTUAL")
    {
        word = cursor
            .next_word()
            .ok_or_else(|| cursor.error("truncated CREATE statement"))?;
    }
    if !word.eq_ignore_ascii_case("TABLE") {
        return Err(cursor.error("not a CREATE TABLE statement"));
    }

    let mut name = cursor
        .next_name()
        .ok_or_else(|| cursor.error("no table identifier found"))?;
    if name.eq_ignore_ascii_case("IF") && !name_was_quoted(&cursor) {
        let not = cursor
            .next_word()
            .ok_or_else(|| cursor.error("no table identifier found"))?;
        let exists = cursor
            .next_word()
            .ok_or_else(|| cursor.error("no table identifier found"))?;
        if !not.eq_ignore_ascii_case("NOT") || !exists.eq_ignore_ascii_case("EXISTS") {
            return Err(cursor.error("malformed IF NOT EXISTS clause"));
        }
        name = cursor
            .next_name()
            .ok_or_else(|| cursor.error("no table identifier found"))?;
    }
    // Schema-qualified: keep consuming `.`-joined components.
    while cursor.peek_char() == Some('.') {
        cursor.bump();
        name = cursor
            .next_name()
            .ok_or_else(|| cursor.error("dangling `.` after schema qualifier"))?;
    }
    if name.is_empty() {
        return Err(cursor.error("empty table identifier"));
    }
    Ok(name)
}

fn name_was_quoted(cursor: &WordCursor) -> bool {
    cursor.last_was_quoted
}

/// Lowercases and returns an identifier with one layer of `"`, backtick, or
/// `[ ]` quoting stripped and doubled quote characters unescaped.
pub fn canonical_table_name(raw: &str) -> String {
    let trimmed = raw.trim();
    let unquoted = match trimmed.as_bytes().first() {
        Some(b'"') => strip_quote(trimmed, '"', '"'),
        Some(b'`') => strip_quote(trimmed, '`', '`'),
        Some(b'[') => strip_quote(trimmed, '[', ']'),
        _ => trimmed.to_string(),
    };
    unquoted.to_lowercase()
}

fn strip_quote(s: &str, open: char, close: char) -> String {
    let inner = s
        .strip_prefix(open)
        .and_then(|rest| rest.strip_suffix(close))
        .unwrap_or(s);
    if open == close {
        inner.replace(&format!("{open}{open}"), &open.to_string())
    } else {
        inner.replace(&format!("{close}{close}"), &close.to_string())
    }
}

/// Renders a schema deterministically: each item's block, separated by
/// exactly one blank line. Output is identical across runs and platforms.
pub fn render_schema_block(schema: &ParsedSchema) -> String {
    render_item_blocks(schema.items.iter())
}

/// Renders an arbitrary ordered selection of items with the standard
/// separator.
pub fn render_item_blocks<'a>(items: impl Iterator<Item = &'a SchemaItem>) -> String {
    let blocks: Vec<String> = items.map(|i| i.block()).collect();
    blocks.join(ITEM_SEPARATOR)
}

// ─── scanning helpers ────────────────────────────────────────────────────

fn skip_whitespace(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    pos
}

fn skip_line(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() && bytes[pos] != b'\n' {
        pos += 1;
    }
    pos
}

/// Scans one SQL statement starting at `pos`, returning the offset one past
/// its terminating `;`. Semicolons inside string literals, quoted
/// identifiers, and comments do not terminate. A final statement without a
/// `;` runs to end of input.
fn scan_statement(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() {
        match bytes[pos] {
            b';' => return pos + 1,
            b'\'' => pos = scan_quoted(bytes, pos, b'\'', b'\''),
            b'"' => pos = scan_quoted(bytes, pos, b'"', b'"'),
            b'`' => pos = scan_quoted(bytes, pos, b'`', b'`'),
            b'[' => pos = scan_quoted(bytes, pos, b'[', b']'),
            b'-' if bytes[pos..].starts_with(b"--") => pos = skip_line(bytes, pos),
            b'/' if bytes[pos..].starts_with(b"/*") => {
                pos = scan_block_comment(bytes, pos).unwrap_or(bytes.len());
            }
            _ => pos += 1,
        }
    }
    bytes.len()
}

/// Scans a quoted region starting at the opening quote; doubling the closing
/// character escapes it. Returns the offset one past the closing quote.
fn scan_quoted(bytes: &[u8], pos: usize, _open: u8, close: u8) -> usize {
    let mut i = pos + 1;
    while i < bytes.len() {
        if bytes[i] == close {
            if i + 1 < bytes.len() && bytes[i + 1] == close {
                i += 2;
                continue;
            }
            return i + 1;
        }
        i += 1;
    }
    bytes.len()
}

/// Returns the offset one past the closing `*/`, or None if unterminated.
fn scan_block_comment(bytes: &[u8], pos: usize) -> Option<usize> {
    let mut i = pos + 2;
    while i + 1 < bytes.len() {
        if bytes[i] == b'*' && bytes[i + 1] == b'/' {
            return Some(i + 2);
        }
        i += 1;
    }
    None
}

/// Minimal word/identifier reader over the head of a statement.
struct WordCursor<'a> {
    text: &'a str,
    pos: usize,
    last_was_quoted: bool,
}

impl<'a> WordCursor<'a> {
    fn new(text: &'a str) -> Self {
        WordCursor {
            text,
            pos: 0,
            last_was_quoted: false,
        }
    }

    fn error(&self, message: &str) -> Error {
        Error::Parse {
            offset: self.pos.min(self.text.len()),
            message: message.to_string(),
        }
    }

    fn skip_trivia(&mut self) {
        let bytes = self.text.as_bytes();
        loop {
            self.pos = skip_whitespace(bytes, self.pos);
            if bytes[self.pos..].starts_with(b"--") {
                self.pos = skip_line(bytes, self.pos);
            } else if bytes[self.pos..].starts_with(b"/*") {
                self.pos = scan_block_comment(bytes, self.pos).unwrap_or(bytes.len());
            } else {
                return;
            }
        }
    }

    fn peek_char(&mut self) -> Option<char> {
        self.skip_trivia();
        self.text[self.pos..].chars().next()
    }

    fn bump(&mut self) {
        if let Some(c) = self.text[self.pos..].chars().next() {
            self.pos += c.len_utf8();
        }
    }

    /// Next bare keyword (never quoted).
    fn next_word(&mut self) -> Option<&'a str> {
        self.skip_trivia();
        let start = self.pos;
        let bytes = self.text.as_bytes();
        while self.pos < bytes.len() && is_ident_byte(bytes[self.pos]) {
            self.pos += 1;
        }
        if self.pos == start {
            None
        } else {
            self.last_was_quoted = false;
            Some(&self.text[start..self.pos])
        }
    }

    /// Next identifier, honoring `"`, backtick, and `[ ]` quoting. Returns
    /// the canonical (unquoted, lowercased) form.
    fn next_name(&mut self) -> Option<String> {
        self.skip_trivia();
        let bytes = self.text.as_bytes();
        if self.pos >= bytes.len() {
            return None;
        }
        let (open, close) = match bytes[self.pos] {
            b'"' => (b'"', b'"'),
            b'`' => (b'`', b'`'),
            b'[' => (b'[', b']'),
            _ => {
                let word = self.next_word()?;
                return Some(canonical_table_name(word));
            }
        };
        let end = scan_quoted(bytes, self.pos, open, close);
        let raw = &self.text[self.pos..end];
        self.pos = end;
        self.last_was_quoted = true;
        Some(canonical_table_name(raw))
    }
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$' || b >= 0x80
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_statement_no_rows() {
        let schema = parse_schema_script("CREATE TABLE a (x INT);", "db").unwrap();
        assert_eq!(schema.items.len(), 1);
        assert_eq!(schema.items[0].table_name, "a");
        assert_eq!(schema.items[0].ddl_text, "CREATE TABLE a (x INT);");
        assert!(schema.items[0].rows_text.is_empty());
    }

    #[test]
    fn empty_script() {
        let schema = parse_schema_script("", "db").unwrap();
        assert!(schema.items.is_empty());
        let schema = parse_schema_script("   \n\t ", "db").unwrap();
        assert!(schema.items.is_empty());
    }

    #[test]
    fn rows_block_attaches_to_preceding_table() {
        let script = "CREATE TABLE t (x INT);\n/* 2 example rows:\nSELECT * FROM t LIMIT 3;\nx\n1\n2\n*/";
        let schema = parse_schema_script(script, "db").unwrap();
        assert_eq!(schema.items.len(), 1);
        assert!(schema.items[0].rows_text.starts_with("/* 2 example rows:"));
        assert!(schema.items[0].rows_text.ends_with("*/"));
    }

    #[test]
    fn semicolons_inside_literals_do_not_terminate() {
        let script = "CREATE TABLE t (x TEXT DEFAULT 'a;b', \"y;z\" INT);";
        let schema = parse_schema_script(script, "db").unwrap();
        assert_eq!(schema.items.len(), 1);
        assert_eq!(schema.items[0].ddl_text, script);
    }

    #[test]
    fn missing_identifier_reports_byte_offset() {
        let script = "CREATE TABLE a (x INT);\nCREATE TABLE ;";
        let err = parse_schema_script(script, "db").unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert!(offset >= 24, "offset {offset} points at second statement"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_create_content_is_an_error() {
        let err = parse_schema_script("INSERT INTO t VALUES (1);", "db").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn duplicate_names_rejected() {
        let script = "CREATE TABLE a (x INT);\n\nCREATE TABLE \"A\" (y INT);";
        let err = parse_schema_script(script, "db").unwrap_err();
        assert!(matches!(err, Error::DuplicateTable { .. }));
    }

    #[test]
    fn leading_comment_block_is_an_error() {
        let err = parse_schema_script("/* stray */ CREATE TABLE a (x INT);", "db").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }));
    }

    #[test]
    fn extract_quoted_and_modifier_names() {
        assert_eq!(extract_table_name("CREATE TABLE \"Singer\" (id INT);").unwrap(), "singer");
        assert_eq!(extract_table_name("CREATE TABLE IF NOT EXISTS t1 (x INT);").unwrap(), "t1");
        assert_eq!(extract_table_name("CREATE TEMP TABLE `Has Pet` (x INT);").unwrap(), "has pet");
        assert_eq!(extract_table_name("CREATE TABLE [Order Items] (x INT);").unwrap(), "order items");
        assert_eq!(extract_table_name("CREATE TABLE main.users (x INT);").unwrap(), "users");
        assert_eq!(extract_table_name("CREATE TABLE \"if\" (x INT);").unwrap(), "if");
        assert_eq!(
            extract_table_name("CREATE TABLE \"a\"\"b\" (x INT);").unwrap(),
            "a\"b"
        );
    }

    #[test]
    fn extract_rejects_non_table_ddl() {
        assert!(extract_table_name("CREATE INDEX idx ON t(x);").is_err());
        assert!(extract_table_name("SELECT 1;").is_err());
        assert!(extract_table_name("").is_err());
    }

    #[test]
    fn render_empty_and_single() {
        assert_eq!(render_schema_block(&ParsedSchema::empty("db")), "");
        let schema = parse_schema_script("CREATE TABLE a (x INT);", "db").unwrap();
        assert_eq!(render_schema_block(&schema), "CREATE TABLE a (x INT);");
    }

    #[test]
    fn permuted_render_same_length_different_bytes() {
        let script = "CREATE TABLE a (x INT);\n\nCREATE TABLE b (y INT);\n\nCREATE TABLE c (z INT);";
        let schema = parse_schema_script(script, "db").unwrap();
        let mut permuted = schema.clone();
        permuted.items.rotate_left(1);
        let original = render_schema_block(&schema);
        let rotated = render_schema_block(&permuted);
        assert_eq!(original.len(), rotated.len());
        assert_ne!(original, rotated);
    }
}
