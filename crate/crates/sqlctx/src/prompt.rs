//! Prompt assembly: instructions, schema blocks, optional evidence, question.
//!
//! Rendering is a pure function of (template, item order, question, evidence)
//! and never edits item bytes, so token accounting done per item carries over
//! to the assembled prompt. All sections are joined with one blank line — the
//! same separator used between schema items — which contributes zero units
//! under whitespace-insensitive counters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ddl::{SchemaItem, ITEM_SEPARATOR};
use crate::error::{Error, Result};

/// Section texts for prompt assembly. The defaults are this tool's own
/// wording; override any field via a TOML template file when a run needs
/// different phrasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    /// Opening paragraph of every prompt.
    pub instruction_text: String,
    /// Line introducing the schema; omitted when the example has no tables.
    pub schema_header: Option<String>,
    /// Prefix for the external-knowledge line, when the example carries one.
    pub evidence_prefix: String,
    /// Prefix for the final question line.
    pub question_prefix: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            instruction_text: "Write a SQLite query that answers the question, using the \
                               database schema below. Respond with the SQL only."
                .into(),
            schema_header: Some("Database schema:".into()),
            evidence_prefix: "Evidence: ".into(),
            question_prefix: "Question: ".into(),
        }
    }
}

impl PromptTemplate {
    /// Loads field overrides from a TOML file; absent keys keep defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&raw).map_err(|e| Error::Config(format!(
            "invalid prompt template {}: {e}",
            path.display()
        )))
    }

    /// Renders the full prompt for an ordered item selection.
    pub fn render_prompt<'a>(
        &self,
        items: impl IntoIterator<Item = &'a SchemaItem>,
        question: &str,
        evidence: Option<&str>,
    ) -> String {
        let blocks: Vec<String> = items.into_iter().map(|i| i.block()).collect();
        self.render_from_blocks(&blocks, question, evidence)
    }

    /// Renders from pre-rendered schema blocks. Sections in order:
    /// instructions, schema header (when any blocks exist), each block,
    /// evidence line, question line — joined by one blank line.
    pub fn render_from_blocks(
        &self,
        blocks: &[String],
        question: &str,
        evidence: Option<&str>,
    ) -> String {
        let mut sections: Vec<&str> = Vec::with_capacity(blocks.len() + 4);
        sections.push(&self.instruction_text);
        if !blocks.is_empty() {
            if let Some(header) = &self.schema_header {
                sections.push(header);
            }
        }
        for block in blocks {
            sections.push(block);
        }
        let evidence_line = evidence.map(|e| format!("{}{e}", self.evidence_prefix));
        if let Some(line) = &evidence_line {
            sections.push(line);
        }
        let question_line = format!("{}{question}", self.question_prefix);
        sections.push(&question_line);
        sections.join(ITEM_SEPARATOR)
    }

    /// Sections rendered before the first schema block: instructions plus the
    /// schema header when a schema will follow. Placement accounting needs
    /// their token length separately.
    pub fn preamble_sections(&self, has_schema: bool) -> Vec<&str> {
        let mut sections = vec![self.instruction_text.as_str()];
        if has_schema {
            if let Some(header) = &self.schema_header {
                sections.push(header);
            }
        }
        sections
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddl::parse_schema_script;
    use std::path::PathBuf;

    fn fixtures() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
    }

    #[test]
    fn empty_schema_renders_instructions_and_question() {
        let t = PromptTemplate::default();
        let prompt = t.render_prompt([], "How many singers?", None);
        assert_eq!(
            prompt,
            format!(
                "{}\n\nQuestion: How many singers?",
                t.instruction_text
            )
        );
        assert!(!prompt.contains("Database schema:"));
    }

    #[test]
    fn order_changes_bytes_not_length() {
        let t = PromptTemplate::default();
        let schema = parse_schema_script(
            "CREATE TABLE a (x INT);\n\nCREATE TABLE b (y INT);",
            "db",
        )
        .unwrap();
        let fwd = t.render_prompt(&schema.items, "q?", None);
        let rev = t.render_prompt(schema.items.iter().rev(), "q?", None);
        assert_eq!(fwd.len(), rev.len());
        assert_ne!(fwd, rev);
    }

    #[test]
    fn item_bytes_appear_verbatim() {
        let t = PromptTemplate::default();
        let script = "CREATE TABLE t (x INT);\n/* 1 example rows:\nSELECT * FROM \"t\" LIMIT 3;\nx\n7\n*/";
        let schema = parse_schema_script(script, "db").unwrap();
        let prompt = t.render_prompt(&schema.items, "q?", Some("x is small"));
        for item in &schema.items {
            assert!(prompt.contains(&item.ddl_text));
            assert!(prompt.contains(&item.rows_text));
        }
        assert!(prompt.contains("Evidence: x is small"));
    }

    #[test]
    fn default_template_matches_golden_file() {
        let t = PromptTemplate::default();
        let script = std::fs::read_to_string(fixtures().join("golden_schema.sql")).unwrap();
        let schema = parse_schema_script(&script, "music").unwrap();
        let prompt = t.render_prompt(
            &schema.items,
            "How many albums does each singer have?",
            Some("Each album row references its singer."),
        );
        let golden = std::fs::read_to_string(fixtures().join("golden_prompt.txt")).unwrap();
        assert_eq!(prompt, golden.trim_end_matches('\n'));
    }

    #[test]
    fn template_file_overrides_fields() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        std::io::Write::write_all(
            &mut f,
            b"instruction_text = \"Translate to SQL.\"\nquestion_prefix = \"Q: \"\n",
        )
        .unwrap();
        let t = PromptTemplate::from_file(f.path()).unwrap();
        assert_eq!(t.instruction_text, "Translate to SQL.");
        assert_eq!(t.question_prefix, "Q: ");
        assert_eq!(t.schema_header, PromptTemplate::default().schema_header);
    }
}
