//! Function and docstring extraction.

mod backend;
mod docstring;
mod scan;
mod tree_sitter;

use std::io::{self, BufRead, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use self::backend::{BackendError, CommentNode, FunctionNode, NodeSpan, SyntaxBackend, SyntaxQuery};
pub use self::docstring::{attached_doc_range, normalize_docstring};
pub use self::scan::{scan_tree, ScanError, ScanOptions, ScanOutput, DEFAULT_DENY_LIST};
pub use self::tree_sitter::TreeSitterBackend;
use crate::LanguageId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    pub path: PathBuf,
    pub language: LanguageId,
    pub text: String,
}

impl SourceFile {
    pub fn new(path: impl Into<PathBuf>, language: LanguageId, text: impl Into<String>) -> Self {
        SourceFile {
            path: path.into(),
            language,
            text: text.into(),
        }
    }
}

/// One extracted function with its documentation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub function_name: String,
    pub qualified_name: String,
    pub signature: String,
    pub code: String,
    pub docstring_raw: Option<String>,
    pub docstring: Option<String>,
    /// 0-based half-open byte range of `code` in the file.
    pub byte_span: (usize, usize),
    /// 1-based inclusive line range.
    pub line_span: (usize, usize),
    pub file: PathBuf,
    pub language: LanguageId,
}

/// Records extracted from one file plus any syntax diagnostics.
///
/// Files with syntax errors still yield every function the parser could
/// recover.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseOutput {
    pub records: Vec<FunctionRecord>,
    pub diagnostics: Vec<String>,
}

impl ParseOutput {
    pub fn is_clean(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed record on line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Extract every named function in `file` using the tree-sitter backend.
pub fn parse_file(file: &SourceFile) -> Result<ParseOutput, ExtractError> {
    parse_file_with(&TreeSitterBackend, file)
}

pub fn parse_file_with(backend: &dyn SyntaxBackend, file: &SourceFile) -> Result<ParseOutput, ExtractError> {
    let query = backend.query(file.language, &file.text)?;
    let text = file.text.as_str();
    let mut records: Vec<FunctionRecord> = query
        .functions
        .iter()
        .map(|f| build_record(file, text, f))
        .collect();
    records.sort_by_key(|r| r.byte_span.0);
    Ok(ParseOutput {
        records,
        diagnostics: query.diagnostics,
    })
}

fn build_record(file: &SourceFile, text: &str, f: &FunctionNode) -> FunctionRecord {
    let code = &text[f.span.start_byte..f.span.end_byte];
    let signature_text = match f.signature_end {
        Some(end) if end > f.span.start_byte && end <= f.span.end_byte => &text[f.span.start_byte..end],
        _ => code.lines().next().unwrap_or(""),
    };
    let signature = signature_text.split_whitespace().collect::<Vec<_>>().join(" ");

    let docstring_raw = attached_doc_range(file.language, text, f).map(|(s, e)| text[s..e].to_string());
    let docstring = docstring_raw
        .as_deref()
        .map(|raw| normalize_docstring(raw, file.language));

    let mut qualified = f.scopes.clone();
    qualified.push(f.name.clone());

    FunctionRecord {
        function_name: f.name.clone(),
        qualified_name: qualified.join("."),
        signature,
        code: code.to_string(),
        docstring_raw,
        docstring,
        byte_span: (f.span.start_byte, f.span.end_byte),
        line_span: (f.span.start_row + 1, f.span.end_row + 1),
        file: file.path.clone(),
        language: file.language,
    }
}

/// Write records as JSON Lines (LF-terminated, one record per line).
pub fn write_jsonl<W: Write>(mut out: W, records: &[FunctionRecord]) -> io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl(records: &[FunctionRecord]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<FunctionRecord>, ExtractError> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| ExtractError::Json { line: idx + 1, source })?;
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(lang: LanguageId, text: &str) -> ParseOutput {
        parse_file(&SourceFile::new("t", lang, text)).unwrap()
    }

    #[test]
    fn empty_file_has_no_records() {
        for lang in LanguageId::ALL {
            let out = parse(lang, "");
            assert!(out.records.is_empty(), "{lang}");
        }
    }

    #[test]
    fn python_single_function() {
        let out = parse(LanguageId::Python, "def add(a,b):\n  \"\"\"Adds.\"\"\"\n  return a+b");
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        assert_eq!(r.function_name, "add");
        assert_eq!(r.docstring.as_deref(), Some("Adds."));
        assert_eq!(r.docstring_raw.as_deref(), Some("\"\"\"Adds.\"\"\""));
        assert_eq!(r.line_span, (1, 3));
        assert_eq!(r.signature, "def add(a,b):");
    }

    #[test]
    fn go_line_comment_above() {
        let src = "package m\n\n// Sum returns a+b.\nfunc Sum(a, b int) int { return a + b }\n";
        let out = parse(LanguageId::Go, src);
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].docstring.as_deref(), Some("Sum returns a+b."));
    }

    #[test]
    fn blank_line_detaches_comment() {
        let src = "package m\n\n// Orphan.\n\nfunc Sum() {}\n";
        let out = parse(LanguageId::Go, src);
        assert_eq!(out.records[0].docstring, None);
        assert_eq!(out.records[0].docstring_raw, None);
    }

    #[test]
    fn nested_and_methods_get_qualified_names() {
        let src = "class K:\n    def m(self):\n        def inner():\n            pass\n        f = lambda: 1\n";
        let out = parse(LanguageId::Python, src);
        let names: Vec<_> = out.records.iter().map(|r| r.qualified_name.as_str()).collect();
        assert_eq!(names, ["K.m", "K.m.inner"]);
    }

    #[test]
    fn trailing_comment_is_not_documentation() {
        let src = "class A {\n  int x = 1; // counter\n  void f() {}\n}\n";
        let out = parse(LanguageId::Java, src);
        assert_eq!(out.records[0].docstring, None);
    }

    #[test]
    fn rust_doc_run_across_attributes() {
        let src = "// plain\n/// One.\n/// Two.\n#[inline]\nfn f() {}\n";
        let out = parse(LanguageId::Rust, src);
        assert_eq!(out.records[0].docstring_raw.as_deref(), Some("/// One.\n/// Two."));
        assert_eq!(out.records[0].docstring.as_deref(), Some("One. Two."));
    }

    #[test]
    fn syntax_errors_return_partial_records() {
        let src = "def ok():\n    \"\"\"Fine.\"\"\"\n    return 1\n\ndef broken(:\n    return\n";
        let out = parse(LanguageId::Python, src);
        assert!(!out.is_clean());
        assert!(out.records.iter().any(|r| r.function_name == "ok"));
    }

    #[test]
    fn slice_fidelity() {
        let src = "/** A. */\nfunction a() { return 1; }\nclass B { /** m */ m() {} }\n";
        let out = parse(LanguageId::Javascript, src);
        assert_eq!(out.records.len(), 2);
        for r in &out.records {
            assert_eq!(&src[r.byte_span.0..r.byte_span.1], r.code);
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let out = parse(LanguageId::Python, "def a():\n    'x'\n\ndef b():\n    pass\n");
        let text = to_jsonl(&out.records);
        assert!(text.ends_with('\n') && !text.contains('\r'));
        assert_eq!(read_jsonl(text.as_bytes()).unwrap(), out.records);
    }
}
