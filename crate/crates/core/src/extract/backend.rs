//! The syntax-tree query surface the extraction layer depends on.
//!
//! A backend only reports *where* functions and their neighbouring comments
//! are. Deciding which comment is a function's documentation lives in
//! [`super::docstring`], so backends can be swapped without touching the
//! per-language conventions.

use crate::LanguageId;

/// Byte range plus 0-based first/last rows of a syntax node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeSpan {
    pub start_byte: usize,
    pub end_byte: usize,
    pub start_row: usize,
    pub end_row: usize,
}

/// A comment node that sits directly before a function declaration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommentNode {
    /// Span with trailing whitespace (e.g. a captured newline) trimmed off.
    pub span: NodeSpan,
    /// The comment shares its first line with a preceding non-comment token.
    pub trailing: bool,
}

/// A named function definition found in the tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionNode {
    pub name: String,
    /// Names of enclosing scopes, outermost first.
    pub scopes: Vec<String>,
    pub span: NodeSpan,
    /// End of the last non-comment token before the body.
    pub signature_end: Option<usize>,
    /// First row of the full declaration, including wrappers such as
    /// `export` statements, templates or attributes.
    pub anchor_row: usize,
    /// Comments immediately preceding the declaration, in source order.
    pub preceding_comments: Vec<CommentNode>,
    /// The string literal forming the first statement of the body, if any.
    pub leading_string: Option<NodeSpan>,
    /// Number of enclosing function definitions.
    pub depth: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SyntaxQuery {
    pub functions: Vec<FunctionNode>,
    pub diagnostics: Vec<String>,
}

/// Query a parsed source text for function nodes and their preceding
/// comments.
pub trait SyntaxBackend: Send + Sync {
    fn query(&self, language: LanguageId, text: &str) -> Result<SyntaxQuery, BackendError>;
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("grammar for {0} could not be loaded: {1}")]
    Grammar(LanguageId, String),
    #[error("parser produced no tree for {0} source")]
    NoTree(LanguageId),
}
