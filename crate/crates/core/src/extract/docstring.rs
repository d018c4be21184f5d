//! Per-language documentation-comment conventions.

use super::backend::{CommentNode, FunctionNode};
use crate::LanguageId;

/// Comment delimiter families recognised as documentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DocStyle {
    /// `/** */` or `/* */` block, else a contiguous `//` run.
    CLike,
    /// Contiguous `//` run only.
    Go,
    /// Contiguous `#` run.
    Ruby,
    /// Contiguous `///` run or a `/** */` block.
    Rust,
    /// First-statement string literal.
    Python,
}

fn style(language: LanguageId) -> DocStyle {
    match language {
        LanguageId::Java
        | LanguageId::Javascript
        | LanguageId::Php
        | LanguageId::C
        | LanguageId::Cpp
        | LanguageId::Csharp => DocStyle::CLike,
        LanguageId::Go => DocStyle::Go,
        LanguageId::Ruby => DocStyle::Ruby,
        LanguageId::Rust => DocStyle::Rust,
        LanguageId::Python => DocStyle::Python,
    }
}

fn is_line_doc(style: DocStyle, text: &str) -> bool {
    match style {
        DocStyle::CLike | DocStyle::Go => text.starts_with("//"),
        DocStyle::Ruby => text.starts_with('#'),
        DocStyle::Rust => text.starts_with("///") && !text.starts_with("////"),
        DocStyle::Python => false,
    }
}

fn is_block_doc(style: DocStyle, text: &str) -> bool {
    match style {
        DocStyle::CLike => text.starts_with("/*"),
        DocStyle::Rust => text.starts_with("/**") && !text.starts_with("/**/"),
        _ => false,
    }
}

/// Byte range of the function's raw documentation within `text`, if any.
///
/// A comment attaches when its last line is at most one line above the
/// declaration and nothing but whitespace separates them.
pub fn attached_doc_range(language: LanguageId, text: &str, function: &FunctionNode) -> Option<(usize, usize)> {
    let style = style(language);
    if style == DocStyle::Python {
        return function
            .leading_string
            .map(|s| (s.start_byte, s.end_byte));
    }

    let comments: &[CommentNode] = &function.preceding_comments;
    let last = comments.last()?;
    if last.trailing || function.anchor_row < last.span.end_row || function.anchor_row - last.span.end_row > 1 {
        return None;
    }
    let slice = |c: &CommentNode| &text[c.span.start_byte..c.span.end_byte];

    if is_block_doc(style, slice(last)) {
        return Some((last.span.start_byte, last.span.end_byte));
    }
    if !is_line_doc(style, slice(last)) {
        return None;
    }

    let mut first = last;
    for candidate in comments[..comments.len() - 1].iter().rev() {
        let adjacent = first.span.start_row == candidate.span.end_row + 1;
        if !adjacent || candidate.trailing || !is_line_doc(style, slice(candidate)) {
            break;
        }
        first = candidate;
    }
    Some((first.span.start_byte, last.span.end_byte))
}

/// Strip a raw documentation comment down to its first paragraph.
///
/// Delimiters and per-line markers are removed, the first blank line ends
/// the paragraph, and whitespace runs collapse to single spaces.
pub fn normalize_docstring(raw: &str, language: LanguageId) -> String {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return String::new();
    }

    let lines: Vec<String> = if let Some(content) = python_string_content(trimmed).filter(|_| {
        matches!(language, LanguageId::Python) || !trimmed.starts_with(['/', '#'])
    }) {
        content.lines().map(str::to_string).collect()
    } else if trimmed.starts_with("/*") {
        block_comment_lines(trimmed)
    } else if trimmed.starts_with("//") || trimmed.starts_with('#') {
        let marker = if trimmed.starts_with('#') { '#' } else { '/' };
        trimmed
            .lines()
            .map(|line| line.trim_start().trim_start_matches(marker).to_string())
            .collect()
    } else {
        trimmed.lines().map(str::to_string).collect()
    };

    first_paragraph(&lines)
}

fn first_paragraph(lines: &[String]) -> String {
    let mut words: Vec<&str> = Vec::new();
    let mut started = false;
    for line in lines {
        let blank = line.trim().is_empty();
        if blank && started {
            break;
        }
        if !blank {
            started = true;
            words.extend(line.split_whitespace());
        }
    }
    words.join(" ")
}

fn block_comment_lines(text: &str) -> Vec<String> {
    let mut body = text.strip_prefix("/*").unwrap_or(text);
    body = body.strip_suffix("*/").unwrap_or(body);
    let body = body.trim_start_matches(['*', '!']);
    body.lines()
        .map(|line| {
            let line = line.trim_start();
            line.strip_prefix('*').unwrap_or(line).to_string()
        })
        .collect()
}

/// Content of a Python string literal, or `None` if `text` is not one.
fn python_string_content(text: &str) -> Option<&str> {
    let prefix_len = text
        .char_indices()
        .find(|(_, c)| !matches!(c, 'r' | 'R' | 'u' | 'U' | 'b' | 'B' | 'f' | 'F'))
        .map(|(i, _)| i)?;
    if prefix_len > 2 {
        return None;
    }
    let rest = &text[prefix_len..];
    for quote in ["\"\"\"", "'''", "\"", "'"] {
        if let Some(inner) = rest.strip_prefix(quote) {
            return Some(inner.strip_suffix(quote).unwrap_or(inner));
        }
    }
    None
}
