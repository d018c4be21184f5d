use tree_sitter::{Language, Node, Parser};

use super::backend::{BackendError, CommentNode, FunctionNode, NodeSpan, SyntaxBackend, SyntaxQuery};
use crate::LanguageId;

/// Maximum number of syntax-error diagnostics reported per file.
const MAX_DIAGNOSTICS: usize = 16;

/// Concrete-syntax-tree backend built on tree-sitter grammars.
#[derive(Debug, Default, Clone, Copy)]
pub struct TreeSitterBackend;

fn grammar(language: LanguageId) -> Language {
    match language {
        LanguageId::Java => tree_sitter_java::LANGUAGE.into(),
        LanguageId::Javascript => tree_sitter_javascript::LANGUAGE.into(),
        LanguageId::Python => tree_sitter_python::LANGUAGE.into(),
        LanguageId::Ruby => tree_sitter_ruby::LANGUAGE.into(),
        LanguageId::Rust => tree_sitter_rust::LANGUAGE.into(),
        LanguageId::Go => tree_sitter_go::LANGUAGE.into(),
        LanguageId::Csharp => tree_sitter_c_sharp::LANGUAGE.into(),
        LanguageId::Cpp => tree_sitter_cpp::LANGUAGE.into(),
        LanguageId::C => tree_sitter_c::LANGUAGE.into(),
        LanguageId::Php => tree_sitter_php::LANGUAGE_PHP.into(),
    }
}

impl SyntaxBackend for TreeSitterBackend {
    fn query(&self, language: LanguageId, text: &str) -> Result<SyntaxQuery, BackendError> {
        let mut parser = Parser::new();
        parser
            .set_language(&grammar(language))
            .map_err(|e| BackendError::Grammar(language, e.to_string()))?;
        let tree = parser
            .parse(text, None)
            .ok_or(BackendError::NoTree(language))?;
        let root = tree.root_node();

        let mut walker = Walker {
            language,
            text,
            scopes: Vec::new(),
            depth: 0,
            out: Vec::new(),
        };
        walker.visit(root);

        let mut diagnostics = Vec::new();
        if root.has_error() {
            collect_errors(root, &mut diagnostics);
            if diagnostics.is_empty() {
                diagnostics.push("syntax error".to_string());
            }
        }
        Ok(SyntaxQuery {
            functions: walker.out,
            diagnostics,
        })
    }
}

fn collect_errors(node: Node, out: &mut Vec<String>) {
    if out.len() >= MAX_DIAGNOSTICS {
        return;
    }
    if node.is_error() {
        let p = node.start_position();
        out.push(format!("syntax error at line {}, column {}", p.row + 1, p.column + 1));
        return;
    }
    if node.is_missing() {
        let p = node.start_position();
        out.push(format!(
            "missing `{}` at line {}, column {}",
            node.kind(),
            p.row + 1,
            p.column + 1
        ));
        return;
    }
    if !node.has_error() {
        return;
    }
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        collect_errors(child, out);
    }
}

fn is_comment(node: Node) -> bool {
    node.kind().ends_with("comment")
}

struct Walker<'a> {
    language: LanguageId,
    text: &'a str,
    scopes: Vec<String>,
    depth: usize,
    out: Vec<FunctionNode>,
}

impl<'a> Walker<'a> {
    fn node_text(&self, node: Node) -> &'a str {
        &self.text[node.byte_range()]
    }

    fn visit(&mut self, node: Node) {
        if let Some((name, function)) = self.assigned_function(node) {
            let record = self.function_node_parts(node, function, name.clone(), self.scopes.clone());
            self.out.push(record);
            self.scopes.push(name);
            self.depth += 1;
            self.visit_children(function);
            self.depth -= 1;
            self.scopes.pop();
            return;
        }
        if self.is_function(node) {
            match self.function_name(node) {
                Some((name, qualifiers)) => {
                    let mut scopes = self.scopes.clone();
                    scopes.extend(qualifiers);
                    let record = self.function_node(node, name.clone(), scopes);
                    self.out.push(record);
                    self.scopes.push(name);
                    self.depth += 1;
                    self.visit_children(node);
                    self.depth -= 1;
                    self.scopes.pop();
                }
                None => self.visit_children(node),
            }
            return;
        }
        if let Some(scope) = self.scope_name(node) {
            self.scopes.push(scope);
            self.visit_children(node);
            self.scopes.pop();
            return;
        }
        self.visit_children(node);
    }

    fn visit_children(&mut self, node: Node) {
        let mut cursor = node.walk();
        let children: Vec<Node> = node.named_children(&mut cursor).collect();
        for child in children {
            self.visit(child);
        }
    }

    fn is_function(&self, node: Node) -> bool {
        let kind = node.kind();
        match self.language {
            LanguageId::Python => kind == "function_definition",
            LanguageId::Java => matches!(
                kind,
                "method_declaration" | "constructor_declaration" | "compact_constructor_declaration"
            ),
            LanguageId::Javascript => matches!(
                kind,
                "function_declaration" | "generator_function_declaration" | "method_definition"
            ),
            LanguageId::Ruby => matches!(kind, "method" | "singleton_method"),
            LanguageId::Go => matches!(kind, "function_declaration" | "method_declaration"),
            LanguageId::Php => matches!(kind, "function_definition" | "method_declaration"),
            LanguageId::Rust => kind == "function_item",
            LanguageId::C | LanguageId::Cpp => kind == "function_definition",
            LanguageId::Csharp => matches!(
                kind,
                "method_declaration"
                    | "constructor_declaration"
                    | "destructor_declaration"
                    | "local_function_statement"
            ),
        }
    }

    /// A JavaScript `name = function` or `name = (..) =>` declarator whose
    /// name is a plain identifier.
    fn assigned_function(&self, node: Node<'a>) -> Option<(String, Node<'a>)> {
        if self.language != LanguageId::Javascript || node.kind() != "variable_declarator" {
            return None;
        }
        let name = node.child_by_field_name("name").filter(|n| n.kind() == "identifier")?;
        let value = node.child_by_field_name("value")?;
        matches!(value.kind(), "arrow_function" | "function_expression" | "generator_function")
            .then(|| (self.node_text(name).to_string(), value))
    }

    /// Returns the function's own name plus any scope qualifiers written in
    /// the declarator itself (C++ `Outer::name`).
    fn function_name(&self, node: Node) -> Option<(String, Vec<String>)> {
        match self.language {
            LanguageId::C | LanguageId::Cpp => self.c_declarator_name(node),
            LanguageId::Csharp if node.kind() == "destructor_declaration" => {
                let name = node.child_by_field_name("name")?;
                Some((format!("~{}", self.node_text(name)), Vec::new()))
            }
            _ => {
                let name = node.child_by_field_name("name")?;
                let text = self.node_text(name).trim();
                if text.is_empty() {
                    None
                } else {
                    Some((text.to_string(), Vec::new()))
                }
            }
        }
    }

    fn c_declarator_name(&self, node: Node) -> Option<(String, Vec<String>)> {
        let mut decl = node.child_by_field_name("declarator")?;
        loop {
            match decl.kind() {
                "function_declarator" => {
                    decl = decl.child_by_field_name("declarator")?;
                    break;
                }
                "pointer_declarator" | "reference_declarator" | "parenthesized_declarator"
                | "attributed_declarator" => {
                    decl = match decl.child_by_field_name("declarator") {
                        Some(inner) => inner,
                        None => {
                            let count = decl.named_child_count();
                            decl.named_child(count.checked_sub(1)?)?
                        }
                    };
                }
                _ => return None,
            }
        }
        let text = self.node_text(decl).trim();
        let text = match text.find('<') {
            Some(idx) if decl.kind() != "operator_name" => &text[..idx],
            _ => text,
        };
        let mut parts: Vec<String> = text
            .split("::")
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .collect();
        let name = parts.pop()?;
        Some((name, parts))
    }

    fn scope_name(&self, node: Node) -> Option<String> {
        let kind = node.kind();
        let field = match self.language {
            LanguageId::Python => matches!(kind, "class_definition").then_some("name"),
            LanguageId::Java => matches!(
                kind,
                "class_declaration"
                    | "interface_declaration"
                    | "enum_declaration"
                    | "record_declaration"
                    | "annotation_type_declaration"
            )
            .then_some("name"),
            LanguageId::Javascript => matches!(kind, "class_declaration" | "class").then_some("name"),
            LanguageId::Ruby => matches!(kind, "class" | "module").then_some("name"),
            LanguageId::Go => None,
            LanguageId::Php => match kind {
                "class_declaration" | "interface_declaration" | "trait_declaration"
                | "enum_declaration" => Some("name"),
                "namespace_definition" if node.child_by_field_name("body").is_some() => Some("name"),
                _ => None,
            },
            LanguageId::Rust => match kind {
                "impl_item" => Some("type"),
                "trait_item" | "mod_item" => Some("name"),
                _ => None,
            },
            LanguageId::C => None,
            LanguageId::Cpp => matches!(
                kind,
                "class_specifier" | "struct_specifier" | "union_specifier" | "namespace_definition"
            )
            .then_some("name"),
            LanguageId::Csharp => matches!(
                kind,
                "class_declaration"
                    | "struct_declaration"
                    | "interface_declaration"
                    | "record_declaration"
                    | "namespace_declaration"
                    | "file_scoped_namespace_declaration"
            )
            .then_some("name"),
        }?;
        let name = node.child_by_field_name(field)?;
        let text = self.node_text(name).trim();
        let text = match text.find('<') {
            Some(idx) => text[..idx].trim(),
            None => text,
        };
        let text = text.replace("::", ".");
        (!text.is_empty()).then_some(text)
    }

    fn span(&self, node: Node) -> NodeSpan {
        NodeSpan {
            start_byte: node.start_byte(),
            end_byte: node.end_byte(),
            start_row: node.start_position().row,
            end_row: node.end_position().row,
        }
    }

    /// Span of a comment with captured trailing whitespace removed.
    fn comment_span(&self, node: Node) -> NodeSpan {
        let raw = self.node_text(node);
        let trimmed = raw.trim_end();
        let start_row = node.start_position().row;
        let end_row = start_row + trimmed.matches('\n').count();
        NodeSpan {
            start_byte: node.start_byte(),
            end_byte: node.start_byte() + trimmed.len(),
            start_row,
            end_row,
        }
    }

    /// The outermost node that still belongs to this declaration.
    fn anchor(&self, node: Node<'a>) -> Node<'a> {
        let mut anchor = node;
        while let Some(parent) = anchor.parent() {
            let wraps = match self.language {
                LanguageId::Javascript => match parent.kind() {
                    "export_statement" => true,
                    // Only a sole declarator owns its declaration.
                    "lexical_declaration" | "variable_declaration" => parent.named_child_count() == 1,
                    _ => false,
                },
                LanguageId::Cpp => parent.kind() == "template_declaration",
                LanguageId::Python => parent.kind() == "decorated_definition",
                _ => false,
            };
            if !wraps {
                break;
            }
            anchor = parent;
        }
        anchor
    }

    fn function_node(&self, node: Node, name: String, scopes: Vec<String>) -> FunctionNode {
        self.function_node_parts(node, node, name, scopes)
    }

    /// `outer` spans the declaration; `function` holds the body.
    fn function_node_parts(&self, outer: Node, function: Node, name: String, scopes: Vec<String>) -> FunctionNode {
        let anchor = self.anchor(outer);
        let mut anchor_row = anchor.start_position().row;
        let span_node = if self.language == LanguageId::Javascript && outer.kind() == "variable_declarator" {
            outer
                .parent()
                .filter(|p| p.named_child_count() == 1 && p.kind() != "program")
                .unwrap_or(outer)
        } else {
            outer
        };
        let node = function;

        let mut comments = Vec::new();
        let mut prev = first_child_predecessor(anchor);
        while let Some(sibling) = prev {
            if self.language == LanguageId::Rust && sibling.kind() == "attribute_item" && comments.is_empty() {
                anchor_row = sibling.start_position().row;
                prev = sibling.prev_sibling();
                continue;
            }
            if !is_comment(sibling) {
                break;
            }
            let trailing = sibling
                .prev_sibling()
                .map(|p| !is_comment(p) && p.end_position().row == sibling.start_position().row)
                .unwrap_or(false);
            comments.push(CommentNode {
                span: self.comment_span(sibling),
                trailing,
            });
            prev = sibling.prev_sibling();
        }
        comments.reverse();

        let body = node.child_by_field_name("body").or_else(|| {
            let mut cursor = node.walk();
            let found = node
                .named_children(&mut cursor)
                .find(|c| matches!(c.kind(), "body_statement" | "block" | "compound_statement"));
            found
        });

        let leading_string = if self.language == LanguageId::Python {
            body.and_then(|b| self.python_docstring(b))
        } else {
            None
        };

        FunctionNode {
            name,
            scopes,
            span: self.span(span_node),
            signature_end: body.map(signature_end),
            anchor_row,
            preceding_comments: comments,
            leading_string,
            depth: self.depth,
        }
    }

    fn python_docstring(&self, body: Node) -> Option<NodeSpan> {
        let mut cursor = body.walk();
        let first = body.named_children(&mut cursor).find(|c| !is_comment(*c))?;
        if first.kind() != "expression_statement" || first.named_child_count() != 1 {
            return None;
        }
        let expr = first.named_child(0)?;
        matches!(expr.kind(), "string" | "concatenated_string").then(|| self.span(expr))
    }
}

fn signature_end(body: Node) -> usize {
    let mut prev = body.prev_sibling();
    while let Some(p) = prev {
        if !is_comment(p) {
            return p.end_byte();
        }
        prev = p.prev_sibling();
    }
    body.start_byte()
}

/// The previous sibling of `node`, or of the nearest ancestor that `node`
/// opens, so comments placed before a body's first statement are found.
fn first_child_predecessor(node: Node) -> Option<Node> {
    let mut current = node;
    loop {
        if let Some(prev) = current.prev_sibling() {
            return Some(prev);
        }
        let parent = current.parent()?;
        if parent.start_byte() != current.start_byte() || parent.kind() == "program" {
            return None;
        }
        current = parent;
    }
}
