//! The `.graph` text format.
//!
//! ```text
//! graph    := "graph" STRING "{" decl* "}"
//! decl     := input | param | node | output | loss
//! input    := "input" IDENT ":" shape ";"
//! param    := "param" IDENT ":" shape "init" "=" ("zeros"|"glorot") ";"
//! node     := "node" IDENT "=" IDENT "(" IDENT ("," IDENT)* ")" ";"
//! output   := "output" IDENT ";"
//! loss     := "loss" "cross_entropy" "(" IDENT ")" ";"
//! shape    := "[" ("?"|INT) ("," INT)* "]"
//! ```
//!
//! Whitespace is insignificant, `#` starts a line comment and declarations
//! may appear in any order. [`serialize`] emits the canonical form: one
//! declaration per line, sections in the order above, each section sorted
//! by name.

mod lexer;
mod parser;

use std::fmt::{self, Write};

use serde::{Deserialize, Serialize};

use crate::graph::{self, GraphError, GraphSpec};

pub use parser::parse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseCategory {
    Lexical,
    Syntactic,
    Semantic,
}

impl fmt::Display for ParseCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParseCategory::Lexical => "lexical",
            ParseCategory::Syntactic => "syntactic",
            ParseCategory::Semantic => "semantic",
        })
    }
}

/// A positioned diagnostic. Line and column are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("{line}:{column}: {category} error: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub category: ParseCategory,
}

impl ParseError {
    pub(crate) fn new(pos: Pos, category: ParseCategory, message: String) -> Self {
        ParseError {
            line: pos.line,
            column: pos.column,
            message,
            category,
        }
    }

    pub fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            column: self.column,
        }
    }
}

/// Parses raw bytes, reporting invalid UTF-8 as a lexical error.
pub fn parse_bytes(bytes: &[u8]) -> Result<GraphSpec, Vec<ParseError>> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse(text),
        Err(e) => {
            let valid = std::str::from_utf8(&bytes[..e.valid_up_to()]).expect("valid prefix");
            Err(vec![ParseError::new(
                end_position(valid),
                ParseCategory::Lexical,
                "input is not valid UTF-8".into(),
            )])
        }
    }
}

/// Position just past the end of `text`.
pub(crate) fn end_position(text: &str) -> Pos {
    let mut pos = Pos { line: 1, column: 1 };
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\r' => {
                if chars.peek() == Some(&'\n') {
                    chars.next();
                }
                pos.line += 1;
                pos.column = 1;
            }
            '\n' => {
                pos.line += 1;
                pos.column = 1;
            }
            _ => pos.column += 1,
        }
    }
    pos
}

/// Canonical text of a graph spec. Fails if it does not validate.
pub fn serialize(spec: &GraphSpec) -> Result<String, Vec<GraphError>> {
    graph::validate(spec)?;
    Ok(write_canonical(spec))
}

pub(crate) fn write_canonical(spec: &GraphSpec) -> String {
    let spec = spec.canonicalized();
    let mut out = String::new();
    writeln!(out, "graph {} {{", quote(&spec.name)).unwrap();
    for d in &spec.inputs {
        writeln!(out, "input {}: {};", d.name, d.shape).unwrap();
    }
    for d in &spec.params {
        writeln!(
            out,
            "param {}: {} init = {};",
            d.name,
            d.shape,
            d.init.keyword()
        )
        .unwrap();
    }
    for d in &spec.nodes {
        writeln!(
            out,
            "node {} = {}({});",
            d.name,
            d.op,
            d.operands.join(", ")
        )
        .unwrap();
    }
    if let Some(o) = &spec.output {
        writeln!(out, "output {o};").unwrap();
    }
    if let Some(l) = &spec.loss {
        writeln!(out, "loss {}({});", l.kind.keyword(), l.prediction).unwrap();
    }
    out.push_str("}\n");
    out
}

fn quote(s: &str) -> String {
    let mut q = String::with_capacity(s.len() + 2);
    q.push('"');
    for c in s.chars() {
        match c {
            '"' => q.push_str("\\\""),
            '\\' => q.push_str("\\\\"),
            '\n' => q.push_str("\\n"),
            '\t' => q.push_str("\\t"),
            c => q.push(c),
        }
    }
    q.push('"');
    q
}
