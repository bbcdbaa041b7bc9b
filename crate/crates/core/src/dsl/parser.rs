use std::collections::{BTreeSet, HashMap};

use super::lexer::{tokenize, Tok, Token};
use super::{ParseCategory, ParseError, Pos};
use crate::graph::{
    self, ErrorCategory, GraphError, GraphSpec, Init, InputDecl, LossDecl, LossKind, NodeDecl,
    OpKind, ParamDecl,
};
use crate::shape::{Dim, Shape};

/// Parses and validates a graph source.
///
/// Lexical and syntactic problems are reported first; recovery resumes at
/// the next `;` so every broken declaration is reported. When the text is
/// well formed the resulting spec is validated and graph errors are mapped
/// back to the declaration they concern.
pub fn parse(text: &str) -> Result<GraphSpec, Vec<ParseError>> {
    let (tokens, lex_errors) = tokenize(text);
    let mut p = Parser {
        tokens,
        at: 0,
        errors: lex_errors,
        spec: GraphSpec::default(),
        decl_pos: HashMap::new(),
        operand_pos: HashMap::new(),
        output_pos: None,
        loss_pos: None,
        close_pos: None,
        rejected: BTreeSet::new(),
    };
    p.graph();

    let malformed = p
        .errors
        .iter()
        .any(|e| e.category != ParseCategory::Semantic);
    if !malformed {
        if let Err(graph_errors) = graph::validate(&p.spec) {
            for ge in graph_errors {
                if let Some(e) = p.locate(&ge) {
                    p.errors.push(e);
                }
            }
        }
    }

    if p.errors.is_empty() {
        Ok(p.spec)
    } else {
        let mut errors = p.errors;
        errors.sort_by_key(|e| (e.line, e.column));
        Err(errors)
    }
}

struct Parser {
    tokens: Vec<Token>,
    at: usize,
    errors: Vec<ParseError>,
    spec: GraphSpec,
    decl_pos: HashMap<String, Pos>,
    operand_pos: HashMap<(String, String), Pos>,
    output_pos: Option<Pos>,
    loss_pos: Option<Pos>,
    close_pos: Option<Pos>,
    /// Declarations dropped for semantic reasons; validation noise about them is suppressed.
    rejected: BTreeSet<String>,
}

/// Marker for a syntax error already recorded; the caller resynchronizes.
struct Abort;

type PResult<T> = Result<T, Abort>;

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.at]
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.at].clone();
        if self.at + 1 < self.tokens.len() {
            self.at += 1;
        }
        t
    }

    fn syntax_error(&mut self, expected: &str) -> Abort {
        let t = self.peek().clone();
        self.errors.push(ParseError::new(
            t.pos,
            ParseCategory::Syntactic,
            format!("expected {expected}, found {}", t.tok.describe()),
        ));
        Abort
    }

    fn semantic(&mut self, pos: Pos, message: String) {
        self.errors
            .push(ParseError::new(pos, ParseCategory::Semantic, message));
    }

    fn punct(&mut self, c: char) -> PResult<Pos> {
        if self.peek().tok == Tok::Punct(c) {
            Ok(self.advance().pos)
        } else {
            Err(self.syntax_error(&format!("`{c}`")))
        }
    }

    fn keyword(&mut self, word: &str) -> PResult<Pos> {
        match &self.peek().tok {
            Tok::Ident(s) if s == word => Ok(self.advance().pos),
            _ => Err(self.syntax_error(&format!("`{word}`"))),
        }
    }

    fn ident(&mut self, what: &str) -> PResult<(String, Pos)> {
        match self.peek().tok.clone() {
            Tok::Ident(s) => {
                let pos = self.advance().pos;
                Ok((s, pos))
            }
            _ => Err(self.syntax_error(what)),
        }
    }

    fn graph(&mut self) {
        if self.header().is_err() {
            // Skip to the body if there is one.
            while !matches!(self.peek().tok, Tok::Punct('{') | Tok::Eof) {
                self.advance();
            }
            if self.peek().tok == Tok::Eof {
                return;
            }
            self.advance();
        }
        loop {
            match &self.peek().tok {
                Tok::Punct('}') => {
                    self.close_pos = Some(self.advance().pos);
                    break;
                }
                Tok::Eof => {
                    self.syntax_error("`}`");
                    return;
                }
                _ => {
                    if self.declaration().is_err() {
                        self.synchronize();
                    }
                }
            }
        }
        if self.peek().tok != Tok::Eof {
            self.syntax_error("end of input after `}`");
        }
    }

    fn header(&mut self) -> PResult<()> {
        self.keyword("graph")?;
        match self.peek().tok.clone() {
            Tok::Str(name) => {
                self.advance();
                self.spec.name = name;
            }
            _ => return Err(self.syntax_error("graph name string")),
        }
        self.punct('{')?;
        Ok(())
    }

    /// Skips past the next `;`, stopping early at `}` or end of input.
    fn synchronize(&mut self) {
        loop {
            match self.peek().tok {
                Tok::Punct(';') => {
                    self.advance();
                    return;
                }
                Tok::Punct('}') | Tok::Eof => return,
                _ => {
                    self.advance();
                }
            }
        }
    }

    fn declaration(&mut self) -> PResult<()> {
        let word = match &self.peek().tok {
            Tok::Ident(s) => s.clone(),
            _ => return Err(self.syntax_error("a declaration")),
        };
        match word.as_str() {
            "input" => self.input(),
            "param" => self.param(),
            "node" => self.node(),
            "output" => self.output(),
            "loss" => self.loss(),
            _ => {
                Err(self
                    .syntax_error("a declaration (`input`, `param`, `node`, `output` or `loss`)"))
            }
        }
    }

    /// Registers a declared name; false (with an error) if it is taken.
    fn declare(&mut self, name: &str, pos: Pos) -> bool {
        if let Some(first) = self.decl_pos.get(name) {
            let first = *first;
            self.semantic(
                pos,
                format!(
                    "duplicate declaration of `{name}` (first declared at {}:{})",
                    first.line, first.column
                ),
            );
            false
        } else {
            self.decl_pos.insert(name.to_string(), pos);
            true
        }
    }

    fn input(&mut self) -> PResult<()> {
        self.keyword("input")?;
        let (name, pos) = self.ident("input name")?;
        self.punct(':')?;
        let shape = self.shape()?;
        self.punct(';')?;
        if self.declare(&name, pos) {
            match shape {
                Some(shape) => self.spec.inputs.push(InputDecl { name, shape }),
                None => {
                    self.rejected.insert(name);
                }
            }
        }
        Ok(())
    }

    fn param(&mut self) -> PResult<()> {
        self.keyword("param")?;
        let (name, pos) = self.ident("param name")?;
        self.punct(':')?;
        let shape = self.shape()?;
        self.keyword("init")?;
        self.punct('=')?;
        let (init_word, init_pos) = self.ident("`zeros` or `glorot`")?;
        self.punct(';')?;
        let init = Init::from_keyword(&init_word);
        if init.is_none() {
            self.semantic(
                init_pos,
                format!("unknown initializer `{init_word}` (expected `zeros` or `glorot`)"),
            );
        }
        if self.declare(&name, pos) {
            match (shape, init) {
                (Some(shape), Some(init)) => self.spec.params.push(ParamDecl { name, shape, init }),
                _ => {
                    self.rejected.insert(name);
                }
            }
        }
        Ok(())
    }

    fn node(&mut self) -> PResult<()> {
        self.keyword("node")?;
        let (name, pos) = self.ident("node name")?;
        self.punct('=')?;
        let (op_word, op_pos) = self.ident("an op name")?;
        self.punct('(')?;
        let mut operands = vec![self.ident("operand name")?];
        while self.peek().tok == Tok::Punct(',') {
            self.advance();
            operands.push(self.ident("operand name")?);
        }
        self.punct(')')?;
        self.punct(';')?;

        let op = OpKind::from_keyword(&op_word);
        let mut ok = true;
        match op {
            None => {
                self.semantic(
                    op_pos,
                    format!(
                        "unknown op `{op_word}` (expected one of matmul, addbias, relu, softmax)"
                    ),
                );
                ok = false;
            }
            Some(op) if op.arity() != operands.len() => {
                self.semantic(
                    op_pos,
                    format!(
                        "`{op}` takes {} operand(s), got {}",
                        op.arity(),
                        operands.len()
                    ),
                );
                ok = false;
            }
            Some(_) => {}
        }
        if self.declare(&name, pos) {
            if ok {
                for (operand, opos) in &operands {
                    self.operand_pos
                        .entry((name.clone(), operand.clone()))
                        .or_insert(*opos);
                }
                self.spec.nodes.push(NodeDecl {
                    name,
                    op: op.expect("checked"),
                    operands: operands.into_iter().map(|(n, _)| n).collect(),
                });
            } else {
                self.rejected.insert(name);
            }
        }
        Ok(())
    }

    fn output(&mut self) -> PResult<()> {
        let kw = self.keyword("output")?;
        let (name, pos) = self.ident("output node name")?;
        self.punct(';')?;
        if self.spec.output.is_some() {
            self.semantic(kw, "duplicate `output` declaration".into());
        } else {
            self.spec.output = Some(name);
            self.output_pos = Some(pos);
        }
        Ok(())
    }

    fn loss(&mut self) -> PResult<()> {
        let kw = self.keyword("loss")?;
        let (kind_word, kind_pos) = self.ident("loss kind")?;
        self.punct('(')?;
        let (target, pos) = self.ident("prediction node name")?;
        self.punct(')')?;
        self.punct(';')?;
        if kind_word != LossKind::CrossEntropy.keyword() {
            self.semantic(
                kind_pos,
                format!("unknown loss `{kind_word}` (expected `cross_entropy`)"),
            );
            return Ok(());
        }
        if self.spec.loss.is_some() {
            self.semantic(kw, "duplicate `loss` declaration".into());
        } else {
            self.spec.loss = Some(LossDecl {
                kind: LossKind::CrossEntropy,
                prediction: target,
            });
            self.loss_pos = Some(pos);
        }
        Ok(())
    }

    /// Parses a shape; `Ok(None)` when it is well formed but semantically invalid.
    fn shape(&mut self) -> PResult<Option<Shape>> {
        self.punct('[')?;
        let mut dims = Vec::new();
        let mut valid = true;
        let first = self.peek().clone();
        match first.tok {
            Tok::Punct('?') => {
                self.advance();
                dims.push(Dim::Batch);
            }
            Tok::Int(n) => {
                self.advance();
                valid &= self.check_dim(n, first.pos);
                dims.push(Dim::Fixed(n));
            }
            _ => return Err(self.syntax_error("`?` or a dimension")),
        }
        while self.peek().tok == Tok::Punct(',') {
            self.advance();
            let t = self.peek().clone();
            match t.tok {
                Tok::Int(n) => {
                    self.advance();
                    valid &= self.check_dim(n, t.pos);
                    dims.push(Dim::Fixed(n));
                }
                _ => return Err(self.syntax_error("a dimension")),
            }
        }
        self.punct(']')?;
        Ok(if valid {
            Some(Shape::new(dims).expect("grammar guarantees a valid shape"))
        } else {
            None
        })
    }

    fn check_dim(&mut self, n: usize, pos: Pos) -> bool {
        if n == 0 {
            self.semantic(pos, "dimensions must be at least 1".into());
            false
        } else {
            true
        }
    }

    fn end_pos(&self) -> Pos {
        self.close_pos
            .unwrap_or_else(|| self.tokens.last().expect("eof token").pos)
    }

    /// Maps a validation error to a positioned parse error, or drops it if it
    /// only restates a problem already reported for a rejected declaration.
    fn locate(&self, e: &GraphError) -> Option<ParseError> {
        if e.category == ErrorCategory::DuplicateName
            || e.names.iter().any(|n| self.rejected.contains(n))
        {
            return None;
        }
        let decl = |name: &String| self.decl_pos.get(name).copied();
        let pos = match e.category {
            ErrorCategory::UnresolvedReference => self
                .operand_pos
                .get(&(e.names[1].clone(), e.names[0].clone()))
                .copied(),
            ErrorCategory::MissingOutput => self.output_pos,
            ErrorCategory::BadLossTarget => self.loss_pos,
            _ => e.names.first().and_then(decl),
        }
        .unwrap_or_else(|| self.end_pos());
        Some(ParseError::new(
            pos,
            ParseCategory::Semantic,
            e.message.clone(),
        ))
    }
}
