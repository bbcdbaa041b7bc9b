use super::{ParseCategory, ParseError, Pos};

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    Int(usize),
    Str(String),
    Punct(char),
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(n) => format!("`{n}`"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::Punct(c) => format!("`{c}`"),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

const PUNCT: &[char] = &['{', '}', '(', ')', '[', ']', ',', ';', ':', '=', '?'];

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    column: usize,
}

impl Cursor<'_> {
    fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            column: self.column,
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    /// Advances one character; `\r\n`, `\r` and `\n` each count as one newline.
    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        match c {
            '\r' => {
                if self.peek() == Some('\n') {
                    self.chars.next();
                }
                self.line += 1;
                self.column = 1;
                Some('\n')
            }
            '\n' => {
                self.line += 1;
                self.column = 1;
                Some('\n')
            }
            c => {
                self.column += 1;
                Some(c)
            }
        }
    }
}

/// Splits source text into tokens. Lexical errors are collected and the
/// offending characters skipped, so the parser still sees the rest.
pub(crate) fn tokenize(src: &str) -> (Vec<Token>, Vec<ParseError>) {
    let mut cur = Cursor {
        chars: src.chars().peekable(),
        line: 1,
        column: 1,
    };
    let mut tokens = Vec::new();
    let mut errors = Vec::new();

    while let Some(c) = cur.peek() {
        let pos = cur.pos();
        if c.is_whitespace() {
            cur.bump();
        } else if c == '#' {
            while let Some(c) = cur.peek() {
                if c == '\n' || c == '\r' {
                    break;
                }
                cur.bump();
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            let mut ident = String::new();
            while let Some(c) = cur.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    ident.push(c);
                    cur.bump();
                } else {
                    break;
                }
            }
            tokens.push(Token {
                tok: Tok::Ident(ident),
                pos,
            });
        } else if c.is_ascii_digit() {
            let mut digits = String::new();
            while let Some(c) = cur.peek() {
                if c.is_ascii_digit() {
                    digits.push(c);
                    cur.bump();
                } else {
                    break;
                }
            }
            match digits.parse::<usize>() {
                Ok(n) => tokens.push(Token {
                    tok: Tok::Int(n),
                    pos,
                }),
                Err(_) => errors.push(ParseError::new(
                    pos,
                    ParseCategory::Lexical,
                    format!("integer literal `{digits}` is too large"),
                )),
            }
        } else if c == '"' {
            cur.bump();
            match lex_string(&mut cur) {
                Ok(s) => tokens.push(Token {
                    tok: Tok::Str(s),
                    pos,
                }),
                Err(e) => errors.push(e),
            }
        } else if PUNCT.contains(&c) {
            cur.bump();
            tokens.push(Token {
                tok: Tok::Punct(c),
                pos,
            });
        } else {
            cur.bump();
            errors.push(ParseError::new(
                pos,
                ParseCategory::Lexical,
                format!("unexpected character {c:?}"),
            ));
        }
    }
    tokens.push(Token {
        tok: Tok::Eof,
        pos: cur.pos(),
    });
    (tokens, errors)
}

fn lex_string(cur: &mut Cursor<'_>) -> Result<String, ParseError> {
    let mut out = String::new();
    loop {
        let pos = cur.pos();
        match cur.peek() {
            None | Some('\n') | Some('\r') => {
                return Err(ParseError::new(
                    pos,
                    ParseCategory::Lexical,
                    "unterminated string literal".into(),
                ))
            }
            Some('"') => {
                cur.bump();
                return Ok(out);
            }
            Some('\\') => {
                cur.bump();
                let esc = match cur.peek() {
                    Some('"') => '"',
                    Some('\\') => '\\',
                    Some('n') => '\n',
                    Some('t') => '\t',
                    other => {
                        return Err(ParseError::new(
                            pos,
                            ParseCategory::Lexical,
                            format!("invalid escape sequence {other:?}"),
                        ))
                    }
                };
                cur.bump();
                out.push(esc);
            }
            Some(c) => {
                cur.bump();
                out.push(c);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_are_one_based_and_newline_agnostic() {
        let (toks, errs) = tokenize("graph \"g\" {\r\n  input x: [?, 3];\r}");
        assert!(errs.is_empty());
        assert_eq!(toks[0].pos, Pos { line: 1, column: 1 });
        assert_eq!(toks[1].tok, Tok::Str("g".into()));
        assert_eq!(toks[3].tok, Tok::Ident("input".into()));
        assert_eq!(toks[3].pos, Pos { line: 2, column: 3 });
        assert_eq!(toks.last().unwrap().pos.line, 3);
    }

    #[test]
    fn comments_are_skipped() {
        let (toks, _) = tokenize("# header\nnode # trailing\n;");
        let kinds: Vec<_> = toks.iter().map(|t| t.tok.clone()).collect();
        assert_eq!(
            kinds,
            [Tok::Ident("node".into()), Tok::Punct(';'), Tok::Eof]
        );
    }

    #[test]
    fn lexical_errors_are_collected() {
        let (toks, errs) = tokenize("a $ b \"open");
        assert_eq!(errs.len(), 2);
        assert_eq!(errs[0].pos(), Pos { line: 1, column: 3 });
        assert!(errs[1].message.contains("unterminated"));
        assert_eq!(toks.len(), 3);
    }

    #[test]
    fn huge_integer_is_lexical_error() {
        let (_, errs) = tokenize("[99999999999999999999999999]");
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].category, ParseCategory::Lexical);
    }
}
