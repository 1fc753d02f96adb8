//! Recursive-descent parser for rule definitions.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use super::{PhenotypeDefinition, Predicate, RuleExpr};
use crate::cohort::Code;

/// Syntax error with 1-based line and column of the offending input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseError {
    fn new(pos: Pos, message: impl Into<String>) -> Self {
        Self { line: pos.line, column: pos.column, message: message.into() }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ParseError {}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
struct Pos {
    line: usize,
    column: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Token {
    Word(String),
    LParen,
    RParen,
    Assign, // :=
    Colon,
    Ge, // >=
    End,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Word(w) => write!(f, "'{w}'"),
            Token::LParen => f.write_str("'('"),
            Token::RParen => f.write_str("')'"),
            Token::Assign => f.write_str("':='"),
            Token::Colon => f.write_str("':'"),
            Token::Ge => f.write_str("'>='"),
            Token::End => f.write_str("end of input"),
        }
    }
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'.' | b'-' | b'_' | b'=')
}

fn tokenize(text: &str) -> Result<Vec<(Token, Pos)>, ParseError> {
    let mut tokens = Vec::new();
    let mut line = 1usize;
    let mut column = 1usize;
    let bytes = text.as_bytes();
    let mut i = 0usize;
    while i < bytes.len() {
        let pos = Pos { line, column };
        let b = bytes[i];
        match b {
            b'\n' => {
                line += 1;
                column = 1;
                i += 1;
            }
            b' ' | b'\t' | b'\r' => {
                column += 1;
                i += 1;
            }
            b'(' => {
                tokens.push((Token::LParen, pos));
                column += 1;
                i += 1;
            }
            b')' => {
                tokens.push((Token::RParen, pos));
                column += 1;
                i += 1;
            }
            b':' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    tokens.push((Token::Assign, pos));
                    column += 2;
                    i += 2;
                } else {
                    tokens.push((Token::Colon, pos));
                    column += 1;
                    i += 1;
                }
            }
            b'>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    tokens.push((Token::Ge, pos));
                    column += 2;
                    i += 2;
                } else {
                    return Err(ParseError::new(pos, "expected '>='"));
                }
            }
            _ if is_word_byte(b) => {
                let start = i;
                while i < bytes.len() && is_word_byte(bytes[i]) {
                    i += 1;
                    column += 1;
                }
                tokens.push((Token::Word(text[start..i].to_string()), pos));
            }
            _ => {
                return Err(ParseError::new(
                    pos,
                    format!("unexpected character {:?}", char::from(b)),
                ));
            }
        }
    }
    tokens.push((Token::End, Pos { line, column }));
    Ok(tokens)
}

const KEYWORDS: [&str; 6] = ["and", "or", "not", "has", "count", "age"];

struct Parser {
    tokens: Vec<(Token, Pos)>,
    index: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.index].0
    }

    fn pos(&self) -> Pos {
        self.tokens[self.index].1
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.index].0.clone();
        if self.index + 1 < self.tokens.len() {
            self.index += 1;
        }
        t
    }

    fn expect(&mut self, want: &Token, context: &str) -> Result<(), ParseError> {
        if self.peek() == want {
            self.advance();
            Ok(())
        } else {
            Err(ParseError::new(
                self.pos(),
                format!("expected {want} {context}, found {}", self.peek()),
            ))
        }
    }

    fn word(&mut self, context: &str) -> Result<(String, Pos), ParseError> {
        let pos = self.pos();
        match self.peek() {
            Token::Word(w) => {
                let w = w.clone();
                self.advance();
                Ok((w, pos))
            }
            other => Err(ParseError::new(pos, format!("expected {context}, found {other}"))),
        }
    }

    fn match_keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Token::Word(w) if w == kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn definition(&mut self) -> Result<PhenotypeDefinition, ParseError> {
        let (name, pos) = self.word("definition name")?;
        if KEYWORDS.contains(&name.as_str()) {
            return Err(ParseError::new(pos, format!("'{name}' cannot be a definition name")));
        }
        self.expect(&Token::Assign, "after definition name")?;
        let expr = self.or_expr()?;
        match self.peek() {
            Token::End => Ok(PhenotypeDefinition { name, expr }),
            other => Err(ParseError::new(
                self.pos(),
                format!("unexpected {other} after expression"),
            )),
        }
    }

    fn or_expr(&mut self) -> Result<RuleExpr, ParseError> {
        let first = self.and_expr()?;
        let mut children = Vec::new();
        children.push(first);
        while self.match_keyword("or") {
            children.push(self.and_expr()?);
        }
        Ok(if children.len() == 1 {
            children.pop().expect("one child")
        } else {
            RuleExpr::Or(children)
        })
    }

    fn and_expr(&mut self) -> Result<RuleExpr, ParseError> {
        let first = self.factor()?;
        let mut children = Vec::new();
        children.push(first);
        while self.match_keyword("and") {
            children.push(self.factor()?);
        }
        Ok(if children.len() == 1 {
            children.pop().expect("one child")
        } else {
            RuleExpr::And(children)
        })
    }

    fn factor(&mut self) -> Result<RuleExpr, ParseError> {
        if self.match_keyword("not") {
            return Ok(RuleExpr::Not(alloc::boxed::Box::new(self.factor()?)));
        }
        if self.peek() == &Token::LParen {
            self.advance();
            let inner = self.or_expr()?;
            self.expect(&Token::RParen, "to close group")?;
            return Ok(inner);
        }
        self.predicate().map(RuleExpr::Atom)
    }

    fn predicate(&mut self) -> Result<Predicate, ParseError> {
        let pos = self.pos();
        let (word, _) = self.word("a predicate (has, count, or age)")?;
        match word.as_str() {
            "has" => {
                self.expect(&Token::LParen, "after 'has'")?;
                let code = self.code()?;
                self.expect(&Token::RParen, "to close 'has('")?;
                Ok(Predicate::HasCode { code })
            }
            "count" => {
                self.expect(&Token::LParen, "after 'count'")?;
                let code = self.code()?;
                self.expect(&Token::RParen, "to close 'count('")?;
                self.expect(&Token::Ge, "after 'count(...)'")?;
                let threshold = self.integer()?;
                Ok(Predicate::CountAtLeast { code, threshold })
            }
            "age" => {
                self.expect(&Token::Ge, "after 'age'")?;
                let threshold = self.integer()?;
                Ok(Predicate::AgeAtLeast { threshold })
            }
            other => Err(ParseError::new(
                pos,
                format!("expected a predicate (has, count, or age), found '{other}'"),
            )),
        }
    }

    fn code(&mut self) -> Result<Code, ParseError> {
        let (first, pos) = self.word("a code identifier")?;
        let full = if self.peek() == &Token::Colon {
            self.advance();
            let (second, _) = self.word("a code value after ':'")?;
            format!("{first}:{second}")
        } else {
            first
        };
        Code::new(full).map_err(|e| ParseError::new(pos, format!("{e}")))
    }

    fn integer(&mut self) -> Result<u32, ParseError> {
        let (w, pos) = self.word("a non-negative integer")?;
        if !w.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ParseError::new(pos, format!("expected a non-negative integer, found '{w}'")));
        }
        w.parse::<u32>()
            .map_err(|_| ParseError::new(pos, format!("integer '{w}' out of range")))
    }
}

/// Parses one definition, e.g. `AE := has(ICD9:995.1)`.
pub fn parse_rule(text: &str) -> Result<PhenotypeDefinition, ParseError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser { tokens, index: 0 };
    parser.definition()
}
