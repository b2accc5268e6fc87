//! Tokenizer for the template DSL. Tracks (line, column) per token for
//! error reporting; `#` starts a comment running to end of line.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::pow::Pow;

use super::{MathError, Pos};

#[derive(Debug, Clone, PartialEq)]
pub enum Token {
    Ident(String),
    Number(BigRational),
    Str(String),
    // Keywords.
    Param,
    In,
    Constraint,
    Let,
    Return,
    Question,
    Original,
    Answer,
    And,
    Or,
    Not,
    // Punctuation and operators.
    Semi,
    Comma,
    Colon,
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Assign,
    Plus,
    Minus,
    Star,
    Slash,
    SlashSlash,
    Percent,
    EqEq,
    NotEq,
    Lt,
    Le,
    Gt,
    Ge,
    Eof,
}

impl Token {
    pub fn describe(&self) -> String {
        match self {
            Token::Ident(name) => format!("identifier `{name}`"),
            Token::Number(n) => format!("number `{n}`"),
            Token::Str(_) => "string literal".into(),
            Token::Eof => "end of input".into(),
            other => format!("`{}`", other.literal()),
        }
    }

    fn literal(&self) -> &'static str {
        match self {
            Token::Param => "param",
            Token::In => "in",
            Token::Constraint => "constraint",
            Token::Let => "let",
            Token::Return => "return",
            Token::Question => "question",
            Token::Original => "original",
            Token::Answer => "answer",
            Token::And => "and",
            Token::Or => "or",
            Token::Not => "not",
            Token::Semi => ";",
            Token::Comma => ",",
            Token::Colon => ":",
            Token::LParen => "(",
            Token::RParen => ")",
            Token::LBracket => "[",
            Token::RBracket => "]",
            Token::LBrace => "{",
            Token::RBrace => "}",
            Token::Assign => "=",
            Token::Plus => "+",
            Token::Minus => "-",
            Token::Star => "*",
            Token::Slash => "/",
            Token::SlashSlash => "//",
            Token::Percent => "%",
            Token::EqEq => "==",
            Token::NotEq => "!=",
            Token::Lt => "<",
            Token::Le => "<=",
            Token::Gt => ">",
            Token::Ge => ">=",
            _ => unreachable!(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Spanned {
    pub token: Token,
    pub pos: Pos,
}

pub fn lex(template: &str, source: &str) -> Result<Vec<Spanned>, MathError> {
    Lexer { template, chars: source.chars().collect(), at: 0, line: 1, col: 1 }.run()
}

struct Lexer<'a> {
    template: &'a str,
    chars: Vec<char>,
    at: usize,
    line: usize,
    col: usize,
}

impl Lexer<'_> {
    fn run(mut self) -> Result<Vec<Spanned>, MathError> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia();
            let pos = Pos { line: self.line, col: self.col };
            let Some(c) = self.peek() else {
                out.push(Spanned { token: Token::Eof, pos });
                return Ok(out);
            };
            let token = if c.is_ascii_digit() {
                self.number(pos)?
            } else if c.is_alphabetic() || c == '_' {
                self.word()
            } else if c == '"' {
                self.string(pos)?
            } else {
                self.punct(pos)?
            };
            out.push(Spanned { token, pos });
        }
    }

    fn error(&self, pos: Pos, message: impl Into<String>) -> MathError {
        MathError::Parse { template: self.template.to_string(), pos, message: message.into() }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.at).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.at += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == '#' {
                while let Some(c) = self.peek() {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, pos: Pos) -> Result<Token, MathError> {
        let mut digits = String::new();
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            digits.push(self.bump().unwrap());
        }
        let mut frac = String::new();
        if self.peek() == Some('.') {
            // Only consume the dot when digits follow; else it's stray.
            self.bump();
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                frac.push(self.bump().unwrap());
            }
            if frac.is_empty() {
                return Err(self.error(pos, "expected digits after decimal point"));
            }
        }
        let whole: BigInt = digits.parse().expect("digits parse");
        let value = if frac.is_empty() {
            BigRational::from_integer(whole)
        } else {
            let scale = BigInt::from(10u32).pow(frac.len() as u32);
            let frac_int: BigInt = frac.parse().expect("digits parse");
            BigRational::new(whole * &scale + frac_int, scale)
        };
        Ok(Token::Number(value))
    }

    fn word(&mut self) -> Token {
        let mut word = String::new();
        while matches!(self.peek(), Some(c) if c.is_alphanumeric() || c == '_') {
            word.push(self.bump().unwrap());
        }
        match word.as_str() {
            "param" => Token::Param,
            "in" => Token::In,
            "constraint" => Token::Constraint,
            "let" => Token::Let,
            "return" => Token::Return,
            "question" => Token::Question,
            "original" => Token::Original,
            "answer" => Token::Answer,
            "and" => Token::And,
            "or" => Token::Or,
            "not" => Token::Not,
            _ => Token::Ident(word),
        }
    }

    fn string(&mut self, pos: Pos) -> Result<Token, MathError> {
        self.bump(); // opening quote
        let mut value = String::new();
        loop {
            match self.bump() {
                None => return Err(self.error(pos, "unterminated string literal")),
                Some('"') => return Ok(Token::Str(value)),
                Some('\\') => match self.bump() {
                    Some('"') => value.push('"'),
                    Some('\\') => value.push('\\'),
                    Some('n') => value.push('\n'),
                    other => {
                        return Err(self.error(
                            pos,
                            format!("unsupported escape \\{}", other.map_or(String::from("<eof>"), String::from)),
                        ))
                    }
                },
                Some(c) => value.push(c),
            }
        }
    }

    fn punct(&mut self, pos: Pos) -> Result<Token, MathError> {
        let c = self.bump().expect("peeked");
        let token = match c {
            ';' => Token::Semi,
            ',' => Token::Comma,
            ':' => Token::Colon,
            '(' => Token::LParen,
            ')' => Token::RParen,
            '[' => Token::LBracket,
            ']' => Token::RBracket,
            '{' => Token::LBrace,
            '}' => Token::RBrace,
            '+' => Token::Plus,
            '-' => Token::Minus,
            '*' => Token::Star,
            '%' => Token::Percent,
            '/' => {
                if self.peek() == Some('/') {
                    self.bump();
                    Token::SlashSlash
                } else {
                    Token::Slash
                }
            }
            '=' => {
                if self.peek() == Some('=') {
                    self.bump();
                    Token::EqEq
                } else {
                    Token::Assign
                }
            }
            '!' => {
                if self.peek() == Some('=') {
                    self.bump();
                    Token::NotEq
                } else {
                    return Err(self.error(pos, "expected `!=`"));
                }
            }
            '<' => {
                if self.peek() == Some('=') {
                    self.bump();
                    Token::Le
                } else {
                    Token::Lt
                }
            }
            '>' => {
                if self.peek() == Some('=') {
                    self.bump();
                    Token::Ge
                } else {
                    Token::Gt
                }
            }
            other => return Err(self.error(pos, format!("unexpected character `{other}`"))),
        };
        Ok(token)
    }
}
