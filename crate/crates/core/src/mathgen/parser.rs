//! Recursive-descent parser and static validation for the template DSL.
//!
//! Grammar (one statement per `;`):
//! ```text
//! param <id> in [<int>, <int>]        integer interval, inclusive
//! param <id> in {<rat>, ...}          finite rational set
//! constraint <boolexpr>
//! let <id> = <expr>
//! return <expr>
//! question "<text with {id} slots>"
//! original { <id>: <rat>, ... } answer <rat>
//! ```
//! Expressions use Python-like precedence: `or < and < not < comparisons
//! < + - < * / // % < unary minus`. Comparisons do not chain.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;

use super::ast::{BinOp, Expr};
use super::lexer::{lex, Spanned, Token};
use super::{Domain, MathError, MathTemplate, OriginalBlock, ParamDecl, Pos, Step};

/// Static type of an expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ty {
    Num,
    Bool,
}

/// Parses and validates a template. `name` is the template's identity
/// (usually the file stem); it appears in every diagnostic.
pub fn parse_template(name: &str, source: &str) -> Result<MathTemplate, MathError> {
    let tokens = lex(name, source)?;
    let mut parser = Parser { template: name.to_string(), tokens, at: 0 };
    parser.template()
}

/// Parses a bare expression (no scope or type validation). This is the
/// grammar the pretty-printer round-trips against.
pub fn parse_expr(source: &str) -> Result<Expr, MathError> {
    let tokens = lex("<expr>", source)?;
    let mut parser = Parser { template: "<expr>".to_string(), tokens, at: 0 };
    let expr = parser.expr()?;
    let trailing = parser.bump();
    if trailing.token != Token::Eof {
        return Err(parser.error(
            trailing.pos,
            format!("trailing input after expression: {}", trailing.token.describe()),
        ));
    }
    Ok(expr)
}

struct Parser {
    template: String,
    tokens: Vec<Spanned>,
    at: usize,
}

impl Parser {
    fn error(&self, pos: Pos, message: impl Into<String>) -> MathError {
        MathError::Parse { template: self.template.clone(), pos, message: message.into() }
    }

    fn peek(&self) -> &Spanned {
        &self.tokens[self.at.min(self.tokens.len() - 1)]
    }

    fn bump(&mut self) -> Spanned {
        let s = self.tokens[self.at.min(self.tokens.len() - 1)].clone();
        if self.at < self.tokens.len() - 1 {
            self.at += 1;
        }
        s
    }

    fn expect(&mut self, want: Token, what: &str) -> Result<Spanned, MathError> {
        let s = self.bump();
        if s.token == want {
            Ok(s)
        } else {
            Err(self.error(s.pos, format!("expected {what}, found {}", s.token.describe())))
        }
    }

    fn template(&mut self) -> Result<MathTemplate, MathError> {
        let mut params: Vec<ParamDecl> = Vec::new();
        let mut steps: Vec<(Pos, Step)> = Vec::new();
        let mut return_expr: Option<Expr> = None;
        let mut question: Option<(Pos, String)> = None;
        let mut original: Option<OriginalBlock> = None;

        loop {
            let s = self.bump();
            match s.token {
                Token::Eof => break,
                Token::Param => {
                    let decl = self.param_decl(s.pos)?;
                    if params.iter().any(|p| p.name == decl.name) {
                        return Err(self.error(s.pos, format!("duplicate param `{}`", decl.name)));
                    }
                    params.push(decl);
                }
                Token::Constraint => {
                    let expr = self.expr()?;
                    self.expect(Token::Semi, "`;` after constraint")?;
                    steps.push((s.pos, Step::Constraint(expr)));
                }
                Token::Let => {
                    let name = self.ident("local name")?;
                    self.expect(Token::Assign, "`=`")?;
                    let expr = self.expr()?;
                    self.expect(Token::Semi, "`;` after let")?;
                    steps.push((s.pos, Step::Let { name, expr }));
                }
                Token::Return => {
                    if return_expr.is_some() {
                        return Err(self.error(s.pos, "multiple return statements"));
                    }
                    let expr = self.expr()?;
                    self.expect(Token::Semi, "`;` after return")?;
                    return_expr = Some(expr);
                }
                Token::Question => {
                    if question.is_some() {
                        return Err(self.error(s.pos, "multiple question statements"));
                    }
                    let text = match self.bump() {
                        Spanned { token: Token::Str(text), .. } => text,
                        other => {
                            return Err(self.error(
                                other.pos,
                                format!("expected string literal, found {}", other.token.describe()),
                            ))
                        }
                    };
                    self.expect(Token::Semi, "`;` after question")?;
                    question = Some((s.pos, text));
                }
                Token::Original => {
                    if original.is_some() {
                        return Err(self.error(s.pos, "multiple original blocks"));
                    }
                    original = Some(self.original_block()?);
                }
                other => {
                    return Err(self.error(
                        s.pos,
                        format!("expected a statement keyword, found {}", other.describe()),
                    ))
                }
            }
        }

        let question = question
            .ok_or_else(|| self.error(Pos { line: 1, col: 1 }, "template has no question"))?;
        let return_expr = return_expr
            .ok_or_else(|| self.error(Pos { line: 1, col: 1 }, "template has no return"))?;

        let template = MathTemplate {
            name: self.template.clone(),
            params,
            steps: steps.iter().map(|(_, s)| s.clone()).collect(),
            return_expr,
            question_template: question.1,
            original,
        };
        self.validate(&template, &steps, question.0)?;
        Ok(template)
    }

    fn ident(&mut self, what: &str) -> Result<String, MathError> {
        match self.bump() {
            Spanned { token: Token::Ident(name), .. } => Ok(name),
            other => Err(self.error(
                other.pos,
                format!("expected {what}, found {}", other.token.describe()),
            )),
        }
    }

    fn param_decl(&mut self, pos: Pos) -> Result<ParamDecl, MathError> {
        let name = self.ident("param name")?;
        self.expect(Token::In, "`in`")?;
        let s = self.bump();
        let domain = match s.token {
            Token::LBracket => {
                let lo = self.signed_rational()?;
                self.expect(Token::Comma, "`,`")?;
                let hi = self.signed_rational()?;
                self.expect(Token::RBracket, "`]`")?;
                if !lo.is_integer() || !hi.is_integer() {
                    return Err(self.error(pos, "interval bounds must be integers"));
                }
                let (lo, hi) = (lo.to_integer(), hi.to_integer());
                if lo > hi {
                    return Err(self.error(pos, format!("empty interval [{lo}, {hi}]")));
                }
                Domain::IntRange { lo, hi }
            }
            Token::LBrace => {
                let mut values = vec![self.signed_rational()?];
                while self.peek().token == Token::Comma {
                    self.bump();
                    values.push(self.signed_rational()?);
                }
                self.expect(Token::RBrace, "`}`")?;
                let mut sorted = values.clone();
                sorted.sort();
                sorted.dedup();
                if sorted.len() != values.len() {
                    return Err(self.error(pos, "duplicate values in set domain"));
                }
                Domain::RationalSet(values)
            }
            other => {
                return Err(self.error(
                    s.pos,
                    format!("expected `[` or `{{` for the domain, found {}", other.describe()),
                ))
            }
        };
        self.expect(Token::Semi, "`;` after param")?;
        Ok(ParamDecl { name, domain })
    }

    /// `['-'] NUMBER ['/' NUMBER]` — literal rationals in domains and
    /// original blocks.
    fn signed_rational(&mut self) -> Result<BigRational, MathError> {
        let negative = if self.peek().token == Token::Minus {
            self.bump();
            true
        } else {
            false
        };
        let s = self.bump();
        let Token::Number(mut value) = s.token else {
            return Err(self.error(s.pos, format!("expected a number, found {}", s.token.describe())));
        };
        if self.peek().token == Token::Slash {
            self.bump();
            let d = self.bump();
            let Token::Number(den) = d.token else {
                return Err(self.error(d.pos, format!("expected a denominator, found {}", d.token.describe())));
            };
            if den == BigRational::from_integer(BigInt::from(0)) {
                return Err(self.error(d.pos, "zero denominator in rational literal"));
            }
            value /= den;
        }
        Ok(if negative { -value } else { value })
    }

    fn original_block(&mut self) -> Result<OriginalBlock, MathError> {
        self.expect(Token::LBrace, "`{`")?;
        let mut values = BTreeMap::new();
        loop {
            let name = self.ident("param name")?;
            self.expect(Token::Colon, "`:`")?;
            let value = self.signed_rational()?;
            if values.insert(name.clone(), value).is_some() {
                let pos = self.peek().pos;
                return Err(self.error(pos, format!("duplicate `{name}` in original block")));
            }
            match self.bump() {
                Spanned { token: Token::Comma, .. } => continue,
                Spanned { token: Token::RBrace, .. } => break,
                other => {
                    return Err(self.error(
                        other.pos,
                        format!("expected `,` or `}}`, found {}", other.token.describe()),
                    ))
                }
            }
        }
        self.expect(Token::Answer, "`answer`")?;
        let answer = self.signed_rational()?;
        self.expect(Token::Semi, "`;` after original")?;
        Ok(OriginalBlock { values, answer })
    }

    // Expression grammar, lowest precedence first.
    fn expr(&mut self) -> Result<Expr, MathError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, MathError> {
        let mut lhs = self.and_expr()?;
        while self.peek().token == Token::Or {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = Expr::binary(BinOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, MathError> {
        let mut lhs = self.not_expr()?;
        while self.peek().token == Token::And {
            self.bump();
            let rhs = self.not_expr()?;
            lhs = Expr::binary(BinOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, MathError> {
        if self.peek().token == Token::Not {
            self.bump();
            let e = self.not_expr()?;
            Ok(Expr::not(e))
        } else {
            self.comparison()
        }
    }

    fn comparison(&mut self) -> Result<Expr, MathError> {
        let lhs = self.additive()?;
        let op = match self.peek().token {
            Token::EqEq => BinOp::Eq,
            Token::NotEq => BinOp::Ne,
            Token::Lt => BinOp::Lt,
            Token::Le => BinOp::Le,
            Token::Gt => BinOp::Gt,
            Token::Ge => BinOp::Ge,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.additive()?;
        let chain = self.peek();
        if matches!(
            chain.token,
            Token::EqEq | Token::NotEq | Token::Lt | Token::Le | Token::Gt | Token::Ge
        ) {
            return Err(self.error(chain.pos, "comparison chaining is not supported; use `and`"));
        }
        Ok(Expr::binary(op, lhs, rhs))
    }

    fn additive(&mut self) -> Result<Expr, MathError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek().token {
                Token::Plus => BinOp::Add,
                Token::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.multiplicative()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, MathError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().token {
                Token::Star => BinOp::Mul,
                Token::Slash => BinOp::Div,
                Token::SlashSlash => BinOp::FloorDiv,
                Token::Percent => BinOp::Mod,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, MathError> {
        if self.peek().token == Token::Minus {
            self.bump();
            let e = self.unary()?;
            Ok(Expr::neg(e))
        } else {
            self.atom()
        }
    }

    fn atom(&mut self) -> Result<Expr, MathError> {
        let s = self.bump();
        match s.token {
            Token::Number(n) => Ok(Expr::Number(n)),
            Token::Ident(name) => Ok(Expr::Var(name)),
            Token::LParen => {
                let e = self.expr()?;
                self.expect(Token::RParen, "`)`")?;
                Ok(e)
            }
            other => Err(self.error(
                s.pos,
                format!("expected a number, identifier, or `(`, found {}", other.describe()),
            )),
        }
    }

    /// Scope and type validation, statement by statement in file order:
    /// identifiers must be declared params or earlier locals, constraints
    /// must be boolean, the return must be numeric, question placeholders
    /// must name params, and the original block must cover the params
    /// exactly.
    fn validate(
        &self,
        template: &MathTemplate,
        steps: &[(Pos, Step)],
        question_pos: Pos,
    ) -> Result<(), MathError> {
        let mut env: BTreeMap<String, Ty> = BTreeMap::new();
        for p in &template.params {
            env.insert(p.name.clone(), Ty::Num);
        }

        for (pos, step) in steps {
            match step {
                Step::Constraint(expr) => {
                    let ty = self.infer(expr, &env, *pos)?;
                    if ty != Ty::Bool {
                        return Err(self.error(*pos, "constraint must be a boolean expression"));
                    }
                }
                Step::Let { name, expr } => {
                    let ty = self.infer(expr, &env, *pos)?;
                    if env.contains_key(name) {
                        return Err(self.error(*pos, format!("`{name}` is already defined")));
                    }
                    env.insert(name.clone(), ty);
                }
            }
        }

        let return_pos = Pos { line: 1, col: 1 };
        if self.infer(&template.return_expr, &env, return_pos)? == Ty::Bool {
            return Err(self.error(return_pos, "return must be a numeric expression"));
        }

        for name in placeholders(&template.question_template) {
            if !template.params.iter().any(|p| p.name == name) {
                return Err(self.error(
                    question_pos,
                    format!("question placeholder {{{name}}} does not name a param"),
                ));
            }
        }

        if let Some(original) = &template.original {
            for name in original.values.keys() {
                if !template.params.iter().any(|p| p.name == *name) {
                    return Err(self.error(
                        Pos { line: 1, col: 1 },
                        format!("original block names unknown param `{name}`"),
                    ));
                }
            }
            for p in &template.params {
                if !original.values.contains_key(&p.name) {
                    return Err(self.error(
                        Pos { line: 1, col: 1 },
                        format!("original block is missing param `{}`", p.name),
                    ));
                }
            }
        }
        Ok(())
    }

    fn infer(&self, expr: &Expr, env: &BTreeMap<String, Ty>, pos: Pos) -> Result<Ty, MathError> {
        use super::ast::UnaryOp;
        match expr {
            Expr::Number(_) => Ok(Ty::Num),
            Expr::Var(name) => env
                .get(name.as_str())
                .copied()
                .ok_or_else(|| self.error(pos, format!("undeclared identifier `{name}`"))),
            Expr::Unary(UnaryOp::Neg, e) => {
                self.want(e, Ty::Num, env, pos, "unary minus")?;
                Ok(Ty::Num)
            }
            Expr::Unary(UnaryOp::Not, e) => {
                self.want(e, Ty::Bool, env, pos, "`not`")?;
                Ok(Ty::Bool)
            }
            Expr::Binary(op, l, r) => match op {
                BinOp::And | BinOp::Or => {
                    self.want(l, Ty::Bool, env, pos, op.symbol())?;
                    self.want(r, Ty::Bool, env, pos, op.symbol())?;
                    Ok(Ty::Bool)
                }
                op if op.is_comparison() => {
                    self.want(l, Ty::Num, env, pos, op.symbol())?;
                    self.want(r, Ty::Num, env, pos, op.symbol())?;
                    Ok(Ty::Bool)
                }
                op => {
                    self.want(l, Ty::Num, env, pos, op.symbol())?;
                    self.want(r, Ty::Num, env, pos, op.symbol())?;
                    Ok(Ty::Num)
                }
            },
        }
    }

    fn want(
        &self,
        expr: &Expr,
        ty: Ty,
        env: &BTreeMap<String, Ty>,
        pos: Pos,
        ctx: &str,
    ) -> Result<(), MathError> {
        let got = self.infer(expr, env, pos)?;
        if got != ty {
            return Err(self.error(
                pos,
                format!("{ctx} expects a {} operand, got {} (`{expr}`)", describe(ty), describe(got)),
            ));
        }
        Ok(())
    }
}

fn describe(ty: Ty) -> &'static str {
    match ty {
        Ty::Num => "numeric",
        Ty::Bool => "boolean",
    }
}

/// `{id}` placeholders in a question template, in order of appearance.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '{' {
            let mut name = String::new();
            for c in chars.by_ref() {
                if c == '}' {
                    break;
                }
                name.push(c);
            }
            out.push(name);
        }
    }
    out
}
