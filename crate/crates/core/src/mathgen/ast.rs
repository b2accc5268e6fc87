//! Expression AST and pretty-printer.
//!
//! Values are exact rationals. The parser and the property-test generator
//! both build nodes through the smart constructors [`Expr::neg`] and
//! [`Expr::binary`], which fold literal negation and literal division into
//! `Number` nodes; that keeps the AST canonical, so
//! `parse(print(ast)) == ast` holds exactly.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    FloorDiv,
    Mod,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::FloorDiv => "//",
            BinOp::Mod => "%",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge)
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::FloorDiv | BinOp::Mod => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Number(BigRational),
    Var(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn int(v: i64) -> Expr {
        Expr::Number(BigRational::from_integer(BigInt::from(v)))
    }

    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    /// Negation, folding `-literal` into a signed literal.
    pub fn neg(expr: Expr) -> Expr {
        match expr {
            Expr::Number(n) => Expr::Number(-n),
            other => Expr::Unary(UnaryOp::Neg, Box::new(other)),
        }
    }

    pub fn not(expr: Expr) -> Expr {
        Expr::Unary(UnaryOp::Not, Box::new(expr))
    }

    /// Binary node, folding `literal / literal` (nonzero divisor) into a
    /// rational literal so `3/4` is a constant rather than a division.
    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        if op == BinOp::Div {
            if let (Expr::Number(a), Expr::Number(b)) = (&lhs, &rhs) {
                if !b.is_zero() {
                    return Expr::Number(a / b);
                }
            }
        }
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    /// Precedence of the node as printed. Fractional literals print as
    /// `n/d` (division precedence) and negative ones carry a leading
    /// minus, so their printed form is weaker than an atom.
    fn precedence(&self) -> u8 {
        match self {
            Expr::Number(n) => {
                if !n.is_integer() {
                    6
                } else if n.is_negative() {
                    7
                } else {
                    8
                }
            }
            Expr::Var(_) => 8,
            Expr::Unary(UnaryOp::Neg, _) => 7,
            Expr::Unary(UnaryOp::Not, _) => 3,
            Expr::Binary(op, _, _) => op.precedence(),
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let prec = self.precedence();
        let parens = prec < min;
        if parens {
            write!(f, "(")?;
        }
        match self {
            Expr::Number(n) => {
                // Ratio's Display already prints `n` or `n/d`.
                write!(f, "{n}")?;
            }
            Expr::Var(name) => write!(f, "{name}")?,
            Expr::Unary(UnaryOp::Neg, e) => {
                write!(f, "-")?;
                e.fmt_prec(f, 7)?;
            }
            Expr::Unary(UnaryOp::Not, e) => {
                write!(f, "not ")?;
                e.fmt_prec(f, 3)?;
            }
            Expr::Binary(op, l, r) => {
                let p = op.precedence();
                // Comparisons do not chain; both operands must bind tighter.
                let (lmin, rmin) = if op.is_comparison() { (p + 1, p + 1) } else { (p, p + 1) };
                l.fmt_prec(f, lmin)?;
                write!(f, " {} ", op.symbol())?;
                r.fmt_prec(f, rmin)?;
            }
        }
        if parens {
            write!(f, ")")?;
        }
        Ok(())
    }

    /// Every variable referenced anywhere in the expression.
    pub fn collect_vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Number(_) => {}
            Expr::Var(name) => out.push(name),
            Expr::Unary(_, e) => e.collect_vars(out),
            Expr::Binary(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}
