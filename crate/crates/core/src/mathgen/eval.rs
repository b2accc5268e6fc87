//! Exact rational evaluation of template programs.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::Zero;

use super::ast::{BinOp, Expr, UnaryOp};
use super::{Domain, MathError, MathTemplate, Step};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(BigRational),
    Bool(bool),
}

impl Value {
    fn num(self, expr: &Expr) -> Result<BigRational, MathError> {
        match self {
            Value::Num(n) => Ok(n),
            Value::Bool(_) => Err(MathError::TypeMismatch {
                expr: expr.to_string(),
                reason: "expected a number, got a boolean".into(),
            }),
        }
    }

    fn bool(self, expr: &Expr) -> Result<bool, MathError> {
        match self {
            Value::Bool(b) => Ok(b),
            Value::Num(_) => Err(MathError::TypeMismatch {
                expr: expr.to_string(),
                reason: "expected a boolean, got a number".into(),
            }),
        }
    }
}

/// Result of running a template's steps under a substitution.
#[derive(Debug, Clone, PartialEq)]
pub enum ProgramOutcome {
    Answer(BigRational),
    /// Only produced when constraints are enforced.
    ConstraintFailed { index: usize, constraint: String },
}

/// Checks the substitution against the declared domains.
pub fn check_domains(
    template: &MathTemplate,
    substitution: &BTreeMap<String, BigRational>,
) -> Result<(), MathError> {
    for p in &template.params {
        let Some(value) = substitution.get(&p.name) else {
            return Err(MathError::Precondition {
                template: template.name.clone(),
                param: p.name.clone(),
                reason: "missing from substitution".into(),
            });
        };
        let ok = match &p.domain {
            Domain::IntRange { lo, hi } => {
                value.is_integer() && *lo <= value.to_integer() && value.to_integer() <= *hi
            }
            Domain::RationalSet(values) => values.contains(value),
        };
        if !ok {
            return Err(MathError::Precondition {
                template: template.name.clone(),
                param: p.name.clone(),
                reason: format!("value {value} is outside the declared domain"),
            });
        }
    }
    for name in substitution.keys() {
        if !template.params.iter().any(|p| p.name == *name) {
            return Err(MathError::Precondition {
                template: template.name.clone(),
                param: name.clone(),
                reason: "not a declared param".into(),
            });
        }
    }
    Ok(())
}

/// Runs the steps in file order. With `enforce_constraints`, a false
/// constraint short-circuits into [`ProgramOutcome::ConstraintFailed`];
/// without it constraints are skipped and only the assignments and return
/// run (the program semantics, independent of the sampler).
pub fn run_program(
    template: &MathTemplate,
    substitution: &BTreeMap<String, BigRational>,
    enforce_constraints: bool,
) -> Result<ProgramOutcome, MathError> {
    check_domains(template, substitution)?;
    let mut env: BTreeMap<String, Value> = substitution
        .iter()
        .map(|(k, v)| (k.clone(), Value::Num(v.clone())))
        .collect();

    for (index, step) in template.steps.iter().enumerate() {
        match step {
            Step::Let { name, expr } => {
                let value = eval_expr(expr, &env)?;
                env.insert(name.clone(), value);
            }
            Step::Constraint(expr) => {
                if enforce_constraints {
                    let held = eval_expr(expr, &env)?.bool(expr)?;
                    if !held {
                        return Ok(ProgramOutcome::ConstraintFailed {
                            index,
                            constraint: expr.to_string(),
                        });
                    }
                }
            }
        }
    }

    let answer = eval_expr(&template.return_expr, &env)?.num(&template.return_expr)?;
    Ok(ProgramOutcome::Answer(answer))
}

/// Evaluates the program (assignments and return) under a substitution.
pub fn eval_program(
    template: &MathTemplate,
    substitution: &BTreeMap<String, BigRational>,
) -> Result<BigRational, MathError> {
    match run_program(template, substitution, false)? {
        ProgramOutcome::Answer(answer) => Ok(answer),
        ProgramOutcome::ConstraintFailed { .. } => unreachable!("constraints not enforced"),
    }
}

pub fn eval_expr(expr: &Expr, env: &BTreeMap<String, Value>) -> Result<Value, MathError> {
    match expr {
        Expr::Number(n) => Ok(Value::Num(n.clone())),
        Expr::Var(name) => env.get(name).cloned().ok_or_else(|| MathError::TypeMismatch {
            expr: expr.to_string(),
            reason: format!("unbound identifier `{name}`"),
        }),
        Expr::Unary(UnaryOp::Neg, e) => Ok(Value::Num(-eval_expr(e, env)?.num(e)?)),
        Expr::Unary(UnaryOp::Not, e) => Ok(Value::Bool(!eval_expr(e, env)?.bool(e)?)),
        Expr::Binary(op, l, r) => eval_binary(expr, *op, l, r, env),
    }
}

fn eval_binary(
    whole: &Expr,
    op: BinOp,
    l: &Expr,
    r: &Expr,
    env: &BTreeMap<String, Value>,
) -> Result<Value, MathError> {
    // Short-circuit booleans first, so `b != 0 and a / b > 1` is safe.
    match op {
        BinOp::And => {
            let lv = eval_expr(l, env)?.bool(l)?;
            return if !lv {
                Ok(Value::Bool(false))
            } else {
                Ok(Value::Bool(eval_expr(r, env)?.bool(r)?))
            };
        }
        BinOp::Or => {
            let lv = eval_expr(l, env)?.bool(l)?;
            return if lv {
                Ok(Value::Bool(true))
            } else {
                Ok(Value::Bool(eval_expr(r, env)?.bool(r)?))
            };
        }
        _ => {}
    }

    let lv = eval_expr(l, env)?.num(l)?;
    let rv = eval_expr(r, env)?.num(r)?;
    let value = match op {
        BinOp::Add => Value::Num(lv + rv),
        BinOp::Sub => Value::Num(lv - rv),
        BinOp::Mul => Value::Num(lv * rv),
        BinOp::Div => {
            if rv.is_zero() {
                return Err(MathError::DivisionByZero { expr: whole.to_string() });
            }
            Value::Num(lv / rv)
        }
        BinOp::FloorDiv => Value::Num(BigRational::from_integer(int_div(whole, &lv, &rv)?.0)),
        BinOp::Mod => Value::Num(BigRational::from_integer(int_div(whole, &lv, &rv)?.1)),
        BinOp::Eq => Value::Bool(lv == rv),
        BinOp::Ne => Value::Bool(lv != rv),
        BinOp::Lt => Value::Bool(lv < rv),
        BinOp::Le => Value::Bool(lv <= rv),
        BinOp::Gt => Value::Bool(lv > rv),
        BinOp::Ge => Value::Bool(lv >= rv),
        BinOp::And | BinOp::Or => unreachable!("handled above"),
    };
    Ok(value)
}

/// Floored division and matching remainder (Python semantics:
/// `a == b*(a//b) + a%b` with the remainder taking the divisor's sign).
/// Both operands must be integers.
fn int_div(whole: &Expr, a: &BigRational, b: &BigRational) -> Result<(BigInt, BigInt), MathError> {
    if !a.is_integer() || !b.is_integer() {
        return Err(MathError::TypeMismatch {
            expr: whole.to_string(),
            reason: "`//` and `%` require integer operands".into(),
        });
    }
    if b.is_zero() {
        return Err(MathError::DivisionByZero { expr: whole.to_string() });
    }
    let (a, b) = (a.to_integer(), b.to_integer());
    let (q, r) = a.div_mod_floor(&b);
    Ok((q, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathgen::parse_template;

    fn subst(pairs: &[(&str, i64)]) -> BTreeMap<String, BigRational> {
        pairs
            .iter()
            .map(|&(k, v)| (k.to_string(), BigRational::from_integer(BigInt::from(v))))
            .collect()
    }

    const BASKETS: &str = r#"
        param a in [2, 20];
        param b in [2, 20];
        let total = a * b;
        return total;
        question "Each of {a} baskets holds {b} apples. How many apples in all?";
    "#;

    #[test]
    fn baskets_product() {
        let t = parse_template("baskets", BASKETS).unwrap();
        let answer = eval_program(&t, &subst(&[("a", 3), ("b", 4)])).unwrap();
        assert_eq!(answer, BigRational::from_integer(BigInt::from(12)));
    }

    #[test]
    fn out_of_domain_value_is_a_precondition_violation() {
        let t = parse_template("baskets", BASKETS).unwrap();
        let err = eval_program(&t, &subst(&[("a", 0), ("b", 4)])).unwrap_err();
        assert!(matches!(err, MathError::Precondition { .. }), "{err}");
    }

    #[test]
    fn missing_param_is_a_precondition_violation() {
        let t = parse_template("baskets", BASKETS).unwrap();
        let err = eval_program(&t, &subst(&[("a", 3)])).unwrap_err();
        assert!(matches!(err, MathError::Precondition { .. }));
    }

    #[test]
    fn division_by_zero_names_the_expression() {
        let src = r#"
            param a in [0, 5];
            param b in [0, 5];
            return a / b;
            question "{a} over {b}?";
        "#;
        let t = parse_template("div", src).unwrap();
        let err = eval_program(&t, &subst(&[("a", 1), ("b", 0)])).unwrap_err();
        match err {
            MathError::DivisionByZero { expr } => assert_eq!(expr, "a / b"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn floor_div_and_mod_follow_python_semantics() {
        let src = r#"
            param a in [-100, 100];
            param b in [-100, 100];
            let q = a // b;
            let r = a % b;
            return q * 1000 + r;
            question "{a} {b}";
        "#;
        let t = parse_template("fd", src).unwrap();
        let run = |a: i64, b: i64| -> (i64, i64) {
            let v = eval_program(&t, &subst(&[("a", a), ("b", b)])).unwrap();
            let packed: i64 = v.to_integer().try_into().unwrap();
            // Unpack q*1000 + r; r can be negative, recover via rem-euclid
            // style arithmetic on the known encoding.
            let q = (packed as f64 / 1000.0).round() as i64;
            (q, packed - q * 1000)
        };
        assert_eq!(run(7, 2), (3, 1));
        assert_eq!(run(-7, 2), (-4, 1));
        assert_eq!(run(7, -2), (-4, -1));
        assert_eq!(run(-7, -2), (3, -1));
    }

    #[test]
    fn mod_on_fraction_is_a_type_error() {
        let src = r#"
            param a in {1/2, 3/2};
            return a % 2;
            question "{a}";
        "#;
        let t = parse_template("frac", src).unwrap();
        let sub: BTreeMap<String, BigRational> = [(
            "a".to_string(),
            BigRational::new(BigInt::from(1), BigInt::from(2)),
        )]
        .into();
        let err = eval_program(&t, &sub).unwrap_err();
        assert!(matches!(err, MathError::TypeMismatch { .. }), "{err}");
    }

    #[test]
    fn short_circuit_guards_division() {
        let src = r#"
            param a in [0, 10];
            param b in [0, 10];
            constraint b != 0 and a / b >= 1;
            return a;
            question "{a} {b}";
        "#;
        let t = parse_template("sc", src).unwrap();
        let out = run_program(&t, &subst(&[("a", 4), ("b", 0)]), true).unwrap();
        assert!(matches!(out, ProgramOutcome::ConstraintFailed { index: 0, .. }));
    }

    #[test]
    fn constraints_report_their_text() {
        let src = r#"
            param a in [1, 10];
            constraint a % 2 == 0;
            return a;
            question "{a}";
        "#;
        let t = parse_template("even", src).unwrap();
        match run_program(&t, &subst(&[("a", 3)]), true).unwrap() {
            ProgramOutcome::ConstraintFailed { constraint, .. } => {
                assert_eq!(constraint, "a % 2 == 0");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
