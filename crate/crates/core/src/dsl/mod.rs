//! Predicate and score expression languages.
//!
//! Predicates select rows (group membership, positive prediction, ground
//! truth, legitimate-attribute and calibration conditions); score
//! expressions turn a row into a real number. Both read cells through
//! `col("name")`, optionally coerced with `int(...)` or `real(...)`.
//!
//! ```text
//! expr       := or_expr
//! or_expr    := and_expr { "or" and_expr }
//! and_expr   := unary { "and" unary }
//! unary      := "not" unary | "(" expr ")" | comparison
//! comparison := operand cmp_op operand | operand "in" "{" literal { "," literal } "}"
//! operand    := col("name") | int(col("name")) | real(col("name")) | literal | "$" k
//! cmp_op     := "==" | "!=" | "<" | "<=" | ">" | ">="
//!
//! score      := term { ("+" | "-") term }
//! term       := factor { ("*" | "/") factor }
//! factor     := "(" score ")" | int(col("name")) | real(col("name")) | number
//! ```

mod lexer;
mod predicate;
mod score;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use predicate::{parse_predicate, BoundPredicate, Operand, Predicate, PredicateExpr};
pub use score::{parse_score, ScoreExpr};

use lexer::{Tok, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
        }
    }
}

/// A constant: written in an expression, or passed as a `$k` argument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Int(i64),
    Real(f64),
    Str(String),
}

impl Literal {
    /// Reads a command-line argument: integer if it parses as one, then
    /// real, otherwise the raw string.
    pub fn from_arg(text: &str) -> Literal {
        let trimmed = text.trim();
        if let Ok(i) = trimmed.parse::<i64>() {
            Literal::Int(i)
        } else if let Some(r) = trimmed.parse::<f64>().ok().filter(|r| r.is_finite()) {
            Literal::Real(r)
        } else {
            Literal::Str(text.to_string())
        }
    }

    pub fn is_numeric(&self) -> bool {
        !matches!(self, Literal::Str(_))
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(i) => write!(f, "{i}"),
            // Debug keeps a decimal point or exponent, so the text re-lexes as real.
            Literal::Real(r) => write!(f, "{r:?}"),
            Literal::Str(s) => f.write_str(&lexer::quote(s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at column {column}: {kind}")]
pub struct ParseError {
    pub column: usize,
    pub kind: ParseErrorKind,
}

impl ParseError {
    fn new(column: usize, kind: ParseErrorKind) -> Self {
        ParseError { column, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("unknown operator {0:?}")]
    UnknownOperator(String),
    #[error("unexpected character {0:?}")]
    UnexpectedChar(char),
    #[error("parameter index must be 1 or greater")]
    ParameterZero,
    #[error("malformed parameter, expected $ followed by a positive integer")]
    BadParameter,
    #[error("malformed number")]
    BadNumber,
    #[error("integer literal out of range")]
    IntegerOverflow,
    #[error("unterminated string literal")]
    UnterminatedString,
    #[error("invalid escape sequence \\{0}")]
    BadEscape(char),
    #[error("column name must not be empty")]
    EmptyColumnName,
    #[error("set literal mixes strings and numbers")]
    MixedSet,
    #[error("expected {expected}, found {found}")]
    Expected { expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("row has no column {0:?}")]
    MissingColumn(String),
    #[error("column {column:?}: cannot read {value:?} as {target}")]
    Coercion {
        column: String,
        value: String,
        target: &'static str,
    },
    #[error("cannot compare {left} with {right} using {op}")]
    TypeMismatch {
        left: &'static str,
        right: &'static str,
        op: &'static str,
    },
    #[error("predicate takes {expected} argument(s), got {found}")]
    Arity { expected: usize, found: usize },
    #[error("division by zero")]
    DivisionByZero,
    #[error("score is not a finite number")]
    NonFinite,
}

/// Runtime value of an operand.
#[derive(Debug, Clone, PartialEq)]
enum Value<'a> {
    Str(&'a str),
    Int(i64),
    Real(f64),
}

impl Value<'_> {
    fn kind(&self) -> &'static str {
        match self {
            Value::Str(_) => "string",
            Value::Int(_) => "integer",
            Value::Real(_) => "real",
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match *self {
            Value::Int(i) => Some(i as f64),
            Value::Real(r) => Some(r),
            Value::Str(_) => None,
        }
    }

    fn from_literal(lit: &Literal) -> Value<'_> {
        match lit {
            Literal::Int(i) => Value::Int(*i),
            Literal::Real(r) => Value::Real(*r),
            Literal::Str(s) => Value::Str(s),
        }
    }
}

fn compare(left: &Value<'_>, op: CmpOp, right: &Value<'_>) -> Result<bool, EvalError> {
    let ord = match (left, right) {
        (Value::Str(a), Value::Str(b)) => a.cmp(b),
        (Value::Int(a), Value::Int(b)) => a.cmp(b),
        _ => match (left.as_f64(), right.as_f64()) {
            (Some(a), Some(b)) => match a.partial_cmp(&b) {
                Some(ord) => ord,
                // only reachable with NaN arguments
                None => return Ok(op == CmpOp::Ne),
            },
            _ => {
                return Err(EvalError::TypeMismatch {
                    left: left.kind(),
                    right: right.kind(),
                    op: op.symbol(),
                })
            }
        },
    };
    Ok(op.holds(ord))
}

fn read_int(column: &str, raw: &str) -> Result<i64, EvalError> {
    raw.trim().parse::<i64>().map_err(|_| EvalError::Coercion {
        column: column.to_string(),
        value: raw.to_string(),
        target: "int",
    })
}

fn read_real(column: &str, raw: &str) -> Result<f64, EvalError> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|r| r.is_finite())
        .ok_or_else(|| EvalError::Coercion {
            column: column.to_string(),
            value: raw.to_string(),
            target: "real",
        })
}

/// Token cursor shared by both grammars.
struct Cursor {
    tokens: Vec<Token>,
    pos: usize,
    end_column: usize,
}

impl Cursor {
    fn new(text: &str) -> Result<Self, ParseError> {
        Ok(Cursor {
            tokens: lexer::tokenize(text)?,
            pos: 0,
            end_column: text.chars().count() + 1,
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn column(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map_or(self.end_column, |t| t.column)
    }

    fn bump(&mut self) -> Option<Tok> {
        let tok = self.tokens.get(self.pos).map(|t| t.tok.clone());
        self.pos += 1;
        tok
    }

    fn at_keyword(&self, word: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(w)) if w == word)
    }

    fn error_expected(&self, expected: &str) -> ParseError {
        let found = match self.peek() {
            None => "end of input".to_string(),
            Some(tok) => describe(tok),
        };
        ParseError::new(
            self.column(),
            ParseErrorKind::Expected {
                expected: expected.to_string(),
                found,
            },
        )
    }

    fn expect(&mut self, tok: &Tok, expected: &str) -> Result<(), ParseError> {
        if self.peek() == Some(tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error_expected(expected))
        }
    }

    fn expect_keyword(&mut self, word: &str) -> Result<(), ParseError> {
        if self.at_keyword(word) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error_expected(&format!("`{word}`")))
        }
    }

    fn expect_end(&self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(_) => Err(self.error_expected("end of input")),
        }
    }

    /// `col("name")`, with the `col` keyword not yet consumed.
    fn column_accessor(&mut self) -> Result<String, ParseError> {
        self.expect_keyword("col")?;
        self.expect(&Tok::LParen, "`(`")?;
        let column = self.column();
        let name = match self.bump() {
            Some(Tok::Str(s)) => s,
            _ => {
                self.pos -= 1;
                return Err(self.error_expected("quoted column name"));
            }
        };
        if name.is_empty() {
            return Err(ParseError::new(column, ParseErrorKind::EmptyColumnName));
        }
        self.expect(&Tok::RParen, "`)`")?;
        Ok(name)
    }

    /// `int(col("name"))` / `real(col("name"))` after the keyword.
    fn coerced_accessor(&mut self) -> Result<String, ParseError> {
        self.expect(&Tok::LParen, "`(`")?;
        let name = self.column_accessor()?;
        self.expect(&Tok::RParen, "`)`")?;
        Ok(name)
    }

    /// Optionally signed numeric literal.
    fn number(&mut self) -> Result<Literal, ParseError> {
        let column = self.column();
        let negative = if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            true
        } else {
            false
        };
        match self.bump() {
            Some(Tok::Number { text, real }) => {
                let signed = if negative { format!("-{text}") } else { text };
                if real {
                    signed
                        .parse::<f64>()
                        .ok()
                        .filter(|r| r.is_finite())
                        .map(Literal::Real)
                        .ok_or(ParseError::new(column, ParseErrorKind::BadNumber))
                } else {
                    signed
                        .parse::<i64>()
                        .map(Literal::Int)
                        .map_err(|_| ParseError::new(column, ParseErrorKind::IntegerOverflow))
                }
            }
            _ => {
                self.pos -= 1;
                Err(self.error_expected("number"))
            }
        }
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Ident(w) => format!("`{w}`"),
        Tok::Str(s) => lexer::quote(s),
        Tok::Number { text, .. } => text.clone(),
        Tok::Param(k) => format!("${k}"),
        Tok::Cmp(op) => format!("`{}`", op.symbol()),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::LBrace => "`{`".into(),
        Tok::RBrace => "`}`".into(),
        Tok::Comma => "`,`".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_from_arg() {
        assert_eq!(Literal::from_arg("0"), Literal::Int(0));
        assert_eq!(Literal::from_arg("-7"), Literal::Int(-7));
        assert_eq!(Literal::from_arg("2.5"), Literal::Real(2.5));
        assert_eq!(Literal::from_arg("High"), Literal::Str("High".into()));
    }

    #[test]
    fn literal_json_forms() {
        let lits: Vec<Literal> = serde_json::from_str(r#"[5, 7.5, "x"]"#).unwrap();
        assert_eq!(
            lits,
            vec![
                Literal::Int(5),
                Literal::Real(7.5),
                Literal::Str("x".into())
            ]
        );
    }

    #[test]
    fn mixed_numeric_comparison() {
        assert!(compare(&Value::Int(2), CmpOp::Lt, &Value::Real(2.5)).unwrap());
        assert!(compare(&Value::Str("b"), CmpOp::Gt, &Value::Str("a")).unwrap());
        assert!(matches!(
            compare(&Value::Str("1"), CmpOp::Eq, &Value::Int(1)),
            Err(EvalError::TypeMismatch { .. })
        ));
    }
}
