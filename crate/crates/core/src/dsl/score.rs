use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::dataset::Row;

use super::lexer::Tok;
use super::{read_int, read_real, Cursor, EvalError, Literal, ParseError};

/// Arithmetic over coerced cells, producing a real-valued score.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreExpr {
    IntOf(String),
    RealOf(String),
    /// Always numeric: [`Literal::Int`] or [`Literal::Real`].
    Number(Literal),
    Add(Box<ScoreExpr>, Box<ScoreExpr>),
    Sub(Box<ScoreExpr>, Box<ScoreExpr>),
    Mul(Box<ScoreExpr>, Box<ScoreExpr>),
    Div(Box<ScoreExpr>, Box<ScoreExpr>),
}

impl ScoreExpr {
    pub fn eval(&self, row: &Row) -> Result<f64, EvalError> {
        let value = self.eval_inner(row)?;
        if value.is_finite() {
            Ok(value)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    fn eval_inner(&self, row: &Row) -> Result<f64, EvalError> {
        let cell = |name: &str| {
            row.get(name)
                .ok_or_else(|| EvalError::MissingColumn(name.to_string()))
        };
        Ok(match self {
            ScoreExpr::IntOf(name) => read_int(name, cell(name)?)? as f64,
            ScoreExpr::RealOf(name) => read_real(name, cell(name)?)?,
            ScoreExpr::Number(Literal::Int(i)) => *i as f64,
            ScoreExpr::Number(Literal::Real(r)) => *r,
            ScoreExpr::Number(Literal::Str(_)) => return Err(EvalError::NonFinite),
            ScoreExpr::Add(a, b) => a.eval_inner(row)? + b.eval_inner(row)?,
            ScoreExpr::Sub(a, b) => a.eval_inner(row)? - b.eval_inner(row)?,
            ScoreExpr::Mul(a, b) => a.eval_inner(row)? * b.eval_inner(row)?,
            ScoreExpr::Div(a, b) => {
                let num = a.eval_inner(row)?;
                let den = b.eval_inner(row)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                num / den
            }
        })
    }

    pub fn columns(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_columns(&mut out);
        out
    }

    fn collect_columns<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            ScoreExpr::IntOf(c) | ScoreExpr::RealOf(c) => {
                out.insert(c);
            }
            ScoreExpr::Number(_) => {}
            ScoreExpr::Add(a, b)
            | ScoreExpr::Sub(a, b)
            | ScoreExpr::Mul(a, b)
            | ScoreExpr::Div(a, b) => {
                a.collect_columns(out);
                b.collect_columns(out);
            }
        }
    }

    fn is_additive(&self) -> bool {
        matches!(self, ScoreExpr::Add(..) | ScoreExpr::Sub(..))
    }

    fn is_multiplicative(&self) -> bool {
        matches!(self, ScoreExpr::Mul(..) | ScoreExpr::Div(..))
    }
}

impl fmt::Display for ScoreExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |f: &mut fmt::Formatter<'_>, e: &ScoreExpr, parens: bool| {
            if parens {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        };
        let quote = super::lexer::quote;
        match self {
            ScoreExpr::IntOf(c) => write!(f, "int(col({}))", quote(c)),
            ScoreExpr::RealOf(c) => write!(f, "real(col({}))", quote(c)),
            ScoreExpr::Number(lit) => write!(f, "{lit}"),
            ScoreExpr::Add(a, b) | ScoreExpr::Sub(a, b) => {
                let op = if matches!(self, ScoreExpr::Add(..)) {
                    "+"
                } else {
                    "-"
                };
                side(f, a, false)?;
                write!(f, " {op} ")?;
                side(f, b, b.is_additive())
            }
            ScoreExpr::Mul(a, b) | ScoreExpr::Div(a, b) => {
                let op = if matches!(self, ScoreExpr::Mul(..)) {
                    "*"
                } else {
                    "/"
                };
                side(f, a, a.is_additive())?;
                write!(f, " {op} ")?;
                side(f, b, b.is_additive() || b.is_multiplicative())
            }
        }
    }
}

impl FromStr for ScoreExpr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_score(s)
    }
}

pub fn parse_score(text: &str) -> Result<ScoreExpr, ParseError> {
    let mut cursor = Cursor::new(text)?;
    let expr = sum(&mut cursor)?;
    cursor.expect_end()?;
    Ok(expr)
}

fn sum(c: &mut Cursor) -> Result<ScoreExpr, ParseError> {
    let mut node = product(c)?;
    loop {
        let ctor: fn(Box<ScoreExpr>, Box<ScoreExpr>) -> ScoreExpr = match c.peek() {
            Some(Tok::Plus) => ScoreExpr::Add,
            Some(Tok::Minus) => ScoreExpr::Sub,
            _ => return Ok(node),
        };
        c.bump();
        let rhs = product(c)?;
        node = ctor(Box::new(node), Box::new(rhs));
    }
}

fn product(c: &mut Cursor) -> Result<ScoreExpr, ParseError> {
    let mut node = factor(c)?;
    loop {
        let ctor: fn(Box<ScoreExpr>, Box<ScoreExpr>) -> ScoreExpr = match c.peek() {
            Some(Tok::Star) => ScoreExpr::Mul,
            Some(Tok::Slash) => ScoreExpr::Div,
            _ => return Ok(node),
        };
        c.bump();
        let rhs = factor(c)?;
        node = ctor(Box::new(node), Box::new(rhs));
    }
}

fn factor(c: &mut Cursor) -> Result<ScoreExpr, ParseError> {
    match c.peek() {
        Some(Tok::LParen) => {
            c.bump();
            let inner = sum(c)?;
            c.expect(&Tok::RParen, "`)`")?;
            Ok(inner)
        }
        Some(Tok::Ident(w)) if w == "int" => {
            c.bump();
            Ok(ScoreExpr::IntOf(c.coerced_accessor()?))
        }
        Some(Tok::Ident(w)) if w == "real" => {
            c.bump();
            Ok(ScoreExpr::RealOf(c.coerced_accessor()?))
        }
        Some(Tok::Number { .. } | Tok::Minus) => Ok(ScoreExpr::Number(c.number()?)),
        _ => Err(c.error_expected("int(col(...)), real(col(...)), number or `(`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(pairs: &[(&str, &str)]) -> Row {
        Row::from_pairs(pairs.iter().copied()).unwrap()
    }

    fn s(text: &str) -> ScoreExpr {
        parse_score(text).unwrap_or_else(|e| panic!("{text}: {e}"))
    }

    #[test]
    fn decile_lookup() {
        assert_eq!(
            s(r#"int(col("decile_score"))"#)
                .eval(&row(&[("decile_score", "10")]))
                .unwrap(),
            10.0
        );
    }

    #[test]
    fn literal_zero() {
        assert_eq!(s("0").eval(&row(&[("x", "1")])).unwrap(), 0.0);
    }

    #[test]
    fn sum_of_columns() {
        let e = s(r#"int(col("a")) + int(col("b"))"#);
        assert_eq!(e.eval(&row(&[("a", "2"), ("b", "3")])).unwrap(), 5.0);
    }

    #[test]
    fn precedence_and_associativity() {
        let r = row(&[("x", "1")]);
        assert_eq!(s("1 + 2 * 3").eval(&r).unwrap(), 7.0);
        assert_eq!(s("(1 + 2) * 3").eval(&r).unwrap(), 9.0);
        assert_eq!(s("8 - 4 - 2").eval(&r).unwrap(), 2.0);
        assert_eq!(s("8 / 4 / 2").eval(&r).unwrap(), 1.0);
        assert_eq!(s("8 - -2").eval(&r).unwrap(), 10.0);
        assert_eq!(s(r#"real(col("x")) / 4"#).eval(&r).unwrap(), 0.25);
    }

    #[test]
    fn division_by_zero() {
        let e = s(r#"1 / (int(col("a")) - 2)"#);
        assert_eq!(
            e.eval(&row(&[("a", "2")])).unwrap_err(),
            EvalError::DivisionByZero
        );
    }

    #[test]
    fn coercion_failure() {
        let e = s(r#"int(col("a"))"#)
            .eval(&row(&[("a", "N/A")]))
            .unwrap_err();
        assert!(matches!(e, EvalError::Coercion { target: "int", .. }));
        let e = s(r#"real(col("a"))"#)
            .eval(&row(&[("a", "inf")]))
            .unwrap_err();
        assert!(matches!(e, EvalError::Coercion { target: "real", .. }));
    }

    #[test]
    fn overflow_is_not_finite() {
        let e = s("1e308 * 10").eval(&row(&[("a", "1")])).unwrap_err();
        assert_eq!(e, EvalError::NonFinite);
    }

    #[test]
    fn printing_round_trips() {
        for text in [
            r#"int(col("a")) + int(col("b")) * 2"#,
            r#"(int(col("a")) + 1) * (real(col("b")) - 2.5)"#,
            "8 - (4 - 2)",
            "8 / (4 * 2)",
            "1 - -3",
        ] {
            let e = s(text);
            assert_eq!(e.to_string(), text);
            assert_eq!(s(&e.to_string()), e);
        }
    }

    #[test]
    fn syntax_errors() {
        assert!(parse_score(r#"col("a")"#).is_err());
        assert!(parse_score("1 +").is_err());
        assert!(parse_score(r#""a" + 1"#).is_err());
        assert!(parse_score("1 == 1").is_err());
    }
}
