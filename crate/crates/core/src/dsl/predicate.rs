use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::dataset::Row;

use super::lexer::Tok;
use super::{
    compare, read_int, read_real, CmpOp, Cursor, EvalError, Literal, ParseError, ParseErrorKind,
    Value,
};

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    /// `col("name")`, the raw cell string.
    Column(String),
    /// `int(col("name"))`
    IntOf(String),
    /// `real(col("name"))`
    RealOf(String),
    Literal(Literal),
    /// `$k`, 1-based.
    Param(usize),
}

impl Operand {
    fn column(&self) -> Option<&str> {
        match self {
            Operand::Column(c) | Operand::IntOf(c) | Operand::RealOf(c) => Some(c),
            _ => None,
        }
    }

    fn eval<'a>(&'a self, args: &'a [Literal], row: &'a Row) -> Result<Value<'a>, EvalError> {
        let cell = |name: &str| {
            row.get(name)
                .ok_or_else(|| EvalError::MissingColumn(name.to_string()))
        };
        Ok(match self {
            Operand::Column(name) => Value::Str(cell(name)?),
            Operand::IntOf(name) => Value::Int(read_int(name, cell(name)?)?),
            Operand::RealOf(name) => Value::Real(read_real(name, cell(name)?)?),
            Operand::Literal(lit) => Value::from_literal(lit),
            Operand::Param(k) => match args.get(k - 1) {
                Some(lit) => Value::from_literal(lit),
                None => {
                    return Err(EvalError::Arity {
                        expected: *k,
                        found: args.len(),
                    })
                }
            },
        })
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let quote = super::lexer::quote;
        match self {
            Operand::Column(c) => write!(f, "col({})", quote(c)),
            Operand::IntOf(c) => write!(f, "int(col({}))", quote(c)),
            Operand::RealOf(c) => write!(f, "real(col({}))", quote(c)),
            Operand::Literal(lit) => write!(f, "{lit}"),
            Operand::Param(k) => write!(f, "${k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredicateExpr {
    Or(Box<PredicateExpr>, Box<PredicateExpr>),
    And(Box<PredicateExpr>, Box<PredicateExpr>),
    Not(Box<PredicateExpr>),
    Compare {
        left: Operand,
        op: CmpOp,
        right: Operand,
    },
    /// `operand in { ... }`; the set is either all strings or all numbers.
    Member {
        operand: Operand,
        set: Vec<Literal>,
    },
}

impl PredicateExpr {
    fn eval(&self, args: &[Literal], row: &Row) -> Result<bool, EvalError> {
        match self {
            PredicateExpr::Or(a, b) => Ok(a.eval(args, row)? || b.eval(args, row)?),
            PredicateExpr::And(a, b) => Ok(a.eval(args, row)? && b.eval(args, row)?),
            PredicateExpr::Not(a) => Ok(!a.eval(args, row)?),
            PredicateExpr::Compare { left, op, right } => {
                compare(&left.eval(args, row)?, *op, &right.eval(args, row)?)
            }
            PredicateExpr::Member { operand, set } => {
                let value = operand.eval(args, row)?;
                for lit in set {
                    if compare(&value, CmpOp::Eq, &Value::from_literal(lit))? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
        }
    }

    fn visit_operands<'a>(&'a self, f: &mut impl FnMut(&'a Operand)) {
        match self {
            PredicateExpr::Or(a, b) | PredicateExpr::And(a, b) => {
                a.visit_operands(f);
                b.visit_operands(f);
            }
            PredicateExpr::Not(a) => a.visit_operands(f),
            PredicateExpr::Compare { left, right, .. } => {
                f(left);
                f(right);
            }
            PredicateExpr::Member { operand, .. } => f(operand),
        }
    }

    fn max_param(&self) -> usize {
        let mut max = 0;
        self.visit_operands(&mut |op| {
            if let Operand::Param(k) = op {
                max = max.max(*k);
            }
        });
        max
    }

    fn fmt_operand_side(&self, f: &mut fmt::Formatter<'_>, parens: bool) -> fmt::Result {
        if parens {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

impl fmt::Display for PredicateExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use PredicateExpr::*;
        match self {
            Or(a, b) => {
                a.fmt_operand_side(f, false)?;
                f.write_str(" or ")?;
                b.fmt_operand_side(f, matches!(**b, Or(..)))
            }
            And(a, b) => {
                a.fmt_operand_side(f, matches!(**a, Or(..)))?;
                f.write_str(" and ")?;
                b.fmt_operand_side(f, matches!(**b, Or(..) | And(..)))
            }
            Not(a) => {
                f.write_str("not ")?;
                a.fmt_operand_side(f, matches!(**a, Or(..) | And(..)))
            }
            Compare { left, op, right } => write!(f, "{left} {} {right}", op.symbol()),
            Member { operand, set } => {
                write!(f, "{operand} in {{")?;
                for (i, lit) in set.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{lit}")?;
                }
                f.write_str("}")
            }
        }
    }
}

/// A parsed row predicate with its arity (the highest `$k` it references).
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    expr: PredicateExpr,
    arity: usize,
}

impl Predicate {
    pub fn new(expr: PredicateExpr) -> Self {
        let arity = expr.max_param();
        Predicate { expr, arity }
    }

    pub fn expr(&self) -> &PredicateExpr {
        &self.expr
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    /// Every column the predicate reads, sorted.
    pub fn columns(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.expr.visit_operands(&mut |op| {
            if let Some(c) = op.column() {
                out.insert(c);
            }
        });
        out
    }

    pub fn eval(&self, args: &[Literal], row: &Row) -> Result<bool, EvalError> {
        if args.len() != self.arity {
            return Err(EvalError::Arity {
                expected: self.arity,
                found: args.len(),
            });
        }
        self.expr.eval(args, row)
    }

    pub fn bind(self, args: Vec<Literal>) -> Result<BoundPredicate, EvalError> {
        BoundPredicate::new(self, args)
    }

    pub fn negate(&self) -> Predicate {
        Predicate::new(PredicateExpr::Not(Box::new(self.expr.clone())))
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.expr.fmt(f)
    }
}

impl FromStr for Predicate {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_predicate(s)
    }
}

/// A predicate together with arguments for all of its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundPredicate {
    predicate: Predicate,
    args: Vec<Literal>,
}

impl BoundPredicate {
    pub fn new(predicate: Predicate, args: Vec<Literal>) -> Result<Self, EvalError> {
        if args.len() != predicate.arity() {
            return Err(EvalError::Arity {
                expected: predicate.arity(),
                found: args.len(),
            });
        }
        Ok(BoundPredicate { predicate, args })
    }

    /// Binds a parameterless predicate.
    pub fn unary(predicate: Predicate) -> Result<Self, EvalError> {
        Self::new(predicate, Vec::new())
    }

    pub fn predicate(&self) -> &Predicate {
        &self.predicate
    }

    pub fn args(&self) -> &[Literal] {
        &self.args
    }

    pub fn eval(&self, row: &Row) -> Result<bool, EvalError> {
        self.predicate.expr.eval(&self.args, row)
    }
}

pub fn parse_predicate(text: &str) -> Result<Predicate, ParseError> {
    let mut cursor = Cursor::new(text)?;
    let expr = or_expr(&mut cursor)?;
    cursor.expect_end()?;
    Ok(Predicate::new(expr))
}

fn or_expr(c: &mut Cursor) -> Result<PredicateExpr, ParseError> {
    let mut node = and_expr(c)?;
    while c.at_keyword("or") {
        c.bump();
        let rhs = and_expr(c)?;
        node = PredicateExpr::Or(Box::new(node), Box::new(rhs));
    }
    Ok(node)
}

fn and_expr(c: &mut Cursor) -> Result<PredicateExpr, ParseError> {
    let mut node = unary(c)?;
    while c.at_keyword("and") {
        c.bump();
        let rhs = unary(c)?;
        node = PredicateExpr::And(Box::new(node), Box::new(rhs));
    }
    Ok(node)
}

fn unary(c: &mut Cursor) -> Result<PredicateExpr, ParseError> {
    if c.at_keyword("not") {
        c.bump();
        return Ok(PredicateExpr::Not(Box::new(unary(c)?)));
    }
    if c.peek() == Some(&Tok::LParen) {
        c.bump();
        let inner = or_expr(c)?;
        c.expect(&Tok::RParen, "`)`")?;
        return Ok(inner);
    }
    comparison(c)
}

fn comparison(c: &mut Cursor) -> Result<PredicateExpr, ParseError> {
    let left = operand(c)?;
    if c.at_keyword("in") {
        c.bump();
        c.expect(&Tok::LBrace, "`{`")?;
        let set_column = c.column();
        let mut set = vec![literal(c)?];
        while c.peek() == Some(&Tok::Comma) {
            c.bump();
            set.push(literal(c)?);
        }
        c.expect(&Tok::RBrace, "`,` or `}`")?;
        let numeric = set[0].is_numeric();
        if set.iter().any(|l| l.is_numeric() != numeric) {
            return Err(ParseError::new(set_column, ParseErrorKind::MixedSet));
        }
        return Ok(PredicateExpr::Member { operand: left, set });
    }
    let op = match c.peek() {
        Some(Tok::Cmp(op)) => *op,
        _ => return Err(c.error_expected("comparison operator or `in`")),
    };
    c.bump();
    let right = operand(c)?;
    Ok(PredicateExpr::Compare { left, op, right })
}

fn operand(c: &mut Cursor) -> Result<Operand, ParseError> {
    match c.peek() {
        Some(Tok::Ident(w)) if w == "col" => Ok(Operand::Column(c.column_accessor()?)),
        Some(Tok::Ident(w)) if w == "int" => {
            c.bump();
            Ok(Operand::IntOf(c.coerced_accessor()?))
        }
        Some(Tok::Ident(w)) if w == "real" => {
            c.bump();
            Ok(Operand::RealOf(c.coerced_accessor()?))
        }
        Some(Tok::Param(k)) => {
            let k = *k;
            c.bump();
            Ok(Operand::Param(k))
        }
        Some(Tok::Str(_) | Tok::Number { .. } | Tok::Minus) => Ok(Operand::Literal(literal(c)?)),
        _ => Err(c.error_expected("operand")),
    }
}

fn literal(c: &mut Cursor) -> Result<Literal, ParseError> {
    if let Some(Tok::Str(s)) = c.peek() {
        let s = s.clone();
        c.bump();
        return Ok(Literal::Str(s));
    }
    match c.peek() {
        Some(Tok::Number { .. } | Tok::Minus) => c.number(),
        _ => Err(c.error_expected("literal")),
    }
}
