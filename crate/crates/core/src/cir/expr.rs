//! Linear comparison expressions.
//!
//! Grammar of an instantiated row:
//!
//! ```text
//! expr := term (("+"|"-") term)* cmp term*
//! term := [number "*"] identifier | number
//! cmp  := "<=" | ">=" | "="
//! ```
//!
//! Identifiers match `[A-Za-z_][A-Za-z0-9_\[\],]*`, so indexed names such as
//! `x[i,j]` are single identifiers. The right-hand side is an optional signed
//! sum; an empty right-hand side reads as `0`.
//!
//! Templates additionally accept a declared placeholder in coefficient
//! position (`bigM*order_ab`). Such coefficients must be bound to numbers when
//! the template is instantiated, after which the row is strict again.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("unexpected character {found:?} at offset {offset} in {text:?}")]
    UnexpectedChar { text: String, offset: usize, found: char },
    #[error("expected {expected} at offset {offset} in {text:?}")]
    Expected { text: String, offset: usize, expected: &'static str },
    #[error("missing comparator (<=, >=, =) in {0:?}")]
    MissingComparator(String),
    #[error("more than one comparator in {0:?}")]
    MultipleComparators(String),
    #[error("coefficient {symbol:?} must be a number in {text:?}")]
    SymbolicCoefficient { text: String, symbol: String },
    #[error("coefficient {symbol:?} is bound to variable {bound:?}, not a number")]
    NonNumericCoefficient { symbol: String, bound: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Le => "<=",
            Comparator::Ge => ">=",
            Comparator::Eq => "=",
        }
    }

    /// Applies the comparator to `lhs - rhs` against zero.
    pub fn holds(self, difference: f64) -> bool {
        const EPS: f64 = 1e-9;
        match self {
            Comparator::Le => difference <= EPS,
            Comparator::Ge => difference >= -EPS,
            Comparator::Eq => difference.abs() <= EPS,
        }
    }
}

/// A number or an identifier.
#[derive(Debug, Clone, PartialEq)]
pub enum Factor {
    Number(f64),
    Symbol(String),
}

/// One signed term. `coefficient` is only ever present together with a
/// symbolic operand.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub negative: bool,
    pub coefficient: Option<Factor>,
    pub operand: Factor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    pub lhs: Vec<Term>,
    pub cmp: Comparator,
    pub rhs: Vec<Term>,
}

/// What a placeholder is bound to: a model variable or a numeric parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Binding {
    Number(f64),
    Reference(String),
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Binding::Number(n) => write!(f, "{}", format_number(*n)),
            Binding::Reference(r) => f.write_str(r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Strict,
    Template,
}

/// Parses a row in the strict grammar.
pub fn parse(text: &str) -> Result<Expression, ExprError> {
    Parser::new(text, Mode::Strict).expression()
}

/// Parses a template row: like [`parse`], but identifiers are accepted as
/// coefficients.
pub fn parse_template(text: &str) -> Result<Expression, ExprError> {
    Parser::new(text, Mode::Template).expression()
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(is_identifier_tail)
}

fn is_identifier_tail(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '[' | ']' | ',')
}

struct Parser<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
    mode: Mode,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str, mode: Mode) -> Self {
        Parser { text, bytes: text.as_bytes(), pos: 0, mode }
    }

    fn expression(mut self) -> Result<Expression, ExprError> {
        let lhs = self.sum(false)?;
        self.skip_ws();
        let cmp = self
            .comparator()
            .ok_or_else(|| match self.peek() {
                None => ExprError::MissingComparator(self.text.to_string()),
                Some(c) => self.unexpected(c),
            })?;
        let rhs = self.sum(true)?;
        self.skip_ws();
        match self.peek() {
            None => Ok(Expression { lhs, cmp, rhs }),
            Some('<' | '>' | '=') => Err(ExprError::MultipleComparators(self.text.to_string())),
            Some(c) => Err(self.unexpected(c)),
        }
    }

    fn sum(&mut self, allow_empty: bool) -> Result<Vec<Term>, ExprError> {
        self.skip_ws();
        let mut terms = Vec::new();
        if allow_empty && self.peek().is_none() {
            return Ok(terms);
        }
        terms.push(self.term(false)?);
        loop {
            self.skip_ws();
            let negative = match self.peek() {
                Some('+') => false,
                Some('-') => true,
                _ => break,
            };
            self.pos += 1;
            terms.push(self.term(negative)?);
        }
        Ok(terms)
    }

    fn term(&mut self, negative: bool) -> Result<Term, ExprError> {
        self.skip_ws();
        let first = self.factor()?;
        let save = self.pos;
        self.skip_ws();
        if self.peek() == Some('*') {
            self.pos += 1;
            self.skip_ws();
            if let Factor::Symbol(sym) = &first {
                if self.mode == Mode::Strict {
                    return Err(ExprError::SymbolicCoefficient {
                        text: self.text.to_string(),
                        symbol: sym.clone(),
                    });
                }
            }
            let start = self.pos;
            let operand = match self.factor()? {
                Factor::Symbol(s) => Factor::Symbol(s),
                Factor::Number(_) => {
                    return Err(ExprError::Expected {
                        text: self.text.to_string(),
                        offset: start,
                        expected: "identifier after '*'",
                    })
                }
            };
            return Ok(Term { negative, coefficient: Some(first), operand });
        }
        self.pos = save;
        Ok(Term { negative, coefficient: None, operand: first })
    }

    fn factor(&mut self) -> Result<Factor, ExprError> {
        let start = self.pos;
        match self.peek() {
            Some(c) if c.is_ascii_digit() || c == '.' => {
                while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    self.pos += 1;
                }
                if self.peek() == Some('.') {
                    self.pos += 1;
                    while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                        self.pos += 1;
                    }
                }
                let lexeme = &self.text[start..self.pos];
                lexeme.parse::<f64>().map(Factor::Number).map_err(|_| ExprError::Expected {
                    text: self.text.to_string(),
                    offset: start,
                    expected: "number",
                })
            }
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                self.pos += 1;
                while matches!(self.peek(), Some(c) if is_identifier_tail(c)) {
                    self.pos += 1;
                }
                Ok(Factor::Symbol(self.text[start..self.pos].to_string()))
            }
            Some(c) => Err(self.unexpected(c)),
            None => Err(ExprError::Expected {
                text: self.text.to_string(),
                offset: start,
                expected: "term",
            }),
        }
    }

    fn comparator(&mut self) -> Option<Comparator> {
        let rest = &self.text[self.pos..];
        let (cmp, len) = if rest.starts_with("<=") {
            (Comparator::Le, 2)
        } else if rest.starts_with(">=") {
            (Comparator::Ge, 2)
        } else if rest.starts_with('=') {
            (Comparator::Eq, 1)
        } else {
            return None;
        };
        self.pos += len;
        Some(cmp)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c == ' ' || c == '\t') {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.bytes.get(self.pos).map(|&b| b as char)
    }

    fn unexpected(&self, found: char) -> ExprError {
        ExprError::UnexpectedChar { text: self.text.to_string(), offset: self.pos, found }
    }
}

impl Expression {
    /// Every identifier in the expression, coefficient symbols included, in
    /// order of first appearance.
    pub fn symbols(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for term in self.lhs.iter().chain(&self.rhs) {
            for f in term.coefficient.iter().chain(std::iter::once(&term.operand)) {
                if let Factor::Symbol(s) = f {
                    if !out.contains(&s.as_str()) {
                        out.push(s);
                    }
                }
            }
        }
        out
    }

    /// Substitutes placeholder bindings. Symbols without a binding are kept
    /// as-is. Coefficients must end up numeric, and a numeric coefficient on a
    /// numeric operand folds into a constant term.
    pub fn bind(&self, bindings: &BTreeMap<String, Binding>) -> Result<Expression, ExprError> {
        let bind_side = |terms: &[Term]| -> Result<Vec<Term>, ExprError> {
            terms.iter().map(|t| bind_term(t, bindings)).collect()
        };
        Ok(Expression { lhs: bind_side(&self.lhs)?, cmp: self.cmp, rhs: bind_side(&self.rhs)? })
    }

    /// Lowers to `sum(coef * var) + constant  cmp  0` with `lhs - rhs` on the
    /// left. Fails if any coefficient is still symbolic.
    pub fn to_row(&self) -> Result<LinearRow, ExprError> {
        let mut coefficients: Vec<(String, f64)> = Vec::new();
        let mut constant = 0.0;
        for (side, sign) in [(&self.lhs, 1.0), (&self.rhs, -1.0)] {
            for term in side {
                let s = if term.negative { -sign } else { sign };
                let coef = match &term.coefficient {
                    None => 1.0,
                    Some(Factor::Number(n)) => *n,
                    Some(Factor::Symbol(sym)) => {
                        return Err(ExprError::SymbolicCoefficient {
                            text: self.to_string(),
                            symbol: sym.clone(),
                        })
                    }
                };
                match &term.operand {
                    Factor::Number(n) => constant += s * coef * n,
                    Factor::Symbol(v) => match coefficients.iter_mut().find(|(name, _)| name == v) {
                        Some((_, c)) => *c += s * coef,
                        None => coefficients.push((v.clone(), s * coef)),
                    },
                }
            }
        }
        Ok(LinearRow { coefficients, constant, cmp: self.cmp })
    }
}

fn bind_term(term: &Term, bindings: &BTreeMap<String, Binding>) -> Result<Term, ExprError> {
    let coefficient = match &term.coefficient {
        Some(Factor::Symbol(sym)) => match bindings.get(sym) {
            Some(Binding::Number(n)) => Some(Factor::Number(*n)),
            Some(Binding::Reference(r)) => {
                return Err(ExprError::NonNumericCoefficient { symbol: sym.clone(), bound: r.clone() })
            }
            None => Some(Factor::Symbol(sym.clone())),
        },
        other => other.clone(),
    };
    let operand = match &term.operand {
        Factor::Symbol(sym) => match bindings.get(sym) {
            Some(Binding::Number(n)) => Factor::Number(*n),
            Some(Binding::Reference(r)) => Factor::Symbol(r.clone()),
            None => Factor::Symbol(sym.clone()),
        },
        n => n.clone(),
    };
    match (coefficient, operand) {
        (Some(Factor::Number(c)), Factor::Number(n)) => {
            let v = c * n;
            Ok(Term { negative: term.negative != (v < 0.0), coefficient: None, operand: Factor::Number(v.abs()) })
        }
        (Some(Factor::Number(c)), op) if c < 0.0 => {
            Ok(Term { negative: !term.negative, coefficient: Some(Factor::Number(-c)), operand: op })
        }
        (coefficient, Factor::Number(n)) if n < 0.0 => {
            Ok(Term { negative: !term.negative, coefficient, operand: Factor::Number(-n) })
        }
        (coefficient, operand) => Ok(Term { negative: term.negative, coefficient, operand }),
    }
}

pub fn format_number(n: f64) -> String {
    if n == n.trunc() && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor::Number(n) => f.write_str(&format_number(*n)),
            Factor::Symbol(s) => f.write_str(s),
        }
    }
}

fn write_side(f: &mut fmt::Formatter<'_>, terms: &[Term]) -> fmt::Result {
    for (i, term) in terms.iter().enumerate() {
        match (i, term.negative) {
            (0, false) => {}
            (0, true) => f.write_str("0 - ")?,
            (_, false) => f.write_str(" + ")?,
            (_, true) => f.write_str(" - ")?,
        }
        if let Some(c) = &term.coefficient {
            write!(f, "{c}*")?;
        }
        write!(f, "{}", term.operand)?;
    }
    Ok(())
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_side(f, &self.lhs)?;
        write!(f, " {}", self.cmp.symbol())?;
        if !self.rhs.is_empty() {
            f.write_str(" ")?;
            write_side(f, &self.rhs)?;
        }
        Ok(())
    }
}

/// `sum(coef * var) + constant  cmp  0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub coefficients: Vec<(String, f64)>,
    pub constant: f64,
    pub cmp: Comparator,
}

impl LinearRow {
    pub fn evaluate(&self, value: impl Fn(&str) -> Option<i64>) -> Option<bool> {
        let mut total = self.constant;
        for (name, c) in &self.coefficients {
            total += c * value(name)? as f64;
        }
        Some(self.cmp.holds(total))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_grammar_examples() {
        let e = parse("2*x + y - 3 <= 5").unwrap();
        assert_eq!(e.lhs.len(), 3);
        assert_eq!(e.cmp, Comparator::Le);
        assert_eq!(e.to_string(), "2*x + y - 3 <= 5");
        let e = parse("x[i,j] >= 0").unwrap();
        assert_eq!(e.symbols(), vec!["x[i,j]"]);
        let e = parse("a + b =").unwrap();
        assert!(e.rhs.is_empty());
        assert_eq!(parse("a = b - c").unwrap().to_string(), "a = b - c");
    }

    #[test]
    fn rejects_malformed_rows() {
        assert!(matches!(parse("x + y"), Err(ExprError::MissingComparator(_))));
        assert!(matches!(parse("x <= y <= z"), Err(ExprError::MultipleComparators(_))));
        assert!(matches!(parse("x < 3"), Err(ExprError::UnexpectedChar { .. })));
        assert!(matches!(parse("-x <= 3"), Err(ExprError::UnexpectedChar { .. })));
        assert!(matches!(parse("2*3 <= x"), Err(ExprError::Expected { .. })));
        assert!(matches!(parse("M*y <= 3"), Err(ExprError::SymbolicCoefficient { .. })));
        assert!(parse_template("M*y <= 3").is_ok());
    }

    #[test]
    fn binding_folds_numeric_terms() {
        let t = parse_template("C_a - C_b - bigM*order >= p_a - bigM").unwrap();
        let mut b = BTreeMap::new();
        b.insert("C_a".into(), Binding::Reference("C_1".into()));
        b.insert("C_b".into(), Binding::Reference("C_2".into()));
        b.insert("order".into(), Binding::Reference("o_12".into()));
        b.insert("bigM".into(), Binding::Number(3.0));
        b.insert("p_a".into(), Binding::Number(1.0));
        let bound = t.bind(&b).unwrap();
        assert_eq!(bound.to_string(), "C_1 - C_2 - 3*o_12 >= 1 - 3");
        assert_eq!(parse(&bound.to_string()).unwrap(), bound);
        let row = bound.to_row().unwrap();
        assert_eq!(row.constant, 2.0);
    }

    #[test]
    fn variable_bound_to_coefficient_is_rejected() {
        let t = parse_template("M*y <= 3").unwrap();
        let mut b = BTreeMap::new();
        b.insert("M".into(), Binding::Reference("z".into()));
        assert!(matches!(t.bind(&b), Err(ExprError::NonNumericCoefficient { .. })));
    }

    #[test]
    fn row_evaluation_uses_lhs_minus_rhs() {
        let row = parse("8*a + 6*b <= 10").unwrap().to_row().unwrap();
        let eval = |a: i64, b: i64| {
            row.evaluate(|n| match n {
                "a" => Some(a),
                "b" => Some(b),
                _ => None,
            })
        };
        assert_eq!(eval(1, 0), Some(true));
        assert_eq!(eval(1, 1), Some(false));
        assert_eq!(row.evaluate(|_| None), None);
    }
}
