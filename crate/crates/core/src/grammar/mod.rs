//! Arithmetic expressions: random generation, the three ground-truth
//! labels (glyph text, postfix tree, value) and postfix validity scoring.

mod generate;
mod notation;
mod violations;

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::Token;

pub use generate::{generate, DigitRange, GenConfig};
pub use notation::{parse_infix, parse_rpn, to_infix, to_rpn, to_rpn_annotated, LabelKind};
pub use violations::{count_violations, rar, Rar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operator {
    Add,
    Sub,
    Mul,
    Div,
}

impl Operator {
    pub const ALL: [Operator; 4] = [Operator::Add, Operator::Sub, Operator::Mul, Operator::Div];

    pub fn token(self) -> Token {
        match self {
            Operator::Add => Token::Plus,
            Operator::Sub => Token::Minus,
            Operator::Mul => Token::Times,
            Operator::Div => Token::Divide,
        }
    }

    pub fn from_token(token: Token) -> Option<Operator> {
        match token {
            Token::Plus => Some(Operator::Add),
            Token::Minus => Some(Operator::Sub),
            Token::Times => Some(Operator::Mul),
            Token::Divide => Some(Operator::Div),
            _ => None,
        }
    }

    pub fn precedence(self) -> u8 {
        match self {
            Operator::Add | Operator::Sub => 1,
            Operator::Mul | Operator::Div => 2,
        }
    }

    pub fn apply(self, a: &BigRational, b: &BigRational) -> Result<BigRational> {
        Ok(match self {
            Operator::Add => a + b,
            Operator::Sub => a - b,
            Operator::Mul => a * b,
            Operator::Div => {
                if b.is_zero() {
                    return Err(Error::DivisionByZero);
                }
                a / b
            }
        })
    }
}

/// Digits with at most one decimal mark, e.g. `"7.4"`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Numeral(String);

impl Numeral {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let digits = text.chars().filter(char::is_ascii_digit).count();
        let marks = text.chars().filter(|&c| c == '.').count();
        if digits == 0 || marks > 1 || digits + marks != text.chars().count() {
            return Err(Error::Parse {
                position: 0,
                message: format!("invalid numeral {text:?}"),
            });
        }
        Ok(Self(text))
    }

    pub fn from_tokens(tokens: &[Token]) -> Result<Self> {
        Self::new(tokens.iter().map(|t| t.as_str()).collect::<String>())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn tokens(&self) -> impl Iterator<Item = Token> + '_ {
        self.0.chars().map(|c| match c {
            '.' => Token::Dot,
            d => Token::Digit(d as u8 - b'0'),
        })
    }

    pub fn value(&self) -> BigRational {
        let (int, frac) = self.0.split_once('.').unwrap_or((&self.0, ""));
        let digits = format!("{int}{frac}");
        let numer: BigInt = if digits.is_empty() {
            BigInt::zero()
        } else {
            digits.parse().expect("validated digits")
        };
        let denom = num_traits::pow(BigInt::from(10), frac.len());
        BigRational::new(numer, denom)
    }
}

/// Binary expression tree. Post-order traversal yields the postfix form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExprTree {
    Numeral(Numeral),
    BinOp {
        op: Operator,
        left: Box<ExprTree>,
        right: Box<ExprTree>,
        /// Written between brackets in the glyph rendering.
        bracketed: bool,
    },
}

impl ExprTree {
    pub fn numeral(text: &str) -> Result<Self> {
        Ok(ExprTree::Numeral(Numeral::new(text)?))
    }

    pub fn binop(op: Operator, left: ExprTree, right: ExprTree) -> Self {
        ExprTree::BinOp {
            op,
            left: Box::new(left),
            right: Box::new(right),
            bracketed: false,
        }
    }

    pub fn bracketed(mut self) -> Self {
        if let ExprTree::BinOp { bracketed, .. } = &mut self {
            *bracketed = true;
        }
        self
    }

    pub fn operator_count(&self) -> usize {
        match self {
            ExprTree::Numeral(_) => 0,
            ExprTree::BinOp { left, right, .. } => 1 + left.operator_count() + right.operator_count(),
        }
    }

    pub fn has_brackets(&self) -> bool {
        match self {
            ExprTree::Numeral(_) => false,
            ExprTree::BinOp {
                left,
                right,
                bracketed,
                ..
            } => *bracketed || left.has_brackets() || right.has_brackets(),
        }
    }

    /// Same tree with every bracket flag cleared.
    pub fn without_brackets(&self) -> ExprTree {
        match self {
            ExprTree::Numeral(n) => ExprTree::Numeral(n.clone()),
            ExprTree::BinOp {
                op, left, right, ..
            } => ExprTree::binop(*op, left.without_brackets(), right.without_brackets()),
        }
    }

    /// Exact rational value.
    pub fn evaluate(&self) -> Result<BigRational> {
        match self {
            ExprTree::Numeral(n) => Ok(n.value()),
            ExprTree::BinOp {
                op, left, right, ..
            } => op.apply(&left.evaluate()?, &right.evaluate()?),
        }
    }
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::vocab::render(&to_infix(self)))
    }
}

pub fn evaluate(tree: &ExprTree) -> Result<BigRational> {
    tree.evaluate()
}

/// Decimal rendering rounded half away from zero to at most `max_fraction`
/// digits, trailing zeros trimmed. Terminating values come out exact when
/// they fit.
pub fn decimal_string(value: &BigRational, max_fraction: usize) -> String {
    let scale = num_traits::pow(BigInt::from(10), max_fraction);
    let scaled = value.abs() * BigRational::from_integer(scale.clone());
    let rounded = (scaled + BigRational::new(1.into(), 2.into())).floor().to_integer();
    let int_part = &rounded / &scale;
    let frac_part = &rounded % &scale;
    let mut text = int_part.to_string();
    if max_fraction > 0 && !frac_part.is_zero() {
        let frac = format!("{:0>width$}", frac_part.to_string(), width = max_fraction);
        text.push('.');
        text.push_str(frac.trim_end_matches('0'));
    }
    if value.is_negative() && !rounded.is_zero() {
        text.insert(0, '-');
    }
    text
}

/// Value label serialized with every sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueLabel {
    /// `p/q` in lowest terms, or an integer.
    pub exact: String,
    pub decimal: String,
}

impl ValueLabel {
    pub fn new(value: &BigRational) -> Self {
        Self {
            exact: value.to_string(),
            decimal: decimal_string(value, 6),
        }
    }
}
