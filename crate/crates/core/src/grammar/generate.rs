use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{parse_infix, ExprTree, Numeral, Operator};
use crate::error::{Error, Result};
use crate::vocab::Token;

/// Inclusive digit-count range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigitRange {
    pub min: usize,
    pub max: usize,
}

impl DigitRange {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    /// Upper bound on operators; the count is drawn uniformly from `1..=max`.
    pub max_operators: usize,
    pub allow_brackets: bool,
    /// Digits before the decimal mark.
    pub integer_digits: DigitRange,
    /// Digits after the decimal mark; 0 means no mark is written.
    pub decimal_digits: DigitRange,
    /// Chance that an operation below the root is written in brackets
    /// when precedence does not already require them.
    #[serde(default = "default_bracket_probability")]
    pub bracket_probability: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_bracket_probability() -> f64 {
    0.35
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            max_operators: 3,
            allow_brackets: false,
            integer_digits: DigitRange::new(1, 3),
            decimal_digits: DigitRange::new(0, 1),
            bracket_probability: default_bracket_probability(),
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.integer_digits.min == 0 || self.integer_digits.min > self.integer_digits.max {
            return bad("integer_digits must be a non-empty range starting at 1 or more");
        }
        if self.decimal_digits.min > self.decimal_digits.max {
            return bad("decimal_digits must be a non-empty range");
        }
        if !(0.0..=1.0).contains(&self.bracket_probability) {
            return bad("bracket_probability must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Draws a random expression tree.
///
/// Without brackets the tree is whatever a flat numeral/operator sequence
/// parses to. With brackets the shape is random and brackets are written
/// wherever precedence or left associativity demands them, plus optional
/// redundant ones. Trees that divide by an exact zero are redrawn.
pub fn generate<R: Rng + ?Sized>(config: &GenConfig, rng: &mut R) -> ExprTree {
    debug_assert!(config.validate().is_ok());
    loop {
        let operators = if config.max_operators == 0 {
            0
        } else {
            rng.gen_range(1..=config.max_operators)
        };
        let tree = if config.allow_brackets {
            let shape = random_shape(config, operators, rng);
            place_brackets(shape, None, config.bracket_probability, rng)
        } else {
            flat(config, operators, rng)
        };
        if tree.evaluate().is_ok() {
            return tree;
        }
    }
}

fn random_numeral<R: Rng + ?Sized>(config: &GenConfig, rng: &mut R) -> Numeral {
    let int_len = rng.gen_range(config.integer_digits.min..=config.integer_digits.max);
    let frac_len = rng.gen_range(config.decimal_digits.min..=config.decimal_digits.max);
    let mut text = String::with_capacity(int_len + frac_len + 1);
    for i in 0..int_len {
        let lowest = if i == 0 && int_len > 1 { 1 } else { 0 };
        text.push(char::from(b'0' + rng.gen_range(lowest..=9u8)));
    }
    if frac_len > 0 {
        text.push('.');
        for _ in 0..frac_len {
            text.push(char::from(b'0' + rng.gen_range(0..=9u8)));
        }
    }
    Numeral::new(text).expect("generated numeral is well formed")
}

fn random_operator<R: Rng + ?Sized>(rng: &mut R) -> Operator {
    Operator::ALL[rng.gen_range(0..Operator::ALL.len())]
}

fn flat<R: Rng + ?Sized>(config: &GenConfig, operators: usize, rng: &mut R) -> ExprTree {
    let mut tokens: Vec<Token> = random_numeral(config, rng).tokens().collect();
    for _ in 0..operators {
        tokens.push(random_operator(rng).token());
        tokens.extend(random_numeral(config, rng).tokens());
    }
    tokens.push(Token::Equals);
    parse_infix(&tokens).expect("flat sequences always parse")
}

fn random_shape<R: Rng + ?Sized>(config: &GenConfig, operators: usize, rng: &mut R) -> ExprTree {
    if operators == 0 {
        return ExprTree::Numeral(random_numeral(config, rng));
    }
    let op = random_operator(rng);
    let left_ops = rng.gen_range(0..operators);
    let left = random_shape(config, left_ops, rng);
    let right = random_shape(config, operators - 1 - left_ops, rng);
    ExprTree::binop(op, left, right)
}

#[derive(Clone, Copy)]
enum Side {
    Left,
    Right,
}

fn place_brackets<R: Rng + ?Sized>(
    tree: ExprTree,
    parent: Option<(Operator, Side)>,
    probability: f64,
    rng: &mut R,
) -> ExprTree {
    match tree {
        ExprTree::Numeral(_) => tree,
        ExprTree::BinOp {
            op, left, right, ..
        } => {
            let required = match parent {
                None => false,
                Some((p, Side::Left)) => op.precedence() < p.precedence(),
                Some((p, Side::Right)) => op.precedence() <= p.precedence(),
            };
            let bracketed = required || (parent.is_some() && rng.gen_bool(probability));
            let left = place_brackets(*left, Some((op, Side::Left)), probability, rng);
            let right = place_brackets(*right, Some((op, Side::Right)), probability, rng);
            ExprTree::BinOp {
                op,
                left: Box::new(left),
                right: Box::new(right),
                bracketed,
            }
        }
    }
}
