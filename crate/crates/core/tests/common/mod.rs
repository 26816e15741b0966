//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use rpnformer::vocab::Token;

/// Textbook two-row edit distance, written independently of the library.
pub fn dp_distance(a: &[Token], b: &[Token]) -> usize {
    let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in table.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        table[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = table[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            table[i][j] = sub.min(table[i - 1][j] + 1).min(table[i][j - 1] + 1);
        }
    }
    table[a.len()][b.len()]
}

/// Shunting-yard over a glyph sequence ending in `=`; emits the postfix
/// label with `eon` after each numeral.
pub fn shunting_yard(infix: &[Token]) -> Vec<Token> {
    let prec = |t: Token| match t {
        Token::Plus | Token::Minus => 1,
        Token::Times | Token::Divide => 2,
        _ => 0,
    };
    let mut out = vec![Token::Bos];
    let mut ops: Vec<Token> = Vec::new();
    let mut in_number = false;
    for &t in infix {
        if t.is_numeral_part() {
            out.push(t);
            in_number = true;
            continue;
        }
        if in_number {
            out.push(Token::Eon);
            in_number = false;
        }
        match t {
            Token::LParen => ops.push(t),
            Token::RParen => {
                while let Some(op) = ops.pop() {
                    if op == Token::LParen {
                        break;
                    }
                    out.push(op);
                }
            }
            Token::Equals => {
                while let Some(op) = ops.pop() {
                    out.push(op);
                }
                out.push(Token::Equals);
            }
            op => {
                while let Some(&top) = ops.last() {
                    if top != Token::LParen && prec(top) >= prec(op) {
                        out.push(ops.pop().unwrap());
                    } else {
                        break;
                    }
                }
                ops.push(op);
            }
        }
    }
    out.push(Token::Eos);
    out
}

pub fn numeral_value(text: &str) -> BigRational {
    let (int, frac) = text.split_once('.').unwrap_or((text, ""));
    let digits: BigInt = format!("{int}{frac}").parse().unwrap();
    BigRational::new(digits, BigInt::from(10).pow(frac.len() as u32))
}

/// Evaluates a postfix label with an explicit operand stack.
pub fn eval_postfix(tokens: &[Token]) -> Option<BigRational> {
    let mut stack: Vec<BigRational> = Vec::new();
    let mut current = String::new();
    for &t in tokens {
        match t {
            Token::Digit(d) => current.push(char::from(b'0' + d)),
            Token::Dot => current.push('.'),
            Token::Eon => stack.push(numeral_value(&std::mem::take(&mut current))),
            Token::Plus | Token::Minus | Token::Times | Token::Divide => {
                let b = stack.pop()?;
                let a = stack.pop()?;
                stack.push(match t {
                    Token::Plus => a + b,
                    Token::Minus => a - b,
                    Token::Times => a * b,
                    _ => {
                        if b == BigRational::from_integer(0.into()) {
                            return None;
                        }
                        a / b
                    }
                });
            }
            _ => {}
        }
    }
    (stack.len() == 1).then(|| stack.pop().unwrap())
}

/// Violation count by explicit stack simulation. Pops on an empty stack
/// borrow an operand; an update that leaves the stack in debt is an
/// underflow event.
pub fn stack_violations(tokens: &[Token]) -> usize {
    let mut stack = 0usize;
    let mut debt = 0usize;
    let mut events = 0usize;
    let mut brackets = 0usize;
    let mut prev_numeral = false;
    let push = |stack: &mut usize, debt: &mut usize| {
        if *debt > 0 {
            *debt -= 1;
        } else {
            *stack += 1;
        }
    };
    for &t in tokens {
        let numeral = matches!(t, Token::Digit(_) | Token::Dot);
        match t {
            _ if numeral => {
                if !prev_numeral {
                    push(&mut stack, &mut debt);
                    events += usize::from(debt > 0);
                }
            }
            Token::Plus | Token::Minus | Token::Times | Token::Divide => {
                for _ in 0..2 {
                    if stack > 0 {
                        stack -= 1;
                    } else {
                        debt += 1;
                    }
                }
                push(&mut stack, &mut debt);
                events += usize::from(debt > 0);
            }
            Token::LParen | Token::RParen => brackets += 1,
            _ => {}
        }
        prev_numeral = numeral;
    }
    let height = stack as i64 - debt as i64;
    events + (height - 1).unsigned_abs() as usize + brackets
}
