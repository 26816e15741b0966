use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::Token;

/// Postfix validity violations of an arbitrary decoder output.
///
/// A linear scan keeps a counter that goes up by one when an operand
/// starts and down by one for every operator (pop two, push one). The
/// result is the number of counter updates that leave it negative plus
/// `|final - 1|`.
///
/// An operand is a maximal run of digit/`.` tokens; the run ends at `eon`
/// or at any other token, so outputs without `eon` still score. `=` and
/// the sequence markers do not touch the counter. Each bracket, which has
/// no place in postfix, is one violation.
pub fn count_violations(tokens: &[Token]) -> usize {
    let mut counter: i64 = 0;
    let mut negatives = 0usize;
    let mut brackets = 0usize;
    let mut in_operand = false;
    for &token in tokens {
        match token {
            Token::Digit(_) | Token::Dot => {
                if !in_operand {
                    in_operand = true;
                    counter += 1;
                    if counter < 0 {
                        negatives += 1;
                    }
                }
            }
            Token::Plus | Token::Minus | Token::Times | Token::Divide => {
                in_operand = false;
                counter -= 1;
                if counter < 0 {
                    negatives += 1;
                }
            }
            Token::LParen | Token::RParen => {
                in_operand = false;
                brackets += 1;
            }
            Token::Eon | Token::Equals | Token::Bos | Token::Eos | Token::Pad => {
                in_operand = false;
            }
        }
    }
    negatives + (counter - 1).unsigned_abs() as usize + brackets
}

/// Postfix accuracy range over a prediction set, `[1 - V_max, 1 - V_min]`,
/// where `V_min` is the fraction of outputs with any violation and `V_max`
/// the mean violation count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rar {
    pub lower: f64,
    pub upper: f64,
}

pub fn rar<S: AsRef<[Token]>>(predictions: &[S]) -> Result<Rar> {
    if predictions.is_empty() {
        return Err(Error::Empty("prediction set"));
    }
    let n = predictions.len() as f64;
    let counts: Vec<usize> = predictions
        .iter()
        .map(|p| count_violations(p.as_ref()))
        .collect();
    let v_min = counts.iter().filter(|&&v| v > 0).count() as f64 / n;
    let v_max = counts.iter().sum::<usize>() as f64 / n;
    Ok(Rar {
        lower: 1.0 - v_max,
        upper: 1.0 - v_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(words: &str) -> Vec<Token> {
        words
            .split_whitespace()
            .map(|w| Token::parse(w).unwrap())
            .collect()
    }

    #[test]
    fn ground_truth_has_no_violations() {
        assert_eq!(
            count_violations(&parse("bos 9 eon 7 eon 3 eon ÷ 2 eon − + = eos")),
            0
        );
        assert_eq!(count_violations(&parse("4 eon")), 0);
        assert_eq!(count_violations(&parse("1 2 . 5 eon")), 0);
    }

    #[test]
    fn hand_traces() {
        // counter -1 once, final 0
        assert_eq!(count_violations(&parse("+ 3 eon")), 2);
        assert_eq!(count_violations(&parse("3 eon +")), 1);
        assert_eq!(count_violations(&parse("")), 1);
        // missing eon still separates at the operator
        assert_eq!(count_violations(&parse("4 eon 6 * =")), 0);
        // brackets cost one each
        assert_eq!(count_violations(&parse("( 4 eon 6 eon * ) =")), 2);
    }

    #[test]
    fn rar_formula() {
        let valid = parse("bos 1 eon 2 eon + = eos");
        let bad = parse("+ 3 eon");
        let r = rar(&[valid.clone(), valid.clone()]).unwrap();
        assert_eq!((r.lower, r.upper), (1.0, 1.0));
        let r = rar(&[valid, bad]).unwrap();
        assert_eq!((r.lower, r.upper), (0.0, 0.5));
        assert!(rar::<Vec<Token>>(&[]).is_err());
    }
}
