use serde::{Deserialize, Serialize};

use super::{ExprTree, Numeral, Operator};
use crate::error::{Error, Result};
use crate::vocab::Token;

/// What the decoder is trained to emit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    /// The written glyph sequence, brackets included.
    #[default]
    Glyphs,
    /// Postfix tree with an `eon` after every numeral.
    Rpn,
    /// Postfix tree without numeral delimiters.
    RpnNoEon,
}

impl LabelKind {
    /// Full decoder sequence, `bos` .. `eos`.
    pub fn label(self, tree: &ExprTree) -> Vec<Token> {
        match self {
            LabelKind::Glyphs => {
                let mut out = vec![Token::Bos];
                out.extend(to_infix(tree));
                out.push(Token::Eos);
                out
            }
            LabelKind::Rpn => to_rpn(tree),
            LabelKind::RpnNoEon => to_rpn_annotated(tree, false)
                .into_iter()
                .map(|(t, _)| t)
                .collect(),
        }
    }

    pub fn is_rpn(self) -> bool {
        !matches!(self, LabelKind::Glyphs)
    }
}

/// Glyph sequence of the expression, terminated by `=`.
pub fn to_infix(tree: &ExprTree) -> Vec<Token> {
    let mut infix = Vec::new();
    let mut rpn = Vec::new();
    walk(tree, &mut infix, &mut rpn, false);
    infix.push(Token::Equals);
    infix
}

/// Postfix label: `bos`, post-order tokens with `eon` after each numeral,
/// `=`, `eos`.
pub fn to_rpn(tree: &ExprTree) -> Vec<Token> {
    to_rpn_annotated(tree, true)
        .into_iter()
        .map(|(t, _)| t)
        .collect()
}

/// Postfix label where every glyph token carries the position of the same
/// glyph in [`to_infix`]. Markers (`bos`, `eon`, `eos`) carry `None`.
pub fn to_rpn_annotated(tree: &ExprTree, with_eon: bool) -> Vec<(Token, Option<usize>)> {
    let mut infix = Vec::new();
    let mut rpn = vec![(Token::Bos, None)];
    walk(tree, &mut infix, &mut rpn, with_eon);
    rpn.push((Token::Equals, Some(infix.len())));
    rpn.push((Token::Eos, None));
    rpn
}

fn walk(
    tree: &ExprTree,
    infix: &mut Vec<Token>,
    rpn: &mut Vec<(Token, Option<usize>)>,
    with_eon: bool,
) {
    match tree {
        ExprTree::Numeral(n) => {
            for t in n.tokens() {
                rpn.push((t, Some(infix.len())));
                infix.push(t);
            }
            if with_eon {
                rpn.push((Token::Eon, None));
            }
        }
        ExprTree::BinOp {
            op,
            left,
            right,
            bracketed,
        } => {
            if *bracketed {
                infix.push(Token::LParen);
            }
            walk(left, infix, rpn, with_eon);
            let at = infix.len();
            infix.push(op.token());
            walk(right, infix, rpn, with_eon);
            if *bracketed {
                infix.push(Token::RParen);
            }
            rpn.push((op.token(), Some(at)));
        }
    }
}

/// Rebuilds a tree from postfix tokens, with or without `eon` delimiters.
/// `bos`/`eos`/`pad` are skipped and a trailing `=` is optional. Bracket
/// flags cannot be recovered, the tree comes back unbracketed.
pub fn parse_rpn(tokens: &[Token]) -> Result<ExprTree> {
    let error = |position: usize, message: &str| Error::Parse {
        position,
        message: message.to_string(),
    };
    let mut stack: Vec<ExprTree> = Vec::new();
    let mut numeral: Vec<Token> = Vec::new();
    let flush = |numeral: &mut Vec<Token>, stack: &mut Vec<ExprTree>, at: usize| -> Result<()> {
        if !numeral.is_empty() {
            let n = Numeral::from_tokens(numeral).map_err(|_| error(at, "invalid numeral"))?;
            stack.push(ExprTree::Numeral(n));
            numeral.clear();
        }
        Ok(())
    };
    let mut ended = false;
    for (at, &t) in tokens.iter().enumerate() {
        if matches!(t, Token::Bos | Token::Eos | Token::Pad) {
            continue;
        }
        if ended {
            return Err(error(at, "tokens after '='"));
        }
        match t {
            Token::Eon => {
                if numeral.is_empty() {
                    return Err(error(at, "eon without a numeral"));
                }
                flush(&mut numeral, &mut stack, at)?;
            }
            Token::Equals => {
                flush(&mut numeral, &mut stack, at)?;
                ended = true;
            }
            Token::LParen | Token::RParen => return Err(error(at, "brackets in postfix")),
            t if t.is_numeral_part() => numeral.push(t),
            t => {
                flush(&mut numeral, &mut stack, at)?;
                let op = Operator::from_token(t).ok_or_else(|| error(at, "not an operator"))?;
                let right = stack.pop().ok_or_else(|| error(at, "operator lacks operands"))?;
                let left = stack.pop().ok_or_else(|| error(at, "operator lacks operands"))?;
                stack.push(ExprTree::binop(op, left, right));
            }
        }
    }
    flush(&mut numeral, &mut stack, tokens.len())?;
    match stack.len() {
        1 => Ok(stack.pop().unwrap()),
        0 => Err(error(tokens.len(), "empty expression")),
        k => Err(error(tokens.len(), &format!("{k} operands left over"))),
    }
}

/// Parses a glyph sequence ending in `=` with the usual precedence
/// (`*`/`/` over `+`/`-`, left associative). Brackets must enclose a
/// binary operation and set its `bracketed` flag.
pub fn parse_infix(tokens: &[Token]) -> Result<ExprTree> {
    let mut parser = Parser { tokens, pos: 0 };
    let tree = parser.expression()?;
    match parser.peek() {
        Some(Token::Equals) => parser.pos += 1,
        Some(t) => return Err(parser.error(format!("unexpected {t}"))),
        None => return Err(parser.error("expected '='".into())),
    }
    if parser.pos != tokens.len() {
        return Err(parser.error("trailing tokens after '='".into()));
    }
    Ok(tree)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<Token> {
        self.tokens.get(self.pos).copied()
    }

    fn error(&self, message: String) -> Error {
        Error::Parse {
            position: self.pos,
            message,
        }
    }

    fn expression(&mut self) -> Result<ExprTree> {
        self.binary(1)
    }

    fn binary(&mut self, min_precedence: u8) -> Result<ExprTree> {
        let mut lhs = if min_precedence >= 2 {
            self.operand()?
        } else {
            self.binary(2)?
        };
        while let Some(op) = self.peek().and_then(Operator::from_token) {
            if op.precedence() != min_precedence {
                break;
            }
            self.pos += 1;
            let rhs = if min_precedence >= 2 {
                self.operand()?
            } else {
                self.binary(2)?
            };
            lhs = ExprTree::binop(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn operand(&mut self) -> Result<ExprTree> {
        match self.peek() {
            Some(Token::LParen) => {
                let open = self.pos;
                self.pos += 1;
                let inner = self.expression()?;
                if self.peek() != Some(Token::RParen) {
                    return Err(self.error("expected ')'".into()));
                }
                self.pos += 1;
                match inner {
                    ExprTree::BinOp {
                        bracketed: false, ..
                    } => Ok(inner.bracketed()),
                    _ => Err(Error::Parse {
                        position: open,
                        message: "brackets must enclose exactly one binary operation".into(),
                    }),
                }
            }
            Some(t) if t.is_numeral_part() => {
                let start = self.pos;
                while self.peek().is_some_and(Token::is_numeral_part) {
                    self.pos += 1;
                }
                Numeral::from_tokens(&self.tokens[start..self.pos])
                    .map(ExprTree::Numeral)
                    .map_err(|_| Error::Parse {
                        position: start,
                        message: "malformed numeral".into(),
                    })
            }
            Some(t) => Err(self.error(format!("expected a numeral or '(', found {t}"))),
            None => Err(self.error("unexpected end of input".into())),
        }
    }
}
