//! Decoder vocabulary: a fixed index table shared by labels, checkpoints
//! and the inference service.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Number of decoder tokens.
pub const VOCAB_SIZE: usize = 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Pad,
    Bos,
    Eos,
    /// End of numeral.
    Eon,
    Equals,
    Plus,
    Minus,
    Times,
    Divide,
    LParen,
    RParen,
    Dot,
    Digit(u8),
}

impl Token {
    pub const ALL: [Token; VOCAB_SIZE] = [
        Token::Pad,
        Token::Bos,
        Token::Eos,
        Token::Eon,
        Token::Equals,
        Token::Plus,
        Token::Minus,
        Token::Times,
        Token::Divide,
        Token::LParen,
        Token::RParen,
        Token::Dot,
        Token::Digit(0),
        Token::Digit(1),
        Token::Digit(2),
        Token::Digit(3),
        Token::Digit(4),
        Token::Digit(5),
        Token::Digit(6),
        Token::Digit(7),
        Token::Digit(8),
        Token::Digit(9),
    ];

    pub fn index(self) -> usize {
        match self {
            Token::Pad => 0,
            Token::Bos => 1,
            Token::Eos => 2,
            Token::Eon => 3,
            Token::Equals => 4,
            Token::Plus => 5,
            Token::Minus => 6,
            Token::Times => 7,
            Token::Divide => 8,
            Token::LParen => 9,
            Token::RParen => 10,
            Token::Dot => 11,
            Token::Digit(d) => 12 + d as usize,
        }
    }

    pub fn from_index(index: usize) -> Option<Token> {
        Token::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
        match self {
            Token::Pad => "pad",
            Token::Bos => "bos",
            Token::Eos => "eos",
            Token::Eon => "eon",
            Token::Equals => "=",
            Token::Plus => "+",
            Token::Minus => "-",
            Token::Times => "*",
            Token::Divide => "/",
            Token::LParen => "(",
            Token::RParen => ")",
            Token::Dot => ".",
            Token::Digit(d) => DIGITS[d as usize],
        }
    }

    /// Accepts the canonical names plus the usual typographic variants
    /// of the operators (`×`, `x`, `÷`, `−`).
    pub fn parse(s: &str) -> Result<Token> {
        let token = match s {
            "pad" => Token::Pad,
            "bos" => Token::Bos,
            "eos" => Token::Eos,
            "eon" => Token::Eon,
            "=" => Token::Equals,
            "+" => Token::Plus,
            "-" | "−" => Token::Minus,
            "*" | "×" | "x" => Token::Times,
            "/" | "÷" | ":" => Token::Divide,
            "(" => Token::LParen,
            ")" => Token::RParen,
            "." => Token::Dot,
            _ => match s.as_bytes() {
                [d @ b'0'..=b'9'] => Token::Digit(d - b'0'),
                _ => return Err(Error::UnknownSymbol(s.to_string())),
            },
        };
        Ok(token)
    }

    /// A symbol that can be handwritten (everything but the sequence markers).
    pub fn is_glyph(self) -> bool {
        !matches!(self, Token::Pad | Token::Bos | Token::Eos | Token::Eon)
    }

    pub fn is_operator(self) -> bool {
        matches!(
            self,
            Token::Plus | Token::Minus | Token::Times | Token::Divide
        )
    }

    pub fn is_numeral_part(self) -> bool {
        matches!(self, Token::Digit(_) | Token::Dot)
    }

    pub fn is_special(self) -> bool {
        matches!(self, Token::Pad | Token::Bos | Token::Eos)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Token {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Token {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Token::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Drops bos/eos/pad markers.
pub fn strip_special(tokens: &[Token]) -> Vec<Token> {
    tokens.iter().copied().filter(|t| !t.is_special()).collect()
}

/// Glyph tokens rendered as text, e.g. `7.4*(3.8+9)=`. Markers are dropped
/// and `eon` is shown as a space.
pub fn render(tokens: &[Token]) -> String {
    let mut out = String::new();
    for t in tokens {
        match t {
            Token::Pad | Token::Bos | Token::Eos => {}
            Token::Eon => out.push(' '),
            other => out.push_str(other.as_str()),
        }
    }
    out
}

/// Parses a compact glyph string such as `"4*6="` one character per token.
pub fn tokens_from_str(s: &str) -> Result<Vec<Token>> {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| Token::parse(c.encode_utf8(&mut [0; 4])))
        .collect()
}

/// Index/name table for serialization next to checkpoints and service replies.
pub fn table() -> Vec<(usize, &'static str)> {
    Token::ALL.iter().map(|t| (t.index(), t.as_str())).collect()
}
