use serde::{Deserialize, Serialize};

use super::decode::{greedy_decode, Decoded};
use super::Model;
use crate::error::{Error, Result};
use crate::synth::{tokenize, ExpressionSample, TokenizedInput};

/// Decoder cross-attention in a plotting-friendly layout:
/// `layers[l][h][i][j]` is the weight output token `i` put on input token `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub tokens_in: Vec<String>,
    pub tokens_out: Vec<String>,
    pub layers: Vec<Vec<Vec<Vec<f32>>>>,
}

impl AttentionReport {
    /// Builds the report from a decode run made with attention capture.
    /// `tokens_in` labels the valid encoder positions.
    pub fn from_decoded(decoded: &Decoded, tokens_in: Vec<String>) -> Result<Self> {
        let maps = decoded
            .cross_attention
            .as_ref()
            .ok_or_else(|| Error::Config("decode ran without attention capture".into()))?;
        let shape = maps.shape();
        let (layers, heads, rows, cols) = (shape[0], shape[1], shape[2], shape[3]);
        if cols != tokens_in.len() {
            return Err(Error::Config(format!(
                "{} input labels for {cols} attention columns",
                tokens_in.len()
            )));
        }
        let data = maps.data();
        let layers = (0..layers)
            .map(|l| {
                (0..heads)
                    .map(|h| {
                        (0..rows)
                            .map(|i| {
                                let at = ((l * heads + h) * rows + i) * cols;
                                data[at..at + cols].to_vec()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            tokens_in,
            tokens_out: decoded.tokens[1..].iter().map(|t| t.to_string()).collect(),
            layers,
        })
    }
}

/// Labels for the valid encoder positions: `bos`, the glyph each stroke
/// belongs to (or `s<k>` when unknown), `eos`.
pub fn input_labels(input: &TokenizedInput, sample: Option<&ExpressionSample>) -> Vec<String> {
    let valid = input.valid_len();
    (0..valid)
        .map(|i| {
            if i == 0 {
                "bos".to_string()
            } else if i + 1 == valid {
                "eos".to_string()
            } else {
                match (input.sources[i], sample) {
                    (Some(g), Some(s)) => s.glyphs[g].symbol.to_string(),
                    _ => format!("s{i}"),
                }
            }
        })
        .collect()
}

/// Greedy-decodes a sample and reports every cross-attention map.
pub fn export_attention(model: &Model<f32>, sample: &ExpressionSample) -> Result<AttentionReport> {
    let input = tokenize(sample, model.config.n, None)?;
    let decoded = greedy_decode(model, &input, true)?;
    AttentionReport::from_decoded(&decoded, input_labels(&input, Some(sample)))
}
