use std::time::Instant;

use rpnformer::grammar::{count_violations, parse_infix, parse_rpn, LabelKind, ValueLabel};
use rpnformer::model::{greedy_decode, input_labels, AttentionReport, Model};
use rpnformer::synth::{normalize_strokes, tokenize_strokes, Stroke, Touch};
use rpnformer::vocab::{render, Token};
use rpnformer::Error;
use serde::{Deserialize, Serialize};

/// Body of `POST /recognize`, also the `infer` sample file format.
/// Points are `[x, y, t]` in device units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecognizeRequest {
    pub strokes: Vec<Vec<[f64; 3]>>,
    /// Reserved; a server holds one model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecognizeResponse {
    /// Decoder output after `bos`, `eos` included when produced.
    pub tokens: Vec<String>,
    pub ascii: String,
    /// Stack violations of `tokens`.
    pub violations: usize,
    /// Exact value (`p/q` or an integer) when the output parses.
    pub value: Option<String>,
    pub attention: AttentionReport,
    pub ms: f64,
}

#[derive(Debug)]
pub enum RecognizeError {
    /// Request breaks a precondition; `field` points into the body.
    Invalid { field: String, message: String },
    Overflow { strokes: usize, budget: usize },
    Internal(String),
}

impl std::fmt::Display for RecognizeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RecognizeError::Invalid { field, message } => write!(f, "{field}: {message}"),
            RecognizeError::Overflow { strokes, budget } => {
                write!(f, "{strokes} strokes exceed the budget of {budget}")
            }
            RecognizeError::Internal(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for RecognizeError {}

impl RecognizeRequest {
    pub fn validate(&self) -> Result<(), RecognizeError> {
        let invalid = |field: String, message: &str| RecognizeError::Invalid {
            field,
            message: message.to_string(),
        };
        if self.strokes.is_empty() {
            return Err(invalid("strokes".into(), "at least one stroke is required"));
        }
        for (i, stroke) in self.strokes.iter().enumerate() {
            if stroke.len() < 2 {
                return Err(invalid(format!("strokes[{i}]"), "a stroke needs at least 2 points"));
            }
            if let Some(j) = stroke.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
                return Err(invalid(format!("strokes[{i}][{j}]"), "coordinates must be finite"));
            }
        }
        Ok(())
    }

    /// Strokes scaled into the unit square by their joint bounding box.
    pub fn normalized(&self) -> Vec<Stroke> {
        let mut strokes: Vec<Stroke> = self
            .strokes
            .iter()
            .map(|points| Stroke {
                points: points.iter().map(|&[x, y, t]| Touch::new(x, y, t)).collect(),
                glyph_id: 0,
            })
            .collect();
        normalize_strokes(&mut strokes);
        strokes
    }
}

/// Value of a decoded sequence under the model's label kind. Postfix output
/// must be free of violations first.
pub fn output_value(tokens: &[Token], label: LabelKind) -> Option<String> {
    let tree = match label {
        LabelKind::Glyphs => {
            let body: Vec<Token> = tokens.iter().copied().filter(|t| !t.is_special()).collect();
            parse_infix(&body).ok()?
        }
        LabelKind::Rpn | LabelKind::RpnNoEon => {
            if count_violations(tokens) != 0 {
                return None;
            }
            parse_rpn(tokens).ok()?
        }
    };
    Some(ValueLabel::new(&tree.evaluate().ok()?).exact)
}

/// Normalize, tokenize, decode and score one request.
pub fn recognize(model: &Model, request: &RecognizeRequest) -> Result<RecognizeResponse, RecognizeError> {
    let start = Instant::now();
    request.validate()?;
    let strokes = request.normalized();
    let refs: Vec<&Stroke> = strokes.iter().collect();
    let input = tokenize_strokes(&refs, model.config.n).map_err(|e| match e {
        Error::StrokeBudget { strokes, budget } => RecognizeError::Overflow { strokes, budget },
        other => RecognizeError::Internal(other.to_string()),
    })?;
    let decoded =
        greedy_decode(model, &input, true).map_err(|e| RecognizeError::Internal(e.to_string()))?;
    let attention = AttentionReport::from_decoded(&decoded, input_labels(&input, None))
        .map_err(|e| RecognizeError::Internal(e.to_string()))?;
    let out = &decoded.tokens[1..];
    Ok(RecognizeResponse {
        tokens: out.iter().map(|t| t.as_str().to_string()).collect(),
        ascii: render(out),
        violations: count_violations(out),
        value: output_value(out, model.config.label),
        attention,
        ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
