use serde::{Deserialize, Serialize};

use super::eval::token_text;
use super::metrics::levenshtein;
use crate::error::{Error, Result};
use crate::grammar::{count_violations, to_rpn_annotated, LabelKind};
use crate::model::{greedy_decode_batch, Model};
use crate::synth::{tokenize, ExpressionSample, GlyphSelector, TokenizedInput};
use crate::vocab::{render, Token};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationTarget {
    /// The trailing `=`.
    Equals,
    /// The last `)`; glyph-task models only.
    ClosingBracket,
    /// The last operator written.
    Operator,
}

impl std::str::FromStr for AblationTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equals" => Ok(Self::Equals),
            "closing_bracket" => Ok(Self::ClosingBracket),
            "operator" => Ok(Self::Operator),
            other => Err(Error::Config(format!("unknown ablation target {other:?}"))),
        }
    }
}

impl AblationTarget {
    fn locate(self, sample: &ExpressionSample) -> Option<usize> {
        match self {
            AblationTarget::Equals => GlyphSelector::Last(Token::Equals).resolve(sample),
            AblationTarget::ClosingBracket => GlyphSelector::Last(Token::RParen).resolve(sample),
            AblationTarget::Operator => sample.glyphs.iter().rposition(|g| g.symbol.is_operator()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub index: usize,
    /// Glyphs that were left in the input.
    pub input: String,
    /// Label of the ablated input: the full label minus the elided glyph.
    pub ground_truth: String,
    pub prediction: String,
    /// Distance to `ground_truth`.
    pub ld: usize,
    /// Distance to the label of the complete expression.
    pub ld_full: usize,
    pub valid: bool,
    pub restored: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub target: AblationTarget,
    pub evaluated: usize,
    /// Samples without the target glyph.
    pub skipped: usize,
    /// Outputs with zero postfix violations (postfix models) or balanced
    /// brackets (glyph models).
    pub valid_fraction: f64,
    /// Outputs that contain the elided symbol again.
    pub restored_fraction: f64,
    pub mean_ld: f64,
    pub mean_ld_full: f64,
    pub rows: Vec<AblationRow>,
}

fn brackets_balanced(tokens: &[Token]) -> bool {
    let mut depth = 0i64;
    for t in tokens {
        match t {
            Token::LParen => depth += 1,
            Token::RParen => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            _ => {}
        }
    }
    depth == 0
}

/// Label with every token that came from `glyph` removed.
fn ablated_label(sample: &ExpressionSample, kind: LabelKind, glyph: usize) -> Result<Vec<Token>> {
    let tree = sample.tree()?;
    Ok(match kind {
        LabelKind::Glyphs => {
            let mut label = kind.label(&tree);
            label.remove(glyph + 1);
            label
        }
        LabelKind::Rpn | LabelKind::RpnNoEon => to_rpn_annotated(&tree, kind == LabelKind::Rpn)
            .into_iter()
            .filter(|&(_, src)| src != Some(glyph))
            .map(|(t, _)| t)
            .collect(),
    })
}

/// Removes one glyph's strokes from each sample, decodes, and scores how
/// the model copes.
pub fn ablate_and_score(
    model: &Model<f32>,
    samples: &[&ExpressionSample],
    target: AblationTarget,
    batch_size: usize,
) -> Result<AblationReport> {
    let kind = model.config.label;
    if target == AblationTarget::ClosingBracket && kind.is_rpn() {
        return Err(Error::Config(
            "closing-bracket ablation needs a glyph-task model".into(),
        ));
    }
    let mut jobs = Vec::new();
    let mut skipped = 0;
    for (index, sample) in samples.iter().enumerate() {
        let Some(glyph) = target.locate(sample) else {
            skipped += 1;
            continue;
        };
        let input = tokenize(sample, model.config.n, Some(GlyphSelector::Index(glyph)))?;
        jobs.push((index, sample, glyph, input));
    }

    let mut rows = Vec::with_capacity(jobs.len());
    for chunk in jobs.chunks(batch_size.max(1)) {
        let inputs: Vec<&TokenizedInput> = chunk.iter().map(|j| &j.3).collect();
        let decoded = greedy_decode_batch(model, &inputs, false)?;
        for ((index, sample, glyph, _), d) in chunk.iter().zip(decoded) {
            let removed = sample.glyphs[*glyph].symbol;
            let truth = ablated_label(sample, kind, *glyph)?;
            let full = kind.label(&sample.tree()?);
            let mut left = sample.glyph_tokens();
            left.remove(*glyph);
            let valid = if kind.is_rpn() {
                count_violations(&d.tokens) == 0
            } else {
                brackets_balanced(&d.tokens)
            };
            rows.push(AblationRow {
                index: *index,
                input: render(&left),
                ground_truth: token_text(&truth),
                prediction: token_text(&d.tokens),
                ld: levenshtein(&truth, &d.tokens),
                ld_full: levenshtein(&full, &d.tokens),
                valid,
                restored: d.tokens.contains(&removed),
            });
        }
    }
    let n = rows.len().max(1) as f64;
    Ok(AblationReport {
        target,
        evaluated: rows.len(),
        skipped,
        valid_fraction: rows.iter().filter(|r| r.valid).count() as f64 / n,
        restored_fraction: rows.iter().filter(|r| r.restored).count() as f64 / n,
        mean_ld: rows.iter().map(|r| r.ld as f64).sum::<f64>() / n,
        mean_ld_full: rows.iter().map(|r| r.ld_full as f64).sum::<f64>() / n,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_expression, WriterStyle};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(text: &str) -> ExpressionSample {
        let tree = crate::grammar::parse_infix(&crate::vocab::tokens_from_str(text).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        synth_expression(&tree, &WriterStyle::identity(), 48, &mut rng).unwrap()
    }

    #[test]
    fn ablated_labels() {
        let s = sample("4×6=");
        let g = AblationTarget::Equals.locate(&s).unwrap();
        assert_eq!(token_text(&ablated_label(&s, LabelKind::Glyphs, g).unwrap()), "bos 4 * 6 eos");
        let s = sample("9+5-2=");
        let g = AblationTarget::Operator.locate(&s).unwrap();
        assert_eq!(
            token_text(&ablated_label(&s, LabelKind::Rpn, g).unwrap()),
            "bos 9 eon 5 eon + 2 eon = eos"
        );
        assert_eq!(AblationTarget::ClosingBracket.locate(&s), None);
    }

    #[test]
    fn bracket_balance() {
        let t = |s: &str| crate::vocab::tokens_from_str(s).unwrap();
        assert!(brackets_balanced(&t("(1+2)×3=")));
        assert!(!brackets_balanced(&t("(1+2×3=")));
        assert!(!brackets_balanced(&t(")1+2(=")));
    }
}
