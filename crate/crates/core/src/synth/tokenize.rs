use rpnformer_autograd::Tensor;

use super::glyphs::sample_at_fractions;
use super::{ExpressionSample, Stroke};
use crate::error::{Error, Result};
use crate::vocab::Token;

/// Scalars per encoder token.
pub const TOKEN_WIDTH: usize = 128;
/// Interleaved `(x, y)` pairs that fit in one token.
pub const POINTS_PER_TOKEN: usize = TOKEN_WIDTH / 2;
/// Fill value of the leading marker token.
pub const BOS_VALUE: f32 = -1.0;
/// Fill value of the token after the last stroke.
pub const EOS_VALUE: f32 = -2.0;

/// Which glyph to remove before tokenizing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GlyphSelector {
    Index(usize),
    First(Token),
    Last(Token),
}

impl GlyphSelector {
    pub fn resolve(self, sample: &ExpressionSample) -> Option<usize> {
        let symbols = || sample.glyphs.iter().map(|g| g.symbol);
        match self {
            GlyphSelector::Index(i) => (i < sample.glyphs.len()).then_some(i),
            GlyphSelector::First(t) => symbols().position(|s| s == t),
            GlyphSelector::Last(t) => symbols().rposition(|s| s == t),
        }
    }
}

/// Encoder input: one row per stroke between the marker rows.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizedInput {
    /// `[n, TOKEN_WIDTH]`.
    pub tokens: Tensor<f32>,
    pub mask: Vec<bool>,
    pub n: usize,
    /// Glyph of the sample each row was taken from; `None` for markers and pad.
    pub sources: Vec<Option<usize>>,
}

impl TokenizedInput {
    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn stroke_count(&self) -> usize {
        self.valid_len().saturating_sub(2)
    }
}

/// Uniform arc-length resampling to `count` points, endpoints kept.
pub fn resample_arc_length(points: &[(f64, f64)], count: usize) -> Vec<(f64, f64)> {
    if points.is_empty() || count == 0 {
        return Vec::new();
    }
    if count == 1 {
        return vec![points[0]];
    }
    let fractions: Vec<f64> = (0..count).map(|i| i as f64 / (count - 1) as f64).collect();
    sample_at_fractions(points, &fractions)
}

/// Lays a sample out as `n` encoder tokens.
///
/// Strokes with more than [`POINTS_PER_TOKEN`] touches are resampled along
/// arc length, shorter ones are zero padded. Time stamps are dropped.
pub fn tokenize(
    sample: &ExpressionSample,
    n: usize,
    ablation: Option<GlyphSelector>,
) -> Result<TokenizedInput> {
    let skipped = match ablation {
        None => None,
        Some(sel) => Some(
            sel.resolve(sample)
                .ok_or_else(|| Error::MissingGlyph(format!("{sel:?}")))?,
        ),
    };
    let strokes: Vec<_> = sample
        .strokes
        .iter()
        .filter(|s| Some(s.glyph_id) != skipped)
        .collect();
    tokenize_strokes(&strokes, n)
}

/// Same layout as [`tokenize`] for strokes that carry no labels, e.g. ones
/// captured from a device and passed through [`normalize_strokes`].
///
/// [`normalize_strokes`]: super::normalize_strokes
pub fn tokenize_strokes(strokes: &[&Stroke], n: usize) -> Result<TokenizedInput> {
    let budget = n.saturating_sub(2);
    if strokes.len() > budget {
        return Err(Error::StrokeBudget {
            strokes: strokes.len(),
            budget,
        });
    }

    let mut data = vec![0.0f32; n * TOKEN_WIDTH];
    let mut mask = vec![false; n];
    let mut sources = vec![None; n];
    data[..TOKEN_WIDTH].fill(BOS_VALUE);
    mask[0] = true;
    for (row, stroke) in strokes.iter().enumerate() {
        let row = row + 1;
        let xy: Vec<(f64, f64)> = stroke.points.iter().map(|p| (p.x, p.y)).collect();
        let xy = if xy.len() > POINTS_PER_TOKEN {
            resample_arc_length(&xy, POINTS_PER_TOKEN)
        } else {
            xy
        };
        let out = &mut data[row * TOKEN_WIDTH..(row + 1) * TOKEN_WIDTH];
        for (i, (x, y)) in xy.into_iter().enumerate() {
            out[2 * i] = x as f32;
            out[2 * i + 1] = y as f32;
        }
        mask[row] = true;
        sources[row] = Some(stroke.glyph_id);
    }
    let eos = strokes.len() + 1;
    data[eos * TOKEN_WIDTH..(eos + 1) * TOKEN_WIDTH].fill(EOS_VALUE);
    mask[eos] = true;

    Ok(TokenizedInput {
        tokens: Tensor::new(vec![n, TOKEN_WIDTH], data)?,
        mask,
        n,
        sources,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse_infix;
    use crate::synth::{polyline_length, synth_expression, WriterStyle};
    use crate::vocab::tokens_from_str;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(text: &str, seed: u64) -> ExpressionSample {
        let tree = parse_infix(&tokens_from_str(text).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let style = WriterStyle::random(&mut rng);
        synth_expression(&tree, &style, 48, &mut rng).unwrap()
    }

    #[test]
    fn mask_counts_strokes_plus_markers() {
        let s = sample("12+3×4=", 0);
        let x = tokenize(&s, 24, None).unwrap();
        assert_eq!(x.valid_len(), s.strokes.len() + 2);
        assert!(x.mask[..s.strokes.len() + 2].iter().all(|&m| m));
        let row = |i: usize| &x.tokens.data()[i * TOKEN_WIDTH..(i + 1) * TOKEN_WIDTH];
        assert!(row(0).iter().all(|&v| v == BOS_VALUE));
        assert!(row(s.strokes.len() + 1).iter().all(|&v| v == EOS_VALUE));
        for i in s.strokes.len() + 2..24 {
            assert!(row(i).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn long_strokes_keep_their_length() {
        let points: Vec<(f64, f64)> = (0..100)
            .map(|i| {
                let a = i as f64 / 99.0 * 5.0;
                (0.5 + 0.3 * a.cos(), 0.5 + 0.3 * a.sin())
            })
            .collect();
        let resampled = resample_arc_length(&points, 64);
        assert_eq!(resampled.len(), 64);
        let before = polyline_length(points.iter().copied());
        let after = polyline_length(resampled.iter().copied());
        assert!((before - after).abs() / before < 0.02);
        assert_eq!(resampled[0], points[0]);
        let (a, b) = (resampled[63], points[99]);
        assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
    }

    #[test]
    fn equals_ablation() {
        let s = sample("4×6=", 1);
        let x = tokenize(&s, 24, Some(GlyphSelector::Last(Token::Equals))).unwrap();
        let kept: std::collections::BTreeSet<usize> = x.sources.iter().flatten().copied().collect();
        assert_eq!(kept.into_iter().collect::<Vec<_>>(), vec![0, 1, 2]);
        let equals_strokes = s.glyphs[3].stroke_indices.len();
        assert_eq!(x.stroke_count(), s.strokes.len() - equals_strokes);
        assert_eq!(x, tokenize(&s.without_glyph(3), 24, None).unwrap());
    }

    #[test]
    fn overflow_and_missing_glyph() {
        let s = sample("12+3×4=", 2);
        assert!(matches!(
            tokenize(&s, 4, None),
            Err(Error::StrokeBudget { .. })
        ));
        assert!(matches!(
            tokenize(&s, 24, Some(GlyphSelector::First(Token::RParen))),
            Err(Error::MissingGlyph(_))
        ));
    }
}
