use rand::Rng;

use super::{synth_glyph, truncated_normal, ExpressionSample, Glyph, Split, Stroke, WriterStyle};
use crate::error::{Error, Result};
use crate::grammar::{to_infix, to_rpn, ExprTree, ValueLabel};
use crate::vocab::{render, Token};

/// Width, height and top offset of a symbol's cell relative to a line of
/// height 1.
fn cell_box(symbol: Token) -> (f64, f64, f64) {
    match symbol {
        Token::Digit(_) => (0.6, 1.0, 0.0),
        Token::Dot => (0.25, 0.25, 0.75),
        Token::LParen | Token::RParen => (0.4, 1.1, -0.05),
        _ => (0.6, 0.6, 0.2),
    }
}

const GAP: f64 = 0.12;
const BASELINE_SIGMA: f64 = 0.03;

fn quantize(v: f64, scale: f64) -> f64 {
    (v * scale).round() / scale
}

/// Shifts and scales strokes so the longest side of their joint bounding
/// box is 1, keeping the aspect ratio. Coordinates are rounded to six
/// decimals and times to microseconds.
pub fn normalize_strokes(strokes: &mut [Stroke]) {
    let points = || strokes.iter().flat_map(|s| s.points.iter());
    let min_x = points().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let max_x = points().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = points().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let max_y = points().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let extent = (max_x - min_x).max(max_y - min_y).max(f64::EPSILON);
    for p in strokes.iter_mut().flat_map(|s| s.points.iter_mut()) {
        p.x = quantize((p.x - min_x) / extent, 1e6).clamp(0.0, 1.0);
        p.y = quantize((p.y - min_y) / extent, 1e6).clamp(0.0, 1.0);
        p.t = quantize(p.t, 1e3);
    }
}

/// Writes an expression left to right and attaches its three labels.
///
/// Coordinates are normalized jointly over the expression (aspect ratio
/// kept, longest side 1) and rounded to six decimals; times to
/// microseconds. More than `n - 2` strokes is an error, the caller is
/// expected to draw a smaller expression.
pub fn synth_expression<R: Rng + ?Sized>(
    tree: &ExprTree,
    style: &WriterStyle,
    n: usize,
    rng: &mut R,
) -> Result<ExpressionSample> {
    let value = ValueLabel::new(&tree.evaluate()?);
    let symbols = to_infix(tree);
    let budget = n.saturating_sub(2);

    let mut strokes: Vec<Stroke> = Vec::new();
    let mut glyphs = Vec::with_capacity(symbols.len());
    let mut cursor = 0.0;
    for (glyph_id, &symbol) in symbols.iter().enumerate() {
        let (w, h, top) = cell_box(symbol);
        let top = top + truncated_normal(rng, BASELINE_SIGMA);
        let mut indices = Vec::new();
        for mut stroke in synth_glyph(symbol, style, rng)? {
            for p in &mut stroke.points {
                p.x = cursor + p.x * w;
                p.y = top + p.y * h;
            }
            stroke.glyph_id = glyph_id;
            indices.push(strokes.len());
            strokes.push(stroke);
        }
        glyphs.push(Glyph {
            symbol,
            stroke_indices: indices,
        });
        cursor += w + GAP * style.spacing * rng.gen_range(0.7..1.3);
    }
    if strokes.len() > budget {
        return Err(Error::StrokeBudget {
            strokes: strokes.len(),
            budget,
        });
    }

    normalize_strokes(&mut strokes);

    debug_assert_eq!(crate::grammar::parse_infix(&symbols).as_ref().ok(), Some(tree));
    Ok(ExpressionSample {
        strokes,
        glyphs,
        ascii: render(&symbols),
        rpn: to_rpn(tree),
        value,
        writer_id: 0,
        split: Split::Train,
    })
}
