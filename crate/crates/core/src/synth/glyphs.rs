use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{polyline_length, truncated_normal, Stroke, Touch, WriterStyle};
use crate::error::{Error, Result};
use crate::vocab::Token;

type Polyline = Vec<(f64, f64)>;

/// Touch sampling period of the emulated panel, in milliseconds.
const SAMPLE_MS: f64 = 10.0;
/// Largest distance from the cell centre a rendered point may have.
const CELL_RADIUS: f64 = 0.48;

fn line(points: &[(f64, f64)]) -> Polyline {
    points.to_vec()
}

/// Elliptic arc with y pointing down, so increasing angle turns clockwise
/// on screen. Angles in degrees.
fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64) -> Polyline {
    let steps = (((to - from).abs() / 12.0).ceil() as usize).max(2);
    (0..=steps)
        .map(|i| {
            let a = (from + (to - from) * i as f64 / steps as f64).to_radians();
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

fn join(mut a: Polyline, b: Polyline) -> Polyline {
    a.extend(b);
    a
}

/// Pen trajectories of a symbol inside the unit cell, one polyline per
/// stroke in writing order. `y` grows downwards.
pub fn template(symbol: Token) -> Result<Vec<Vec<(f64, f64)>>> {
    let strokes = match symbol {
        Token::Digit(0) => vec![arc(0.5, 0.5, 0.25, 0.38, 270.0, -100.0)],
        Token::Digit(1) => vec![line(&[(0.35, 0.25), (0.55, 0.1), (0.55, 0.9)])],
        Token::Digit(2) => vec![join(
            arc(0.5, 0.3, 0.22, 0.2, 180.0, 400.0),
            line(&[(0.25, 0.9), (0.78, 0.9)]),
        )],
        Token::Digit(3) => vec![join(
            arc(0.48, 0.3, 0.22, 0.2, 200.0, 450.0),
            arc(0.48, 0.7, 0.25, 0.2, -90.0, 160.0),
        )],
        Token::Digit(4) => vec![
            line(&[(0.6, 0.1), (0.22, 0.65), (0.8, 0.65)]),
            line(&[(0.62, 0.35), (0.62, 0.92)]),
        ],
        Token::Digit(5) => vec![
            join(
                line(&[(0.33, 0.1), (0.3, 0.45)]),
                arc(0.48, 0.66, 0.24, 0.22, -125.0, 150.0),
            ),
            line(&[(0.33, 0.1), (0.72, 0.1)]),
        ],
        Token::Digit(6) => vec![join(
            line(&[(0.66, 0.1), (0.45, 0.25), (0.32, 0.5)]),
            arc(0.5, 0.7, 0.19, 0.19, 180.0, -180.0),
        )],
        Token::Digit(7) => vec![line(&[(0.22, 0.12), (0.78, 0.12), (0.42, 0.9)])],
        Token::Digit(8) => {
            let steps = 40;
            vec![(0..=steps)
                .map(|i| {
                    let phi = 2.0 * PI * i as f64 / steps as f64;
                    (0.5 - 0.2 * (2.0 * phi).sin(), 0.5 - 0.4 * phi.cos())
                })
                .collect()]
        }
        Token::Digit(9) => vec![join(
            arc(0.5, 0.3, 0.2, 0.2, 0.0, -360.0),
            line(&[(0.68, 0.9)]),
        )],
        Token::Digit(_) => return Err(Error::UnknownSymbol(symbol.to_string())),
        Token::Plus => vec![
            line(&[(0.25, 0.5), (0.75, 0.5)]),
            line(&[(0.5, 0.25), (0.5, 0.75)]),
        ],
        Token::Minus => vec![line(&[(0.25, 0.5), (0.75, 0.5)])],
        Token::Times => vec![
            line(&[(0.28, 0.28), (0.72, 0.72)]),
            line(&[(0.72, 0.28), (0.28, 0.72)]),
        ],
        Token::Divide => vec![
            line(&[(0.25, 0.5), (0.75, 0.5)]),
            line(&[(0.49, 0.27), (0.51, 0.29)]),
            line(&[(0.49, 0.71), (0.51, 0.73)]),
        ],
        Token::Equals => vec![
            line(&[(0.25, 0.4), (0.75, 0.4)]),
            line(&[(0.25, 0.6), (0.75, 0.6)]),
        ],
        Token::LParen => vec![arc(0.75, 0.5, 0.35, 0.45, 240.0, 120.0)],
        Token::RParen => vec![arc(0.25, 0.5, 0.35, 0.45, -60.0, 60.0)],
        Token::Dot => vec![line(&[(0.48, 0.48), (0.52, 0.52)])],
        Token::Pad | Token::Bos | Token::Eos | Token::Eon => {
            return Err(Error::UnknownSymbol(symbol.to_string()))
        }
    };
    Ok(strokes)
}

/// Smooth per-writer warp of the template: fixed for a given writer and
/// symbol, so a writer's "4" looks the same in every sample.
fn deform(strokes: &mut [Polyline], symbol: Token, style: &WriterStyle) {
    if style.shape_jitter <= 0.0 {
        return;
    }
    let seed = style.profile_seed ^ (symbol.index() as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = [0.0; 4];
    for v in &mut c {
        *v = truncated_normal(&mut rng, 1.0) / 1.5;
    }
    let s = style.shape_jitter;
    for p in strokes.iter_mut().flatten() {
        let (x, y) = *p;
        p.0 = x + s * (c[0] * (PI * y).sin() + c[1] * (x - 0.5));
        p.1 = y + s * (c[2] * (PI * x).sin() + c[3] * (y - 0.5));
    }
}

/// Samples a polyline at the panel rate for a given writing speed. The
/// velocity profile blends constant speed with a bell shape.
fn timed_samples<R: Rng + ?Sized>(
    polyline: &[(f64, f64)],
    speed: f64,
    bell: f64,
    rng: &mut R,
) -> Vec<Touch> {
    let length = polyline_length(polyline.iter().copied());
    let duration = length / speed;
    let count = ((duration / SAMPLE_MS).round() as usize + 1).max(2);
    let mut times = Vec::with_capacity(count);
    let mut t = 0.0;
    times.push(t);
    for _ in 1..count {
        t += SAMPLE_MS * rng.gen_range(0.8..1.2);
        times.push(t);
    }
    let total = t;
    let fractions: Vec<f64> = times
        .iter()
        .map(|&t| {
            let tau = t / total;
            let bell_pos = tau - (2.0 * PI * tau).sin() / (2.0 * PI);
            (1.0 - bell) * tau + bell * bell_pos
        })
        .collect();
    let positions = sample_at_fractions(polyline, &fractions);
    positions
        .into_iter()
        .zip(times)
        .map(|((x, y), t)| Touch::new(x, y, t))
        .collect()
}

/// Points at the given fractions of the polyline's arc length.
pub(crate) fn sample_at_fractions(polyline: &[(f64, f64)], fractions: &[f64]) -> Vec<(f64, f64)> {
    let mut cumulative = Vec::with_capacity(polyline.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for w in polyline.windows(2) {
        acc += (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
        cumulative.push(acc);
    }
    let total = acc;
    if total <= 0.0 {
        return fractions.iter().map(|_| polyline[0]).collect();
    }
    let mut segment = 0;
    fractions
        .iter()
        .map(|&f| {
            let target = f.clamp(0.0, 1.0) * total;
            while segment + 2 < cumulative.len() && cumulative[segment + 1] < target {
                segment += 1;
            }
            // Fractions are normally sorted; fall back to a search otherwise.
            if cumulative[segment] > target {
                segment = cumulative.partition_point(|&c| c < target).saturating_sub(1);
            }
            let span = cumulative[segment + 1] - cumulative[segment];
            let u = if span > 0.0 {
                ((target - cumulative[segment]) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (a, b) = (polyline[segment], polyline[segment + 1]);
            (a.0 + u * (b.0 - a.0), a.1 + u * (b.1 - a.1))
        })
        .collect()
}

/// Renders one handwritten symbol inside the unit cell.
///
/// The template is warped by the writer's fixed deformation, shrunk by a
/// per-glyph scale, sheared by the slant, sampled in time at the writer's
/// speed and finally perturbed by touch noise. Strokes carry `glyph_id` 0.
pub fn synth_glyph<R: Rng + ?Sized>(
    symbol: Token,
    style: &WriterStyle,
    rng: &mut R,
) -> Result<Vec<Stroke>> {
    let mut strokes = template(symbol)?;
    deform(&mut strokes, symbol, style);

    let scale = 1.0 - rng.gen_range(0.0..=style.scale_jitter.max(0.0));
    let shear = style.slant.tan();
    for p in strokes.iter_mut().flatten() {
        let x = 0.5 + scale * (p.0 - 0.5);
        let y = 0.5 + scale * (p.1 - 0.5);
        *p = (x + (0.5 - y) * shear, y);
    }

    let (speed, bell) = style.speed_profile();
    let mut out: Vec<Vec<Touch>> = strokes
        .iter()
        .map(|poly| {
            let mut touches = timed_samples(poly, speed, bell, rng);
            for t in &mut touches {
                t.x += truncated_normal(rng, style.noise);
                t.y += truncated_normal(rng, style.noise);
            }
            touches
        })
        .collect();

    let reach = out
        .iter()
        .flatten()
        .map(|t| (t.x - 0.5).abs().max((t.y - 0.5).abs()))
        .fold(0.0, f64::max);
    if reach > CELL_RADIUS {
        let shrink = CELL_RADIUS / reach;
        for t in out.iter_mut().flatten() {
            t.x = 0.5 + shrink * (t.x - 0.5);
            t.y = 0.5 + shrink * (t.y - 0.5);
        }
    }

    Ok(out
        .into_iter()
        .map(|points| Stroke {
            points,
            glyph_id: 0,
        })
        .collect())
}
