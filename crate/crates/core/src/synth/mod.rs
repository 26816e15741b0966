//! Procedural online handwriting: glyph templates, writer styles,
//! expression layout, stroke tokenization and dataset files.

mod dataset;
mod glyphs;
mod layout;
mod tokenize;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grammar::{parse_infix, ExprTree, ValueLabel};
use crate::vocab::Token;

pub use dataset::{
    make_dataset, Dataset, DatasetConfig, Manifest, SplitCounts, MANIFEST_FILE, SAMPLES_FILE,
};
pub use glyphs::{synth_glyph, template};
pub use layout::{normalize_strokes, synth_expression};
pub use tokenize::{
    resample_arc_length, tokenize, tokenize_strokes, GlyphSelector, TokenizedInput, BOS_VALUE, EOS_VALUE,
    POINTS_PER_TOKEN, TOKEN_WIDTH,
};

/// One sample of a finger or stylus on the panel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Touch {
    pub x: f64,
    pub y: f64,
    /// Milliseconds since the stroke started.
    pub t: f64,
}

impl Touch {
    pub fn new(x: f64, y: f64, t: f64) -> Self {
        Self { x, y, t }
    }
}

/// Touches between pen-down and pen-up.
#[derive(Clone, Debug, PartialEq)]
pub struct Stroke {
    pub points: Vec<Touch>,
    /// Index into the owning sample's glyph list.
    pub glyph_id: usize,
}

impl Stroke {
    pub fn length(&self) -> f64 {
        polyline_length(self.points.iter().map(|p| (p.x, p.y)))
    }
}

pub(crate) fn polyline_length(points: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let mut total = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for p in points {
        if let Some(q) = prev {
            total += (p.0 - q.0).hypot(p.1 - q.1);
        }
        prev = Some(p);
    }
    total
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Glyph {
    pub symbol: Token,
    pub stroke_indices: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl std::str::FromStr for Split {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(crate::Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// A handwritten expression with its three ground truths.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionSample {
    /// Writing order.
    pub strokes: Vec<Stroke>,
    /// Written symbols in order, `=` last.
    pub glyphs: Vec<Glyph>,
    pub ascii: String,
    pub rpn: Vec<Token>,
    pub value: ValueLabel,
    pub writer_id: u32,
    pub split: Split,
}

impl ExpressionSample {
    pub fn glyph_tokens(&self) -> Vec<Token> {
        self.glyphs.iter().map(|g| g.symbol).collect()
    }

    /// Recovers the expression tree from the written glyphs.
    pub fn tree(&self) -> Result<ExprTree> {
        parse_infix(&self.glyph_tokens())
    }

    /// The same sample with one glyph's strokes elided. Labels are kept.
    pub fn without_glyph(&self, glyph: usize) -> ExpressionSample {
        let mut out = self.clone();
        let mut remap = Vec::with_capacity(self.strokes.len());
        out.strokes.clear();
        for s in &self.strokes {
            if s.glyph_id == glyph {
                remap.push(None);
            } else {
                remap.push(Some(out.strokes.len()));
                out.strokes.push(s.clone());
            }
        }
        for (i, g) in out.glyphs.iter_mut().enumerate() {
            g.stroke_indices = if i == glyph {
                Vec::new()
            } else {
                g.stroke_indices.iter().filter_map(|&s| remap[s]).collect()
            };
        }
        out
    }
}

/// Per-writer handwriting parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WriterStyle {
    /// Shear angle in radians, positive leans right.
    pub slant: f64,
    /// Spread of the per-glyph scale around 1 (glyphs shrink by up to this fraction).
    pub scale_jitter: f64,
    /// Multiplier on the gap between neighbouring glyphs.
    pub spacing: f64,
    /// Standard deviation of per-touch positional noise, in cell units.
    pub noise: f64,
    /// Standard deviation of the writer's fixed template deformation.
    pub shape_jitter: f64,
    /// Seeds the writer's speed profile and personal glyph deformations.
    pub profile_seed: u64,
}

impl WriterStyle {
    pub const MAX_SLANT: f64 = 0.15;
    pub const MAX_SCALE_JITTER: f64 = 0.15;
    pub const MAX_NOISE: f64 = 0.008;
    pub const MAX_SHAPE_JITTER: f64 = 0.03;

    /// Undistorted writing: glyphs come out as their templates.
    pub fn identity() -> Self {
        Self {
            slant: 0.0,
            scale_jitter: 0.0,
            spacing: 1.0,
            noise: 0.0,
            shape_jitter: 0.0,
            profile_seed: 0,
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            slant: rng.gen_range(-Self::MAX_SLANT..=Self::MAX_SLANT),
            scale_jitter: rng.gen_range(0.0..=Self::MAX_SCALE_JITTER),
            spacing: rng.gen_range(0.6..=1.6),
            noise: rng.gen_range(0.0..=Self::MAX_NOISE),
            shape_jitter: rng.gen_range(0.0..=Self::MAX_SHAPE_JITTER),
            profile_seed: rng.gen(),
        }
    }

    /// Speed in cell units per millisecond and the bell-shape blend of the
    /// velocity profile, both fixed per writer.
    pub(crate) fn speed_profile(&self) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.profile_seed);
        let speed = rng.gen_range(0.003..0.008);
        let bell = rng.gen_range(0.0..0.8);
        (speed, bell)
    }
}

/// Normal noise truncated at three standard deviations.
pub(crate) fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    normal.sample(rng).clamp(-3.0 * sigma, 3.0 * sigma)
}
