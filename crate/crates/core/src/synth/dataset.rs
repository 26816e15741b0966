use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use super::{synth_expression, ExpressionSample, Glyph, Split, Stroke, Touch, WriterStyle};
use crate::error::{Error, Result};
use crate::grammar::{generate, parse_infix, to_rpn, GenConfig, LabelKind, ValueLabel};
use crate::vocab::{render, Token};

pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Draws per sample before giving up on a configuration.
const MAX_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub count: usize,
    pub gen: GenConfig,
    /// Encoder length; samples keep at most `n - 2` strokes.
    pub n: usize,
    pub seed: u64,
    /// Label that must fit the decoder length `n / 2`.
    #[serde(default)]
    pub label: LabelKind,
    /// Number of writers, a multiple of 5. Derived from `count` when absent.
    #[serde(default)]
    pub writers: Option<usize>,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        if self.count < 10 {
            return Err(Error::Config("a dataset needs at least 10 samples".into()));
        }
        if self.n < 4 {
            return Err(Error::Config("n must be at least 4".into()));
        }
        if let Some(w) = self.writers {
            if w == 0 || w % 5 != 0 || w > self.count {
                return Err(Error::Config(
                    "writers must be a positive multiple of 5 not above count".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn writer_count(&self) -> usize {
        self.writers.unwrap_or_else(|| {
            let w = (self.count / 50).clamp(5, 500);
            (w / 5 * 5).min(self.count / 5 * 5).max(5)
        })
    }

    pub fn max_label_len(&self) -> usize {
        self.n / 2
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    fn bump(&mut self, split: Split) {
        match split {
            Split::Train => self.train += 1,
            Split::Val => self.val += 1,
            Split::Test => self.test += 1,
        }
    }

    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: DatasetConfig,
    pub samples: SplitCounts,
    pub writers: SplitCounts,
    /// SHA-256 of the samples file.
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub samples: Vec<ExpressionSample>,
}

/// Generates a synthetic corpus.
///
/// Writers get a style and a split (60/20/20 of the writers) before any
/// sample exists; samples are then spread evenly over writers. Expressions
/// whose strokes or label exceed the budgets are redrawn.
pub fn make_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let writers = config.writer_count();

    let styles: Vec<WriterStyle> = (0..writers).map(|_| WriterStyle::random(&mut rng)).collect();
    let mut order: Vec<usize> = (0..writers).collect();
    order.shuffle(&mut rng);
    let mut splits = vec![Split::Train; writers];
    for (rank, &w) in order.iter().enumerate() {
        splits[w] = if rank < writers * 3 / 5 {
            Split::Train
        } else if rank < writers * 4 / 5 {
            Split::Val
        } else {
            Split::Test
        };
    }

    let base = config.count / writers;
    let extra = config.count % writers;
    let mut samples = Vec::with_capacity(config.count);
    for (w, style) in styles.iter().enumerate() {
        let quota = base + usize::from(w < extra);
        for _ in 0..quota {
            let mut sample = draw_sample(config, style, &mut rng)?;
            sample.writer_id = w as u32;
            sample.split = splits[w];
            samples.push(sample);
        }
    }
    Ok(Dataset {
        config: config.clone(),
        samples,
    })
}

fn draw_sample(
    config: &DatasetConfig,
    style: &WriterStyle,
    rng: &mut ChaCha8Rng,
) -> Result<ExpressionSample> {
    for _ in 0..MAX_ATTEMPTS {
        let tree = generate(&config.gen, rng);
        if config.label.label(&tree).len() > config.max_label_len() {
            continue;
        }
        match synth_expression(&tree, style, config.n, rng) {
            Ok(sample) => return Ok(sample),
            Err(Error::StrokeBudget { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Config(format!(
        "no expression fits n = {} after {MAX_ATTEMPTS} draws",
        config.n
    )))
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ExpressionSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn counts(&self) -> SplitCounts {
        let mut c = SplitCounts::default();
        for s in &self.samples {
            c.bump(s.split);
        }
        c
    }

    pub fn writer_counts(&self) -> SplitCounts {
        let mut seen = std::collections::BTreeMap::new();
        for s in &self.samples {
            seen.insert(s.writer_id, s.split);
        }
        let mut c = SplitCounts::default();
        for split in seen.into_values() {
            c.bump(split);
        }
        c
    }

    /// Line-delimited records with a fixed field order.
    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for sample in &self.samples {
            out.extend_from_slice(record_json(sample)?.as_bytes());
            out.push(b'\n');
        }
        Ok(out)
    }

    pub fn manifest(&self, jsonl: &[u8]) -> Manifest {
        Manifest {
            seed: self.config.seed,
            config: self.config.clone(),
            samples: self.counts(),
            writers: self.writer_counts(),
            sha256: hex::encode(Sha256::digest(jsonl)),
        }
    }

    /// Writes `samples.jsonl` and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<Manifest> {
        fs::create_dir_all(dir)?;
        let jsonl = self.to_jsonl()?;
        let manifest = self.manifest(&jsonl);
        fs::write(dir.join(SAMPLES_FILE), &jsonl)?;
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(manifest)
    }

    /// Reads a dataset directory and checks it against its manifest.
    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        let jsonl = fs::read(dir.join(SAMPLES_FILE))?;
        let digest = hex::encode(Sha256::digest(&jsonl));
        if digest != manifest.sha256 {
            return Err(Error::Data(format!(
                "samples hash {digest} does not match manifest {}",
                manifest.sha256
            )));
        }
        let text = std::str::from_utf8(&jsonl).map_err(|e| Error::Data(e.to_string()))?;
        let samples = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| parse_record(l).map_err(|e| Error::Data(format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        let dataset = Dataset {
            config: manifest.config,
            samples,
        };
        if dataset.counts() != manifest.samples {
            return Err(Error::Data("split counts differ from manifest".into()));
        }
        Ok(dataset)
    }
}

#[derive(Serialize)]
struct RecordOut<'a> {
    writer_id: u32,
    split: Split,
    strokes: Box<RawValue>,
    glyphs: &'a [Glyph],
    ascii: &'a str,
    rpn: &'a [Token],
    value: &'a ValueLabel,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    writer_id: u32,
    split: Split,
    strokes: Vec<Vec<[f64; 3]>>,
    glyphs: Vec<Glyph>,
    ascii: String,
    rpn: Vec<Token>,
    value: ValueLabel,
}

fn strokes_json(strokes: &[Stroke]) -> String {
    let mut s = String::from("[");
    for (i, stroke) in strokes.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push('[');
        for (j, p) in stroke.points.iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            let _ = write!(s, "[{:.6},{:.6},{:.6}]", p.x, p.y, p.t);
        }
        s.push(']');
    }
    s.push(']');
    s
}

pub(crate) fn record_json(sample: &ExpressionSample) -> Result<String> {
    let record = RecordOut {
        writer_id: sample.writer_id,
        split: sample.split,
        strokes: RawValue::from_string(strokes_json(&sample.strokes))?,
        glyphs: &sample.glyphs,
        ascii: &sample.ascii,
        rpn: &sample.rpn,
        value: &sample.value,
    };
    Ok(serde_json::to_string(&record)?)
}

pub(crate) fn parse_record(line: &str) -> Result<ExpressionSample> {
    let r: RecordIn = serde_json::from_str(line)?;
    let mut owner = vec![None; r.strokes.len()];
    for (g, glyph) in r.glyphs.iter().enumerate() {
        for &s in &glyph.stroke_indices {
            match owner.get_mut(s) {
                Some(slot @ None) => *slot = Some(g),
                Some(Some(_)) => return Err(Error::Data(format!("stroke {s} has two glyphs"))),
                None => return Err(Error::Data(format!("stroke index {s} out of range"))),
            }
        }
    }
    let mut strokes = Vec::with_capacity(r.strokes.len());
    for (i, points) in r.strokes.into_iter().enumerate() {
        let glyph_id = owner[i].ok_or_else(|| Error::Data(format!("stroke {i} has no glyph")))?;
        if points.len() < 2 {
            return Err(Error::Data(format!("stroke {i} has fewer than 2 points")));
        }
        strokes.push(Stroke {
            points: points.into_iter().map(|[x, y, t]| Touch::new(x, y, t)).collect(),
            glyph_id,
        });
    }
    let symbols: Vec<Token> = r.glyphs.iter().map(|g| g.symbol).collect();
    let tree = parse_infix(&symbols)?;
    if r.ascii != render(&symbols) || r.rpn != to_rpn(&tree) {
        return Err(Error::Data("labels disagree with the glyph sequence".into()));
    }
    Ok(ExpressionSample {
        strokes,
        glyphs: r.glyphs,
        ascii: r.ascii,
        rpn: r.rpn,
        value: r.value,
        writer_id: r.writer_id,
        split: r.split,
    })
}
