//! Encoder-decoder Transformer over stroke tokens.
//!
//! The encoder reads real-valued stroke tokens plus a learnable index
//! embedding; the decoder emits vocabulary tokens auto-regressively. All
//! layers are post-norm: sublayer, residual add, layer norm.

mod attention;
mod checkpoint;
mod decode;
mod forward;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::LabelKind;
use crate::synth::TOKEN_WIDTH;
use crate::vocab::VOCAB_SIZE;

pub use attention::{export_attention, input_labels, AttentionReport};
pub use checkpoint::{tensor_digest, AdamState, Checkpoint, TrainState};
pub use decode::{greedy_decode, greedy_decode_batch, Decoded};
pub use forward::{decode, encode, teacher_forcing, Bound, DecoderOut, EncoderBatch, EncoderOut};
pub use params::{layout, ParamStore};
pub(crate) use params::is_encoder;

use rand::Rng;
use rpnformer_autograd::Scalar;

/// Layer-norm epsilon used everywhere.
pub const LN_EPS: f64 = 1e-5;

/// Decoder size the canonical layout is compared against.
pub const REFERENCE_DECODER_PARAMS: usize = 934_136;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Token width; also the model width.
    pub d_f: usize,
    /// Encoder feed-forward width; the decoder uses three times this.
    pub d_p: usize,
    pub enc_layers: usize,
    pub enc_heads: usize,
    pub dec_layers: usize,
    pub dec_heads: usize,
    /// Encoder length.
    pub n: usize,
    /// Decoder length, `n / 2`.
    pub m: usize,
    pub vocab_size: usize,
    /// Weight of the positional table added to the stroke tokens.
    pub alpha: f64,
    /// Rows of the encoder positional table.
    pub max_pos: usize,
    /// Output the decoder is trained to produce.
    #[serde(default)]
    pub label: LabelKind,
}

impl ModelConfig {
    fn base(dec_layers: usize, dec_heads: usize, n: usize, label: LabelKind) -> Self {
        Self {
            d_f: TOKEN_WIDTH,
            d_p: 128,
            enc_layers: 5,
            enc_heads: 4,
            dec_layers,
            dec_heads,
            n,
            m: n / 2,
            vocab_size: VOCAB_SIZE,
            alpha: 1.0,
            max_pos: 200,
            label,
        }
    }

    /// Named configurations: `v1`..`v5`, `v10`, `v11`.
    pub fn preset(name: &str) -> Result<Self> {
        let cfg = match name.to_ascii_lowercase().as_str() {
            "v1" => Self::base(2, 4, 24, LabelKind::Glyphs),
            "v2" | "v4" => Self::base(4, 4, 24, LabelKind::Glyphs),
            "v3" => Self::base(4, 2, 24, LabelKind::Glyphs),
            "v5" => Self::base(4, 4, 24, LabelKind::RpnNoEon),
            "v10" | "v11" => Self::base(4, 4, 48, LabelKind::Rpn),
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        Ok(cfg)
    }

    pub const PRESETS: [&'static str; 7] = ["v1", "v2", "v3", "v4", "v5", "v10", "v11"];

    pub fn enc_head_dim(&self) -> usize {
        self.d_f / self.enc_heads
    }

    pub fn dec_head_dim(&self) -> usize {
        self.d_f / self.dec_heads
    }

    pub fn dec_ffn(&self) -> usize {
        3 * self.d_p
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.d_f != TOKEN_WIDTH {
            return bad("d_f must equal the stroke token width (128)");
        }
        if self.enc_heads == 0 || self.d_f % self.enc_heads != 0 {
            return bad("enc_heads must divide d_f");
        }
        if self.dec_heads == 0 || self.d_f % self.dec_heads != 0 {
            return bad("dec_heads must divide d_f");
        }
        if self.n != 2 * self.m {
            return bad("n must equal 2 m");
        }
        if self.m < 2 {
            return bad("m must be at least 2");
        }
        if self.n > self.max_pos {
            return bad("n exceeds max_pos");
        }
        if self.vocab_size != VOCAB_SIZE {
            return bad("vocab_size must match the token table (22)");
        }
        if self.enc_layers == 0 || self.dec_layers == 0 || self.d_p == 0 {
            return bad("layer counts and d_p must be positive");
        }
        if !self.alpha.is_finite() {
            return bad("alpha must be finite");
        }
        Ok(())
    }
}

/// A configuration with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&config, rng);
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        params.check_layout(&config)?;
        Ok(Self { config, params })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub encoder_layer: usize,
    pub encoder_positional: usize,
    pub encoder: usize,
    pub decoder_layer: usize,
    pub decoder_embedding: usize,
    pub decoder_positional: usize,
    pub decoder_output: usize,
    pub decoder: usize,
    pub total: usize,
    /// `decoder - REFERENCE_DECODER_PARAMS`.
    pub decoder_delta: i64,
}

/// Parameter counts of the canonical layout, per component.
pub fn count_params(config: &ModelConfig) -> ParamCounts {
    let mut c = ParamCounts {
        encoder_layer: 0,
        encoder_positional: 0,
        encoder: 0,
        decoder_layer: 0,
        decoder_embedding: 0,
        decoder_positional: 0,
        decoder_output: 0,
        decoder: 0,
        total: 0,
        decoder_delta: 0,
    };
    for (name, shape) in layout(config) {
        let size: usize = shape.iter().product();
        if name.starts_with("enc.") {
            c.encoder += size;
        } else {
            c.decoder += size;
        }
        match name.as_str() {
            "enc.pos" => c.encoder_positional = size,
            "dec.embed" => c.decoder_embedding = size,
            "dec.pos" => c.decoder_positional = size,
            "dec.out.w" | "dec.out.b" => c.decoder_output += size,
            _ if name.starts_with("enc.0.") => c.encoder_layer += size,
            _ if name.starts_with("dec.0.") => c.decoder_layer += size,
            _ => {}
        }
    }
    c.total = c.encoder + c.decoder;
    c.decoder_delta = c.decoder as i64 - REFERENCE_DECODER_PARAMS as i64;
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for name in ModelConfig::PRESETS {
            ModelConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(ModelConfig::preset("v6").is_err());
        let v4 = ModelConfig::preset("V4").unwrap();
        assert_eq!((v4.enc_layers, v4.enc_heads, v4.dec_layers, v4.dec_heads, v4.n), (5, 4, 4, 4, 24));
    }

    #[test]
    fn head_count_does_not_change_size() {
        let a = ModelConfig::preset("v2").unwrap();
        let b = ModelConfig::preset("v3").unwrap();
        assert_eq!(count_params(&a), count_params(&b));
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::preset("v1").unwrap();
        c.enc_heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::preset("v1").unwrap();
        c.m = 11;
        assert!(c.validate().is_err());
    }
}
