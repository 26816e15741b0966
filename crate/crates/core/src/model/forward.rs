use rpnformer_autograd::{Scalar, Tape, Tensor, Var};

use super::{ModelConfig, ParamStore, LN_EPS};
use crate::error::{Error, Result};
use crate::synth::{TokenizedInput, TOKEN_WIDTH};
use crate::vocab::Token;

/// Tape variables for every parameter of a store.
pub struct Bound<'s, T> {
    store: &'s ParamStore<T>,
    vars: Vec<Var>,
}

impl<'s, T: Scalar> Bound<'s, T> {
    /// Pairs tape variables with a store's names; `vars[i]` stands for the
    /// store's `i`-th tensor.
    pub fn new(store: &'s ParamStore<T>, vars: Vec<Var>) -> Self {
        assert_eq!(store.len(), vars.len(), "one variable per parameter");
        Self { store, vars }
    }

    pub fn get(&self, name: &str) -> Var {
        let i = self
            .store
            .position(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from layout"));
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Stroke tokens of several samples, trimmed to the longest valid length.
#[derive(Clone, Debug)]
pub struct EncoderBatch<T> {
    /// `[batch, len, d_f]`.
    pub x: Tensor<T>,
    /// `batch * len` validity flags.
    pub mask: Vec<bool>,
    pub batch: usize,
    pub len: usize,
}

impl<T: Scalar> EncoderBatch<T> {
    pub fn new(inputs: &[&TokenizedInput]) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Empty("encoder batch"));
        }
        let len = inputs.iter().map(|x| x.valid_len()).max().unwrap_or(0);
        Self::with_len(inputs, len)
    }

    /// Keeps exactly `len` positions per sample; positions past a sample's
    /// valid span are masked.
    pub fn with_len(inputs: &[&TokenizedInput], len: usize) -> Result<Self> {
        let batch = inputs.len();
        let mut data = vec![T::zero(); batch * len * TOKEN_WIDTH];
        let mut mask = vec![false; batch * len];
        for (b, input) in inputs.iter().enumerate() {
            let valid = input.valid_len();
            if valid > len || len > input.n {
                return Err(Error::Config(format!(
                    "batch length {len} cannot hold {valid} tokens of an n = {} input",
                    input.n
                )));
            }
            let src = &input.tokens.data()[..len * TOKEN_WIDTH];
            let dst = &mut data[b * len * TOKEN_WIDTH..(b + 1) * len * TOKEN_WIDTH];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = T::from_f64_lossy(f64::from(s));
            }
            mask[b * len..(b + 1) * len].copy_from_slice(&input.mask[..len]);
        }
        Ok(Self {
            x: Tensor::new([batch, len, TOKEN_WIDTH], data)?,
            mask,
            batch,
            len,
        })
    }
}

pub struct EncoderOut {
    /// `[batch * len, d_f]`.
    pub z: Var,
    pub mask: Vec<bool>,
    pub batch: usize,
    pub len: usize,
    /// Per layer `[batch * heads, len, len]`.
    pub self_attn: Vec<Var>,
}

pub struct DecoderOut {
    /// `[batch * len, vocab]`.
    pub logits: Var,
    pub batch: usize,
    pub len: usize,
    /// Per layer `[batch * heads, len, len]`.
    pub self_attn: Vec<Var>,
    /// Per layer `[batch * heads, len, enc_len]`.
    pub cross_attn: Vec<Var>,
}

fn linear<T: Scalar>(tape: &mut Tape<T>, p: &Bound<T>, prefix: &str, x: Var) -> Result<Var> {
    let y = tape.matmul(x, p.get(&format!("{prefix}.w")))?;
    Ok(tape.add_broadcast(y, p.get(&format!("{prefix}.b")))?)
}

fn norm<T: Scalar>(tape: &mut Tape<T>, p: &Bound<T>, prefix: &str, x: Var) -> Result<Var> {
    Ok(tape.layer_norm(
        x,
        p.get(&format!("{prefix}.g")),
        p.get(&format!("{prefix}.b")),
        T::from_f64_lossy(LN_EPS),
    )?)
}

/// `[b * len, d] -> [b * heads, len, d / heads]`
fn split_heads<T: Scalar>(tape: &mut Tape<T>, x: Var, b: usize, len: usize, heads: usize) -> Result<Var> {
    let d = tape.shape(x)[1];
    let x = tape.reshape(x, &[b, len, heads, d / heads])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    Ok(tape.reshape(x, &[b * heads, len, d / heads])?)
}

/// Inverse of [`split_heads`].
fn merge_heads<T: Scalar>(tape: &mut Tape<T>, x: Var, b: usize, len: usize, heads: usize) -> Result<Var> {
    let dh = tape.shape(x)[2];
    let x = tape.reshape(x, &[b, heads, len, dh])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    Ok(tape.reshape(x, &[b * len, heads * dh])?)
}

/// Score validity for `[b * heads, lq, lk]`: key must be valid and, when
/// causal, not after the query.
fn score_mask(key_mask: &[bool], b: usize, heads: usize, lq: usize, lk: usize, causal: bool) -> Vec<bool> {
    let mut valid = Vec::with_capacity(b * heads * lq * lk);
    for bi in 0..b {
        let keys = &key_mask[bi * lk..(bi + 1) * lk];
        for _ in 0..heads {
            for i in 0..lq {
                valid.extend(keys.iter().enumerate().map(|(j, &k)| k && (!causal || j <= i)));
            }
        }
    }
    valid
}

#[allow(clippy::too_many_arguments)]
fn attention<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound<T>,
    prefix: &str,
    query: Var,
    memory: Var,
    b: usize,
    lq: usize,
    lk: usize,
    heads: usize,
    valid: &[bool],
) -> Result<(Var, Var)> {
    let d = tape.shape(query)[1];
    let q = linear(tape, p, &format!("{prefix}.q"), query)?;
    let k = linear(tape, p, &format!("{prefix}.k"), memory)?;
    let v = linear(tape, p, &format!("{prefix}.v"), memory)?;
    let q = split_heads(tape, q, b, lq, heads)?;
    let k = split_heads(tape, k, b, lk, heads)?;
    let v = split_heads(tape, v, b, lk, heads)?;
    let scores = tape.batch_matmul(q, k, true)?;
    let scores = tape.scale(scores, T::from_f64_lossy(1.0 / ((d / heads) as f64).sqrt()));
    let weights = tape.masked_softmax(scores, valid)?;
    let ctx = tape.batch_matmul(weights, v, false)?;
    let ctx = merge_heads(tape, ctx, b, lq, heads)?;
    Ok((linear(tape, p, &format!("{prefix}.o"), ctx)?, weights))
}

fn feed_forward<T: Scalar>(tape: &mut Tape<T>, p: &Bound<T>, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(tape, p, &format!("{prefix}.ffn1"), x)?;
    let h = tape.relu(h);
    linear(tape, p, &format!("{prefix}.ffn2"), h)
}

/// Encoder pass over `X + alpha * P`.
pub fn encode<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound<T>,
    config: &ModelConfig,
    batch: &EncoderBatch<T>,
) -> Result<EncoderOut> {
    let (b, len, d) = (batch.batch, batch.len, config.d_f);
    if len > config.n {
        return Err(Error::Config(format!(
            "encoder input of {len} tokens exceeds n = {}",
            config.n
        )));
    }
    let x = tape.constant(batch.x.clone());
    let pos = tape.slice(p.get("enc.pos"), 0, 0, len)?;
    let pos = tape.scale(pos, T::from_f64_lossy(config.alpha));
    let x = tape.add_broadcast(x, pos)?;
    let mut h = tape.reshape(x, &[b * len, d])?;
    let valid = score_mask(&batch.mask, b, config.enc_heads, len, len, false);
    let mut self_attn = Vec::with_capacity(config.enc_layers);
    for i in 0..config.enc_layers {
        let prefix = format!("enc.{i}");
        let (a, w) = attention(
            tape,
            p,
            &format!("{prefix}.attn"),
            h,
            h,
            b,
            len,
            len,
            config.enc_heads,
            &valid,
        )?;
        self_attn.push(w);
        let r = tape.add(h, a)?;
        h = norm(tape, p, &format!("{prefix}.ln1"), r)?;
        let f = feed_forward(tape, p, &prefix, h)?;
        let r = tape.add(h, f)?;
        h = norm(tape, p, &format!("{prefix}.ln2"), r)?;
    }
    Ok(EncoderOut {
        z: h,
        mask: batch.mask.clone(),
        batch: b,
        len,
        self_attn,
    })
}

/// Teacher-forced decoder pass. `inputs` holds `batch * len` token
/// indices, each row starting with `bos`; `pad` entries are masked keys.
pub fn decode<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound<T>,
    config: &ModelConfig,
    enc: &EncoderOut,
    inputs: &[usize],
    len: usize,
) -> Result<DecoderOut> {
    let (b, d) = (enc.batch, config.d_f);
    if inputs.len() != b * len {
        return Err(Error::Config(format!(
            "{} decoder inputs for {b} rows of {len}",
            inputs.len()
        )));
    }
    if len == 0 || len > config.m {
        return Err(Error::LabelBudget { len, max: config.m });
    }
    if let Some(&bad) = inputs.iter().find(|&&i| i >= config.vocab_size) {
        return Err(Error::UnknownSymbol(format!("token index {bad}")));
    }
    let emb = tape.embedding(p.get("dec.embed"), inputs)?;
    let emb = tape.reshape(emb, &[b, len, d])?;
    let pos = tape.slice(p.get("dec.pos"), 0, 0, len)?;
    let x = tape.add_broadcast(emb, pos)?;
    let mut h = tape.reshape(x, &[b * len, d])?;

    let key_mask: Vec<bool> = inputs.iter().map(|&t| t != Token::Pad.index()).collect();
    let self_valid = score_mask(&key_mask, b, config.dec_heads, len, len, true);
    let cross_valid = score_mask(&enc.mask, b, config.dec_heads, len, enc.len, false);
    let mut self_attn = Vec::with_capacity(config.dec_layers);
    let mut cross_attn = Vec::with_capacity(config.dec_layers);
    for i in 0..config.dec_layers {
        let prefix = format!("dec.{i}");
        let (a, w) = attention(
            tape,
            p,
            &format!("{prefix}.self"),
            h,
            h,
            b,
            len,
            len,
            config.dec_heads,
            &self_valid,
        )?;
        self_attn.push(w);
        let r = tape.add(h, a)?;
        h = norm(tape, p, &format!("{prefix}.ln1"), r)?;
        let (a, w) = attention(
            tape,
            p,
            &format!("{prefix}.cross"),
            h,
            enc.z,
            b,
            len,
            enc.len,
            config.dec_heads,
            &cross_valid,
        )?;
        cross_attn.push(w);
        let r = tape.add(h, a)?;
        h = norm(tape, p, &format!("{prefix}.ln2"), r)?;
        let f = feed_forward(tape, p, &prefix, h)?;
        let r = tape.add(h, f)?;
        h = norm(tape, p, &format!("{prefix}.ln3"), r)?;
    }
    let logits = linear(tape, p, "dec.out", h)?;
    Ok(DecoderOut {
        logits,
        batch: b,
        len,
        self_attn,
        cross_attn,
    })
}

/// Teacher-forcing inputs and targets for label sequences (`bos .. eos`),
/// padded to the longest label minus one.
pub fn teacher_forcing(labels: &[&[Token]]) -> (Vec<usize>, Vec<usize>, usize) {
    let len = labels.iter().map(|l| l.len().saturating_sub(1)).max().unwrap_or(0).max(1);
    let pad = Token::Pad.index();
    let mut inputs = vec![pad; labels.len() * len];
    let mut targets = vec![pad; labels.len() * len];
    for (b, label) in labels.iter().enumerate() {
        for (i, w) in label.windows(2).enumerate() {
            inputs[b * len + i] = w[0].index();
            targets[b * len + i] = w[1].index();
        }
        if label.len() == 1 {
            inputs[b * len] = label[0].index();
        }
    }
    (inputs, targets, len)
}
