use rpnformer_autograd::{argmax, Scalar, Tape, Tensor};

use super::forward::{decode, encode, EncoderBatch, EncoderOut};
use super::Model;
use crate::error::Result;
use crate::synth::TokenizedInput;
use crate::vocab::Token;

/// Greedy decoder output for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// `bos` followed by the generated tokens, `eos` last unless the length
    /// limit was hit first.
    pub tokens: Vec<Token>,
    /// Cross-attention `[layers, heads, generated, encoder tokens]`, where
    /// row `i` is the step that produced `tokens[i + 1]` and columns cover
    /// the valid encoder positions. Empty unless requested.
    pub cross_attention: Option<Tensor<f32>>,
}

impl Decoded {
    /// Tokens without `bos`/`eos`.
    pub fn body(&self) -> Vec<Token> {
        crate::vocab::strip_special(&self.tokens)
    }
}

pub fn greedy_decode<T: Scalar>(
    model: &Model<T>,
    input: &TokenizedInput,
    with_attention: bool,
) -> Result<Decoded> {
    Ok(greedy_decode_batch(model, &[input], with_attention)?.remove(0))
}

/// Auto-regressive argmax decoding from `bos`, stopping at `eos` or after
/// `m` tokens in total. Ties go to the lowest index and `pad` is never
/// chosen.
pub fn greedy_decode_batch<T: Scalar>(
    model: &Model<T>,
    inputs: &[&TokenizedInput],
    with_attention: bool,
) -> Result<Vec<Decoded>> {
    let config = &model.config;
    let batch = EncoderBatch::<T>::new(inputs)?;
    let b = batch.batch;
    let (z, mask, enc_len) = {
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape, |_| false);
        let enc = encode(&mut tape, &p, config, &batch)?;
        (tape.value(enc.z).clone(), enc.mask, enc.len)
    };

    let pad = Token::Pad.index();
    let eos = Token::Eos.index();
    let mut seqs: Vec<Vec<usize>> = vec![vec![Token::Bos.index()]; b];
    let mut done = vec![false; b];
    let mut generated = vec![0usize; b];

    let run = |seqs: &[Vec<usize>], len: usize| -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape, |_| false);
        let enc = EncoderOut {
            z: tape.constant(z.clone()),
            mask: mask.clone(),
            batch: b,
            len: enc_len,
            self_attn: Vec::new(),
        };
        let flat: Vec<usize> = seqs.iter().flat_map(|s| s[..len].iter().copied()).collect();
        let out = decode(&mut tape, &p, config, &enc, &flat, len)?;
        let cross = out.cross_attn.iter().map(|&w| tape.value(w).clone()).collect();
        Ok((tape.value(out.logits).clone(), cross))
    };

    for len in 1..config.m {
        let (logits, _) = run(&seqs, len)?;
        let vocab = logits.last_dim();
        for bi in 0..b {
            let next = if done[bi] {
                pad
            } else {
                let row = logits.row(bi * len + len - 1);
                let t = 1 + argmax(&row[1..]);
                generated[bi] += 1;
                done[bi] = t == eos;
                t
            };
            debug_assert!(next < vocab);
            seqs[bi].push(next);
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }

    let cross = if with_attention {
        let len = seqs[0].len() - 1;
        Some(run(&seqs, len)?.1)
    } else {
        None
    };

    let heads = config.dec_heads;
    let layers = config.dec_layers;
    Ok((0..b)
        .map(|bi| {
            let count = generated[bi];
            let tokens = seqs[bi][..=count]
                .iter()
                .map(|&i| Token::from_index(i).expect("index below vocab size"))
                .collect();
            let cross_attention = cross.as_ref().map(|maps| {
                let len = seqs[0].len() - 1;
                let valid = mask[bi * enc_len..(bi + 1) * enc_len]
                    .iter()
                    .filter(|&&m| m)
                    .count();
                let mut data = Vec::with_capacity(layers * heads * count * valid);
                for map in maps {
                    let values = map.data();
                    for h in 0..heads {
                        let base = (bi * heads + h) * len * enc_len;
                        for r in 0..count {
                            let row = &values[base + r * enc_len..base + r * enc_len + valid];
                            data.extend(row.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)));
                        }
                    }
                }
                Tensor::new([layers, heads, count, valid], data).expect("sized above")
            });
            Decoded {
                tokens,
                cross_attention,
            }
        })
        .collect())
}
