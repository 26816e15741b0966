use std::fmt::Write as _;

use rpnformer_autograd::{Tape, Tensor};
use serde::{Deserialize, Serialize};

use super::metrics::{cer, la, levenshtein};
use crate::error::{Error, Result};
use crate::grammar::{count_violations, rar, Rar};
use crate::model::{decode, encode, greedy_decode_batch, teacher_forcing, EncoderBatch, Model, ModelConfig};
use crate::synth::{tokenize, ExpressionSample, TokenizedInput};
use crate::vocab::{Token, VOCAB_SIZE};

/// A tokenized sample with the label the model is trained on.
#[derive(Clone, Debug)]
pub struct Example {
    pub input: TokenizedInput,
    /// `bos .. eos`.
    pub label: Vec<Token>,
}

/// Tokenizes samples for a model, checking both length budgets.
pub fn prepare<'a>(
    samples: impl IntoIterator<Item = &'a ExpressionSample>,
    config: &ModelConfig,
) -> Result<Vec<Example>> {
    samples
        .into_iter()
        .map(|s| {
            let label = config.label.label(&s.tree()?);
            if label.len() > config.m {
                return Err(Error::LabelBudget {
                    len: label.len(),
                    max: config.m,
                });
            }
            Ok(Example {
                input: tokenize(s, config.n, None)?,
                label,
            })
        })
        .collect()
}

/// Teacher-forced logits of one example, `[label.len() - 1, vocab]`, with
/// the matching targets.
#[derive(Clone, Debug)]
pub struct ForcedLogits {
    pub logits: Tensor<f32>,
    pub targets: Vec<usize>,
}

pub fn teacher_forced_logits(
    model: &Model<f32>,
    examples: &[&Example],
    batch_size: usize,
) -> Result<Vec<ForcedLogits>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let inputs: Vec<&TokenizedInput> = chunk.iter().map(|e| &e.input).collect();
        let labels: Vec<&[Token]> = chunk.iter().map(|e| e.label.as_slice()).collect();
        let batch = EncoderBatch::<f32>::new(&inputs)?;
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape, |_| false);
        let enc = encode(&mut tape, &p, &model.config, &batch)?;
        let (y_in, targets, len) = teacher_forcing(&labels);
        let dec = decode(&mut tape, &p, &model.config, &enc, &y_in, len)?;
        let logits = tape.value(dec.logits);
        let v = logits.last_dim();
        for (b, label) in labels.iter().enumerate() {
            let rows = label.len() - 1;
            let start = b * len * v;
            out.push(ForcedLogits {
                logits: Tensor::new([rows, v], logits.data()[start..start + rows * v].to_vec())?,
                targets: targets[b * len..b * len + rows].to_vec(),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub target: String,
    pub prediction: String,
    pub ld: usize,
    pub la: f64,
    pub cer: f64,
    /// Postfix violations of the prediction, for postfix models.
    pub violations: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    /// Teacher-forced cross-entropy per target token.
    pub xel: f64,
    pub la: f64,
    pub cer: f64,
    /// Fraction of predictions equal to their label.
    pub exact: f64,
    pub rar: Option<Rar>,
    /// Row `t`: mean softmax over positions whose target is token `t`.
    pub confusion: Vec<Vec<f64>>,
    pub records: Vec<SampleRecord>,
}

/// Space-separated token names.
pub fn token_text(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(|t| t.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

pub(crate) fn softmax_f64(row: &[f32]) -> Vec<f64> {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = row.iter().map(|&x| (x as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Greedy-decodes every example and scores the predictions.
pub fn evaluate(model: &Model<f32>, examples: &[&Example], batch_size: usize) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let forced = teacher_forced_logits(model, examples, batch_size)?;
    let mut nll = 0.0;
    let mut tokens = 0usize;
    let mut confusion = vec![vec![0.0; VOCAB_SIZE]; VOCAB_SIZE];
    let mut counts = vec![0usize; VOCAB_SIZE];
    for f in &forced {
        for (r, &t) in f.targets.iter().enumerate() {
            let p = softmax_f64(f.logits.row(r));
            nll -= p[t].ln();
            tokens += 1;
            counts[t] += 1;
            for (c, v) in confusion[t].iter_mut().zip(&p) {
                *c += v;
            }
        }
    }
    for (row, &n) in confusion.iter_mut().zip(&counts) {
        if n > 0 {
            row.iter_mut().for_each(|v| *v /= n as f64);
        }
    }

    let mut predictions = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let inputs: Vec<&TokenizedInput> = chunk.iter().map(|e| &e.input).collect();
        predictions.extend(greedy_decode_batch(model, &inputs, false)?.into_iter().map(|d| d.tokens));
    }

    let postfix = model.config.label.is_rpn();
    let records: Vec<SampleRecord> = examples
        .iter()
        .zip(&predictions)
        .enumerate()
        .map(|(index, (e, pred))| SampleRecord {
            index,
            target: token_text(&e.label),
            prediction: token_text(pred),
            ld: levenshtein(&e.label, pred),
            la: la(&e.label, pred),
            cer: cer(&e.label, pred).unwrap_or(0.0),
            violations: postfix.then(|| count_violations(pred)),
        })
        .collect();
    let n = records.len() as f64;
    Ok(EvalReport {
        samples: records.len(),
        xel: nll / tokens.max(1) as f64,
        la: records.iter().map(|r| r.la).sum::<f64>() / n,
        cer: records.iter().map(|r| r.cer).sum::<f64>() / n,
        exact: records.iter().filter(|r| r.ld == 0).count() as f64 / n,
        rar: if postfix { Some(rar(&predictions)?) } else { None },
        confusion,
        records,
    })
}

impl EvalReport {
    /// Confusion matrix with token names on both axes.
    pub fn confusion_csv(&self) -> String {
        let names: Vec<&str> = Token::ALL.iter().map(|t| t.as_str()).collect();
        let mut out = format!("target,{}\n", names.join(","));
        for (name, row) in names.iter().zip(&self.confusion) {
            out.push_str(name);
            for v in row {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        out
    }
}
