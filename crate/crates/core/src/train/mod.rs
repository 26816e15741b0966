//! Training loop, metrics and the stroke-ablation harness.

mod ablate;
mod adam;
mod eval;
mod metrics;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rpnformer_autograd::{Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    decode, encode, is_encoder, teacher_forcing, Checkpoint, EncoderBatch, EncoderOut, Model,
    ModelConfig, TrainState,
};
use crate::synth::{Dataset, Split, TokenizedInput};
use crate::vocab::Token;

pub use ablate::{ablate_and_score, AblationReport, AblationRow, AblationTarget};
pub use adam::Adam;
pub use eval::{
    evaluate, prepare, teacher_forced_logits, token_text, EvalReport, Example, ForcedLogits,
    SampleRecord,
};
pub use metrics::{cer, la, levenshtein};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    /// Fresh weights everywhere.
    #[default]
    Scratch,
    /// Encoder copied from a source checkpoint and never updated.
    Frozen,
    /// Every parameter starts from a source checkpoint and trains.
    FineTune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Epochs between learning-rate halvings.
    pub halve_every: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub encoder_mode: EncoderMode,
    pub seed: u64,
    /// Stop after this many epochs without a better validation LA.
    pub patience: Option<usize>,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
    /// Validate on the first `k` validation samples only.
    pub val_limit: Option<usize>,
    /// Split used for model selection.
    pub select_on: Split,
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 8e-4,
            halve_every: 30,
            max_epochs: 200,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            encoder_mode: EncoderMode::Scratch,
            seed: 0,
            patience: None,
            clip_norm: None,
            val_limit: None,
            select_on: Split::Val,
            eval_batch: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.halve_every == 0 || self.max_epochs == 0 || self.batch_size == 0 || self.eval_batch == 0 {
            return bad("halve_every, max_epochs, batch_size and eval_batch must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("Adam needs 0 <= beta < 1 and eps > 0");
        }
        if self.patience == Some(0) || self.val_limit == Some(0) {
            return bad("patience and val_limit must be positive when set");
        }
        if matches!(self.clip_norm, Some(c) if c <= 0.0) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    /// `lr · 0.5^⌊epoch / halve_every⌋`, epochs counted from zero.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * 0.5f64.powi((epoch / self.halve_every) as i32)
    }
}

/// One line of the epoch log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_xel: f64,
    pub val_xel: f64,
    pub val_la: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation LA, lower
    /// validation XEL breaking ties.
    pub best: Checkpoint,
    /// State after the final epoch, resumable.
    pub last: Checkpoint,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

/// Encoder rows of one example, cached when the encoder is frozen.
struct CachedZ(Vec<Tensor<f32>>);

impl CachedZ {
    fn build(model: &Model<f32>, examples: &[Example], batch_size: usize) -> Result<Self> {
        let d = model.config.d_f;
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(batch_size) {
            let inputs: Vec<&TokenizedInput> = chunk.iter().map(|e| &e.input).collect();
            let batch = EncoderBatch::<f32>::new(&inputs)?;
            let mut tape = Tape::new();
            let p = model.params.bind(&mut tape, |_| false);
            let enc = encode(&mut tape, &p, &model.config, &batch)?;
            let z = tape.value(enc.z);
            for (b, input) in inputs.iter().enumerate() {
                let rows = input.valid_len();
                let start = b * enc.len * d;
                out.push(Tensor::new([rows, d], z.data()[start..start + rows * d].to_vec())?);
            }
        }
        Ok(Self(out))
    }

    fn encoder_out(&self, tape: &mut Tape<f32>, indices: &[usize], d: usize) -> Result<EncoderOut> {
        let len = indices.iter().map(|&i| self.0[i].shape()[0]).max().unwrap_or(0);
        let b = indices.len();
        let mut data = vec![0.0f32; b * len * d];
        let mut mask = vec![false; b * len];
        for (slot, &i) in indices.iter().enumerate() {
            let z = &self.0[i];
            let rows = z.shape()[0];
            data[slot * len * d..(slot * len + rows) * d].copy_from_slice(z.data());
            mask[slot * len..slot * len + rows].fill(true);
        }
        let z = tape.constant(Tensor::new([b * len, d], data)?);
        Ok(EncoderOut {
            z,
            mask,
            batch: b,
            len,
            self_attn: Vec::new(),
        })
    }
}

fn initial_model(
    config: &ModelConfig,
    cfg: &TrainConfig,
    source: Option<&Checkpoint>,
    rng: &mut ChaCha8Rng,
) -> Result<Model<f32>> {
    let mut model = Model::init(config.clone(), rng)?;
    match cfg.encoder_mode {
        EncoderMode::Scratch => {}
        EncoderMode::Frozen => {
            let src = source
                .ok_or_else(|| Error::Config("frozen encoder mode needs a source checkpoint".into()))?;
            let s = src.config();
            if (s.d_f, s.enc_layers, s.enc_heads, s.max_pos, s.alpha)
                != (config.d_f, config.enc_layers, config.enc_heads, config.max_pos, config.alpha)
            {
                return Err(Error::Config("source encoder does not match the model config".into()));
            }
            let names: Vec<String> = model.params.names().to_vec();
            for (i, name) in names.iter().enumerate().filter(|(_, n)| is_encoder(n)) {
                let t = src.model.params.get(name).ok_or_else(|| {
                    Error::Config(format!("source checkpoint lacks {name}"))
                })?;
                model.params.tensors_mut()[i] = t.clone();
            }
        }
        EncoderMode::FineTune => {
            let src = source
                .ok_or_else(|| Error::Config("fine-tuning needs a source checkpoint".into()))?;
            if src.config() != config {
                return Err(Error::Config("source checkpoint has a different model config".into()));
            }
            model = src.model.clone();
        }
    }
    Ok(model)
}

fn clip(grads: &mut [Option<Tensor<f32>>], max_norm: f64) {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.data())
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Trains on the dataset's train split with teacher forcing, validating
/// after every epoch. `on_epoch` sees each log record as it is produced.
pub fn train(
    dataset: &Dataset,
    config: &ModelConfig,
    cfg: &TrainConfig,
    source: Option<&Checkpoint>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    cfg.validate()?;
    if dataset.config.n != config.n {
        return Err(Error::Config(format!(
            "dataset was built for n = {}, model expects n = {}",
            dataset.config.n, config.n
        )));
    }
    let train_set = prepare(dataset.split(Split::Train), config)?;
    let mut val_set = prepare(dataset.split(cfg.select_on), config)?;
    if train_set.is_empty() {
        return Err(Error::Empty("train split"));
    }
    if val_set.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    if let Some(k) = cfg.val_limit {
        val_set.truncate(k);
    }
    let val_refs: Vec<&Example> = val_set.iter().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = initial_model(config, cfg, source, &mut rng)?;
    let frozen = cfg.encoder_mode == EncoderMode::Frozen;
    let trainable = |name: &str| !(frozen && is_encoder(name));
    let cache = if frozen {
        Some(CachedZ::build(&model, &train_set, cfg.eval_batch)?)
    } else {
        None
    };
    let mut adam = Adam::new(model.params.tensors(), cfg.beta1, cfg.beta2, cfg.eps);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, f64, usize, Model<f32>)> = None;
    let mut stale = 0;
    let mut step = 0usize;
    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut nll = 0.0;
        let mut tokens = 0usize;
        for indices in order.chunks(cfg.batch_size) {
            let labels: Vec<&[Token]> = indices.iter().map(|&i| train_set[i].label.as_slice()).collect();
            let (y_in, targets, len) = teacher_forcing(&labels);
            let counted = targets.iter().filter(|&&t| t != Token::Pad.index()).count();
            let mut grads = {
                let mut tape = Tape::new();
                let p = model.params.bind(&mut tape, trainable);
                let enc = match &cache {
                    Some(cache) => cache.encoder_out(&mut tape, indices, config.d_f)?,
                    None => {
                        let inputs: Vec<&TokenizedInput> =
                            indices.iter().map(|&i| &train_set[i].input).collect();
                        encode(&mut tape, &p, config, &EncoderBatch::new(&inputs)?)?
                    }
                };
                let dec = decode(&mut tape, &p, config, &enc, &y_in, len)?;
                let loss = tape.cross_entropy(dec.logits, &targets, Token::Pad.index())?;
                let value = f64::from(tape.value(loss).item());
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        step,
                        loss: value as f32,
                    });
                }
                nll += value * counted as f64;
                tokens += counted;
                tape.backward(loss)?;
                p.vars()
                    .iter()
                    .zip(model.params.names())
                    .map(|(&v, name)| if trainable(name) { tape.grad(v) } else { None })
                    .collect::<Vec<_>>()
            };
            if let Some(max_norm) = cfg.clip_norm {
                clip(&mut grads, max_norm);
            }
            adam.step(model.params.tensors_mut(), &grads, lr);
            step += 1;
        }

        let report = evaluate(&model, &val_refs, cfg.eval_batch)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_xel: nll / tokens.max(1) as f64,
            val_xel: report.xel,
            val_la: report.la,
        };
        on_epoch(&record);
        log.push(record);

        // ties in LA go to the lower validation loss
        let better = best.as_ref().map_or(true, |(la, xel, _, _)| {
            report.la > *la || (report.la == *la && report.xel < *xel)
        });
        if better {
            best = Some((report.la, report.xel, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
    }

    let (best_la, _, best_epoch, best_model) = best.expect("at least one epoch ran");
    let notes = serde_json::json!({
        "best_epoch": best_epoch,
        "val_la": best_la,
        "encoder_mode": cfg.encoder_mode,
    });
    let epochs_run = log.len();
    Ok(TrainOutcome {
        best: Checkpoint {
            model: best_model,
            train: Some(TrainState {
                epoch: best_epoch + 1,
                rng: rng.clone(),
                adam: None,
                notes: notes.clone(),
            }),
        },
        last: Checkpoint {
            model,
            train: Some(TrainState {
                epoch: epochs_run,
                rng,
                adam: Some(adam.state),
                notes,
            }),
        },
        best_epoch,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_every_thirty_epochs() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 8e-4);
        assert_eq!(cfg.lr_at(29), 8e-4);
        assert_eq!(cfg.lr_at(30), 4e-4);
        assert_eq!(cfg.lr_at(61), 2e-4);
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            beta2: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let parsed: std::result::Result<TrainConfig, _> =
            serde_json::from_str(r#"{"learning_rate": 1e-3}"#);
        assert!(parsed.is_err());
        let parsed: TrainConfig = serde_json::from_str(r#"{"encoder_mode": "fine_tune"}"#).unwrap();
        assert_eq!(parsed.encoder_mode, EncoderMode::FineTune);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut grads = vec![Some(Tensor::new([2], vec![3.0f32, 4.0]).unwrap()), None];
        clip(&mut grads, 1.0);
        let g = grads[0].as_ref().unwrap().data();
        assert!((g[0] - 0.6).abs() < 1e-6 && (g[1] - 0.8).abs() < 1e-6);
    }
}
