use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rpnformer_autograd::{Scalar, Tape, Tensor, Var};

use super::ModelConfig;
use crate::error::{Error, Result};

fn push_linear(out: &mut Vec<(String, Vec<usize>)>, prefix: &str, fan_in: usize, fan_out: usize) {
    out.push((format!("{prefix}.w"), vec![fan_in, fan_out]));
    out.push((format!("{prefix}.b"), vec![fan_out]));
}

fn push_attention(out: &mut Vec<(String, Vec<usize>)>, prefix: &str, d: usize) {
    for proj in ["q", "k", "v", "o"] {
        push_linear(out, &format!("{prefix}.{proj}"), d, d);
    }
}

fn push_norm(out: &mut Vec<(String, Vec<usize>)>, prefix: &str, d: usize) {
    out.push((format!("{prefix}.g"), vec![d]));
    out.push((format!("{prefix}.b"), vec![d]));
}

/// Canonical parameter names and shapes, in storage order.
///
/// Weights are stored `[in, out]` so that a layer computes `x · w + b`.
pub fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.d_f;
    let mut out = vec![("enc.pos".to_string(), vec![config.max_pos, d])];
    for i in 0..config.enc_layers {
        let p = format!("enc.{i}");
        push_attention(&mut out, &format!("{p}.attn"), d);
        push_norm(&mut out, &format!("{p}.ln1"), d);
        push_linear(&mut out, &format!("{p}.ffn1"), d, config.d_p);
        push_linear(&mut out, &format!("{p}.ffn2"), config.d_p, d);
        push_norm(&mut out, &format!("{p}.ln2"), d);
    }
    out.push(("dec.embed".to_string(), vec![config.vocab_size, d]));
    out.push(("dec.pos".to_string(), vec![config.m, d]));
    for i in 0..config.dec_layers {
        let p = format!("dec.{i}");
        push_attention(&mut out, &format!("{p}.self"), d);
        push_norm(&mut out, &format!("{p}.ln1"), d);
        push_attention(&mut out, &format!("{p}.cross"), d);
        push_norm(&mut out, &format!("{p}.ln2"), d);
        push_linear(&mut out, &format!("{p}.ffn1"), d, config.dec_ffn());
        push_linear(&mut out, &format!("{p}.ffn2"), config.dec_ffn(), d);
        push_norm(&mut out, &format!("{p}.ln3"), d);
    }
    push_linear(&mut out, "dec.out", d, config.vocab_size);
    out
}

/// Named model tensors in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    /// Xavier-uniform weights, zero biases, unit norm gains and
    /// `N(0, 0.02)` embedding and positional tables.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let table = Normal::new(0.0, 0.02).expect("valid std");
        let entries = layout(config)
            .into_iter()
            .map(|(name, shape)| {
                let size: usize = shape.iter().product();
                let data: Vec<T> = if name.ends_with(".pos") || name == "dec.embed" {
                    (0..size).map(|_| T::from_f64_lossy(table.sample(rng))).collect()
                } else if name.ends_with(".g") {
                    vec![T::one(); size]
                } else if name.ends_with(".w") {
                    let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    (0..size)
                        .map(|_| T::from_f64_lossy(rng.gen_range(-limit..=limit)))
                        .collect()
                } else {
                    vec![T::zero(); size]
                };
                (name, Tensor::new(shape, data).expect("layout shape"))
            })
            .collect();
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Self {
        let mut names = Vec::with_capacity(entries.len());
        let mut tensors = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (name, tensor) in entries {
            index.insert(name.clone(), names.len());
            names.push(name);
            tensors.push(tensor);
        }
        Self {
            names,
            tensors,
            index,
        }
    }

    /// Checks names and shapes against the canonical layout.
    pub fn check_layout(&self, config: &ModelConfig) -> Result<()> {
        let expected = layout(config);
        if expected.len() != self.names.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.names.len()
            )));
        }
        for ((name, shape), (have_name, have)) in expected.iter().zip(self.iter()) {
            if name != have_name || shape.as_slice() != have.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {have_name} {:?} does not match layout entry {name} {shape:?}",
                    have.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.names.iter().zip(&self.tensors)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Puts every tensor on the tape; `trainable` decides which ones
    /// collect gradients.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: impl Fn(&str) -> bool) -> super::Bound<'_, T> {
        let vars: Vec<Var> = self
            .iter()
            .map(|(name, t)| tape.leaf(t.clone(), trainable(name)))
            .collect();
        super::Bound::new(self, vars)
    }
}

pub(crate) fn is_encoder(name: &str) -> bool {
    name.starts_with("enc.")
}
