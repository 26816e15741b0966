use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rpnformer_autograd::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig, ParamStore};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RPNFCKPT";
const VERSION: u32 = 1;

/// First and second moment estimates, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

/// Where an interrupted training run stands.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Epochs completed.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    pub adam: Option<AdamState>,
    /// Free-form run summary (best validation score and the like).
    pub notes: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub train: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    epoch: Option<usize>,
    rng: Option<ChaCha8Rng>,
    adam_step: Option<u64>,
    #[serde(default)]
    notes: serde_json::Value,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn corrupt(what: &str) -> Error {
    Error::Checkpoint(format!("truncated or corrupt file ({what})"))
}

fn get_u32(r: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| corrupt("u32"))?;
    Ok(u32::from_le_bytes(b))
}

fn get_bytes(r: &mut Cursor<&[u8]>, len: usize) -> Result<Vec<u8>> {
    let remaining = r.get_ref().len() - r.position() as usize;
    if len > remaining {
        return Err(corrupt("length"));
    }
    let mut b = vec![0u8; len];
    r.read_exact(&mut b).map_err(|_| corrupt("bytes"))?;
    Ok(b)
}

fn get_tensor(r: &mut Cursor<&[u8]>) -> Result<(String, Tensor<f32>)> {
    let name_len = get_u32(r)? as usize;
    let name = String::from_utf8(get_bytes(r, name_len)?).map_err(|_| corrupt("name"))?;
    let ndim = get_u32(r)? as usize;
    if ndim > 8 {
        return Err(corrupt("rank"));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let b = get_bytes(r, 8)?;
        shape.push(u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| corrupt("shape"))?;
    let raw = get_bytes(r, count.checked_mul(4).ok_or_else(|| corrupt("shape"))?)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((name, Tensor::new(shape, data)?))
}

impl Checkpoint {
    pub fn new(model: Model<f32>) -> Self {
        Self { model, train: None }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    /// Versioned container: magic, version, JSON metadata, then named
    /// little-endian f32 tensors (parameters, then optimizer moments).
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Meta {
            config: self.model.config.clone(),
            epoch: self.train.as_ref().map(|t| t.epoch),
            rng: self.train.as_ref().map(|t| t.rng.clone()),
            adam_step: self.train.as_ref().and_then(|t| t.adam.as_ref()).map(|a| a.step),
            notes: self
                .train
                .as_ref()
                .map(|t| t.notes.clone())
                .unwrap_or(serde_json::Value::Null),
        };
        let meta = serde_json::to_vec(&meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, meta.len() as u32);
        out.extend_from_slice(&meta);

        let params = &self.model.params;
        let adam = self.train.as_ref().and_then(|t| t.adam.as_ref());
        let count = params.len() * if adam.is_some() { 3 } else { 1 };
        put_u32(&mut out, count as u32);
        for (name, t) in params.iter() {
            put_tensor(&mut out, name, t);
        }
        if let Some(adam) = adam {
            for (name, t) in params.names().iter().zip(&adam.m) {
                put_tensor(&mut out, &format!("adam.m/{name}"), t);
            }
            for (name, t) in params.names().iter().zip(&adam.v) {
                put_tensor(&mut out, &format!("adam.v/{name}"), t);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        if get_bytes(&mut r, MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = get_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = get_u32(&mut r)? as usize;
        let meta: Meta = serde_json::from_slice(&get_bytes(&mut r, meta_len)?)?;
        let count = get_u32(&mut r)? as usize;
        let mut params = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for _ in 0..count {
            let (name, t) = get_tensor(&mut r)?;
            if name.starts_with("adam.m/") {
                m.push(t);
            } else if name.starts_with("adam.v/") {
                v.push(t);
            } else {
                params.push((name, t));
            }
        }
        if r.position() as usize != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        let store = ParamStore::from_entries(params);
        let model = Model::from_params(meta.config, store)?;
        let adam = match meta.adam_step {
            Some(step) if m.len() == model.params.len() && v.len() == model.params.len() => {
                Some(AdamState { step, m, v })
            }
            Some(_) => return Err(Error::Checkpoint("optimizer state incomplete".into())),
            None => None,
        };
        let train = match (meta.epoch, meta.rng) {
            (Some(epoch), Some(rng)) => Some(TrainState {
                epoch,
                rng,
                adam,
                notes: meta.notes,
            }),
            _ => None,
        };
        Ok(Self { model, train })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// SHA-256 over the raw bytes of the selected tensors, in layout order.
pub fn tensor_digest(store: &ParamStore<f32>, select: impl Fn(&str) -> bool) -> String {
    let mut h = Sha256::new();
    for (name, t) in store.iter().filter(|(n, _)| select(n)) {
        h.update(name.as_bytes());
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn round_trip_with_training_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Model::<f32>::init(ModelConfig::preset("v1").unwrap(), &mut rng).unwrap();
        let adam = AdamState {
            step: 7,
            m: model.params.tensors().iter().map(|t| Tensor::full(t.shape().to_vec(), 0.5)).collect(),
            v: model.params.tensors().iter().map(|t| Tensor::full(t.shape().to_vec(), 0.25)).collect(),
        };
        let ckpt = Checkpoint {
            model,
            train: Some(TrainState {
                epoch: 3,
                rng,
                adam: Some(adam),
                notes: serde_json::json!({"best_val_la": 0.5}),
            }),
        };
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::<f32>::init(ModelConfig::preset("v1").unwrap(), &mut rng).unwrap();
        let bytes = Checkpoint::new(model).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
