//! Binary checkpoint container.
//!
//! ```text
//! "LTMC" | version: u32 | header_len: u64 | header: JSON
//! count: u32 | count × (name_len: u32, name, ndim: u32, ndim × dim: u64)
//! tensor data, f64, in manifest order
//! ```
//!
//! All integers and floats are little-endian. The JSON header is written with
//! struct fields in declaration order and no whitespace, so a given
//! checkpoint always serializes to the same bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig};
use super::optim::OptimizerState;
use super::train::TrainConfig;
use crate::data::{Corpus, Vocab};
use crate::error::{Error, Result};
use crate::numeric::{Rng, RngState};
use crate::params::ParamSet;

pub const MAGIC: &[u8; 4] = b"LTMC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train: TrainConfig,
    /// Vocabulary the model was trained on, if any.
    pub vocab: Option<Vocab>,
    pub corpus_hash: Option<String>,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: RngState,
    pub optim: OptimizerState,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    vocab: Option<Vocab>,
    corpus_hash: Option<String>,
    epoch: usize,
    rng: RngState,
    optimizer_step: u64,
}

impl Checkpoint {
    /// Epoch 0, fresh optimizer, RNG at the seed's `"train"` child stream.
    pub fn initial(model: Model, train: TrainConfig, corpus: Option<&Corpus>) -> Self {
        let optim = OptimizerState::new(&train.optimizer, &model);
        Checkpoint {
            rng: Rng::new(train.seed).child("train").state(),
            vocab: corpus.map(|c| c.vocab.clone()),
            corpus_hash: corpus.map(|c| c.provenance.hash.clone()),
            model,
            train,
            epoch: 0,
            optim,
        }
    }

    fn manifest(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = self
            .model
            .tensors()
            .into_iter()
            .map(|t| (t.name, t.shape, t.data))
            .collect();
        let names = OptimizerState::slot_names(&self.train.optimizer);
        let shapes: Vec<(String, Vec<usize>)> = self.model.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
        for (slot, bufs) in names.iter().zip(&self.optim.slots) {
            for ((name, shape), buf) in shapes.iter().zip(bufs) {
                out.push((format!("optim.{slot}.{name}"), shape.clone(), buf.as_slice()));
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            model: self.model.config.clone(),
            train: self.train.clone(),
            vocab: self.vocab.clone(),
            corpus_hash: self.corpus_hash.clone(),
            epoch: self.epoch,
            rng: self.rng,
            optimizer_step: self.optim.step,
        })?;
        let manifest = self.manifest();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        for (name, shape, _) in &manifest {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for (_, _, data) in &manifest {
            for v in *data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic bytes)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let hlen = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        header.train.validate()?;
        let mut ckpt = Checkpoint {
            model: Model::zeros(header.model)?,
            optim: OptimizerState {
                step: header.optimizer_step,
                slots: Vec::new(),
            },
            train: header.train,
            vocab: header.vocab,
            corpus_hash: header.corpus_hash,
            epoch: header.epoch,
            rng: header.rng,
        };
        if let Some(v) = &ckpt.vocab {
            if v.len() != ckpt.model.vocab() {
                return Err(Error::Checkpoint("stored vocabulary does not match the model".into()));
            }
        }
        ckpt.optim.slots = OptimizerState::new(&ckpt.train.optimizer, &ckpt.model).slots;

        let expected: Vec<(String, Vec<usize>)> =
            ckpt.manifest().into_iter().map(|(n, s, _)| (n, s)).collect();
        let count = r.u32()? as usize;
        if count != expected.len() {
            return Err(Error::Checkpoint(format!("{count} tensors stored, {} expected", expected.len())));
        }
        for (name, shape) in &expected {
            let n = r.u32()? as usize;
            let got_name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if got_name != name || &dims != shape {
                return Err(Error::Checkpoint(format!(
                    "manifest entry {got_name} {dims:?} does not match expected {name} {shape:?}"
                )));
            }
        }
        let mut dests: Vec<&mut [f64]> = ckpt.model.tensors_mut();
        for slot in &mut ckpt.optim.slots {
            dests.extend(slot.iter_mut().map(Vec::as_mut_slice));
        }
        for dest in dests {
            for v in dest.iter_mut() {
                *v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellKind;

    fn ckpt() -> Checkpoint {
        let cfg = ModelConfig {
            cell: CellKind::Lstm,
            layers: 1,
            hidden: 3,
            embed_dim: 2,
            vocab: 4,
            ..ModelConfig::default()
        };
        let model = Model::new(cfg, &mut Rng::new(5)).unwrap();
        Checkpoint::initial(model, TrainConfig::default(), None)
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let c = ckpt();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_damage() {
        let bytes = ckpt().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Checkpoint::from_bytes(&long), Err(Error::Checkpoint(_))));
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(Error::Checkpoint(_))));
    }
}
