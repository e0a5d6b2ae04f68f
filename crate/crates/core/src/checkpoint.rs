//! Versioned, checksummed model files.
//!
//! Layout (integers little-endian):
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `GATECKPT` |
//! | 4 | format version |
//! | 8 | total file length |
//! | 8 | bitwise complement of the total length |
//! | 8 | header length `h` |
//! | h | JSON header: config, model spec, preprocessing, schema, tensor names and shapes |
//! | 8 per scalar | parameters as `f64`, in header order |
//! | 32 | SHA-256 of everything above |
//!
//! The length is stored twice so that a short file can be told apart from a
//! damaged one: a single corrupted byte can only disturb one copy.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::data::{DatasetSchema, Preprocessing};
use crate::ensemble::{init_model, ModelParams, ModelSpec};
use crate::error::{GateError, Result};
use crate::params::ParamTree;
use crate::rng;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"GATECKPT";
pub const VERSION: u32 = 1;
const PREFIX: usize = 8 + 4 + 8 + 8 + 8;
const DIGEST: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: TrainConfig,
    pub preprocessing: Option<Preprocessing>,
    pub schema: Option<DatasetSchema>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    spec: ModelSpec,
    preprocessing: Option<Preprocessing>,
    schema: Option<DatasetSchema>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: (usize, usize),
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        self.params.visit_params("", &mut |name, t| {
            tensors.push(TensorEntry {
                name,
                shape: t.shape(),
            })
        });
        let header = Header {
            config: self.config.clone(),
            spec: self.params.spec,
            preprocessing: self.preprocessing.clone(),
            schema: self.schema.clone(),
            tensors,
        };
        let header = serde_json::to_vec(&header).map_err(|e| GateError::Checkpoint(e.to_string()))?;
        let scalars: usize = self.params.flatten().iter().map(|t| t.len()).sum();
        let total = PREFIX + header.len() + 8 * scalars + DIGEST;

        let mut out = Vec::with_capacity(total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(total as u64).to_le_bytes());
        out.extend_from_slice(&(!(total as u64)).to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.params.flatten() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        debug_assert_eq!(out.len(), total);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREFIX + DIGEST {
            return Err(GateError::Truncated);
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST);
        if Sha256::digest(body).as_slice() != digest {
            let total = u64_at(bytes, 12);
            if total == !u64_at(bytes, 20) && total > bytes.len() as u64 {
                return Err(GateError::Truncated);
            }
            return Err(GateError::Checksum);
        }
        if &bytes[..8] != MAGIC {
            return Err(GateError::Checkpoint("not a model checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version > VERSION || version == 0 {
            return Err(GateError::Version {
                found: version,
                supported: VERSION,
            });
        }
        if u64_at(bytes, 12) != bytes.len() as u64 {
            return Err(GateError::Checkpoint("length field disagrees with file size".into()));
        }
        let header_len = u64_at(bytes, 28) as usize;
        let header_end = PREFIX
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| GateError::Checkpoint("header overruns the file".into()))?;
        let header: Header = serde_json::from_slice(&body[PREFIX..header_end])
            .map_err(|e| GateError::Checkpoint(format!("header: {e}")))?;
        header.spec.validate()?;

        let mut data = body[header_end..].chunks_exact(8);
        if !data.remainder().is_empty() {
            return Err(GateError::Checkpoint("parameter block is not whole f64 values".into()));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let (r, c) = entry.shape;
            let values: Vec<f64> = data
                .by_ref()
                .take(r * c)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            if values.len() != r * c {
                return Err(GateError::Checkpoint(format!("tensor `{}` is incomplete", entry.name)));
            }
            tensors.push(Tensor::new(r, c, values)?);
        }
        if data.next().is_some() {
            return Err(GateError::Checkpoint("unexpected bytes after the last tensor".into()));
        }

        // layout template; every value is overwritten below
        let mut params = init_model(header.spec, &[], &mut rng::seeded(0))?;
        let names = params.names();
        let listed: Vec<&str> = header.tensors.iter().map(|e| e.name.as_str()).collect();
        if names != listed {
            return Err(GateError::Checkpoint("tensor list does not match the model layout".into()));
        }
        let mut it = tensors.into_iter();
        params.visit_params_mut(&mut |t| *t = it.next().expect("counted above"));
        params.check_shapes()?;
        Ok(Checkpoint {
            params,
            config: header.config,
            preprocessing: header.preprocessing,
            schema: header.schema,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| GateError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| GateError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::ActivationFamily;
    use crate::ensemble::predict;
    use crate::task::Task;

    fn sample(task: Task) -> Checkpoint {
        let spec = ModelSpec {
            d: 5,
            n_stages: 2,
            n_trees: 3,
            depth: 2,
            chained: true,
            attention: true,
            task,
            family: ActivationFamily::Entmax15Entmoid15,
        };
        let mut r = rng::seeded(9);
        let mut params = init_model(spec, &[1.5, -0.25], &mut r).unwrap();
        params.eta = rng::normal(&mut r, 1, params.eta.cols(), 1.0);
        Checkpoint {
            params,
            config: TrainConfig::default(),
            preprocessing: None,
            schema: None,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for task in [Task::Binary, Task::Multiclass(3), Task::Regression] {
            let ck = sample(task);
            let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            assert_eq!(back, ck);
            let x = rng::normal(&mut rng::seeded(1), 50, 5, 2.0);
            let a = predict(&ck.params, &x).unwrap();
            let b = predict(&back.params, &x).unwrap();
            assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn every_single_byte_corruption_is_a_checksum_error() {
        let bytes = sample(Task::Binary).to_bytes().unwrap();
        for i in 0..bytes.len() {
            let mut bad = bytes.clone();
            bad[i] ^= 0x41;
            match Checkpoint::from_bytes(&bad) {
                Err(GateError::Checksum) => {}
                other => panic!("byte {i}: {other:?}"),
            }
        }
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = sample(Task::Regression).to_bytes().unwrap();
        for keep in [0, 10, PREFIX + DIGEST, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(Checkpoint::from_bytes(&bytes[..keep]), Err(GateError::Truncated)),
                "kept {keep} bytes"
            );
        }
    }

    #[test]
    fn newer_version_is_refused() {
        let mut bytes = sample(Task::Binary).to_bytes().unwrap();
        bytes[8..12].copy_from_slice(&(VERSION + 1).to_le_bytes());
        let n = bytes.len() - DIGEST;
        let digest = Sha256::digest(&bytes[..n]);
        bytes[n..].copy_from_slice(&digest);
        match Checkpoint::from_bytes(&bytes) {
            Err(GateError::Version { found, supported }) => assert_eq!((found, supported), (VERSION + 1, VERSION)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = sample(Task::Multiclass(3));
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert!(matches!(
            Checkpoint::load(&dir.path().join("missing.ckpt")),
            Err(GateError::Io { .. })
        ));
    }
}
