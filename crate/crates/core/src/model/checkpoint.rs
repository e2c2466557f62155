//! Checkpoint files: `manifest.json` (config, tensor names, shapes, byte
//! offsets) next to `checkpoint.bin`, the little-endian f64 data of every
//! tensor concatenated in manifest order.

use std::path::{Path, PathBuf};

use pairalign_tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::params::{ModelConfig, ModelParams};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "checkpoint.bin";
const FORMAT: &str = "pairalign-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    pub blob_sha256: String,
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// Model weights plus any extra named tensors (optimizer moments, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub extra: Vec<(String, Tensor)>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn of(params: &ModelParams) -> Self {
        Self {
            params: params.clone(),
            extra: Vec::new(),
            meta: serde_json::Value::Null,
        }
    }

    pub fn extra(&self, name: &str) -> Option<&Tensor> {
        self.extra.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn blob_path(dir: &Path) -> PathBuf {
    dir.join(BLOB_FILE)
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

fn encode(ckpt: &Checkpoint) -> (Vec<u8>, Vec<TensorEntry>) {
    let names = ckpt.params.names();
    let all = names
        .into_iter()
        .zip(ckpt.params.tensors.iter())
        .chain(ckpt.extra.iter().map(|(n, t)| (n.clone(), t)));
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in all {
        let offset = blob.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
            bytes: blob.len() - offset,
        });
    }
    (blob, entries)
}

/// Blob hash a weights-only checkpoint of `params` would have.
pub fn params_hash(params: &ModelParams) -> String {
    hex::encode(Sha256::digest(encode(&Checkpoint::of(params)).0))
}

/// Writes `manifest.json` and `checkpoint.bin` into `dir`; returns the blob hash.
pub fn save(dir: &Path, ckpt: &Checkpoint) -> Result<String> {
    std::fs::create_dir_all(dir)?;
    let (blob, entries) = encode(ckpt);
    let hash = hex::encode(Sha256::digest(&blob));
    let manifest = Manifest {
        format: FORMAT.to_string(),
        config: ckpt.params.config.clone(),
        tensors: entries,
        blob_sha256: hash.clone(),
        meta: ckpt.meta.clone(),
    };
    std::fs::write(blob_path(dir), &blob)?;
    std::fs::write(manifest_path(dir), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(hash)
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(manifest_path(dir))?)?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!(
            "unknown format {:?}",
            manifest.format
        )));
    }
    let blob = std::fs::read(blob_path(dir))?;
    if hex::encode(Sha256::digest(&blob)) != manifest.blob_sha256 {
        return Err(Error::Checkpoint(
            "blob hash does not match manifest".into(),
        ));
    }
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        if e.bytes != n * 8 || e.offset + e.bytes > blob.len() {
            return Err(Error::Checkpoint(format!("bad extent for {}", e.name)));
        }
        let data = blob[e.offset..e.offset + e.bytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
    }
    let layout = manifest.config.layout();
    if tensors.len() < layout.len() {
        return Err(Error::Checkpoint(
            "fewer tensors than the model layout".into(),
        ));
    }
    let extra = tensors.split_off(layout.len());
    for ((name, _), (stored, _)) in layout.iter().zip(&tensors) {
        if name != stored {
            return Err(Error::Checkpoint(format!(
                "expected tensor {name}, found {stored}"
            )));
        }
    }
    let params = ModelParams {
        config: manifest.config,
        tensors: tensors.into_iter().map(|(_, t)| t).collect(),
    };
    params.validate()?;
    Ok(Checkpoint {
        params,
        extra,
        meta: manifest.meta,
    })
}

pub fn load_params(dir: &Path) -> Result<ModelParams> {
    Ok(load(dir)?.params)
}

/// SHA-256 of the blob file, as recorded in reports.
pub fn blob_hash(dir: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(blob_path(dir))?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut params = ModelParams::init(ModelConfig::default(), 9).unwrap();
        params.tensors[0].data_mut()[0] = f64::MIN_POSITIVE / 3.0; // subnormal
        params.tensors[1].data_mut()[5] = -0.0;
        let ckpt = Checkpoint {
            params: params.clone(),
            extra: vec![("opt.step".into(), Tensor::scalar(12.0))],
            meta: serde_json::json!({"step": 12}),
        };
        let hash = save(dir.path(), &ckpt).unwrap();
        let back = load(dir.path()).unwrap();
        let bits = |p: &ModelParams| -> Vec<u64> {
            p.tensors
                .iter()
                .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
                .collect()
        };
        assert_eq!(bits(&back.params), bits(&params));
        assert_eq!(back.extra, ckpt.extra);
        assert_eq!(back.meta, ckpt.meta);
        assert_eq!(blob_hash(dir.path()).unwrap(), hash);
        assert_ne!(params_hash(&params), hash);
        save(dir.path(), &Checkpoint::of(&params)).unwrap();
        assert_eq!(params_hash(&params), blob_hash(dir.path()).unwrap());
    }

    #[test]
    fn manifest_offsets_are_contiguous() {
        let dir = tempfile::tempdir().unwrap();
        let params = ModelParams::init(ModelConfig::default(), 1).unwrap();
        save(dir.path(), &Checkpoint::of(&params)).unwrap();
        let m: Manifest =
            serde_json::from_slice(&std::fs::read(manifest_path(dir.path())).unwrap()).unwrap();
        let mut expect = 0;
        for e in &m.tensors {
            assert_eq!(e.offset, expect);
            expect += e.bytes;
        }
        assert_eq!(
            expect,
            std::fs::metadata(blob_path(dir.path())).unwrap().len() as usize
        );
    }

    #[test]
    fn corrupted_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let params = ModelParams::init(ModelConfig::default(), 1).unwrap();
        save(dir.path(), &Checkpoint::of(&params)).unwrap();
        let mut blob = std::fs::read(blob_path(dir.path())).unwrap();
        blob[10] ^= 1;
        std::fs::write(blob_path(dir.path()), blob).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Checkpoint(_))));
    }
}
