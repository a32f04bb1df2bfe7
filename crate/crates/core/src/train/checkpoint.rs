//! Binary checkpoint: parameters, Adam moments and run metadata.
//!
//! Layout (little-endian):
//! `"GCDCKPT\0"`, `u32` version, `u64` meta length, meta JSON, `u32` array
//! count, then per array: `u32` name length, name, `u8` dtype (0 = f32,
//! 1 = f64), `u32` rank, `u64` dims, raw values. A SHA-256 digest of all
//! preceding bytes closes the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::optim::Adam;
use crate::diffusion::{NoiseSchedule, COSINE_OFFSET};
use crate::error::{Error, Result};
use crate::nn::{GcdModel, ModelConfig, ParamStore};

pub const MAGIC: &[u8; 8] = b"GCDCKPT\0";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Completed iterations.
    pub iteration: usize,
    pub adam_step: u64,
}

pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore,
    pub adam_m: BTreeMap<String, Tensor>,
    pub adam_v: BTreeMap<String, Tensor>,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    let flat = t.flatten_all()?;
    match t.dtype() {
        DType::F64 => {
            out.push(1);
            put_dims(out, t.dims());
            for v in flat.to_vec1::<f64>()? {
                out.extend(v.to_le_bytes());
            }
        }
        _ => {
            out.push(0);
            put_dims(out, t.dims());
            for v in flat.to_dtype(DType::F32)?.to_vec1::<f32>()? {
                out.extend(v.to_le_bytes());
            }
        }
    }
    Ok(())
}

fn put_dims(out: &mut Vec<u8>, dims: &[usize]) {
    out.extend((dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend((d as u64).to_le_bytes());
    }
}

pub fn encode_checkpoint(meta: &CheckpointMeta, params: &ParamStore, adam: Option<&Adam>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    let meta_json = serde_json::to_vec(meta)?;
    out.extend((meta_json.len() as u64).to_le_bytes());
    out.extend(&meta_json);
    let mut arrays: Vec<(String, Tensor)> = params
        .iter()
        .map(|(n, v)| (n.to_string(), v.as_tensor().clone()))
        .collect();
    if let Some(adam) = adam {
        arrays.extend(adam.m.iter().map(|(n, t)| (format!("{ADAM_M}{n}"), t.clone())));
        arrays.extend(adam.v.iter().map(|(n, t)| (format!("{ADAM_V}{n}"), t.clone())));
    }
    out.extend((arrays.len() as u32).to_le_bytes());
    for (name, t) in &arrays {
        put_tensor(&mut out, name, t)?;
    }
    let digest = Sha256::digest(&out);
    out.extend(digest.as_slice());
    Ok(out)
}

pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, params: &ParamStore, adam: Option<&Adam>) -> Result<()> {
    let bytes = encode_checkpoint(meta, params, adam)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::CorruptCheckpoint("unexpected end of data".into())
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::CorruptCheckpoint("length overflow".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::CorruptCheckpoint("missing version".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    if bytes.len() < 12 + DIGEST_LEN {
        return Err(Error::CorruptCheckpoint("truncated".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::CorruptCheckpoint("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 12 };
    let meta_len = r.len()?;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::CorruptCheckpoint(format!("metadata: {e}")))?;
    let count = r.u32()? as usize;
    let mut params: Option<ParamStore> = None;
    let mut adam_m = BTreeMap::new();
    let mut adam_v = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::CorruptCheckpoint("non-UTF-8 array name".into()))?
            .to_string();
        let tag = r.u8()?;
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let t = match tag {
            0 => {
                let raw = r.take(n * 4)?;
                let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect();
                Tensor::from_vec(v, dims, &Device::Cpu)?
            }
            1 => {
                let raw = r.take(n * 8)?;
                let v: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect();
                Tensor::from_vec(v, dims, &Device::Cpu)?
            }
            other => return Err(Error::CorruptCheckpoint(format!("dtype tag {other}"))),
        };
        if let Some(rest) = name.strip_prefix(ADAM_M) {
            adam_m.insert(rest.to_string(), t);
        } else if let Some(rest) = name.strip_prefix(ADAM_V) {
            adam_v.insert(rest.to_string(), t);
        } else {
            let store = params.get_or_insert_with(|| ParamStore::new(t.dtype()));
            store.insert(&name, &t)?;
        }
    }
    if r.pos != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    Ok(Checkpoint {
        meta,
        params: params.unwrap_or_else(|| ParamStore::new(DType::F32)),
        adam_m,
        adam_v,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

impl Checkpoint {
    /// Frozen model and its noise schedule, ready for sampling.
    pub fn into_model(mut self) -> Result<(GcdModel, NoiseSchedule)> {
        let model = GcdModel::frozen(&mut self.params, &self.meta.model)?;
        let sched = NoiseSchedule::cosine(self.meta.model.diffusion_steps, COSINE_OFFSET)?;
        Ok((model, sched))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::optim::AdamConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            ff_size: 16,
            mapping_hidden: 8,
            diffusion_steps: 10,
            ..ModelConfig::toy()
        }
    }

    fn fixture(dtype: DType) -> (CheckpointMeta, ParamStore, Adam) {
        let cfg = tiny();
        let mut store = ParamStore::new(dtype);
        GcdModel::init(&mut store, &cfg, 4).unwrap();
        let mut adam = Adam::new(AdamConfig::new(1e-3));
        adam.step = 7;
        for (name, var) in store.iter() {
            adam.m.insert(name.to_string(), (var.as_tensor() * 0.5).unwrap());
            adam.v.insert(name.to_string(), var.as_tensor().sqr().unwrap());
        }
        let meta = CheckpointMeta {
            model: cfg,
            train: TrainConfig::default(),
            iteration: 12,
            adam_step: 7,
        };
        (meta, store, adam)
    }

    #[test]
    fn round_trip_is_bitwise() {
        for dtype in [DType::F32, DType::F64] {
            let (meta, store, adam) = fixture(dtype);
            let bytes = encode_checkpoint(&meta, &store, Some(&adam)).unwrap();
            let ck = decode_checkpoint(&bytes).unwrap();
            assert_eq!(ck.meta, meta);
            assert_eq!(ck.params.dtype(), dtype);
            assert_eq!(ck.params.snapshot().unwrap(), store.snapshot().unwrap());
            assert_eq!(ck.adam_m.len(), store.len());
            for (name, t) in &adam.v {
                let a: Vec<f64> = t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap();
                let b: Vec<f64> = ck.adam_v[name].flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap();
                assert_eq!(a, b);
            }
            let again = encode_checkpoint(&ck.meta, &ck.params, Some(&adam)).unwrap();
            assert_eq!(again, bytes);
        }
    }

    #[test]
    fn truncation_and_corruption_detected() {
        let (meta, store, adam) = fixture(DType::F32);
        let bytes = encode_checkpoint(&meta, &store, Some(&adam)).unwrap();
        for cut in [bytes.len() - 1, bytes.len() / 2, 20] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))));
        }
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::CorruptCheckpoint(_))));
        assert!(matches!(decode_checkpoint(b"not a checkpoint"), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn newer_version_rejected() {
        let (meta, store, _) = fixture(DType::F32);
        let mut bytes = encode_checkpoint(&meta, &store, None).unwrap();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/model.ckpt");
        let (meta, store, adam) = fixture(DType::F32);
        save_checkpoint(&path, &meta, &store, Some(&adam)).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.params.snapshot().unwrap(), store.snapshot().unwrap());
        assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(Error::IoFailure { .. })));
    }

    #[test]
    fn into_model_requires_every_parameter() {
        let (meta, store, _) = fixture(DType::F32);
        let ck = decode_checkpoint(&encode_checkpoint(&meta, &store, None).unwrap()).unwrap();
        let (_, sched) = ck.into_model().unwrap();
        assert_eq!(sched.steps(), 10);
        let mut partial = ParamStore::new(DType::F32);
        let first = store.iter().next().unwrap();
        partial.insert(first.0, first.1.as_tensor()).unwrap();
        let bytes = encode_checkpoint(&meta, &partial, None).unwrap();
        let ck = decode_checkpoint(&bytes).unwrap();
        assert!(matches!(ck.into_model(), Err(Error::UntrainedModel(_))));
    }
}
