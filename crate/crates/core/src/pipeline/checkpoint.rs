//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "ORST"  u32 version  u8 dtype (4 = f32, 8 = f64)
//! u32 meta_len  meta_len bytes of JSON metadata
//! u32 record_count
//! record_count × { u32 name_len, name (UTF-8), u32 ndim, ndim × u64 dim, values }
//! u32 CRC32 of every preceding byte
//! ```
//!
//! Parameters are stored as `param/<name>`, Adam moments as `adam.m/<name>`
//! and `adam.v/<name>`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Adam, ParamStore, Real, Tensor};
use crate::scene::Scene;

pub const MAGIC: &[u8; 4] = b"ORST";
pub const VERSION: u32 = 1;

/// Everything in a checkpoint that is not a tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// `"embedder"`, `"restorer"` or `"features"`.
    pub kind: String,
    pub labels: Vec<String>,
    pub step: u64,
    pub epoch: u64,
    /// Training randomness is a pure function of `(seed, epoch, step)`, so the
    /// seed plus counters is the full RNG state.
    pub seed: u64,
    pub config: serde_json::Value,
    /// Names of parameters that are not optimized (buffers).
    pub buffers: Vec<String>,
}

impl CheckpointMeta {
    pub fn new(kind: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            kind: kind.to_string(),
            labels: Scene::ALL.iter().map(|s| s.label().to_string()).collect(),
            step: 0,
            epoch: 0,
            seed,
            config,
            buffers: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor<T>)>,
}

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl<T: Real> Checkpoint<T> {
    /// Snapshot of a store and, if it has taken steps, its optimizer.
    pub fn capture(mut meta: CheckpointMeta, store: &ParamStore<T>, adam: Option<&Adam<T>>) -> Self {
        let mut tensors: Vec<(String, Tensor<T>)> =
            store.iter().map(|(_, p)| (format!("param/{}", p.name), p.value.clone())).collect();
        meta.buffers = store.iter().filter(|(_, p)| !p.trainable).map(|(_, p)| p.name.clone()).collect();
        if let Some(a) = adam {
            let (m, v) = a.moments();
            if m.len() == store.len() {
                for ((_, p), (mt, vt)) in store.iter().zip(m.iter().zip(v)) {
                    tensors.push((format!("adam.m/{}", p.name), mt.clone()));
                    tensors.push((format!("adam.v/{}", p.name), vt.clone()));
                }
            }
            meta.step = a.step_count();
        }
        Self { meta, tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies every parameter of `store` from the checkpoint; a missing name
    /// or a shape mismatch is an error.
    pub fn load_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.get(id).name.clone();
            let t = self
                .get(&format!("param/{name}"))
                .ok_or_else(|| ck(format!("missing parameter '{name}'")))?;
            store
                .set_value(id, t.clone())
                .map_err(|e| ck(format!("parameter '{name}': {e}")))?;
        }
        Ok(())
    }

    /// Optimizer state aligned with `store`, if the checkpoint has one.
    pub fn adam(&self, store: &ParamStore<T>) -> Result<Option<Adam<T>>> {
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (_, p) in store.iter() {
            match (self.get(&format!("adam.m/{}", p.name)), self.get(&format!("adam.v/{}", p.name))) {
                (Some(a), Some(b)) => {
                    m.push(a.clone());
                    v.push(b.clone());
                }
                _ => return Ok(None),
            }
        }
        let mut adam = Adam::new(0.9, 0.999);
        adam.restore(self.meta.step, m, v)?;
        Ok(Some(adam))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::BYTES as u8);
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 4 + 1 + 4 + 4 + 4 || &bytes[..4] != MAGIC {
            return Err(ck("not an ORST checkpoint"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(ck("CRC mismatch; file is corrupt or truncated"));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(ck(format!("unsupported version {version}")));
        }
        let dtype = r.take(1)?[0] as usize;
        if dtype != T::BYTES {
            return Err(ck(format!("stored element size {dtype} bytes, expected {}", T::BYTES)));
        }
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let nl = r.u32()? as usize;
            let name = String::from_utf8(r.take(nl)?.to_vec()).map_err(|_| ck("record name is not UTF-8"))?;
            let ndim = r.u32()? as usize;
            let shape: Vec<usize> = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(T::BYTES).ok_or_else(|| ck("record too large"))?)?;
            let data: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        if r.pos != body.len() {
            return Err(ck("trailing bytes after last record"));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => ck(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.meta.kind != kind {
            return Err(ck(format!("expected a {kind} checkpoint, found '{}'", self.meta.kind)));
        }
        let labels: Vec<&str> = Scene::ALL.iter().map(|s| s.label()).collect();
        if self.meta.labels != labels {
            return Err(ck(format!("label order {:?} does not match {:?}", self.meta.labels, labels)));
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| ck("truncated record"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
