//! Versioned binary container: a JSON header followed by named tensor blobs.
//!
//! Layout (little-endian): magic `MLCGCKPT`, format version `u32`, header
//! length `u64`, header JSON, blob count `u64`, then per blob in name order:
//! name length `u32`, name, dtype tag `u8` (1 = f32, 2 = f64), rank `u32`,
//! dims `u64`…, raw values.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use mlcgan_autodiff::{Element, Tensor};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::nn::Module;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MLCGCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            t => Err(Error::Checkpoint(format!("unknown dtype tag {t}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// Little-endian values.
    pub bytes: Vec<u8>,
}

impl Blob {
    pub fn from_values<T: Element>(values: &[T], shape: &[usize]) -> Self {
        let (dtype, bytes) = if T::NAME == "f64" {
            (Dtype::F64, values.iter().flat_map(|v| v.as_f64().to_le_bytes()).collect())
        } else {
            (Dtype::F32, values.iter().flat_map(|v| (v.as_f64() as f32).to_le_bytes()).collect())
        };
        Self { dtype, shape: shape.to_vec(), bytes }
    }

    pub fn from_tensor<T: Element>(t: &Tensor<T>) -> Self {
        Self::from_values(t.data(), t.shape())
    }

    pub fn values<T: Element>(&self) -> Vec<T> {
        match self.dtype {
            Dtype::F32 => self
                .bytes
                .chunks_exact(4)
                .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            Dtype::F64 => self
                .bytes
                .chunks_exact(8)
                .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        }
    }

    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::from_vec(self.values(), &self.shape)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: serde_json::Value,
    pub blobs: BTreeMap<String, Blob>,
}

impl Checkpoint {
    pub fn new(header: &impl Serialize) -> Self {
        Self { header: serde_json::to_value(header).expect("header serializes"), blobs: BTreeMap::new() }
    }

    pub fn header_as<H: DeserializeOwned>(&self) -> Result<H> {
        serde_json::from_value(self.header.clone()).map_err(|e| Error::Checkpoint(format!("header: {e}")))
    }

    pub fn put(&mut self, name: impl Into<String>, t: &Tensor<impl Element>) {
        self.blobs.insert(name.into(), Blob::from_tensor(t));
    }

    pub fn get<T: Element>(&self, name: &str) -> Result<Tensor<T>> {
        self.blobs
            .get(name)
            .map(Blob::to_tensor)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))
    }

    pub fn put_module<T: Element>(&mut self, prefix: &str, m: &impl Module<T>) {
        m.visit(prefix, &mut |name, t| self.put(name, t));
    }

    /// Replace every parameter of `m` with the stored blob of the same name.
    pub fn load_module<T: Element>(&self, prefix: &str, m: &mut impl Module<T>) -> Result<()> {
        let mut err = None;
        m.visit_mut(prefix, &mut |name, t| {
            if err.is_some() {
                return;
            }
            match self.blobs.get(name) {
                Some(b) if b.shape == t.shape() => *t = b.to_tensor::<T>().detach_param(),
                Some(b) => {
                    err = Some(Error::Checkpoint(format!(
                        "tensor {name:?} has shape {:?}, model expects {:?}",
                        b.shape,
                        t.shape()
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("missing tensor {name:?}"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.blobs.len() as u64).to_le_bytes());
        for (name, b) in &self.blobs {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(b.dtype.tag());
            out.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
            for &d in &b.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&b.bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let hlen = r.u64()? as usize;
        let header = serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let count = r.u64()?;
        let mut blobs = BTreeMap::new();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let dtype = Dtype::from_tag(r.take(1)?[0])?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let bytes = r.take(n * dtype.width())?.to_vec();
            blobs.insert(name, Blob { dtype, shape, bytes });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
        }
        Ok(Self { header, blobs })
    }

    /// Write through a temporary file and rename, so readers never see a
    /// partial checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
