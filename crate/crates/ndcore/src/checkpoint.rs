//! Versioned binary tensor container.
//!
//! ```text
//! magic      8 bytes  "NDCKPT\0\x01"
//! version    u32 LE
//! hash       u32 LE length + UTF-8 config hash
//! meta       u32 LE count, then (u32 len + key, u32 len + value) pairs
//! tensors    u32 LE count, then per tensor:
//!              u32 len + UTF-8 name, u32 ndims, u64 LE dims, f32 LE values
//! checksum   32 bytes, SHA-256 of everything above
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::{Error, Mlp, Real, Result};

pub const MAGIC: &[u8; 8] = b"NDCKPT\0\x01";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "tensor {name}: dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        Ok(Self { name, dims, data })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub config_hash: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self { config_hash: config_hash.into(), ..Default::default() }
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("missing metadata key {key}")))
    }

    /// Stores every layer of `mlp` as `{prefix}.{l}.weight` / `.bias`.
    pub fn push_mlp<T: Real>(&mut self, prefix: &str, mlp: &Mlp<T>) {
        for (l, layer) in mlp.layers().iter().enumerate() {
            let (o, i) = layer.weight.dim();
            self.tensors.push(Tensor {
                name: format!("{prefix}.{l}.weight"),
                dims: vec![o, i],
                data: layer.weight.iter().map(|x| x.to_f64() as f32).collect(),
            });
            self.tensors.push(Tensor {
                name: format!("{prefix}.{l}.bias"),
                dims: vec![o],
                data: layer.bias.iter().map(|x| x.to_f64() as f32).collect(),
            });
        }
        self.meta.insert(format!("{prefix}.depth"), mlp.depth().to_string());
        self.meta.insert(format!("{prefix}.activation"), mlp.activation().name().to_string());
    }

    pub fn read_mlp<T: Real>(&self, prefix: &str) -> Result<Mlp<T>> {
        let depth: usize = self
            .meta(&format!("{prefix}.depth"))?
            .parse()
            .map_err(|_| Error::Format(format!("bad depth for {prefix}")))?;
        let act_name = self.meta(&format!("{prefix}.activation"))?;
        let activation = crate::Activation::from_name(act_name)
            .ok_or_else(|| Error::Format(format!("unknown activation {act_name}")))?;
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let w = self.tensor(&format!("{prefix}.{l}.weight"))?;
            let b = self.tensor(&format!("{prefix}.{l}.bias"))?;
            if w.dims.len() != 2 || b.dims.len() != 1 {
                return Err(Error::Format(format!("layer {prefix}.{l} has wrong rank")));
            }
            let weight = ndarray::Array2::from_shape_vec(
                (w.dims[0], w.dims[1]),
                w.data.iter().map(|&x| T::from_f64(x as f64)).collect(),
            )
            .map_err(|e| Error::Format(e.to_string()))?;
            let bias = ndarray::Array1::from_vec(b.data.iter().map(|&x| T::from_f64(x as f64)).collect());
            layers.push(crate::Layer::new(weight, bias)?);
        }
        Mlp::from_layers(layers, activation)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut buf, &self.config_hash);
        buf.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut buf, k);
            put_str(&mut buf, v);
        }
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut buf, &t.name);
            buf.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in &t.data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 {
            return Err(Error::Format("file too short".into()));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(Error::Format("checksum mismatch".into()));
        }
        let mut r = body;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = get_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let config_hash = get_str(&mut r)?;
        let n_meta = get_u32(&mut r)?;
        let mut meta = BTreeMap::new();
        for _ in 0..n_meta {
            let k = get_str(&mut r)?;
            let v = get_str(&mut r)?;
            meta.insert(k, v);
        }
        let n_tensors = get_u32(&mut r)?;
        let mut tensors = Vec::with_capacity(n_tensors as usize);
        for _ in 0..n_tensors {
            let name = get_str(&mut r)?;
            let ndims = get_u32(&mut r)? as usize;
            let mut dims = Vec::with_capacity(ndims);
            for _ in 0..ndims {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                dims.push(u64::from_le_bytes(b) as usize);
            }
            let count: usize = dims.iter().product();
            if count.saturating_mul(4) > r.len() {
                return Err(Error::Format(format!("tensor {name} truncated")));
            }
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                data.push(f32::from_le_bytes(b));
            }
            tensors.push(Tensor { name, dims, data });
        }
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes before checksum".into()));
        }
        Ok(Self { config_hash, meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn get_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("unexpected end of file".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn get_str(r: &mut &[u8]) -> Result<String> {
    let len = get_u32(r)? as usize;
    if len > r.len() {
        return Err(Error::Format("string runs past end of file".into()));
    }
    let (s, rest) = r.split_at(len);
    *r = rest;
    String::from_utf8(s.to_vec()).map_err(|_| Error::Format("invalid UTF-8".into()))
}
