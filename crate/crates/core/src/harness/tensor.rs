//! `LTNS1` tensor container.
//!
//! ```text
//! file    := "LTNS1" section*
//! section := name_len:u16 name:utf8[name_len] rank:u32 dims:u32[rank] payload:f32[prod(dims)]
//! ```
//!
//! All integers and floats are little-endian; payloads are row-major.
//! Sections follow one another until end of file.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"LTNS1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidInput(format!(
                "tensor of shape {dims:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|v| *v as f32).collect())
    }

    pub fn vector(data: &[f64]) -> Self {
        Tensor {
            dims: vec![data.len()],
            data: data.iter().map(|v| *v as f32).collect(),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            dims: vec![],
            data: vec![value as f32],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| f64::from(*v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorContainer {
    sections: Vec<(String, Tensor)>,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a section, replacing an existing one of the same name in place.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.sections.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.sections.push((name, tensor)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::InvalidInput(format!("container has no section '{name}'")))
    }

    pub fn sections(&self) -> &[(String, Tensor)] {
        &self.sections
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        for (name, t) in &self.sections {
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::InvalidInput(format!("section name too long: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let rank = u32::try_from(t.dims.len())
                .map_err(|_| Error::InvalidInput(format!("section '{name}' rank too large")))?;
            out.extend_from_slice(&rank.to_le_bytes());
            for d in &t.dims {
                let d = u32::try_from(*d)
                    .map_err(|_| Error::InvalidInput(format!("section '{name}' dim too large")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a container; `origin` names the source in error messages.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(MAGIC.len(), "magic").ok() != Some(&MAGIC[..]) {
            return Err(Error::format(origin, "bad magic, expected LTNS1"));
        }
        let mut container = TensorContainer::new();
        while r.pos < bytes.len() {
            let name_len = u16::from_le_bytes(r.array("section name length")?) as usize;
            let name = std::str::from_utf8(r.take(name_len, "section name")?)
                .map_err(|_| Error::format(origin, "section name is not UTF-8"))?
                .to_owned();
            let ctx = format!("section '{name}'");
            let rank = u32::from_le_bytes(r.array(&ctx)?) as usize;
            let mut dims = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                dims.push(u32::from_le_bytes(r.array(&ctx)?) as usize);
            }
            let count = dims
                .iter()
                .try_fold(1usize, |acc, d| acc.checked_mul(*d))
                .and_then(|c| c.checked_mul(4).map(|_| c))
                .ok_or_else(|| Error::format(origin, format!("{ctx}: dims {dims:?} overflow")))?;
            let remaining = bytes.len() - r.pos;
            if remaining < count * 4 {
                return Err(Error::format(
                    origin,
                    format!(
                        "{ctx}: dims {dims:?} need {} payload bytes, only {remaining} remain",
                        count * 4
                    ),
                ));
            }
            let payload = r.take(count * 4, &ctx)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            container.sections.push((name, Tensor { dims, data }));
        }
        Ok(container)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.origin, format!("truncated while reading {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let s = self.take(N, what)?;
        Ok(s.try_into().expect("length checked"))
    }
}

pub fn save_tensor(path: impl AsRef<Path>, container: &TensorContainer) -> Result<()> {
    fs::write(path, container.to_bytes()?)?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<TensorContainer> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    TensorContainer::from_bytes(&bytes, path)
}
