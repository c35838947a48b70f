//! Named parameter registry and its binary weight-file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"AVWT"
//! u32     format version (1)
//! u8      precision (0 = f64, 1 = f32)
//! u32     metadata length, then that many bytes of UTF-8 JSON (may be empty)
//! u32     entry count
//! entry:  u32 name length, name bytes, u32 ndim, u64 × ndim dims, f64 × numel values
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::tensor::{Precision, Tensor};
use crate::error::{Error, Result};

pub const WEIGHT_MAGIC: &[u8; 4] = b"AVWT";
pub const WEIGHT_FORMAT_VERSION: u32 = 1;

/// Registry of named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Arc<Tensor>>,
    /// Free-form JSON carried in the weight-file header (model configuration).
    pub metadata: String,
    pub precision: Option<Precision>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.insert(name.into(), Arc::new(t));
    }

    pub fn get(&self, name: &str) -> Result<&Arc<Tensor>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Lookup(format!("parameter '{name}' not in registry")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(Arc::make_mut)
            .ok_or_else(|| Error::Lookup(format!("parameter '{name}' not in registry")))
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.entries.remove(name).map(Arc::unwrap_or_clone)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    /// Checks that `self` holds exactly the names and shapes of `reference`.
    pub fn validate_against(&self, reference: &ParamStore) -> Result<()> {
        for (name, t) in &self.entries {
            match reference.entries.get(name) {
                None => {
                    return Err(Error::WeightFormat(format!(
                        "parameter '{name}' is not part of the model registry"
                    )))
                }
                Some(r) if r.shape() != t.shape() => {
                    return Err(Error::WeightFormat(format!(
                        "parameter '{name}' has shape {:?}, model expects {:?}",
                        t.shape(),
                        r.shape()
                    )))
                }
                _ => {}
            }
        }
        if let Some(missing) = reference.entries.keys().find(|k| !self.entries.contains_key(*k)) {
            return Err(Error::WeightFormat(format!("parameter '{missing}' missing from weights")));
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(WEIGHT_MAGIC)?;
        w.write_all(&WEIGHT_FORMAT_VERSION.to_le_bytes())?;
        let prec = match self.precision.unwrap_or(super::tensor::precision()) {
            Precision::F64 => 0u8,
            Precision::F32 => 1u8,
        };
        w.write_all(&[prec])?;
        w.write_all(&(self.metadata.len() as u32).to_le_bytes())?;
        w.write_all(self.metadata.as_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for d in t.shape() {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != WEIGHT_MAGIC {
            return Err(Error::WeightFormat("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != WEIGHT_FORMAT_VERSION {
            return Err(Error::WeightFormat(format!("unsupported version {version}")));
        }
        let mut prec = [0u8; 1];
        r.read_exact(&mut prec)?;
        let precision = match prec[0] {
            0 => Precision::F64,
            1 => Precision::F32,
            p => return Err(Error::WeightFormat(format!("unknown precision tag {p}"))),
        };
        let meta_len = read_u32(&mut r)? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let metadata =
            String::from_utf8(meta).map_err(|_| Error::WeightFormat("metadata not UTF-8".into()))?;
        let count = read_u32(&mut r)? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name =
                String::from_utf8(name).map_err(|_| Error::WeightFormat("name not UTF-8".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            if entries.insert(name.clone(), Arc::new(Tensor::new(shape, data)?)).is_some() {
                return Err(Error::WeightFormat(format!("duplicate parameter '{name}'")));
            }
        }
        Ok(Self { entries, metadata, precision: Some(precision) })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path.as_ref())?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let mut p = ParamStore::new();
        p.insert("a.weight", Tensor::matrix(2, 2, vec![0.1, -2.5e-300, f64::MAX, 3.0]).unwrap());
        p.insert("a.bias", Tensor::vector(vec![1.0 / 3.0, -0.0]));
        p.metadata = "{\"k\":1}".into();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        let q = ParamStore::read_from(buf.as_slice()).unwrap();
        for (name, t) in p.iter() {
            let u = q.get(name).unwrap();
            let a: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = u.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        assert_eq!(q.metadata, p.metadata);
    }

    #[test]
    fn unknown_name_fails_validation() {
        let mut model = ParamStore::new();
        model.insert("x", Tensor::zeros(&[2]));
        let mut loaded = model.clone();
        loaded.insert("y", Tensor::zeros(&[1]));
        assert!(loaded.validate_against(&model).is_err());
        let empty = ParamStore::new();
        assert!(empty.validate_against(&model).is_err());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::zeros(&[3, 3]));
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 5);
        assert!(ParamStore::read_from(buf.as_slice()).is_err());
    }
}
