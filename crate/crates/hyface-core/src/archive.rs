//! Thin wrapper around safetensors for the crate's archive files (rigs,
//! synthetic ground-truth parameters, checkpoints).
//!
//! An archive is a single safetensors file whose metadata map carries one
//! `"manifest"` entry with a JSON document. Tensors are written in sorted
//! name order and JSON objects serialize with sorted keys, so identical
//! content produces byte-identical files.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, View};

use crate::error::{Error, Result};

/// An owned tensor buffer ready for serialization.
#[derive(Debug, Clone)]
pub struct OwnedTensor {
    dtype: Dtype,
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

impl OwnedTensor {
    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        OwnedTensor {
            dtype: Dtype::F64,
            shape,
            bytes,
        }
    }

    pub fn from_f32(shape: Vec<usize>, values: &[f32]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        OwnedTensor {
            dtype: Dtype::F32,
            shape,
            bytes,
        }
    }

    pub fn from_i64(shape: Vec<usize>, values: &[i64]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        OwnedTensor {
            dtype: Dtype::I64,
            shape,
            bytes,
        }
    }
}

impl View for &OwnedTensor {
    fn dtype(&self) -> Dtype {
        self.dtype
    }

    fn shape(&self) -> &[usize] {
        &self.shape
    }

    fn data(&self) -> Cow<'_, [u8]> {
        Cow::Borrowed(&self.bytes)
    }

    fn data_len(&self) -> usize {
        self.bytes.len()
    }
}

/// Write tensors + JSON manifest to `path`.
pub fn write_archive(
    path: impl AsRef<Path>,
    tensors: &BTreeMap<String, OwnedTensor>,
    manifest: &serde_json::Value,
) -> Result<()> {
    let path = path.as_ref();
    let mut meta = HashMap::new();
    meta.insert("manifest".to_string(), manifest.to_string());
    safetensors::tensor::serialize_to_file(
        tensors.iter().map(|(k, v)| (k.as_str(), v)),
        &Some(meta),
        path,
    )
    .map_err(|e| Error::Archive(format!("writing {}: {e}", path.display())))
}

/// A loaded archive: raw tensor buffers plus the parsed manifest.
pub struct Archive {
    tensors: BTreeMap<String, (Dtype, Vec<usize>, Vec<u8>)>,
    pub manifest: serde_json::Value,
}

impl Archive {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (_, meta) = SafeTensors::read_metadata(&buf)
            .map_err(|e| Error::Archive(format!("reading {}: {e}", path.display())))?;
        let manifest = match meta.metadata() {
            Some(m) => {
                let raw = m.get("manifest").ok_or_else(|| {
                    Error::Archive(format!("{}: missing manifest entry", path.display()))
                })?;
                serde_json::from_str(raw).map_err(|e| {
                    Error::Archive(format!("{}: manifest is not JSON: {e}", path.display()))
                })?
            }
            None => {
                return Err(Error::Archive(format!(
                    "{}: archive has no metadata",
                    path.display()
                )))
            }
        };
        let st = SafeTensors::deserialize(&buf)
            .map_err(|e| Error::Archive(format!("reading {}: {e}", path.display())))?;
        let mut tensors = BTreeMap::new();
        for name in st.names() {
            let t = st
                .tensor(name)
                .map_err(|e| Error::Archive(format!("{}: {e}", path.display())))?;
            tensors.insert(
                name.clone(),
                (t.dtype(), t.shape().to_vec(), t.data().to_vec()),
            );
        }
        Ok(Archive { tensors, manifest })
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn shape(&self, name: &str) -> Result<&[usize]> {
        self.entry(name).map(|(_, s, _)| s.as_slice())
    }

    pub fn f64_vec(&self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let (dtype, shape, bytes) = self.entry(name)?;
        if *dtype != Dtype::F64 {
            return Err(Error::Archive(format!("tensor {name} is not f64")));
        }
        let vals = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((shape.clone(), vals))
    }

    pub fn f32_vec(&self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let (dtype, shape, bytes) = self.entry(name)?;
        if *dtype != Dtype::F32 {
            return Err(Error::Archive(format!("tensor {name} is not f32")));
        }
        let vals = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((shape.clone(), vals))
    }

    pub fn i64_vec(&self, name: &str) -> Result<(Vec<usize>, Vec<i64>)> {
        let (dtype, shape, bytes) = self.entry(name)?;
        if *dtype != Dtype::I64 {
            return Err(Error::Archive(format!("tensor {name} is not i64")));
        }
        let vals = bytes
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((shape.clone(), vals))
    }

    fn entry(&self, name: &str) -> Result<&(Dtype, Vec<usize>, Vec<u8>)> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Archive(format!("missing tensor: {name}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("hyface-archive-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_and_byte_determinism() {
        let mut tensors = BTreeMap::new();
        tensors.insert(
            "b".to_string(),
            OwnedTensor::from_f64(vec![2, 2], &[1.0, 2.5, -3.0, 0.125]),
        );
        tensors.insert("a".to_string(), OwnedTensor::from_i64(vec![3], &[7, -1, 0]));
        let manifest = serde_json::json!({"version": "1", "kind": "test"});
        let p1 = tmp("a1.safetensors");
        let p2 = tmp("a2.safetensors");
        write_archive(&p1, &tensors, &manifest).unwrap();
        write_archive(&p2, &tensors, &manifest).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let arc = Archive::read(&p1).unwrap();
        assert_eq!(arc.manifest["kind"], "test");
        let (shape, vals) = arc.f64_vec("b").unwrap();
        assert_eq!(shape, vec![2, 2]);
        assert_eq!(vals, vec![1.0, 2.5, -3.0, 0.125]);
        let (_, ints) = arc.i64_vec("a").unwrap();
        assert_eq!(ints, vec![7, -1, 0]);
    }

    #[test]
    fn missing_tensor_and_wrong_dtype_are_archive_errors() {
        let mut tensors = BTreeMap::new();
        tensors.insert("x".to_string(), OwnedTensor::from_f32(vec![1], &[1.0]));
        let p = tmp("b.safetensors");
        write_archive(&p, &tensors, &serde_json::json!({})).unwrap();
        let arc = Archive::read(&p).unwrap();
        assert!(matches!(arc.f64_vec("nope"), Err(Error::Archive(_))));
        assert!(matches!(arc.f64_vec("x"), Err(Error::Archive(_))));
    }
}
