//! Named parameter storage shared by the encoder, the classifiers and the optimiser.
//!
//! Every trainable tensor is a row-major `Array2<f64>` (biases are `1 × h`).
//! Gradients use the same container keyed by the same names.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.tensors.get_mut(name)
    }

    /// Panicking accessor for names the caller registered itself.
    pub fn tensor(&self, name: &str) -> &Array2<f64> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not registered"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Array2<f64>> {
        self.tensors.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array2<f64>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Adds `grad` into the slot `name`, creating a zero slot of the same shape if needed.
    pub fn accumulate(&mut self, name: &str, grad: &Array2<f64>) {
        match self.tensors.get_mut(name) {
            Some(slot) => *slot += grad,
            None => {
                self.tensors.insert(name.to_string(), grad.clone());
            }
        }
    }

    pub fn merge_add(&mut self, other: &ParamStore) {
        for (name, g) in other.iter() {
            self.accumulate(name, g);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors.values_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Array2::zeros(v.raw_dim())))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// SHA-256 over names, shapes and the little-endian bytes of every value.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, t) in &self.tensors {
            hasher.update(name.as_bytes());
            hasher.update((t.nrows() as u64).to_le_bytes());
            hasher.update((t.ncols() as u64).to_le_bytes());
            for v in t.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

/// Normal(0, std) initialisation.
pub fn normal_init(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}


/// Registry names of the classifier matrices.
pub mod names {
    /// Source identity classifier, `m × n`.
    pub const W_ID: &str = "cls.id";
    /// Joint camera classifier, `(k_s + k_t) × n`.
    pub const W_CAM: &str = "cls.cam";
    /// Target cluster classifier, `k × n`.
    pub const W_T_ID: &str = "cls.t_id";
    /// Target intra-camera identity classifier.
    pub const W_T_INTRA: &str = "cls.t_intra";
}

/// Raw little-endian `f64` blobs with SHA-256 checksums.
pub mod blob {
    use std::path::Path;

    use ndarray::Array2;
    use sha2::{Digest, Sha256};

    use crate::{Error, Result};

    pub fn sha256_hex(bytes: &[u8]) -> String {
        hex::encode(Sha256::digest(bytes))
    }

    /// Writes `t` and returns the hex checksum of the bytes written.
    pub fn write(path: &Path, t: &Array2<f64>) -> Result<String> {
        let bytes: Vec<u8> = t.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(sha256_hex(&bytes))
    }

    pub fn read(path: &Path, shape: (usize, usize), checksum: &str) -> Result<Array2<f64>> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if sha256_hex(&bytes) != checksum {
            return Err(Error::Checksum {
                path: path.to_path_buf(),
            });
        }
        if bytes.len() != shape.0 * shape.1 * 8 {
            return Err(Error::Checkpoint(format!(
                "{}: {} bytes do not hold a {}×{} f64 tensor",
                path.display(),
                bytes.len(),
                shape.0,
                shape.1
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Array2::from_shape_vec(shape, values).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
