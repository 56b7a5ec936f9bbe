//! Checkpoint directories: a JSON index plus one checksummed little-endian
//! f64 blob per tensor.

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cscm::FrtState;
use crate::params::{blob, ParamStore};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    file: String,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    version: u32,
    epoch: usize,
    seed: u64,
    config: String,
    rng: ChaCha8Rng,
    params: Vec<TensorEntry>,
    momentum: Vec<TensorEntry>,
    has_frt: bool,
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Number of completed epochs.
    pub epoch: usize,
    pub seed: u64,
    /// Training configuration as flat TOML.
    pub config: String,
    pub rng: ChaCha8Rng,
    pub params: ParamStore,
    pub momentum: ParamStore,
    pub frt: Option<FrtState>,
}

fn write_store(store: &ParamStore, dir: &Path, sub: &str) -> Result<Vec<TensorEntry>> {
    let folder = dir.join(sub);
    std::fs::create_dir_all(&folder).map_err(|e| Error::io(&folder, e))?;
    store
        .iter()
        .map(|(name, t)| {
            let file = format!("{sub}/{name}.bin");
            let sha256 = blob::write(&dir.join(&file), t)?;
            Ok(TensorEntry {
                name: name.to_string(),
                rows: t.nrows(),
                cols: t.ncols(),
                file,
                sha256,
            })
        })
        .collect()
}

fn read_store(entries: &[TensorEntry], dir: &Path) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for e in entries {
        let t = blob::read(&dir.join(&e.file), (e.rows, e.cols), &e.sha256)?;
        store.insert(e.name.clone(), t);
    }
    Ok(store)
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let params = write_store(&self.params, dir, "params")?;
        let momentum = write_store(&self.momentum, dir, "momentum")?;
        if let Some(frt) = &self.frt {
            frt.save(&dir.join("frt"))?;
        }
        let meta = Meta {
            version: CHECKPOINT_VERSION,
            epoch: self.epoch,
            seed: self.seed,
            config: self.config.clone(),
            rng: self.rng.clone(),
            params,
            momentum,
            has_frt: self.frt.is_some(),
        };
        let path = dir.join("meta.json");
        std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("meta.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: Meta = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if meta.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                meta.version
            )));
        }
        Ok(Self {
            epoch: meta.epoch,
            seed: meta.seed,
            config: meta.config,
            rng: meta.rng,
            params: read_store(&meta.params, dir)?,
            momentum: read_store(&meta.momentum, dir)?,
            frt: if meta.has_frt {
                Some(FrtState::load(&dir.join("frt"))?)
            } else {
                None
            },
        })
    }
}

/// `<root>/epoch-NNNN`.
pub fn checkpoint_dir(root: &Path, epoch: usize) -> PathBuf {
    root.join(format!("epoch-{epoch:04}"))
}

/// The checkpoint named by `<root>/LATEST`.
pub fn latest_checkpoint(root: &Path) -> Result<PathBuf> {
    let marker = root.join("LATEST");
    let name = std::fs::read_to_string(&marker).map_err(|e| Error::io(&marker, e))?;
    Ok(root.join(name.trim()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{RngCore, SeedableRng};

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        params.insert("encoder.w_in", array![[1.0, -2.5], [0.125, 3.0]]);
        let mut momentum = ParamStore::new();
        momentum.insert("encoder.w_in", array![[0.1, 0.2], [0.3, 0.4]]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        rng.next_u64();
        Checkpoint {
            epoch: 7,
            seed: 5,
            config: "k = 3\n".into(),
            rng,
            params,
            momentum,
            frt: None,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let c = sample();
        c.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back, c);
        let (mut a, mut b) = (c.rng.clone(), back.rng.clone());
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn tampered_blob_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let p = dir.path().join("params/encoder.w_in.bin");
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[3] ^= 0x40;
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Checksum { .. })));
    }

    #[test]
    fn version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let p = dir.path().join("meta.json");
        let text = std::fs::read_to_string(&p).unwrap().replace("\"version\": 1", "\"version\": 99");
        std::fs::write(&p, text).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Checkpoint(_))));
    }
}
