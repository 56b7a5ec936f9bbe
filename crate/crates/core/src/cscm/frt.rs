//! Feature recombination by task.
//!
//! Each identity row of the pre-trained classifier keeps its largest half of
//! weights (descending signed order, stable); the camera classifier may only
//! use the channels the predicted identity row dropped. A sample's feature is
//! then split into an identity half and a camera half along that partition.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::math::{argmax, softmax};
use crate::parallel::{map_range, Exec};
use crate::params::blob;
use crate::{Error, Result};

/// Complementary identity/camera channel masks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMaskPair {
    pub identity: Vec<bool>,
    pub camera: Vec<bool>,
}

impl ChannelMaskPair {
    /// Camera mask is the complement of `identity_keep`.
    pub fn from_identity_keep(identity_keep: &[bool]) -> Self {
        Self {
            identity: identity_keep.to_vec(),
            camera: identity_keep.iter().map(|&k| !k).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.identity.len()
    }

    pub fn identity_indices(&self) -> Vec<usize> {
        positions(&self.identity)
    }

    pub fn camera_indices(&self) -> Vec<usize> {
        positions(&self.camera)
    }

    /// Disjoint, covering, and balanced.
    pub fn is_partition(&self) -> bool {
        let n = self.width();
        self.camera.len() == n
            && n % 2 == 0
            && self.identity.iter().zip(&self.camera).all(|(a, b)| a ^ b)
            && self.identity.iter().filter(|&&b| b).count() == n / 2
    }
}

fn positions(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect()
}

/// Highest-scoring identity; ties go to the lowest index.
pub fn predict_identity_index(f: ArrayView1<f64>, w_id: ArrayView2<f64>) -> Result<usize> {
    if f.len() != w_id.ncols() {
        return Err(Error::Shape(format!(
            "feature width {} vs classifier width {}",
            f.len(),
            w_id.ncols()
        )));
    }
    Ok(argmax(w_id.dot(&f).view()))
}

/// Zeroes all but the `n · keep_fraction` largest entries (descending signed
/// order, stable on ties); survivors stay in place. Returns the row and its keep mask.
pub fn deactivate_row(row: ArrayView1<f64>, keep_fraction: f64) -> Result<(Array1<f64>, Vec<bool>)> {
    let n = row.len();
    let keep = keep_fraction * n as f64;
    if !(0.0..=1.0).contains(&keep_fraction) || (keep - keep.round()).abs() > 1e-9 {
        return Err(Error::Shape(format!(
            "keep fraction {keep_fraction} of width {n} is not a whole number of channels"
        )));
    }
    let keep = keep.round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps earlier channels first among equal values.
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
    let mut mask = vec![false; n];
    for &i in &order[..keep] {
        mask[i] = true;
    }
    let out = Array1::from_iter(row.iter().zip(&mask).map(|(&v, &m)| if m { v } else { 0.0 }));
    Ok((out, mask))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeactivatedIdentity {
    pub weights: Array2<f64>,
    /// One keep mask per identity row.
    pub keep_masks: Vec<Vec<bool>>,
}

/// Applies [`deactivate_row`] to every row independently.
pub fn build_deactivated_identity_classifier(
    w_id: ArrayView2<f64>,
    keep_fraction: f64,
    exec: Exec,
) -> Result<DeactivatedIdentity> {
    let rows = map_range(exec, w_id.nrows(), |r| deactivate_row(w_id.row(r), keep_fraction));
    let mut weights = Array2::zeros(w_id.raw_dim());
    let mut keep_masks = Vec::with_capacity(rows.len());
    for (r, res) in rows.into_iter().enumerate() {
        let (row, mask) = res?;
        weights.row_mut(r).assign(&row);
        keep_masks.push(mask);
    }
    Ok(DeactivatedIdentity {
        weights,
        keep_masks,
    })
}

/// A camera row survives only on channels the identity row deactivated.
pub fn deactivated_camera_row(cam_row: ArrayView1<f64>, identity_keep: &[bool]) -> Result<Array1<f64>> {
    if cam_row.len() != identity_keep.len() {
        return Err(Error::Shape(format!(
            "camera row width {} vs mask width {}",
            cam_row.len(),
            identity_keep.len()
        )));
    }
    Ok(Array1::from_iter(
        cam_row
            .iter()
            .zip(identity_keep)
            .map(|(&v, &k)| if k { 0.0 } else { v }),
    ))
}

/// Every camera row masked by the complement of one identity keep mask.
pub fn build_deactivated_camera_classifier(
    w_cam: ArrayView2<f64>,
    identity_keep: &[bool],
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(w_cam.raw_dim());
    for (r, row) in w_cam.rows().into_iter().enumerate() {
        out.row_mut(r).assign(&deactivated_camera_row(row, identity_keep)?);
    }
    Ok(out)
}

/// Columns of `w` at `indices`, in the given order.
pub fn gather(w: ArrayView2<f64>, indices: &[usize]) -> Array2<f64> {
    w.select(Axis(1), indices)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecombinedFeaturePair {
    pub identity_half: Array1<f64>,
    pub camera_half: Array1<f64>,
    pub identity_indices: Vec<usize>,
    pub camera_indices: Vec<usize>,
}

/// Splits `f` along `masks` and gathers the matching classifier rows with the
/// same index lists, so gathered dot products equal masked full-width ones.
pub fn recombine(
    f: ArrayView1<f64>,
    masks: &ChannelMaskPair,
    w_id0_row: ArrayView1<f64>,
    w_cam0_row: ArrayView1<f64>,
) -> Result<(RecombinedFeaturePair, Array1<f64>, Array1<f64>)> {
    let n = f.len();
    if masks.width() != n || w_id0_row.len() != n || w_cam0_row.len() != n {
        return Err(Error::Shape("recombination inputs must share one width".into()));
    }
    if !masks.is_partition() {
        return Err(Error::Shape(
            "channel masks must be complementary with n/2 ones each".into(),
        ));
    }
    let id_idx = masks.identity_indices();
    let cam_idx = masks.camera_indices();
    let pick = |v: ArrayView1<f64>, idx: &[usize]| Array1::from_iter(idx.iter().map(|&i| v[i]));
    let pair = RecombinedFeaturePair {
        identity_half: pick(f, &id_idx),
        camera_half: pick(f, &cam_idx),
        identity_indices: id_idx.clone(),
        camera_indices: cam_idx.clone(),
    };
    Ok((pair, pick(w_id0_row, &id_idx), pick(w_cam0_row, &cam_idx)))
}

/// Per-sample routing decided once from the frozen classifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRoute {
    pub sample_id: String,
    /// Predicted identity row whose keep mask defines the partition.
    pub identity_index: usize,
    /// Camera row in the joint camera space.
    pub camera_index: usize,
    /// The camera prediction was below the confidence floor and the label was used.
    pub camera_fallback: bool,
}

/// Frozen recombination state for the CSCM stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FrtState {
    pub keep_fraction: f64,
    pub identity: DeactivatedIdentity,
    /// Frozen camera classifier, `(k_s + k_t) × n`.
    pub camera_weights: Array2<f64>,
    pub routes: Vec<SampleRoute>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrtIndex {
    version: u32,
    keep_fraction: f64,
    identity_rows: usize,
    camera_rows: usize,
    width: usize,
    w_id0: BlobEntry,
    w_cam: BlobEntry,
    keep_masks: BlobEntry,
    routes: Vec<SampleRoute>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobEntry {
    file: String,
    sha256: String,
}

/// Confidence below which the camera label replaces the camera prediction.
pub const CAMERA_CONFIDENCE_FLOOR: f64 = 0.5;

impl FrtState {
    /// Builds masks for every sample in `features` (one row each).
    pub fn build(
        features: ArrayView2<f64>,
        sample_ids: &[String],
        joint_cameras: &[usize],
        w_id: ArrayView2<f64>,
        w_cam: ArrayView2<f64>,
        keep_fraction: f64,
        exec: Exec,
    ) -> Result<Self> {
        if features.ncols() != w_id.ncols() || w_cam.ncols() != w_id.ncols() {
            return Err(Error::Shape("classifier widths must match the features".into()));
        }
        let identity = build_deactivated_identity_classifier(w_id, keep_fraction, exec)?;
        let routes = map_range(exec, features.nrows(), |i| {
            let f = features.row(i);
            let identity_index = argmax(w_id.dot(&f).view());
            let p = softmax(w_cam.dot(&f).view());
            let predicted = argmax(p.view());
            let camera_fallback = p[predicted] < CAMERA_CONFIDENCE_FLOOR;
            SampleRoute {
                sample_id: sample_ids[i].clone(),
                identity_index,
                camera_index: if camera_fallback {
                    joint_cameras[i]
                } else {
                    predicted
                },
                camera_fallback,
            }
        });
        Ok(Self {
            keep_fraction,
            identity,
            camera_weights: w_cam.to_owned(),
            routes,
        })
    }

    pub fn masks_for_identity(&self, identity_index: usize) -> ChannelMaskPair {
        ChannelMaskPair::from_identity_keep(&self.identity.keep_masks[identity_index])
    }

    pub fn masks_for_sample(&self, sample: usize) -> ChannelMaskPair {
        self.masks_for_identity(self.routes[sample].identity_index)
    }

    /// Camera classifier restricted to the channels the identity row dropped.
    pub fn camera_classifier_for(&self, identity_index: usize) -> Array2<f64> {
        build_deactivated_camera_classifier(
            self.camera_weights.view(),
            &self.identity.keep_masks[identity_index],
        )
        .expect("widths checked at build time")
    }

    /// Writes blobs plus a JSON index into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let masks = Array2::from_shape_fn(
            (self.identity.keep_masks.len(), self.camera_weights.ncols()),
            |(r, c)| if self.identity.keep_masks[r][c] { 1.0 } else { 0.0 },
        );
        let entry = |name: &str, t: &Array2<f64>| -> Result<BlobEntry> {
            Ok(BlobEntry {
                file: name.to_string(),
                sha256: blob::write(&dir.join(name), t)?,
            })
        };
        let index = FrtIndex {
            version: 1,
            keep_fraction: self.keep_fraction,
            identity_rows: self.identity.weights.nrows(),
            camera_rows: self.camera_weights.nrows(),
            width: self.camera_weights.ncols(),
            w_id0: entry("w_id0.bin", &self.identity.weights)?,
            w_cam: entry("w_cam.bin", &self.camera_weights)?,
            keep_masks: entry("keep_masks.bin", &masks)?,
            routes: self.routes.clone(),
        };
        let path = dir.join("index.json");
        let json = serde_json::to_vec_pretty(&index)?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("index.json");
        let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let index: FrtIndex = serde_json::from_slice(&text)?;
        if index.version != 1 {
            return Err(Error::Checkpoint(format!(
                "unsupported recombination index version {}",
                index.version
            )));
        }
        let read = |e: &BlobEntry, rows| blob::read(&dir.join(&e.file), (rows, index.width), &e.sha256);
        let weights = read(&index.w_id0, index.identity_rows)?;
        let camera_weights = read(&index.w_cam, index.camera_rows)?;
        let masks = read(&index.keep_masks, index.identity_rows)?;
        let keep_masks = masks
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&v| v != 0.0).collect())
            .collect();
        Ok(Self {
            keep_fraction: index.keep_fraction,
            identity: DeactivatedIdentity {
                weights,
                keep_masks,
            },
            camera_weights,
            routes: index.routes,
        })
    }
}
