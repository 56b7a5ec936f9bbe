use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::DatasetManifest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SctReport {
    pub is_sct: bool,
    /// Original labels of identities seen under two or more cameras.
    pub violating_identity_ids: Vec<u64>,
    /// Unordered sample pairs sharing an identity but not a camera.
    pub cross_camera_positive_pairs: u64,
    pub num_samples: usize,
    pub num_identities: usize,
    pub num_cameras: usize,
}

pub fn validate_sct(manifest: &DatasetManifest) -> SctReport {
    // identity -> camera -> count
    let mut per_identity: BTreeMap<usize, BTreeMap<usize, u64>> = BTreeMap::new();
    for s in &manifest.samples {
        *per_identity
            .entry(s.identity)
            .or_default()
            .entry(s.camera)
            .or_default() += 1;
    }
    let mut violating = BTreeSet::new();
    let mut cross_pairs = 0u64;
    for (&identity, cams) in &per_identity {
        if cams.len() > 1 {
            violating.insert(manifest.identity_labels[identity]);
            let total: u64 = cams.values().sum();
            let same_cam: u64 = cams.values().map(|&c| c * (c - 1) / 2).sum();
            cross_pairs += total * (total - 1) / 2 - same_cam;
        }
    }
    SctReport {
        is_sct: violating.is_empty(),
        violating_identity_ids: violating.into_iter().collect(),
        cross_camera_positive_pairs: cross_pairs,
        num_samples: manifest.samples.len(),
        num_identities: manifest.num_identities,
        num_cameras: manifest.num_cameras,
    }
}
