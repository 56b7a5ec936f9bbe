//! PK mini-batch sampling: `P` groups × `K` instances per half-batch.
//!
//! Source groups are identities; target groups are intra-camera classes
//! (camera, local identity), which is all the supervision SCT provides.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DatasetManifest;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PkPolicy {
    pub groups: usize,
    pub instances: usize,
}

impl Default for PkPolicy {
    /// 4 × 2 = 8 samples per half, 16 per batch.
    fn default() -> Self {
        Self {
            groups: 4,
            instances: 2,
        }
    }
}

impl PkPolicy {
    pub fn batch_size(&self) -> usize {
        self.groups * self.instances
    }
}

#[derive(Debug, Clone)]
pub struct PkSampler {
    /// Sample indices per group, groups in ascending key order.
    groups: Vec<Vec<usize>>,
    policy: PkPolicy,
}

impl PkSampler {
    pub fn by_identity(manifest: &DatasetManifest, policy: PkPolicy) -> Result<Self> {
        Self::from_keys(manifest.samples.iter().map(|s| s.identity), policy)
    }

    pub fn by_intra_camera_class(manifest: &DatasetManifest, policy: PkPolicy) -> Result<Self> {
        Self::from_keys(
            manifest.samples.iter().map(|s| (s.camera, s.identity)),
            policy,
        )
    }

    fn from_keys<K: Ord>(keys: impl Iterator<Item = K>, policy: PkPolicy) -> Result<Self> {
        let mut map: BTreeMap<K, Vec<usize>> = BTreeMap::new();
        for (i, k) in keys.enumerate() {
            map.entry(k).or_default().push(i);
        }
        if policy.groups == 0 || policy.instances == 0 {
            return Err(Error::Config("PK policy needs P > 0 and K > 0".into()));
        }
        if map.len() < policy.groups {
            return Err(Error::Config(format!(
                "PK policy wants {} groups per batch but only {} exist",
                policy.groups,
                map.len()
            )));
        }
        if map.len() < 2 {
            return Err(Error::Config(
                "batch-hard triplets need at least two groups".into(),
            ));
        }
        Ok(Self {
            groups: map.into_values().collect(),
            policy,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Draws one half-batch: sample indices and whether any group was drawn with replacement.
    pub fn sample(&self, rng: &mut impl Rng) -> (Vec<usize>, bool) {
        let mut out = Vec::with_capacity(self.policy.batch_size());
        let mut replaced = false;
        for g in index::sample(rng, self.groups.len(), self.policy.groups) {
            let members = &self.groups[g];
            if members.len() >= self.policy.instances {
                for j in index::sample(rng, members.len(), self.policy.instances) {
                    out.push(members[j]);
                }
            } else {
                replaced = true;
                for _ in 0..self.policy.instances {
                    out.push(members[rng.random_range(0..members.len())]);
                }
            }
        }
        (out, replaced)
    }
}

/// Indices into the source and target manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiniBatch {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub source_replacement: bool,
    pub target_replacement: bool,
}

pub fn sample_minibatch(
    source: &PkSampler,
    target: &PkSampler,
    rng: &mut impl Rng,
) -> MiniBatch {
    let (s, sr) = source.sample(rng);
    let (t, tr) = target.sample(rng);
    MiniBatch {
        source: s,
        target: t,
        source_replacement: sr,
        target_replacement: tr,
    }
}
