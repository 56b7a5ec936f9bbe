//! Dataset manifests, the single-camera-training (SCT) invariant, synthetic
//! SCT data and PK mini-batch sampling.

mod manifest;
mod sampler;
mod sct;
mod synth;

pub use manifest::{
    load_manifest, parse_manifest, write_manifest, DatasetManifest, Domain, InputMode,
    PersonSample, Split,
};
pub use sampler::{sample_minibatch, MiniBatch, PkPolicy, PkSampler};
pub use sct::{validate_sct, SctReport};
pub use synth::{synthesize_sct_dataset, SynthConfig, SyntheticDataset};
