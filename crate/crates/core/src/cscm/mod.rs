//! Category synergy co-promotion: channel recombination driven by the
//! pre-trained classifiers, and the interactive promotion losses that train
//! the encoder on the recombined halves.

mod frt;
mod ipl;

pub use frt::{
    build_deactivated_camera_classifier, build_deactivated_identity_classifier, deactivate_row,
    deactivated_camera_row, gather, predict_identity_index, recombine, ChannelMaskPair,
    DeactivatedIdentity, FrtState, RecombinedFeaturePair, SampleRoute,
};
pub use ipl::{ipl_confusion_loss, ipl_identity_loss, ipl_total, UniformTargets};
