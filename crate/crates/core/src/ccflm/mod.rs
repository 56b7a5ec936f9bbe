//! Cross-camera consistent feature learning: instance-level style alignment
//! between source and target features, and cluster-based identity consistency
//! on the single-camera target domain.

mod cluster;
mod fda;
mod icl;
mod style;

pub use cluster::{
    cluster_target_features, intra_camera_labels, kmeans, label_means, KMeansConfig, KMeansResult,
    PseudoLabelTable,
};
pub use fda::{
    camera_confusion_loss, distribution_alignment_loss, style_total_loss,
    transferred_identity_loss, StyleContext,
};
pub use icl::{cluster_identity_loss, icl_total, intra_camera_identity_loss, target_triplet_loss};
pub use style::{
    channel_distribution, kl_divergence, kl_divergence_grad, style_stats, style_swap,
    style_swap_backward, ChannelDistribution, StyleStats, DEFAULT_EPS,
};
