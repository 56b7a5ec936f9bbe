//! Identity consistency learning on the target domain: cluster pseudo
//! labels, within-camera identity labels and a triplet term whose positives
//! share a camera.

use ndarray::ArrayView2;

use super::cluster::PseudoLabelTable;
use super::fda::{camera_confusion_loss, StyleContext};
use crate::encoder::{cross_entropy_batch, triplet_batch_hard, BatchFeatures, LossGrads, Reduction, Target};
use crate::params::names;
use crate::{Error, Result};

fn check_rows(target: &BatchFeatures, sample_ids: &[String]) -> Result<()> {
    if target.batch_size() != sample_ids.len() {
        return Err(Error::Shape(format!(
            "{} target rows but {} sample ids",
            target.batch_size(),
            sample_ids.len()
        )));
    }
    Ok(())
}

/// Cluster-label cross-entropy through the target identity classifier plus
/// the camera-confusion term on the target features.
pub fn cluster_identity_loss(
    target: &BatchFeatures,
    sample_ids: &[String],
    table: &PseudoLabelTable,
    epoch: usize,
    w_t_id: ArrayView2<f64>,
    ctx: &StyleContext,
) -> Result<LossGrads> {
    check_rows(target, sample_ids)?;
    table.ensure_fresh(epoch)?;
    let labels = sample_ids
        .iter()
        .map(|id| table.cluster(id))
        .collect::<Result<Vec<_>>>()?;
    if let Some(&l) = labels.iter().find(|&&l| l >= w_t_id.nrows()) {
        return Err(Error::Shape(format!(
            "cluster label {l} outside a {}-way classifier",
            w_t_id.nrows()
        )));
    }
    let targets: Vec<Target> = labels.iter().map(|&l| Target::Index(l)).collect();
    let ce = cross_entropy_batch(target.global.view(), w_t_id, &targets, Reduction::Mean)?;
    let (cam, d_cam) = camera_confusion_loss(target.global.view(), ctx)?;
    let mut out = LossGrads {
        value: ce.value + cam,
        target: Some(BatchFeatures {
            global: ce.d_features + d_cam,
            locals: vec![],
        }),
        ..Default::default()
    };
    out.params.insert(names::W_T_ID, ce.d_weights);
    out.term("L_cluster.identity", ce.value);
    out.term("L_cluster.camera", cam);
    out.term("L_cluster", out.value);
    Ok(out)
}

/// Within-camera identity cross-entropy through the intra-camera classifier.
pub fn intra_camera_identity_loss(
    target: &BatchFeatures,
    sample_ids: &[String],
    table: &PseudoLabelTable,
    w_t_intra: ArrayView2<f64>,
) -> Result<LossGrads> {
    check_rows(target, sample_ids)?;
    let labels = sample_ids
        .iter()
        .map(|id| table.intra_camera_label(id))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<Target> = labels.iter().map(|&l| Target::Index(l)).collect();
    let ce = cross_entropy_batch(target.global.view(), w_t_intra, &targets, Reduction::Mean)?;
    let mut out = LossGrads {
        value: ce.value,
        target: Some(BatchFeatures {
            global: ce.d_features,
            locals: vec![],
        }),
        ..Default::default()
    };
    out.params.insert(names::W_T_INTRA, ce.d_weights);
    out.term("L_id3", out.value);
    Ok(out)
}

/// Batch-hard triplet over target features: positives share the
/// within-camera identity label, negatives are any other label.
pub fn target_triplet_loss(
    target: &BatchFeatures,
    sample_ids: &[String],
    table: &PseudoLabelTable,
    margin: f64,
) -> Result<LossGrads> {
    check_rows(target, sample_ids)?;
    let labels = sample_ids
        .iter()
        .map(|id| table.intra_camera_label(id))
        .collect::<Result<Vec<_>>>()?;
    let tri = triplet_batch_hard(
        target.global.view(),
        |i, j| labels[i] == labels[j],
        |i, j| labels[i] != labels[j],
        margin,
    )?;
    let mut out = LossGrads {
        value: tri.value,
        target: Some(BatchFeatures {
            global: tri.d_features,
            locals: vec![],
        }),
        ..Default::default()
    };
    out.term("L_tri", out.value);
    Ok(out)
}

/// `L_id3 + L_tri + L_cluster`.
pub fn icl_total(parts: impl IntoIterator<Item = LossGrads>) -> LossGrads {
    let mut out = LossGrads::default();
    for p in parts {
        out.merge(p);
    }
    let v = out.value;
    out.term("L_real", v);
    out
}
