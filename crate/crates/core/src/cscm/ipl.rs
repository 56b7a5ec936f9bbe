//! Interactive promotion losses on recombined features. The classifiers are
//! frozen here; only feature gradients are produced.

use ndarray::{Array1, Array2, ArrayView2};

use super::frt::{gather, FrtState};
use crate::encoder::{cross_entropy_grad, BatchFeatures, LossGrads, Target};
use crate::{Error, Result};

/// Uniform identity and camera distributions used as confusion targets.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformTargets {
    pub identity: Array1<f64>,
    pub camera: Array1<f64>,
}

impl UniformTargets {
    pub fn new(identities: usize, cameras: usize) -> Self {
        Self {
            identity: Array1::from_elem(identities, 1.0 / identities as f64),
            camera: Array1::from_elem(cameras, 1.0 / cameras as f64),
        }
    }

    /// `ln m + ln(k_s + k_t)`: the confusion loss cannot go below this.
    pub fn confusion_floor(&self) -> f64 {
        (self.identity.len() as f64).ln() + (self.camera.len() as f64).ln()
    }
}

/// Per-row recombination for one sample.
struct Split {
    id_idx: Vec<usize>,
    cam_idx: Vec<usize>,
    w_id: Array2<f64>,
    w_cam: Array2<f64>,
}

fn split_for(frt: &FrtState, identity_index: usize) -> Split {
    let masks = frt.masks_for_identity(identity_index);
    let id_idx = masks.identity_indices();
    let cam_idx = masks.camera_indices();
    let w_cam0 = frt.camera_classifier_for(identity_index);
    Split {
        w_id: gather(frt.identity.weights.view(), &id_idx),
        w_cam: gather(w_cam0.view(), &cam_idx),
        id_idx,
        cam_idx,
    }
}

/// `CE(W·f[read], target)`: adds `∂/∂f` scattered back onto `write` = `read` channels.
fn half_ce(
    f: ndarray::ArrayView1<f64>,
    read: &[usize],
    w: &Array2<f64>,
    target: &Target,
    scale: f64,
    grad_row: &mut ndarray::ArrayViewMut1<f64>,
) -> Result<f64> {
    let half = Array1::from_iter(read.iter().map(|&i| f[i]));
    let (v, dz) = cross_entropy_grad(w.dot(&half).view(), target)?;
    let dh = w.t().dot(&dz);
    for (k, &i) in read.iter().enumerate() {
        grad_row[i] += scale * dh[k];
    }
    Ok(v)
}

fn check_rows(source: ArrayView2<f64>, routes: &[usize], frt: &FrtState) -> Result<()> {
    if source.nrows() != routes.len() {
        return Err(Error::Data(format!(
            "{} recombination routes for {} samples",
            routes.len(),
            source.nrows()
        )));
    }
    if source.ncols() != frt.camera_weights.ncols() {
        return Err(Error::Shape("feature width differs from the classifiers".into()));
    }
    if let Some(&r) = routes.iter().find(|&&r| r >= frt.identity.keep_masks.len()) {
        return Err(Error::Data(format!("no recombination for identity row {r}")));
    }
    Ok(())
}

/// Identity half classified by the recombined identity classifier plus camera
/// half classified by the recombined camera classifier; each a batch mean.
/// `routes[i]` is the identity row whose masks apply to sample `i`.
pub fn ipl_identity_loss(
    source: &BatchFeatures,
    routes: &[usize],
    frt: &FrtState,
    labels: &[usize],
    joint_cameras: &[usize],
) -> Result<LossGrads> {
    let f = source.global.view();
    check_rows(f, routes, frt)?;
    let b = f.nrows();
    let scale = 1.0 / b as f64;
    let mut grad = source.zeros_like();
    let (mut id_sum, mut cam_sum) = (0.0, 0.0);
    for i in 0..b {
        let s = split_for(frt, routes[i]);
        let mut g = grad.global.row_mut(i);
        id_sum += half_ce(f.row(i), &s.id_idx, &s.w_id, &Target::Index(labels[i]), scale, &mut g)?;
        cam_sum += half_ce(
            f.row(i),
            &s.cam_idx,
            &s.w_cam,
            &Target::Index(joint_cameras[i]),
            scale,
            &mut g,
        )?;
    }
    let mut out = LossGrads {
        value: scale * (id_sum + cam_sum),
        source: Some(grad),
        ..Default::default()
    };
    out.term("L_id2.identity", scale * id_sum);
    out.term("L_id2.camera", scale * cam_sum);
    out.term("L_id2", out.value);
    Ok(out)
}

/// Camera half through the recombined identity classifier against a uniform
/// identity target, and identity half through the recombined camera
/// classifier against a uniform camera target. Halves pair positionally.
pub fn ipl_confusion_loss(
    source: &BatchFeatures,
    routes: &[usize],
    frt: &FrtState,
    uniform: &UniformTargets,
) -> Result<LossGrads> {
    let f = source.global.view();
    check_rows(f, routes, frt)?;
    if uniform.identity.len() != frt.identity.weights.nrows()
        || uniform.camera.len() != frt.camera_weights.nrows()
    {
        return Err(Error::Shape(
            "uniform targets must match the classifier class counts".into(),
        ));
    }
    let b = f.nrows();
    let scale = 1.0 / b as f64;
    let mut grad = source.zeros_like();
    let (mut id_sum, mut cam_sum) = (0.0, 0.0);
    let y_bar = Target::Distribution(uniform.identity.view());
    let c_bar = Target::Distribution(uniform.camera.view());
    for i in 0..b {
        let s = split_for(frt, routes[i]);
        let mut g = grad.global.row_mut(i);
        id_sum += half_ce(f.row(i), &s.cam_idx, &s.w_id, &y_bar, scale, &mut g)?;
        cam_sum += half_ce(f.row(i), &s.id_idx, &s.w_cam, &c_bar, scale, &mut g)?;
    }
    let mut out = LossGrads {
        value: scale * (id_sum + cam_sum),
        source: Some(grad),
        ..Default::default()
    };
    out.term("L_cos.identity", scale * id_sum);
    out.term("L_cos.camera", scale * cam_sum);
    out.term("L_cos", out.value);
    Ok(out)
}

/// Unweighted sum of the two promotion losses.
pub fn ipl_total(identity: LossGrads, confusion: LossGrads) -> LossGrads {
    let mut total = identity;
    total.merge(confusion);
    total.terms.insert("L_pro".into(), total.value);
    total
}
