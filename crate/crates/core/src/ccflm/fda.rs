//! Feature distribution alignment: paired style swaps between source and
//! target features, with a directional KL term, an identity term on the
//! transferred source features and a camera-confusion term on both domains.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, ArrayView2};

use super::style::{kl_divergence_grad, style_stats, style_swap, style_swap_backward};
use crate::cscm::FrtState;
use crate::encoder::{cross_entropy_grad, BatchFeatures, LossGrads, Target};
use crate::math::argmax;
use crate::{Error, Result};

/// Frozen pieces the style losses read from earlier stages.
#[derive(Debug, Clone, Copy)]
pub struct StyleContext<'a> {
    /// Frozen source identity classifier.
    pub w_id: ArrayView2<'a, f64>,
    pub frt: &'a FrtState,
    /// Uniform distribution over the joint camera space.
    pub uniform_camera: ArrayView1<'a, f64>,
    pub eps: f64,
}

fn pair_count(source: usize, target: usize) -> Result<usize> {
    if source == 0 || target == 0 {
        return Err(Error::Data("style alignment needs both domains in the batch".into()));
    }
    Ok(source.max(target))
}

fn check_widths(source: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<()> {
    if source.ncols() != target.ncols() {
        return Err(Error::Shape(format!(
            "source width {} differs from target width {}",
            source.ncols(),
            target.ncols()
        )));
    }
    Ok(())
}

/// Mean over pairs `(i mod B_s, i mod B_t)` of
/// `KL(P(f_t) ‖ Q(f_t→s)) + KL(P(f_s) ‖ Q(f_s→t))`.
pub fn distribution_alignment_loss(
    source: &BatchFeatures,
    target: &BatchFeatures,
    eps: f64,
) -> Result<LossGrads> {
    let (fs, ft) = (source.global.view(), target.global.view());
    check_widths(fs, ft)?;
    let pairs = pair_count(fs.nrows(), ft.nrows())?;
    let scale = 1.0 / pairs as f64;
    let mut gs = source.zeros_like();
    let mut gt = target.zeros_like();
    let mut total = 0.0;
    for p in 0..pairs {
        let (i, j) = (p % fs.nrows(), p % ft.nrows());
        let (s, t) = (fs.row(i), ft.row(j));
        let s_to_t = style_swap(s, &style_stats(t, eps));
        let t_to_s = style_swap(t, &style_stats(s, eps));

        let (kl_t, d_t_direct, d_t_to_s) = kl_divergence_grad(t, t_to_s.view());
        let (kl_s, d_s_direct, d_s_to_t) = kl_divergence_grad(s, s_to_t.view());
        total += kl_t + kl_s;

        // t→s = swap(t, stats(s)); s→t = swap(s, stats(t)).
        let (d_t_a, d_s_a) = style_swap_backward(t, s, eps, d_t_to_s.view());
        let (d_s_b, d_t_b) = style_swap_backward(s, t, eps, d_s_to_t.view());
        let ds = (d_s_direct + d_s_a + d_s_b) * scale;
        let dt = (d_t_direct + d_t_a + d_t_b) * scale;
        let mut row = gs.global.row_mut(i);
        row += &ds;
        let mut row = gt.global.row_mut(j);
        row += &dt;
    }
    let mut out = LossGrads {
        value: total * scale,
        source: Some(gs),
        target: Some(gt),
        ..Default::default()
    };
    out.term("L_dir_style", out.value);
    Ok(out)
}

/// Identity cross-entropy of each source feature restyled with its paired
/// target feature, classified by the frozen identity classifier.
pub fn transferred_identity_loss(
    source: &BatchFeatures,
    target: &BatchFeatures,
    w_id: ArrayView2<f64>,
    labels: &[usize],
    eps: f64,
) -> Result<LossGrads> {
    let (fs, ft) = (source.global.view(), target.global.view());
    check_widths(fs, ft)?;
    pair_count(fs.nrows(), ft.nrows())?;
    if labels.len() != fs.nrows() {
        return Err(Error::Shape("one identity label per source row".into()));
    }
    if w_id.ncols() != fs.ncols() {
        return Err(Error::Shape("identity classifier width differs from features".into()));
    }
    let scale = 1.0 / fs.nrows() as f64;
    let mut gs = source.zeros_like();
    let mut gt = target.zeros_like();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let j = i % ft.nrows();
        let (s, t) = (fs.row(i), ft.row(j));
        let s_to_t = style_swap(s, &style_stats(t, eps));
        let (v, dz) = cross_entropy_grad(w_id.dot(&s_to_t).view(), &Target::Index(y))?;
        total += v;
        let d_out = w_id.t().dot(&dz) * scale;
        let (d_s, d_t) = style_swap_backward(s, t, eps, d_out.view());
        let mut row = gs.global.row_mut(i);
        row += &d_s;
        let mut row = gt.global.row_mut(j);
        row += &d_t;
    }
    let mut out = LossGrads {
        value: total * scale,
        source: Some(gs),
        target: Some(gt),
        ..Default::default()
    };
    out.term("L_id_trans", out.value);
    Ok(out)
}

/// Mean cross-entropy of each row under the camera classifier restricted to
/// the channels its predicted identity dropped, against the uniform camera
/// distribution.
pub fn camera_confusion_loss(
    features: ArrayView2<f64>,
    ctx: &StyleContext,
) -> Result<(f64, Array2<f64>)> {
    if features.nrows() == 0 {
        return Ok((0.0, Array2::zeros((0, features.ncols()))));
    }
    if ctx.uniform_camera.len() != ctx.frt.camera_weights.nrows() {
        return Err(Error::Shape("uniform camera target must span the joint camera space".into()));
    }
    if features.ncols() != ctx.w_id.ncols() {
        return Err(Error::Shape("identity classifier width differs from features".into()));
    }
    let scale = 1.0 / features.nrows() as f64;
    let mut grad = Array2::zeros(features.raw_dim());
    let mut cache: BTreeMap<usize, Array2<f64>> = BTreeMap::new();
    let target = Target::Distribution(ctx.uniform_camera);
    let mut total = 0.0;
    for (i, f) in features.rows().into_iter().enumerate() {
        let identity = argmax(ctx.w_id.dot(&f).view());
        let w = cache
            .entry(identity)
            .or_insert_with(|| ctx.frt.camera_classifier_for(identity));
        let (v, dz) = cross_entropy_grad(w.dot(&f).view(), &target)?;
        total += v;
        grad.row_mut(i).assign(&(w.t().dot(&dz) * scale));
    }
    Ok((total * scale, grad))
}

/// `L_dir_style + L_id_trans + L_cam` where the camera term averages the
/// source and target batch means.
pub fn style_total_loss(
    source: &BatchFeatures,
    target: &BatchFeatures,
    labels: &[usize],
    ctx: &StyleContext,
) -> Result<LossGrads> {
    let mut out = distribution_alignment_loss(source, target, ctx.eps)?;
    out.merge(transferred_identity_loss(source, target, ctx.w_id, labels, ctx.eps)?);
    let (vs, gs) = camera_confusion_loss(source.global.view(), ctx)?;
    let (vt, gt) = camera_confusion_loss(target.global.view(), ctx)?;
    let cam = LossGrads {
        value: vs + vt,
        source: Some(BatchFeatures {
            global: gs,
            locals: vec![],
        }),
        target: Some(BatchFeatures {
            global: gt,
            locals: vec![],
        }),
        ..Default::default()
    };
    out.merge(cam);
    out.term("L_style.camera", vs + vt);
    out.term("L_style", out.value);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn batch(rows: Array2<f64>) -> BatchFeatures {
        BatchFeatures {
            global: rows,
            locals: vec![],
        }
    }

    #[test]
    fn identical_styles_give_small_alignment_loss() {
        let s = batch(array![[0.1, 0.5, -0.3, 0.2], [1.0, 0.0, 0.5, -0.5]]);
        let out = distribution_alignment_loss(&s, &s.clone(), 1e-5).unwrap();
        assert!(out.value >= 0.0);
        assert!(out.value < 1e-8);
    }

    #[test]
    fn alignment_loss_is_nonnegative() {
        let s = batch(array![[0.1, 0.5, -0.3, 0.2], [1.0, 0.0, 0.5, -0.5]]);
        let t = batch(array![[3.0, 2.0, 5.0, 1.0], [4.0, 4.5, 3.0, 2.0], [0.0, 1.0, 0.0, 1.0]]);
        let out = distribution_alignment_loss(&s, &t, 1e-5).unwrap();
        assert!(out.value > 0.0);
        assert_eq!(out.terms["L_dir_style"], out.value);
        assert_eq!(out.source.unwrap().global.nrows(), 2);
    }

    #[test]
    fn empty_domain_is_error() {
        let s = batch(Array2::zeros((0, 4)));
        let t = batch(Array2::ones((2, 4)));
        assert!(distribution_alignment_loss(&s, &t, 1e-5).is_err());
    }

    #[test]
    fn transferred_loss_matches_direct_ce() {
        let s = batch(array![[0.1, 0.5, -0.3, 0.2]]);
        let t = batch(array![[3.0, 2.0, 5.0, 1.0]]);
        let w = array![[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]];
        let out = transferred_identity_loss(&s, &t, w.view(), &[1], 1e-5).unwrap();
        let swapped = style_swap(s.global.row(0), &style_stats(t.global.row(0), 1e-5));
        let z = w.dot(&swapped);
        let expected = crate::encoder::cross_entropy(z.view(), &Target::Index(1)).unwrap();
        assert_abs_diff_eq!(out.value, expected, epsilon = 1e-12);
    }
}
