//! Cross-entropy and batch-hard triplet primitives, and the pre-training
//! objectives built from them. Every function returns the loss together with
//! its analytic gradient.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::BatchFeatures;
use crate::math::{euclidean, log_softmax};
use crate::params::{names, ParamStore};
use crate::{Error, Result};

/// Cross-entropy target: a class index or a probability vector.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Index(usize),
    Distribution(ArrayView1<'a, f64>),
}

pub fn cross_entropy(logits: ArrayView1<f64>, target: &Target) -> Result<f64> {
    cross_entropy_grad(logits, target).map(|(v, _)| v)
}

/// Loss and gradient w.r.t. the logits (`softmax(z) - t`).
pub fn cross_entropy_grad(logits: ArrayView1<f64>, target: &Target) -> Result<(f64, Array1<f64>)> {
    let c = logits.len();
    let log_p = log_softmax(logits);
    match target {
        Target::Index(y) => {
            if *y >= c {
                return Err(Error::Shape(format!("class index {y} out of range for {c} classes")));
            }
            let mut grad = log_p.mapv(f64::exp);
            grad[*y] -= 1.0;
            Ok((-log_p[*y], grad))
        }
        Target::Distribution(t) => {
            if t.len() != c {
                return Err(Error::Shape(format!(
                    "target distribution has width {}, logits {c}",
                    t.len()
                )));
            }
            let mass = t.sum();
            if (mass - 1.0).abs() > 1e-6 {
                return Err(Error::Numeric(format!("target distribution sums to {mass}")));
            }
            let loss = -t.dot(&log_p);
            let grad = log_p.mapv(f64::exp) * mass - t;
            Ok((loss, grad))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone)]
pub struct CeOutput {
    pub value: f64,
    pub d_features: Array2<f64>,
    pub d_weights: Array2<f64>,
}

/// Cross-entropy of `features · weightsᵀ` against per-row targets.
pub fn cross_entropy_batch(
    features: ArrayView2<f64>,
    weights: ArrayView2<f64>,
    targets: &[Target],
    reduction: Reduction,
) -> Result<CeOutput> {
    if features.ncols() != weights.ncols() {
        return Err(Error::Shape(format!(
            "features have width {}, classifier {}",
            features.ncols(),
            weights.ncols()
        )));
    }
    if features.nrows() != targets.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} targets",
            features.nrows(),
            targets.len()
        )));
    }
    let scale = match reduction {
        Reduction::Mean => 1.0 / features.nrows().max(1) as f64,
        Reduction::Sum => 1.0,
    };
    let logits = features.dot(&weights.t());
    let mut d_logits = Array2::zeros(logits.raw_dim());
    let mut value = 0.0;
    for (i, t) in targets.iter().enumerate() {
        let (v, g) = cross_entropy_grad(logits.row(i), t)?;
        value += v;
        d_logits.row_mut(i).assign(&(g * scale));
    }
    Ok(CeOutput {
        value: value * scale,
        d_features: d_logits.dot(&weights),
        d_weights: d_logits.t().dot(&features),
    })
}

#[derive(Debug, Clone)]
pub struct TripletOutput {
    pub value: f64,
    pub d_features: Array2<f64>,
    pub active_anchors: usize,
    /// Anchors without any eligible positive or negative.
    pub skipped_anchors: usize,
}

/// Batch-hard triplet loss: for each anchor the farthest eligible positive and
/// the nearest eligible negative; mean of `max(0, margin + d_ap - d_an)`.
pub fn triplet_batch_hard(
    features: ArrayView2<f64>,
    is_positive: impl Fn(usize, usize) -> bool,
    is_negative: impl Fn(usize, usize) -> bool,
    margin: f64,
) -> Result<TripletOutput> {
    let b = features.nrows();
    let mut dist = Array2::zeros((b, b));
    for i in 0..b {
        for j in i + 1..b {
            let d = euclidean(features.row(i), features.row(j));
            dist[[i, j]] = d;
            dist[[j, i]] = d;
        }
    }
    let mut any_negative = false;
    let mut value = 0.0;
    let mut active = 0;
    let mut skipped = 0;
    let mut hinges = Vec::new();
    for a in 0..b {
        let mut hard_pos: Option<usize> = None;
        let mut hard_neg: Option<usize> = None;
        for j in 0..b {
            if j == a {
                continue;
            }
            if is_positive(a, j) && hard_pos.is_none_or(|p| dist[[a, j]] > dist[[a, p]]) {
                hard_pos = Some(j);
            }
            if is_negative(a, j) && hard_neg.is_none_or(|n| dist[[a, j]] < dist[[a, n]]) {
                hard_neg = Some(j);
            }
        }
        any_negative |= hard_neg.is_some();
        let (Some(p), Some(n)) = (hard_pos, hard_neg) else {
            skipped += 1;
            continue;
        };
        active += 1;
        let h = margin + dist[[a, p]] - dist[[a, n]];
        if h > 0.0 {
            value += h;
            hinges.push((a, p, n));
        }
    }
    if !any_negative && b > 0 {
        return Err(Error::Data(
            "triplet loss needs at least two classes in the batch".into(),
        ));
    }
    let mut grad = Array2::zeros(features.raw_dim());
    if active > 0 {
        let scale = 1.0 / active as f64;
        for (a, p, n) in hinges {
            let mut push = |other: usize, sign: f64| {
                let d = dist[[a, other]];
                if d > 0.0 {
                    let diff = (&features.row(a) - &features.row(other)) * (sign * scale / d);
                    let mut ra = grad.row_mut(a);
                    ra += &diff;
                    let mut ro = grad.row_mut(other);
                    ro -= &diff;
                }
            };
            push(p, 1.0);
            push(n, -1.0);
        }
        value *= scale;
    }
    Ok(TripletOutput {
        value,
        d_features: grad,
        active_anchors: active,
        skipped_anchors: skipped,
    })
}

pub fn triplet_loss(features: ArrayView2<f64>, labels: &[usize], margin: f64) -> Result<TripletOutput> {
    if labels.len() != features.nrows() {
        return Err(Error::Shape("one label per feature row required".into()));
    }
    triplet_batch_hard(
        features,
        |i, j| labels[i] == labels[j],
        |i, j| labels[i] != labels[j],
        margin,
    )
}

/// Value, named sub-terms and gradients of a composed objective.
#[derive(Debug, Clone, Default)]
pub struct LossGrads {
    pub value: f64,
    pub terms: BTreeMap<String, f64>,
    /// Gradient w.r.t. the source half-batch features.
    pub source: Option<BatchFeatures>,
    /// Gradient w.r.t. the target half-batch features.
    pub target: Option<BatchFeatures>,
    /// Gradients w.r.t. classifier matrices, keyed by registry name.
    pub params: ParamStore,
}

impl LossGrads {
    pub fn term(&mut self, name: &str, value: f64) {
        *self.terms.entry(name.to_string()).or_default() += value;
    }

    pub fn add_source(&mut self, like: &BatchFeatures, f: impl FnOnce(&mut BatchFeatures)) {
        let g = self.source.get_or_insert_with(|| like.zeros_like());
        f(g)
    }

    pub fn add_target(&mut self, like: &BatchFeatures, f: impl FnOnce(&mut BatchFeatures)) {
        let g = self.target.get_or_insert_with(|| like.zeros_like());
        f(g)
    }

    /// Sums `other` into `self`; sub-terms are merged by name.
    pub fn merge(&mut self, other: LossGrads) {
        self.value += other.value;
        for (k, v) in other.terms {
            *self.terms.entry(k).or_default() += v;
        }
        for (mine, theirs) in [(&mut self.source, other.source), (&mut self.target, other.target)] {
            match (mine.as_mut(), theirs) {
                (Some(a), Some(b)) => a.add_assign(&b),
                (None, Some(b)) => *mine = Some(b),
                _ => {}
            }
        }
        self.params.merge_add(&other.params);
    }
}

/// `Ce + Tri` on the global token plus the mean over the `K` local tokens of
/// `Ce + Tri`; cross-entropy terms are batch means.
pub fn pretrain_identity_loss(
    source: &BatchFeatures,
    w_id: ArrayView2<f64>,
    labels: &[usize],
    margin: f64,
) -> Result<LossGrads> {
    if let Some(&bad) = labels.iter().find(|&&y| y >= w_id.nrows()) {
        return Err(Error::Shape(format!(
            "identity label {bad} out of range for {} classes",
            w_id.nrows()
        )));
    }
    let targets: Vec<Target> = labels.iter().map(|&y| Target::Index(y)).collect();
    let mut out = LossGrads::default();
    let mut grad = source.zeros_like();
    let mut d_w = Array2::zeros(w_id.raw_dim());

    let ce = cross_entropy_batch(source.global.view(), w_id, &targets, Reduction::Mean)?;
    let tri = triplet_loss(source.global.view(), labels, margin)?;
    out.value += ce.value + tri.value;
    out.term("L_id1.ce_global", ce.value);
    out.term("L_id1.tri_global", tri.value);
    grad.global += &ce.d_features;
    grad.global += &tri.d_features;
    d_w += &ce.d_weights;

    let k = source.locals.len();
    if k > 0 {
        let scale = 1.0 / k as f64;
        let (mut ce_sum, mut tri_sum) = (0.0, 0.0);
        for (local, g) in source.locals.iter().zip(grad.locals.iter_mut()) {
            let ce = cross_entropy_batch(local.view(), w_id, &targets, Reduction::Mean)?;
            let tri = triplet_loss(local.view(), labels, margin)?;
            ce_sum += ce.value;
            tri_sum += tri.value;
            *g += &(ce.d_features * scale);
            *g += &(tri.d_features * scale);
            d_w += &(ce.d_weights * scale);
        }
        out.value += scale * (ce_sum + tri_sum);
        out.term("L_id1.ce_local", scale * ce_sum);
        out.term("L_id1.tri_local", scale * tri_sum);
    }
    out.term("L_id1", out.value);
    out.source = Some(grad);
    out.params.insert(names::W_ID, d_w);
    Ok(out)
}

/// Summed camera cross-entropy over both half-batches in the joint camera
/// space: source cameras occupy `[0, k_s)`, target cameras `[k_s, k_s + k_t)`.
pub fn pretrain_camera_loss(
    source: ArrayView2<f64>,
    target: ArrayView2<f64>,
    w_cam: ArrayView2<f64>,
    source_cameras: &[usize],
    target_cameras: &[usize],
    source_camera_count: usize,
) -> Result<LossGrads> {
    if let Some(&c) = source_cameras.iter().find(|&&c| c >= source_camera_count) {
        return Err(Error::Data(format!(
            "source camera {c} collides with the target range starting at {source_camera_count}"
        )));
    }
    let joint: Vec<usize> = target_cameras
        .iter()
        .map(|&c| c + source_camera_count)
        .collect();
    if let Some(&c) = joint.iter().find(|&&c| c >= w_cam.nrows()) {
        return Err(Error::Shape(format!(
            "joint camera index {c} out of range for {} cameras",
            w_cam.nrows()
        )));
    }
    let st: Vec<Target> = source_cameras.iter().map(|&c| Target::Index(c)).collect();
    let tt: Vec<Target> = joint.iter().map(|&c| Target::Index(c)).collect();
    let s = cross_entropy_batch(source, w_cam, &st, Reduction::Sum)?;
    let t = cross_entropy_batch(target, w_cam, &tt, Reduction::Sum)?;
    let mut out = LossGrads {
        value: s.value + t.value,
        ..Default::default()
    };
    out.term("L_cam", out.value);
    out.source = Some(BatchFeatures {
        global: s.d_features,
        locals: vec![],
    });
    out.target = Some(BatchFeatures {
        global: t.d_features,
        locals: vec![],
    });
    out.params.insert(names::W_CAM, s.d_weights + t.d_weights);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    #[test]
    fn uniform_logits_uniform_target() {
        let z = Array1::zeros(4);
        let t = Array1::from_elem(4, 0.25);
        let v = cross_entropy(z.view(), &Target::Distribution(t.view())).unwrap();
        assert_abs_diff_eq!(v, 4f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn confident_logits() {
        // -log(e^10 / (e^10 + 2)) = ln(1 + 2e^-10)
        let v = cross_entropy(array![10.0, 0.0, 0.0].view(), &Target::Index(0)).unwrap();
        let expected = (1.0 + 2.0 * (-10f64).exp()).ln();
        assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 9.08e-5, epsilon = 1e-7);
        assert!(v < 3f64.ln());
    }

    #[test]
    fn one_hot_distribution_matches_index() {
        let z = array![0.3, -1.2, 2.0];
        let oh = array![0.0, 0.0, 1.0];
        let a = cross_entropy(z.view(), &Target::Index(2)).unwrap();
        let b = cross_entropy(z.view(), &Target::Distribution(oh.view())).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn width_mismatch_is_error() {
        let z = Array1::zeros(3);
        let t = Array1::from_elem(4, 0.25);
        assert!(cross_entropy(z.view(), &Target::Distribution(t.view())).is_err());
        assert!(cross_entropy(z.view(), &Target::Index(3)).is_err());
    }

    /// 1-D batch: anchor 0 at 0, positive at `d_ap`, negative at `-d_an`.
    fn one_d(d_ap: f64, d_an: f64) -> f64 {
        let f = array![[0.0], [d_ap], [-d_an]];
        let out = triplet_batch_hard(f.view(), |i, j| i == 0 && j == 1, |i, j| i == 0 && j == 2, 0.3)
            .unwrap();
        assert_eq!(out.active_anchors, 1);
        out.value
    }

    #[test]
    fn triplet_hand_values() {
        assert_abs_diff_eq!(one_d(0.5, 1.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(one_d(1.0, 0.5), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn identical_positives_far_negative() {
        let f = array![[1.0, 1.0], [1.0, 1.0], [9.0, 9.0], [9.0, 9.0]];
        let out = triplet_loss(f.view(), &[0, 0, 1, 1], 0.3).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.d_features.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_class_batch_rejected() {
        let f = array![[1.0], [2.0]];
        assert!(triplet_loss(f.view(), &[0, 0], 0.3).is_err());
    }

    #[test]
    fn anchors_without_positive_are_skipped() {
        let f = array![[0.0], [1.0], [5.0]];
        let out = triplet_loss(f.view(), &[0, 0, 1], 0.3).unwrap();
        assert_eq!(out.skipped_anchors, 1);
        assert_eq!(out.active_anchors, 2);
    }

    fn bundle(rows: &[[f64; 4]]) -> BatchFeatures {
        let g = Array2::from_shape_vec((rows.len(), 4), rows.concat()).unwrap();
        BatchFeatures {
            global: g,
            locals: vec![],
        }
    }

    #[test]
    fn identity_loss_without_locals_is_global_terms() {
        let f = bundle(&[[1.0, 0.0, 0.5, 0.2], [0.9, 0.1, 0.4, 0.2], [0.0, 1.0, 0.0, 0.3], [0.1, 0.8, 0.2, 0.1]]);
        let w = array![[1.0, -1.0, 0.5, 0.0], [-1.0, 1.0, 0.0, 0.5]];
        let labels = [0, 0, 1, 1];
        let out = pretrain_identity_loss(&f, w.view(), &labels, 0.3).unwrap();
        let targets: Vec<Target> = labels.iter().map(|&y| Target::Index(y)).collect();
        let ce = cross_entropy_batch(f.global.view(), w.view(), &targets, Reduction::Mean).unwrap();
        let tri = triplet_loss(f.global.view(), &labels, 0.3).unwrap();
        assert_abs_diff_eq!(out.value, ce.value + tri.value, epsilon = 1e-12);
    }

    #[test]
    fn identity_loss_invariant_to_duplication() {
        let rows = [[1.0, 0.0, 0.5, 0.2], [0.9, 0.1, 0.4, 0.2], [0.0, 1.0, 0.0, 0.3], [0.1, 0.8, 0.2, 0.1]];
        let w = array![[1.0, -1.0, 0.5, 0.0], [-1.0, 1.0, 0.0, 0.5]];
        let a = pretrain_identity_loss(&bundle(&rows), w.view(), &[0, 0, 1, 1], 0.3).unwrap();
        let doubled: Vec<[f64; 4]> = rows.iter().chain(rows.iter()).copied().collect();
        let b = pretrain_identity_loss(&bundle(&doubled), w.view(), &[0, 0, 1, 1, 0, 0, 1, 1], 0.3)
            .unwrap();
        assert_abs_diff_eq!(a.value, b.value, epsilon = 1e-12);
    }

    #[test]
    fn camera_loss_uniform_logits() {
        let s = Array2::<f64>::zeros((2, 4));
        let t = Array2::<f64>::zeros((2, 4));
        let w = Array2::<f64>::zeros((6, 4));
        let out = pretrain_camera_loss(s.view(), t.view(), w.view(), &[0, 2], &[0, 2], 3).unwrap();
        assert_abs_diff_eq!(out.value, 4.0 * 6f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn camera_loss_saturates() {
        let s = array![[1.0, 0.0]];
        let t = Array2::<f64>::zeros((0, 2));
        let w = array![[50.0, 0.0], [-50.0, 0.0]];
        let out = pretrain_camera_loss(s.view(), t.view(), w.view(), &[0], &[], 1).unwrap();
        assert!(out.value < 1e-12);
    }

    #[test]
    fn camera_collision_rejected() {
        let s = array![[1.0, 0.0]];
        let t = Array2::<f64>::zeros((0, 2));
        let w = Array2::<f64>::zeros((4, 2));
        assert!(pretrain_camera_loss(s.view(), t.view(), w.view(), &[2], &[], 2).is_err());
    }
}
