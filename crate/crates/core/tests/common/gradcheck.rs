//! Central finite-difference checks for every hand-written gradient.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use sctreid::ccflm::{
    camera_confusion_loss, cluster_identity_loss, distribution_alignment_loss, icl_total,
    intra_camera_identity_loss, kl_divergence_grad, style_stats, style_swap, style_swap_backward,
    style_total_loss, target_triplet_loss, transferred_identity_loss, PseudoLabelTable, StyleContext,
};
use sctreid::cscm::{ipl_confusion_loss, ipl_identity_loss, ipl_total, FrtState, UniformTargets};
use sctreid::encoder::{
    pretrain_camera_loss, pretrain_identity_loss, BatchFeatures, Encoder, EncoderConfig, LossGrads,
};
use sctreid::parallel::Exec;
use sctreid::params::{names, ParamStore};

use super::{batch, normal, rng};

pub const WIDTH: usize = 8;
pub const BATCH: usize = 8;
pub const TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;
const EPS: f64 = 1e-5;
const IDENTITIES: usize = 5;
const SOURCE_CAMERAS: usize = 3;
const TARGET_CAMERAS: usize = 2;
const CLUSTERS: usize = 3;
const INTRA_CLASSES: usize = 4;

/// Everything a loss may differentiate with respect to.
#[derive(Clone)]
pub struct Point {
    pub source: BatchFeatures,
    pub target: BatchFeatures,
    pub params: ParamStore,
}

/// Frozen inputs shared by the cases.
pub struct Fixture {
    w_id: Array2<f64>,
    frt: FrtState,
    uniform: UniformTargets,
    source_labels: Vec<usize>,
    source_cameras: Vec<usize>,
    target_cameras: Vec<usize>,
    joint_cameras: Vec<usize>,
    routes: Vec<usize>,
    target_ids: Vec<String>,
    table: PseudoLabelTable,
    encoder: Encoder,
    encoder_inputs: Array2<f64>,
    upstream: BatchFeatures,
    swap_upstream: Array1<f64>,
}

impl Fixture {
    fn ctx(&self) -> StyleContext<'_> {
        StyleContext {
            w_id: self.w_id.view(),
            frt: &self.frt,
            uniform_camera: self.uniform.camera.view(),
            eps: EPS,
        }
    }
}

type LossFn = fn(&Fixture, &Point) -> LossGrads;

pub struct Case {
    pub name: &'static str,
    point: Point,
    loss: LossFn,
}

fn empty() -> BatchFeatures {
    BatchFeatures {
        global: Array2::zeros((0, WIDTH)),
        locals: vec![],
    }
}

pub fn fixture(seed: u64) -> Fixture {
    let mut r = rng(seed);
    let w_id = normal(IDENTITIES, WIDTH, 1.0, &mut r);
    let w_cam = normal(SOURCE_CAMERAS + TARGET_CAMERAS, WIDTH, 1.0, &mut r);
    let frozen = normal(BATCH, WIDTH, 1.0, &mut r);
    let ids: Vec<String> = (0..BATCH).map(|i| format!("s{i}")).collect();
    let source_cameras: Vec<usize> = (0..BATCH).map(|i| i % SOURCE_CAMERAS).collect();
    let frt = FrtState::build(
        frozen.view(),
        &ids,
        &source_cameras,
        w_id.view(),
        w_cam.view(),
        0.5,
        Exec::Sequential,
    )
    .expect("frt state");
    let routes = frt.routes.iter().map(|r| r.identity_index).collect();
    let joint_cameras = frt.routes.iter().map(|r| r.camera_index).collect();
    let target_ids: Vec<String> = (0..BATCH).map(|i| format!("t{i}")).collect();
    let cluster_of: BTreeMap<String, usize> =
        target_ids.iter().enumerate().map(|(i, id)| (id.clone(), i % CLUSTERS)).collect();
    let intra_camera_label_of: BTreeMap<String, usize> =
        target_ids.iter().enumerate().map(|(i, id)| (id.clone(), i / 2)).collect();
    let table = PseudoLabelTable {
        epoch: 3,
        k: CLUSTERS,
        cluster_of,
        intra_camera_label_of,
        num_intra_camera_classes: INTRA_CLASSES,
        centroids: Array2::zeros((CLUSTERS, WIDTH)),
    };
    let mut config = EncoderConfig::mlp(6, WIDTH, 2);
    config.hidden = 10;
    config.bias = true;
    let encoder = Encoder::new(config).expect("encoder");
    Fixture {
        w_id,
        frt,
        uniform: UniformTargets::new(IDENTITIES, SOURCE_CAMERAS + TARGET_CAMERAS),
        source_labels: (0..BATCH).map(|i| i / 2).collect(),
        source_cameras,
        target_cameras: (0..BATCH).map(|i| i % TARGET_CAMERAS).collect(),
        joint_cameras,
        routes,
        target_ids,
        table,
        encoder,
        encoder_inputs: normal(BATCH, 6, 1.0, &mut r),
        upstream: batch(BATCH, WIDTH, 2, &mut r),
        swap_upstream: normal(1, WIDTH, 1.0, &mut r).row(0).to_owned(),
    }
}

fn classifier_point(source: BatchFeatures, target: BatchFeatures, params: &[(&str, Array2<f64>)]) -> Point {
    let mut store = ParamStore::new();
    for (name, t) in params {
        store.insert(*name, t.clone());
    }
    Point {
        source,
        target,
        params: store,
    }
}

fn encoder_loss(fx: &Fixture, p: &Point) -> LossGrads {
    let (features, cache) = fx.encoder.forward(&p.params, fx.encoder_inputs.view()).expect("forward");
    let mut value = (&features.global * &fx.upstream.global).sum();
    for (f, g) in features.locals.iter().zip(&fx.upstream.locals) {
        value += (f * g).sum();
    }
    let mut grads = p.params.zeros_like();
    fx.encoder.backward(&p.params, &cache, &fx.upstream, &mut grads);
    LossGrads {
        value,
        params: grads,
        ..Default::default()
    }
}

fn swap_loss(fx: &Fixture, p: &Point) -> LossGrads {
    let f = p.source.global.row(0);
    let t = p.target.global.row(0);
    let out = style_swap(f, &style_stats(t, EPS));
    let (df, dt) = style_swap_backward(f, t, EPS, fx.swap_upstream.view());
    let row = |g: Array1<f64>| BatchFeatures {
        global: g.insert_axis(ndarray::Axis(0)),
        locals: vec![],
    };
    LossGrads {
        value: out.dot(&fx.swap_upstream),
        source: Some(row(df)),
        target: Some(row(dt)),
        ..Default::default()
    }
}

fn kl_loss(_: &Fixture, p: &Point) -> LossGrads {
    let (kl, dx, dy) = kl_divergence_grad(p.source.global.row(0), p.target.global.row(0));
    let row = |g: Array1<f64>| BatchFeatures {
        global: g.insert_axis(ndarray::Axis(0)),
        locals: vec![],
    };
    LossGrads {
        value: kl,
        source: Some(row(dx)),
        target: Some(row(dy)),
        ..Default::default()
    }
}

fn camera_confusion(fx: &Fixture, p: &Point) -> LossGrads {
    let (v, g) = camera_confusion_loss(p.target.global.view(), &fx.ctx()).expect("loss");
    LossGrads {
        value: v,
        target: Some(BatchFeatures {
            global: g,
            locals: vec![],
        }),
        ..Default::default()
    }
}

fn ipl_identity(fx: &Fixture, p: &Point) -> LossGrads {
    ipl_identity_loss(&p.source, &fx.routes, &fx.frt, &fx.source_labels, &fx.joint_cameras).expect("loss")
}

fn ipl_confusion(fx: &Fixture, p: &Point) -> LossGrads {
    ipl_confusion_loss(&p.source, &fx.routes, &fx.frt, &fx.uniform).expect("loss")
}

fn cluster_identity(fx: &Fixture, p: &Point) -> LossGrads {
    cluster_identity_loss(
        &p.target,
        &fx.target_ids,
        &fx.table,
        fx.table.epoch,
        p.params.tensor(names::W_T_ID).view(),
        &fx.ctx(),
    )
    .expect("loss")
}

fn intra_identity(fx: &Fixture, p: &Point) -> LossGrads {
    intra_camera_identity_loss(&p.target, &fx.target_ids, &fx.table, p.params.tensor(names::W_T_INTRA).view())
        .expect("loss")
}

fn target_triplet(fx: &Fixture, p: &Point) -> LossGrads {
    target_triplet_loss(&p.target, &fx.target_ids, &fx.table, 0.3).expect("loss")
}

/// Every composed objective with its own input point.
pub fn cases(fx: &Fixture, seed: u64) -> Vec<Case> {
    let mut r = rng(seed ^ 0xC0FFEE);
    let source = batch(BATCH, WIDTH, 2, &mut r);
    let source_global = batch(BATCH, WIDTH, 0, &mut r);
    let target = batch(BATCH, WIDTH, 0, &mut r);
    let short_target = batch(BATCH - 2, WIDTH, 0, &mut r);
    let w_id = normal(IDENTITIES, WIDTH, 1.0, &mut r);
    let w_cam = normal(SOURCE_CAMERAS + TARGET_CAMERAS, WIDTH, 1.0, &mut r);
    let w_t_id = normal(CLUSTERS, WIDTH, 1.0, &mut r);
    let w_t_intra = normal(INTRA_CLASSES, WIDTH, 1.0, &mut r);
    let one = |r: &mut _| batch(1, WIDTH, 0, r);
    let mut encoder_params = ParamStore::new();
    fx.encoder.init_params(&mut encoder_params, &mut r);
    for (_, t) in encoder_params.iter_mut() {
        t.mapv_inplace(|v| v + 0.1);
    }

    vec![
        Case {
            name: "identity pretraining",
            point: classifier_point(source.clone(), empty(), &[(names::W_ID, w_id.clone())]),
            loss: |fx, p| {
                pretrain_identity_loss(&p.source, p.params.tensor(names::W_ID).view(), &fx.source_labels, 0.3)
                    .expect("loss")
            },
        },
        Case {
            name: "camera pretraining",
            point: classifier_point(source_global.clone(), target.clone(), &[(names::W_CAM, w_cam)]),
            loss: |fx, p| {
                pretrain_camera_loss(
                    p.source.global.view(),
                    p.target.global.view(),
                    p.params.tensor(names::W_CAM).view(),
                    &fx.source_cameras,
                    &fx.target_cameras,
                    SOURCE_CAMERAS,
                )
                .expect("loss")
            },
        },
        Case {
            name: "recombined identity promotion",
            point: classifier_point(source_global.clone(), empty(), &[]),
            loss: ipl_identity,
        },
        Case {
            name: "recombined confusion promotion",
            point: classifier_point(source_global.clone(), empty(), &[]),
            loss: ipl_confusion,
        },
        Case {
            name: "promotion total",
            point: classifier_point(source_global.clone(), empty(), &[]),
            loss: |fx, p| ipl_total(ipl_identity(fx, p), ipl_confusion(fx, p)),
        },
        Case {
            name: "style swap backward",
            point: classifier_point(one(&mut r), one(&mut r), &[]),
            loss: swap_loss,
        },
        Case {
            name: "channel kl",
            point: classifier_point(one(&mut r), one(&mut r), &[]),
            loss: kl_loss,
        },
        Case {
            name: "directional style alignment",
            point: classifier_point(source_global.clone(), short_target.clone(), &[]),
            loss: |_, p| distribution_alignment_loss(&p.source, &p.target, EPS).expect("loss"),
        },
        Case {
            name: "transferred identity",
            point: classifier_point(source_global.clone(), short_target.clone(), &[]),
            loss: |fx, p| {
                transferred_identity_loss(&p.source, &p.target, fx.w_id.view(), &fx.source_labels, EPS)
                    .expect("loss")
            },
        },
        Case {
            name: "camera confusion",
            point: classifier_point(empty(), target.clone(), &[]),
            loss: camera_confusion,
        },
        Case {
            name: "style total",
            point: classifier_point(source_global.clone(), short_target, &[]),
            loss: |fx, p| style_total_loss(&p.source, &p.target, &fx.source_labels, &fx.ctx()).expect("loss"),
        },
        Case {
            name: "cluster identity",
            point: classifier_point(empty(), target.clone(), &[(names::W_T_ID, w_t_id.clone())]),
            loss: cluster_identity,
        },
        Case {
            name: "intra-camera identity",
            point: classifier_point(empty(), target.clone(), &[(names::W_T_INTRA, w_t_intra.clone())]),
            loss: intra_identity,
        },
        Case {
            name: "target triplet",
            point: classifier_point(empty(), target.clone(), &[]),
            loss: target_triplet,
        },
        Case {
            name: "identity consistency total",
            point: classifier_point(
                empty(),
                target,
                &[(names::W_T_ID, w_t_id), (names::W_T_INTRA, w_t_intra)],
            ),
            loss: |fx, p| {
                icl_total([cluster_identity(fx, p), intra_identity(fx, p), target_triplet(fx, p)])
            },
        },
        Case {
            name: "encoder backward",
            point: Point {
                source: empty(),
                target: empty(),
                params: encoder_params,
            },
            loss: encoder_loss,
        },
    ]
}

/// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)` of one tensor.
fn relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    let diff = (analytic - numeric).mapv(|v| v * v).sum().sqrt();
    let scale = analytic
        .mapv(|v| v * v)
        .sum()
        .sqrt()
        .max(numeric.mapv(|v| v * v).sum().sqrt());
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

fn numeric(fx: &Fixture, loss: LossFn, point: &Point, get: impl Fn(&mut Point) -> &mut Array2<f64>) -> Array2<f64> {
    let mut p = point.clone();
    let shape = get(&mut p).raw_dim();
    let mut out = Array2::zeros(shape);
    for idx in ndarray::indices(out.raw_dim()) {
        let original = get(&mut p)[idx];
        get(&mut p)[idx] = original + STEP;
        let plus = loss(fx, &p).value;
        get(&mut p)[idx] = original - STEP;
        let minus = loss(fx, &p).value;
        get(&mut p)[idx] = original;
        out[idx] = (plus - minus) / (2.0 * STEP);
    }
    out
}

fn feature_grad(g: &Option<BatchFeatures>, like: &BatchFeatures, token: Option<usize>) -> Array2<f64> {
    let pick = |b: &BatchFeatures| match token {
        None => b.global.clone(),
        Some(k) => b.locals.get(k).cloned().unwrap_or_else(|| Array2::zeros(b.global.raw_dim())),
    };
    match g {
        Some(b) => pick(b),
        None => Array2::zeros(like.global.raw_dim()),
    }
}

/// Worst relative error per differentiated tensor of one case.
pub fn check(fx: &Fixture, case: &Case) -> Vec<(String, f64)> {
    let analytic = (case.loss)(fx, &case.point);
    assert!(analytic.value.is_finite(), "{}: non-finite loss", case.name);
    let mut report = Vec::new();
    for (domain, feats, grads) in [
        ("source", &case.point.source, &analytic.source),
        ("target", &case.point.target, &analytic.target),
    ] {
        if feats.batch_size() == 0 {
            continue;
        }
        let tokens = std::iter::once(None).chain((0..feats.locals.len()).map(Some));
        for token in tokens {
            let a = feature_grad(grads, feats, token);
            let n = numeric(fx, case.loss, &case.point, |p| {
                let b = if domain == "source" { &mut p.source } else { &mut p.target };
                match token {
                    None => &mut b.global,
                    Some(k) => &mut b.locals[k],
                }
            });
            let label = match token {
                None => format!("{domain}.global"),
                Some(k) => format!("{domain}.local{k}"),
            };
            report.push((label, relative_error(&a, &n)));
        }
    }
    let names: Vec<String> = case.point.params.names().map(str::to_string).collect();
    for name in names {
        let a = analytic
            .params
            .get(&name)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(case.point.params.tensor(&name).raw_dim()));
        let n = numeric(fx, case.loss, &case.point, |p| p.params.get_mut(&name).expect("param"));
        report.push((name, relative_error(&a, &n)));
    }
    report
}

/// Runs every case; returns `(case, tensor, error)` rows.
pub fn run_suite(seed: u64) -> Vec<(&'static str, String, f64)> {
    let fx = fixture(seed);
    let mut rows = Vec::new();
    for case in cases(&fx, seed) {
        for (tensor, err) in check(&fx, &case) {
            rows.push((case.name, tensor, err));
        }
    }
    rows
}
