mod common;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use sctreid::ccflm::{
    channel_distribution, kl_divergence, kmeans, style_stats, style_swap, KMeansConfig,
};
use sctreid::cscm::{deactivate_row, recombine, ChannelMaskPair};
use sctreid::datasets::{synthesize_sct_dataset, validate_sct, SynthConfig};
use sctreid::evaluation::{average_precision, evaluate, pairwise_euclidean, DistanceMatrix};
use sctreid::parallel::Exec;

fn vector(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    len.prop_flat_map(|n| prop::collection::vec(-5.0f64..5.0, n))
}

fn even_width() -> impl Strategy<Value = usize> {
    (1usize..=32).prop_map(|h| 2 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn masks_partition_channels(row in even_width().prop_flat_map(|n| prop::collection::vec(-3.0f64..3.0, n))) {
        let n = row.len();
        let (kept, keep) = deactivate_row(Array1::from(row.clone()).view(), 0.5).unwrap();
        let masks = ChannelMaskPair::from_identity_keep(&keep);
        prop_assert!(masks.is_partition());
        prop_assert_eq!(masks.identity_indices().len(), n / 2);
        for i in 0..n {
            prop_assert!(masks.identity[i] != masks.camera[i]);
            prop_assert_eq!(kept[i], if keep[i] { row[i] } else { 0.0 });
        }
        let smallest_kept = (0..n).filter(|&i| keep[i]).map(|i| row[i]).fold(f64::INFINITY, f64::min);
        let largest_dropped = (0..n).filter(|&i| !keep[i]).map(|i| row[i]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(smallest_kept >= largest_dropped);
    }

    #[test]
    fn gathered_dots_equal_masked_dots(
        parts in even_width().prop_flat_map(|n| (
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(-3.0f64..3.0, n),
        ))
    ) {
        let (f, w_id, w_cam, scores) = parts;
        let (_, keep) = deactivate_row(Array1::from(scores).view(), 0.5).unwrap();
        let masks = ChannelMaskPair::from_identity_keep(&keep);
        let (f, w_id, w_cam) = (Array1::from(f), Array1::from(w_id), Array1::from(w_cam));
        let (pair, id_row, cam_row) = recombine(f.view(), &masks, w_id.view(), w_cam.view()).unwrap();
        let masked = |w: &Array1<f64>, m: &[bool]| {
            w.iter().zip(f.iter()).zip(m).map(|((a, b), &k)| if k { a * b } else { 0.0 }).sum::<f64>()
        };
        prop_assert!((pair.identity_half.dot(&id_row) - masked(&w_id, &masks.identity)).abs() < 1e-9);
        prop_assert!((pair.camera_half.dot(&cam_row) - masked(&w_cam, &masks.camera)).abs() < 1e-9);
    }

    #[test]
    fn style_swap_moves_moments(f in vector(4..32), t_seed in vector(4..32)) {
        let n = f.len().min(t_seed.len());
        let f = Array1::from(f[..n].to_vec());
        let t = Array1::from(t_seed[..n].to_vec());
        let sf = style_stats(f.view(), 1e-5);
        let st = style_stats(t.view(), 1e-5);
        prop_assume!(sf.std > 0.1 && st.std > 0.1);
        let out = style_swap(f.view(), &st);
        let so = style_stats(out.view(), 1e-5);
        prop_assert!((so.mean - st.mean).abs() < 1e-4);
        prop_assert!((so.std - st.std).abs() < 1e-4);
        let back = style_swap(out.view(), &sf);
        prop_assert!((&back - &f).iter().all(|d| d.abs() < 1e-4));
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_equal(x in vector(2..16), y in vector(2..16)) {
        let n = x.len().min(y.len());
        let p = channel_distribution(Array1::from(x[..n].to_vec()).view());
        let q = channel_distribution(Array1::from(y[..n].to_vec()).view());
        prop_assert!(kl_divergence(&p, &q) >= 0.0);
        prop_assert!(kl_divergence(&p, &p).abs() < 1e-12);
    }

    #[test]
    fn average_precision_is_a_fraction(hits in prop::collection::vec(any::<bool>(), 1..30)) {
        let ap = average_precision(&hits);
        prop_assert!((0.0..=1.0).contains(&ap));
        let found = hits.iter().filter(|&&h| h).count();
        let front_loaded = found > 0 && hits[..found].iter().all(|&h| h);
        prop_assert_eq!(ap == 1.0, front_loaded);
    }

    #[test]
    fn cmc_is_monotone_and_gallery_order_free(
        q in 1usize..6, g in 2usize..12, ids in 1u64..4, seed in any::<u64>()
    ) {
        let mut r = common::rng(seed);
        let values = common::normal(q, g, 1.0, &mut r).mapv(f64::abs);
        let label = |i: usize, salt: usize| ((i * 7 + salt) as u64 + seed) % ids;
        let dm = DistanceMatrix {
            values: values.clone(),
            query_identities: (0..q).map(|i| label(i, 1)).collect(),
            query_cameras: vec![0; q],
            gallery_identities: (0..g).map(|i| label(i, 3)).collect(),
            gallery_cameras: (0..g).map(|i| (i % 2) as u64).collect(),
        };
        let Ok(report) = evaluate(&dm, Exec::Sequential) else {
            return Ok(());
        };
        prop_assert_eq!(report.cmc.len(), g);
        prop_assert!(report.cmc.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!((0.0..=1.0).contains(&report.map));
        prop_assert_eq!(report.num_valid_queries + report.dropped_queries, q);

        let perm: Vec<usize> = (0..g).rev().collect();
        let shuffled = DistanceMatrix {
            values: values.select(ndarray::Axis(1), &perm),
            gallery_identities: perm.iter().map(|&i| dm.gallery_identities[i]).collect(),
            gallery_cameras: perm.iter().map(|&i| dm.gallery_cameras[i]).collect(),
            ..dm.clone()
        };
        let again = evaluate(&shuffled, Exec::Sequential).unwrap();
        prop_assert!((again.map - report.map).abs() < 1e-12);
        prop_assert_eq!(again.cmc, report.cmc);
    }

    #[test]
    fn kmeans_returns_dense_nearest_centroid_labels(n in 2usize..30, k in 1usize..6, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let mut r = common::rng(seed);
        let points = common::normal(n, 3, 1.0, &mut r);
        let out = kmeans(points.view(), &KMeansConfig::new(k, seed), Exec::Sequential).unwrap();
        let clusters = out.centroids.nrows();
        prop_assert!(clusters <= k);
        for c in 0..clusters {
            let members: Vec<usize> = (0..n).filter(|&i| out.assignments[i] == c).collect();
            prop_assert!(!members.is_empty());
            let mean = members.iter().fold(Array1::zeros(3), |acc: Array1<f64>, &i| acc + points.row(i)) / members.len() as f64;
            prop_assert!((&mean - &out.centroids.row(c)).iter().all(|d| d.abs() < 1e-9));
        }
        let again = kmeans(points.view(), &KMeansConfig::new(k, seed), Exec::Sequential).unwrap();
        prop_assert_eq!(again.assignments, out.assignments);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthetic_targets_are_single_camera(
        ids in 2usize..12, cams in 1usize..5, per in 1usize..5, style in 0.0f64..3.0, seed in any::<u64>()
    ) {
        let cfg = SynthConfig {
            target_identities: ids,
            target_cameras: cams,
            target_per_id: per,
            source_identities: 4,
            test_identities: 3,
            style_shift: style,
            ..SynthConfig::default()
        };
        let ds = synthesize_sct_dataset(&cfg, seed).unwrap();
        let report = validate_sct(&ds.target);
        prop_assert!(report.is_sct);
        prop_assert_eq!(report.cross_camera_positive_pairs, 0);
        prop_assert_eq!(ds.target.len(), ids * per);
        prop_assert!(ds.target.sct);
    }
}

#[test]
fn pairwise_distances_agree_across_executors() {
    let mut r = common::rng(11);
    let q: Array2<f64> = common::normal(13, 7, 1.0, &mut r);
    let g: Array2<f64> = common::normal(29, 7, 1.0, &mut r);
    let a = pairwise_euclidean(q.view(), g.view(), Exec::Sequential).unwrap();
    let b = pairwise_euclidean(q.view(), g.view(), Exec::default()).unwrap();
    assert_eq!(a, b);
}
