//! Seeded k-means over L2-normalised target features and the per-epoch
//! pseudo-label table built from it.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::DatasetManifest;
use crate::math::l2_normalize_rows;
use crate::parallel::{map_range, Exec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iters: 100,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Dense labels in `[0, clusters)`.
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub inertia: f64,
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid per point (ties to the lowest index) and its squared distance.
fn assign(points: ArrayView2<f64>, centroids: &Array2<f64>, exec: Exec) -> Vec<(usize, f64)> {
    map_range(exec, points.nrows(), |i| {
        let p = points.row(i);
        let mut best = (0, f64::INFINITY);
        for (c, centre) in centroids.rows().into_iter().enumerate() {
            let d = sq_dist(p, centre);
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    })
}

fn plus_plus_init(points: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            if nearest[pick] <= 0.0 {
                pick = nearest.iter().rposition(|&d| d > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // Every point coincides with a chosen centre.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    let mut c = Array2::zeros((k, points.ncols()));
    for (r, &i) in chosen.iter().enumerate() {
        c.row_mut(r).assign(&points.row(i));
    }
    c
}

fn means(points: ArrayView2<f64>, labels: &[usize], k: usize) -> (Array2<f64>, Vec<usize>) {
    let mut sums = Array2::zeros((k, points.ncols()));
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        let mut row = sums.row_mut(l);
        row += &points.row(i);
        counts[l] += 1;
    }
    for (mut row, &c) in sums.rows_mut().into_iter().zip(&counts) {
        if c > 0 {
            row /= c as f64;
        }
    }
    (sums, counts)
}

/// Lloyd iterations from a k-means++ start. An emptied cluster is re-seeded
/// with the point farthest from its current centre.
pub fn kmeans(points: ArrayView2<f64>, config: &KMeansConfig, exec: Exec) -> Result<KMeansResult> {
    let n = points.nrows();
    let k = config.k;
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    if k > n {
        return Err(Error::Config(format!("k = {k} exceeds the {n} points to cluster")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite feature passed to k-means".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut labels: Vec<usize> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iters {
        iterations += 1;
        let assigned = assign(points, &centroids, exec);
        let next: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
        let (mut updated, counts) = means(points, &labels, k);
        let mut taken = Vec::new();
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let far = (0..n)
                .filter(|i| !taken.contains(i))
                .max_by(|&a, &b| assigned[a].1.total_cmp(&assigned[b].1).then(b.cmp(&a)))
                .expect("k <= n leaves a candidate");
            taken.push(far);
            updated.row_mut(c).assign(&points.row(far));
        }
        let shift = (&updated - &centroids)
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if taken.is_empty() && shift < config.tol {
            converged = true;
            break;
        }
    }
    let assigned = assign(points, &centroids, exec);
    let raw: Vec<usize> = assigned.iter().map(|a| a.0).collect();
    let mut used = raw.clone();
    used.sort_unstable();
    used.dedup();
    let order: BTreeMap<usize, usize> = used.iter().enumerate().map(|(new, &old)| (old, new)).collect();
    let assignments: Vec<usize> = raw.iter().map(|l| order[l]).collect();
    let (centroids, _) = means(points, &assignments, order.len());
    let inertia = (0..n)
        .map(|i| sq_dist(points.row(i), centroids.row(assignments[i])))
        .sum();
    Ok(KMeansResult {
        assignments,
        centroids,
        iterations,
        converged,
        inertia,
    })
}

/// Cluster and within-camera pseudo labels for every target training sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelTable {
    pub epoch: usize,
    pub k: usize,
    pub cluster_of: BTreeMap<String, usize>,
    pub intra_camera_label_of: BTreeMap<String, usize>,
    pub num_intra_camera_classes: usize,
    /// Unit-norm cluster centres, one row per cluster.
    #[serde(skip)]
    pub centroids: Array2<f64>,
}

impl PseudoLabelTable {
    pub fn cluster(&self, sample_id: &str) -> Result<usize> {
        self.cluster_of
            .get(sample_id)
            .copied()
            .ok_or_else(|| Error::Data(format!("sample {sample_id} missing from pseudo-label table")))
    }

    pub fn intra_camera_label(&self, sample_id: &str) -> Result<usize> {
        self.intra_camera_label_of
            .get(sample_id)
            .copied()
            .ok_or_else(|| Error::Data(format!("sample {sample_id} missing from pseudo-label table")))
    }

    /// Errors unless the table was built for `epoch`.
    pub fn ensure_fresh(&self, epoch: usize) -> Result<()> {
        if self.epoch != epoch {
            return Err(Error::Data(format!(
                "pseudo-label table from epoch {} used at epoch {epoch}",
                self.epoch
            )));
        }
        Ok(())
    }

    /// One header line followed by one line per sample.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        let header = serde_json::json!({
            "epoch": self.epoch,
            "k": self.k,
            "num_samples": self.cluster_of.len(),
            "num_intra_camera_classes": self.num_intra_camera_classes,
        });
        writeln!(out, "{header}").expect("in-memory write");
        for (id, &c) in &self.cluster_of {
            let line = serde_json::json!({
                "sample_id": id,
                "cluster": c,
                "intra_camera_label": self.intra_camera_label_of.get(id),
            });
            writeln!(out, "{line}").expect("in-memory write");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Dense labels over the sorted distinct `(camera, identity)` pairs.
pub fn intra_camera_labels(manifest: &DatasetManifest) -> (Vec<usize>, usize) {
    let mut pairs: Vec<(usize, usize)> = manifest
        .samples
        .iter()
        .map(|s| (s.camera, s.identity))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    let index: BTreeMap<(usize, usize), usize> =
        pairs.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let labels = manifest
        .samples
        .iter()
        .map(|s| index[&(s.camera, s.identity)])
        .collect();
    (labels, pairs.len())
}

/// Clusters one feature row per manifest sample into `k` groups.
pub fn cluster_target_features(
    features: ArrayView2<f64>,
    manifest: &DatasetManifest,
    k: usize,
    seed: u64,
    epoch: usize,
    exec: Exec,
) -> Result<PseudoLabelTable> {
    if features.nrows() != manifest.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} target samples",
            features.nrows(),
            manifest.len()
        )));
    }
    if k > manifest.len() {
        return Err(Error::Config(format!(
            "k = {k} exceeds the {} target training samples",
            manifest.len()
        )));
    }
    let unit = l2_normalize_rows(features);
    let result = kmeans(unit.view(), &KMeansConfig::new(k, seed), exec)?;
    let (intra, classes) = intra_camera_labels(manifest);
    let mut cluster_of = BTreeMap::new();
    let mut intra_camera_label_of = BTreeMap::new();
    for (i, s) in manifest.samples.iter().enumerate() {
        cluster_of.insert(s.sample_id.clone(), result.assignments[i]);
        intra_camera_label_of.insert(s.sample_id.clone(), intra[i]);
    }
    Ok(PseudoLabelTable {
        epoch,
        k,
        cluster_of,
        intra_camera_label_of,
        num_intra_camera_classes: classes,
        centroids: l2_normalize_rows(result.centroids.view()),
    })
}

/// Mean of the rows of `points` per label, used by tests and tooling.
pub fn label_means(points: ArrayView2<f64>, labels: &[usize], k: usize) -> Array2<f64> {
    means(points, labels, k).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separated_blobs() {
        let p = array![[0.0, 0.0], [0.1, 0.0], [10.0, 10.0], [10.1, 10.0], [0.0, 0.1]];
        let r = kmeans(p.view(), &KMeansConfig::new(2, 3), Exec::Sequential).unwrap();
        assert!(r.converged);
        assert_eq!(r.assignments[0], r.assignments[1]);
        assert_eq!(r.assignments[0], r.assignments[4]);
        assert_eq!(r.assignments[2], r.assignments[3]);
        assert_ne!(r.assignments[0], r.assignments[2]);
    }

    #[test]
    fn same_seed_same_result() {
        let p = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let a = kmeans(p.view(), &KMeansConfig::new(5, 9), Exec::Sequential).unwrap();
        let b = kmeans(p.view(), &KMeansConfig::new(5, 9), Exec::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn k_equal_n_is_singletons() {
        let p = array![[0.0], [1.0], [2.0], [5.0]];
        let r = kmeans(p.view(), &KMeansConfig::new(4, 1), Exec::Sequential).unwrap();
        let mut seen = r.assignments.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        assert!(r.inertia < 1e-12);
    }

    #[test]
    fn k_too_large_is_error() {
        let p = array![[0.0], [1.0]];
        assert!(matches!(
            kmeans(p.view(), &KMeansConfig::new(3, 1), Exec::Sequential),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn duplicate_points_still_fill_k() {
        let p = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [2.0, 2.0]];
        let r = kmeans(p.view(), &KMeansConfig::new(2, 0), Exec::Sequential).unwrap();
        assert_ne!(r.assignments[0], r.assignments[3]);
    }
}
