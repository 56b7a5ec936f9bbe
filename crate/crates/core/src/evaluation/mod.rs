//! Retrieval metrics: Euclidean query-gallery matching, single-query CMC and
//! mean average precision.

mod plot;

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::datasets::DatasetManifest;
use crate::encoder::Encoder;
use crate::parallel::{map_range, Exec};
use crate::params::ParamStore;
use crate::{Error, Result};

pub use plot::{cmc_svg, line_svg, Series};

/// Query × gallery distances with the labels the protocol filters on.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub values: Array2<f64>,
    pub query_identities: Vec<u64>,
    pub query_cameras: Vec<u64>,
    pub gallery_identities: Vec<u64>,
    pub gallery_cameras: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `cmc[r - 1]` is Rank-r accuracy.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub num_queries: usize,
    pub num_valid_queries: usize,
    pub dropped_queries: usize,
}

impl MetricsReport {
    pub fn rank(&self, r: usize) -> f64 {
        assert!(r >= 1, "ranks start at 1");
        self.cmc
            .get(r - 1)
            .or(self.cmc.last())
            .copied()
            .unwrap_or(0.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Exact L2 distances between every query row and every gallery row.
pub fn pairwise_euclidean(
    query: ArrayView2<f64>,
    gallery: ArrayView2<f64>,
    exec: Exec,
) -> Result<Array2<f64>> {
    if query.ncols() != gallery.ncols() {
        return Err(Error::Shape(format!(
            "query width {} differs from gallery width {}",
            query.ncols(),
            gallery.ncols()
        )));
    }
    let rows = map_range(exec, query.nrows(), |i| {
        let q = query.row(i);
        gallery
            .rows()
            .into_iter()
            .map(|g| {
                q.iter()
                    .zip(g.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect::<Vec<_>>()
    });
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((query.nrows(), gallery.nrows()), flat).expect("row lengths agree"))
}

/// Mean of precision at each hit of a ranked relevance list.
pub fn average_precision(hits: &[bool]) -> f64 {
    let mut found = 0usize;
    let mut sum = 0.0;
    for (i, &h) in hits.iter().enumerate() {
        if h {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    if found == 0 {
        0.0
    } else {
        sum / found as f64
    }
}

/// Ranked relevance of the valid gallery entries for one query, or `None`
/// when nothing valid matches.
fn ranked_hits(dm: &DistanceMatrix, q: usize) -> Option<Vec<bool>> {
    let (qid, qcam) = (dm.query_identities[q], dm.query_cameras[q]);
    let row = dm.values.row(q);
    let mut order: Vec<usize> = (0..row.len())
        .filter(|&g| !(dm.gallery_identities[g] == qid && dm.gallery_cameras[g] == qcam))
        .collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    let hits: Vec<bool> = order.iter().map(|&g| dm.gallery_identities[g] == qid).collect();
    hits.iter().any(|&h| h).then_some(hits)
}

/// Single-query CMC (up to the gallery size) and mAP.
pub fn evaluate(dm: &DistanceMatrix, exec: Exec) -> Result<MetricsReport> {
    let (nq, ng) = dm.values.dim();
    if dm.query_identities.len() != nq
        || dm.query_cameras.len() != nq
        || dm.gallery_identities.len() != ng
        || dm.gallery_cameras.len() != ng
    {
        return Err(Error::Shape("distance matrix metadata does not match its shape".into()));
    }
    if dm.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Numeric("distances must be finite and non-negative".into()));
    }
    let per_query = map_range(exec, nq, |q| {
        ranked_hits(dm, q).map(|hits| {
            let first = hits.iter().position(|&h| h).expect("has a hit");
            (first, average_precision(&hits))
        })
    });
    let valid: Vec<(usize, f64)> = per_query.into_iter().flatten().collect();
    if valid.is_empty() {
        return Err(Error::Data("no query has a valid gallery match".into()));
    }
    let mut cmc = vec![0.0; ng.max(1)];
    for &(first, _) in &valid {
        for c in cmc.iter_mut().skip(first) {
            *c += 1.0;
        }
    }
    let n = valid.len() as f64;
    cmc.iter_mut().for_each(|c| *c /= n);
    Ok(MetricsReport {
        cmc,
        map: valid.iter().map(|v| v.1).sum::<f64>() / n,
        num_queries: nq,
        num_valid_queries: valid.len(),
        dropped_queries: nq - valid.len(),
    })
}

/// Which encoder outputs are compared.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Matching {
    #[default]
    Global,
    Concatenated,
}

/// Encodes every sample of a manifest with the given parameters.
pub fn embed(
    encoder: &Encoder,
    params: &ParamStore,
    manifest: &DatasetManifest,
    matching: Matching,
) -> Result<Array2<f64>> {
    let (features, _) = encoder.forward(params, manifest.inputs().view())?;
    Ok(match matching {
        Matching::Global => features.global,
        Matching::Concatenated => features.concatenated(),
    })
}

/// Builds the labelled distance matrix for a query and a gallery manifest.
pub fn distance_matrix(
    query: ArrayView2<f64>,
    query_manifest: &DatasetManifest,
    gallery: ArrayView2<f64>,
    gallery_manifest: &DatasetManifest,
    exec: Exec,
) -> Result<DistanceMatrix> {
    if query.nrows() != query_manifest.len() || gallery.nrows() != gallery_manifest.len() {
        return Err(Error::Shape("one feature row per manifest sample".into()));
    }
    let labels = |m: &DatasetManifest| -> (Vec<u64>, Vec<u64>) {
        m.samples
            .iter()
            .map(|s| (m.identity_labels[s.identity], m.camera_labels[s.camera]))
            .unzip()
    };
    let (query_identities, query_cameras) = labels(query_manifest);
    let (gallery_identities, gallery_cameras) = labels(gallery_manifest);
    Ok(DistanceMatrix {
        values: pairwise_euclidean(query, gallery, exec)?,
        query_identities,
        query_cameras,
        gallery_identities,
        gallery_cameras,
    })
}

/// Embeds query and gallery, then scores retrieval.
pub fn evaluate_encoder(
    encoder: &Encoder,
    params: &ParamStore,
    query: &DatasetManifest,
    gallery: &DatasetManifest,
    matching: Matching,
    exec: Exec,
) -> Result<MetricsReport> {
    let q = embed(encoder, params, query, matching)?;
    let g = embed(encoder, params, gallery, matching)?;
    evaluate(&distance_matrix(q.view(), query, g.view(), gallery, exec)?, exec)
}
