//! Small numeric kernels shared across modules.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

pub fn log_sum_exp(x: ArrayView1<f64>) -> f64 {
    let max = x.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if !max.is_finite() {
        return max;
    }
    max + x.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(x: ArrayView1<f64>) -> Array1<f64> {
    let lse = log_sum_exp(x);
    x.mapv(|v| (v - lse).exp())
}

pub fn log_softmax(x: ArrayView1<f64>) -> Array1<f64> {
    let lse = log_sum_exp(x);
    x.mapv(|v| v - lse)
}

pub fn softmax_rows(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let s = softmax(row.view());
        row.assign(&s);
    }
    out
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(x: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

pub fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn l2_normalize_rows(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_is_shift_invariant_and_normalised() {
        let x = array![1.0, -2.0, 0.5];
        let p = softmax(x.view());
        let q = softmax((&x + 7.0).view());
        assert!((p.sum() - 1.0).abs() < 1e-12);
        for (a, b) in p.iter().zip(q.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(array![0.2, 0.2, 0.1].view()), 0);
        assert_eq!(argmax(array![0.1, 0.7, 0.2].view()), 1);
    }
}
