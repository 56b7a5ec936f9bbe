use ndarray::{Array1, ArrayView1};

use crate::math::{log_softmax, softmax};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Channel moments of one feature vector (population standard deviation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleStats {
    pub mean: f64,
    pub std: f64,
    pub eps: f64,
}

pub fn style_stats(f: ArrayView1<f64>, eps: f64) -> StyleStats {
    let n = f.len() as f64;
    let mean = f.sum() / n;
    let var = f.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    StyleStats {
        mean,
        std: var.sqrt(),
        eps,
    }
}

/// Re-styles `f` with the target moments: `σ_t (f - μ_f) / (σ_f + eps) + μ_t`.
pub fn style_swap(f: ArrayView1<f64>, target: &StyleStats) -> Array1<f64> {
    let own = style_stats(f, target.eps);
    let denom = own.std + target.eps;
    f.mapv(|v| target.std * (v - own.mean) / denom + target.mean)
}

/// Gradients of a scalar through `style_swap(f, style_stats(t))` given the
/// upstream gradient `g` on the output. Returns `(∂/∂f, ∂/∂t)`.
pub fn style_swap_backward(
    f: ArrayView1<f64>,
    t: ArrayView1<f64>,
    eps: f64,
    g: ArrayView1<f64>,
) -> (Array1<f64>, Array1<f64>) {
    let n = f.len() as f64;
    let sf = style_stats(f, eps);
    let st = style_stats(t, eps);
    let denom = sf.std + eps;
    let centred = f.mapv(|v| v - sf.mean);
    let normalised = &centred / denom;

    // Through the target moments.
    let d_sigma_t = g.dot(&normalised);
    let d_mu_t = g.sum();
    let d_t = t.mapv(|v| {
        let d_std = if st.std > 0.0 { (v - st.mean) / (n * st.std) } else { 0.0 };
        d_mu_t / n + d_sigma_t * d_std
    });

    // Through the normalisation of f.
    let g_hat = &g * st.std;
    let g_mean = g_hat.sum() / n;
    let proj = g_hat.dot(&centred);
    let d_f = Array1::from_iter(centred.iter().zip(g_hat.iter()).map(|(&c, &gh)| {
        let d_std = if sf.std > 0.0 { c / (n * sf.std) } else { 0.0 };
        (gh - g_mean) / denom - proj / (denom * denom) * d_std
    }));
    (d_f, d_t)
}

/// A probability vector over channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDistribution {
    pub probs: Array1<f64>,
}

/// Softmax over channels with unit temperature.
pub fn channel_distribution(f: ArrayView1<f64>) -> ChannelDistribution {
    ChannelDistribution { probs: softmax(f) }
}

/// `D_KL(P ‖ Q) = Σ p ln(p / q)`; zero-probability entries of `P` contribute nothing.
pub fn kl_divergence(p: &ChannelDistribution, q: &ChannelDistribution) -> f64 {
    p.probs
        .iter()
        .zip(q.probs.iter())
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum::<f64>()
        .max(0.0)
}

/// `D_KL(softmax(x) ‖ softmax(y))` and its gradients w.r.t. the logits `x` and `y`.
pub fn kl_divergence_grad(x: ArrayView1<f64>, y: ArrayView1<f64>) -> (f64, Array1<f64>, Array1<f64>) {
    let p = softmax(x);
    let q = softmax(y);
    let log_ratio = log_softmax(x) - log_softmax(y);
    let kl = p.dot(&log_ratio);
    let dx = &p * &log_ratio.mapv(|r| r - kl);
    let dy = &q - &p;
    (kl, dx, dy)
}
