//! The feature extractor (one global token plus `K` local tokens per input),
//! linear classifiers, and the shared cross-entropy / triplet losses used for
//! pre-training.

mod classifier;
mod losses;
mod network;

pub use classifier::{ClassRole, ClassifierMatrix};
pub use losses::{
    cross_entropy, cross_entropy_batch, cross_entropy_grad, pretrain_camera_loss,
    pretrain_identity_loss, triplet_batch_hard, triplet_loss, CeOutput, LossGrads, Reduction,
    Target, TripletOutput,
};
pub use network::{Architecture, Encoder, EncoderConfig, ForwardCache};

use ndarray::{Array1, Array2, ArrayView1};

/// Encoder output for a single sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub global: Array1<f64>,
    pub locals: Vec<Array1<f64>>,
    pub source_sample_id: String,
}

/// Encoder output for a batch: row `i` of every matrix belongs to sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchFeatures {
    pub global: Array2<f64>,
    pub locals: Vec<Array2<f64>>,
}

impl BatchFeatures {
    pub fn zeros(batch: usize, width: usize, locals: usize) -> Self {
        Self {
            global: Array2::zeros((batch, width)),
            locals: (0..locals).map(|_| Array2::zeros((batch, width))).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.batch_size(), self.width(), self.locals.len())
    }

    pub fn batch_size(&self) -> usize {
        self.global.nrows()
    }

    pub fn width(&self) -> usize {
        self.global.ncols()
    }

    pub fn add_assign(&mut self, other: &BatchFeatures) {
        self.global += &other.global;
        for (a, b) in self.locals.iter_mut().zip(&other.locals) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.global.iter().all(|v| v.is_finite())
            && self.locals.iter().all(|l| l.iter().all(|v| v.is_finite()))
    }

    pub fn bundle(&self, row: usize, sample_id: impl Into<String>) -> FeatureBundle {
        FeatureBundle {
            global: self.global.row(row).to_owned(),
            locals: self.locals.iter().map(|l| l.row(row).to_owned()).collect(),
            source_sample_id: sample_id.into(),
        }
    }

    /// Global token concatenated with all locals, one row per sample.
    pub fn concatenated(&self) -> Array2<f64> {
        let views: Vec<_> = std::iter::once(self.global.view())
            .chain(self.locals.iter().map(|l| l.view()))
            .collect();
        ndarray::concatenate(ndarray::Axis(1), &views).expect("equal row counts")
    }
}

impl FeatureBundle {
    pub fn global_view(&self) -> ArrayView1<'_, f64> {
        self.global.view()
    }
}
