use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::params::normal_init;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassRole {
    Identity,
    Camera,
    TargetIdentity,
    TargetIntraCamera,
}

/// Bias-free linear classifier; rows are classes, columns feature channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierMatrix {
    pub weights: Array2<f64>,
    pub role: ClassRole,
}

impl ClassifierMatrix {
    pub fn new(weights: Array2<f64>, role: ClassRole) -> Self {
        Self { weights, role }
    }

    pub fn random(classes: usize, width: usize, role: ClassRole, rng: &mut impl Rng) -> Self {
        Self::new(normal_init(classes, width, 0.01, rng), role)
    }

    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn width(&self) -> usize {
        self.weights.ncols()
    }

    pub fn scores(&self, f: ArrayView1<f64>) -> Array1<f64> {
        self.weights.dot(&f)
    }

    pub fn scores_batch(&self, f: ArrayView2<f64>) -> Array2<f64> {
        f.dot(&self.weights.t())
    }
}
