//! Seeded random source shared by tests, demos and parameter initializers.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::grid::{FeatureMap, Shape};
use crate::linalg::RealMatrix;

#[derive(Debug, Clone)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.gen_range(lo..hi)
    }

    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    /// Matrix with entries drawn uniformly from `[-half_width, half_width)`.
    pub fn uniform_matrix(&mut self, rows: usize, cols: usize, half_width: f64) -> RealMatrix {
        if half_width == 0.0 {
            return RealMatrix::zeros(rows, cols);
        }
        RealMatrix::from_fn(rows, cols, |_, _| self.uniform(-half_width, half_width))
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize, std: f64) -> RealMatrix {
        RealMatrix::from_fn(rows, cols, |_, _| std * self.normal())
    }

    pub fn normal_map(&mut self, shape: Shape) -> FeatureMap {
        FeatureMap::from_fn(shape, |_, _, _, _| self.normal())
    }
}
