//! Two-dimensional DFT pair: unnormalized forward, `1/(H·W)` inverse.
//!
//! Transforms act independently on every `(batch, channel)` plane. Arbitrary
//! extents are supported; the one-dimensional passes are delegated to
//! `rustfft`, which picks mixed-radix or Bluestein plans as needed.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{FeatureMap, Shape, SpectrumMap};

/// Precomputed plans for one `h × w` plane size. Immutable once built, so a
/// single instance can be shared across threads.
#[derive(Clone)]
pub struct Fft2 {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("h", &self.h).field("w", &self.w).finish()
    }
}

impl Fft2 {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    /// In-place unnormalized forward transform of one row-major plane.
    pub fn forward_plane(&self, plane: &mut [Complex64]) {
        self.transform(plane, &self.row_fwd, &self.col_fwd);
    }

    /// In-place inverse transform of one plane, including the `1/(H·W)` factor.
    pub fn inverse_plane(&self, plane: &mut [Complex64]) {
        self.transform(plane, &self.row_inv, &self.col_inv);
        let scale = 1.0 / self.plane_len() as f64;
        plane.iter_mut().for_each(|v| *v *= scale);
    }

    /// Inverse transform without the normalization factor.
    pub fn inverse_plane_unnormalized(&self, plane: &mut [Complex64]) {
        self.transform(plane, &self.row_inv, &self.col_inv);
    }

    fn transform(&self, plane: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        assert_eq!(plane.len(), self.plane_len());
        let (h, w) = (self.h, self.w);
        if w > 1 {
            rows.process(plane);
        }
        if h > 1 {
            let mut t = vec![Complex64::new(0.0, 0.0); h * w];
            transpose(plane, &mut t, h, w);
            cols.process(&mut t);
            transpose(&t, plane, w, h);
        }
    }

    /// Forward transform of every plane of `data`, a stack of planes.
    pub fn forward_planes(&self, data: &mut [Complex64]) {
        data.par_chunks_mut(self.plane_len()).for_each(|p| self.forward_plane(p));
    }

    pub fn inverse_planes(&self, data: &mut [Complex64]) {
        data.par_chunks_mut(self.plane_len()).for_each(|p| self.inverse_plane(p));
    }
}

/// `dst[j * rows + i] = src[i * cols + j]` for a `rows × cols` source.
fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const TILE: usize = 32;
    for i0 in (0..rows).step_by(TILE) {
        for j0 in (0..cols).step_by(TILE) {
            for i in i0..(i0 + TILE).min(rows) {
                for j in j0..(j0 + TILE).min(cols) {
                    dst[j * rows + i] = src[i * cols + j];
                }
            }
        }
    }
}

/// Forward transform `û[m,n] = Σ u[x,y]·exp(−i(2π m x/H + 2π n y/W))`.
pub fn dft2(u: &FeatureMap) -> Result<SpectrumMap> {
    if !u.is_finite() {
        return Err(Error::numeric("dft2 input contains non-finite values"));
    }
    let shape = u.shape();
    let plan = Fft2::new(shape.height, shape.width);
    let mut data: Vec<Complex64> = u.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan.forward_planes(&mut data);
    Ok(SpectrumMap::from_raw(shape, data))
}

/// Inverse transform, normalized so that `idft2(dft2(u)) = u`.
pub fn idft2(s: &SpectrumMap) -> Result<SpectrumMap> {
    if s.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("idft2 input contains non-finite values"));
    }
    let shape = s.shape();
    let plan = Fft2::new(shape.height, shape.width);
    let mut data = s.data().to_vec();
    plan.inverse_planes(&mut data);
    Ok(SpectrumMap::from_raw(shape, data))
}

/// Real part of a complex spatial map together with the discarded residue.
#[derive(Debug, Clone)]
pub struct RealProjection {
    pub map: FeatureMap,
    /// Largest absolute imaginary part that was dropped.
    pub max_imag: f64,
    /// L2 norm of the dropped imaginary parts.
    pub imag_l2: f64,
}

pub fn real_projection(z: &SpectrumMap) -> RealProjection {
    real_projection_raw(z.shape(), z.data())
}

pub(crate) fn real_projection_raw(shape: Shape, data: &[Complex64]) -> RealProjection {
    let mut max_imag = 0.0f64;
    let mut imag_sq = 0.0;
    let re = data
        .iter()
        .map(|v| {
            max_imag = max_imag.max(v.im.abs());
            imag_sq += v.im * v.im;
            v.re
        })
        .collect();
    RealProjection { map: FeatureMap::from_raw(shape, re), max_imag, imag_l2: imag_sq.sqrt() }
}

/// `idft2` followed by [`real_projection`].
pub fn idft2_real(s: &SpectrumMap) -> Result<RealProjection> {
    Ok(real_projection(&idft2(s)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::hermitian_symmetry_check;
    use crate::oracle::direct_dft2;
    use crate::rng::Rng;

    fn random_map(shape: Shape, seed: u64) -> FeatureMap {
        let mut rng = Rng::new(seed);
        FeatureMap::from_fn(shape, |_, _, _, _| rng.normal())
    }

    #[test]
    fn constant_map_has_only_dc() {
        let u = FeatureMap::from_fn(Shape::new(1, 1, 4, 4).unwrap(), |_, _, _, _| 1.0);
        let s = dft2(&u).unwrap();
        assert!((s.get(0, 0, 0, 0) - Complex64::new(16.0, 0.0)).norm() < 1e-12);
        for (i, v) in s.data().iter().enumerate().skip(1) {
            assert!(v.norm() < 1e-12, "bin {i} = {v}");
        }
    }

    #[test]
    fn delta_transforms_to_ones_and_back() {
        for (h, w) in [(4, 4), (5, 3), (1, 7)] {
            let shape = Shape::new(1, 1, h, w).unwrap();
            let mut u = FeatureMap::zeros(shape);
            u.set(0, 0, 0, 0, 1.0);
            let s = dft2(&u).unwrap();
            assert!(s.data().iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-12));
            let back = idft2_real(&SpectrumMap::from_real(&FeatureMap::from_fn(shape, |_, _, _, _| 1.0)))
                .unwrap();
            assert!(back.map.max_abs_diff(&u).unwrap() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_summation() {
        for (h, w) in [(8, 8), (5, 6), (7, 3)] {
            let u = random_map(Shape::new(2, 2, h, w).unwrap(), 11);
            let fast = dft2(&u).unwrap();
            let slow = direct_dft2(&u);
            assert!(fast.rel_l2_error(&slow).unwrap() < 1e-10);
            assert!(hermitian_symmetry_check(&fast, 1e-10));
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        let u = random_map(Shape::new(1, 3, 16, 16).unwrap(), 3);
        let s = dft2(&u).unwrap();
        let back = idft2_real(&s).unwrap();
        assert!(back.map.rel_l2_error(&u).unwrap() < 1e-12);
        assert!(back.max_imag < 1e-12);
        let lhs: f64 = u.data().iter().map(|v| v * v).sum();
        let rhs: f64 = s.data().iter().map(|v| v.norm_sqr()).sum::<f64>() / 256.0;
        assert!((lhs - rhs).abs() / lhs < 1e-10);
    }

    #[test]
    fn rejects_non_finite() {
        let shape = Shape::new(1, 1, 2, 2).unwrap();
        let mut s = SpectrumMap::zeros(shape);
        s.data_mut()[1] = Complex64::new(f64::INFINITY, 0.0);
        assert!(matches!(idft2(&s), Err(Error::Numeric(_))));
    }
}
