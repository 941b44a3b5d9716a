//! Array containers and the discrete frequency grid.
//!
//! Both map types store a row-major `(batch, channels, height, width)` array.
//! Spatial axis 0 (`height`, index `x`) pairs with `kx`, axis 1 (`width`,
//! index `y`) with `ky`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Extents of a rank-4 map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        if batch == 0 || channels == 0 || height == 0 || width == 0 {
            return Err(Error::arg(format!(
                "all extents must be positive, got ({batch}, {channels}, {height}, {width})"
            )));
        }
        Ok(Shape { batch, channels, height, width })
    }

    pub fn len(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of pixels (or frequency bins) in one channel plane.
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn with_channels(&self, channels: usize) -> Shape {
        Shape { channels, ..*self }
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, x: usize, y: usize) -> usize {
        ((b * self.channels + c) * self.height + x) * self.width + y
    }

    /// Offset of the first element of plane `(b, c)`.
    #[inline]
    pub fn plane_offset(&self, b: usize, c: usize) -> usize {
        (b * self.channels + c) * self.plane_len()
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.batch, self.channels, self.height, self.width)
    }
}

/// Real spatial-domain signal.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    shape: Shape,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::arg(format!(
                "storage length {} does not match shape {shape}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite entry at flat index {i}")));
        }
        Ok(FeatureMap { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        FeatureMap { shape, data: vec![0.0; shape.len()] }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for b in 0..shape.batch {
            for c in 0..shape.channels {
                for x in 0..shape.height {
                    for y in 0..shape.width {
                        data.push(f(b, c, x, y));
                    }
                }
            }
        }
        FeatureMap { shape, data }
    }

    pub(crate) fn from_raw(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        FeatureMap { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, b: usize, c: usize, x: usize, y: usize) -> f64 {
        self.data[self.shape.index(b, c, x, y)]
    }

    pub fn set(&mut self, b: usize, c: usize, x: usize, y: usize, v: f64) {
        let i = self.shape.index(b, c, x, y);
        self.data[i] = v;
    }

    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        let o = self.shape.plane_offset(b, c);
        &self.data[o..o + self.shape.plane_len()]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let o = self.shape.plane_offset(b, c);
        let n = self.shape.plane_len();
        &mut self.data[o..o + n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &FeatureMap) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn scaled(&self, alpha: f64) -> FeatureMap {
        FeatureMap { shape: self.shape, data: self.data.iter().map(|v| alpha * v).collect() }
    }

    /// `alpha * self + beta * other`
    pub fn lincomb(&self, alpha: f64, other: &FeatureMap, beta: f64) -> Result<FeatureMap> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| alpha * a + beta * b).collect();
        Ok(FeatureMap { shape: self.shape, data })
    }

    /// Relative L2 distance `‖self − reference‖ / ‖reference‖`; falls back to
    /// the absolute distance when the reference is zero.
    pub fn rel_l2_error(&self, reference: &FeatureMap) -> Result<f64> {
        self.check_same_shape(reference)?;
        let diff: f64 = self.data.iter().zip(&reference.data).map(|(a, b)| (a - b).powi(2)).sum();
        let norm = reference.norm_l2();
        Ok(if norm > 0.0 { diff.sqrt() / norm } else { diff.sqrt() })
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// Circular shift of every plane: `out[x, y] = self[x - dx, y - dy]`.
    pub fn circular_shift(&self, dx: isize, dy: isize) -> FeatureMap {
        let s = self.shape;
        let (h, w) = (s.height as isize, s.width as isize);
        FeatureMap::from_fn(s, |b, c, x, y| {
            let sx = (x as isize - dx).rem_euclid(h) as usize;
            let sy = (y as isize - dy).rem_euclid(w) as usize;
            self.get(b, c, sx, sy)
        })
    }

    pub(crate) fn check_same_shape(&self, other: &FeatureMap) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::arg(format!("shape mismatch: {} vs {}", self.shape, other.shape)));
        }
        Ok(())
    }
}

/// Complex spectrum, full (unpacked) layout identical to [`FeatureMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumMap {
    shape: Shape,
    data: Vec<Complex64>,
}

impl SpectrumMap {
    pub fn new(shape: Shape, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::arg(format!(
                "storage length {} does not match shape {shape}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite coefficient at flat index {i}")));
        }
        Ok(SpectrumMap { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        SpectrumMap { shape, data: vec![Complex64::new(0.0, 0.0); shape.len()] }
    }

    pub(crate) fn from_raw(shape: Shape, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        SpectrumMap { shape, data }
    }

    pub fn from_real(map: &FeatureMap) -> Self {
        SpectrumMap {
            shape: map.shape(),
            data: map.data().iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, b: usize, c: usize, m: usize, n: usize) -> Complex64 {
        self.data[self.shape.index(b, c, m, n)]
    }

    pub fn set(&mut self, b: usize, c: usize, m: usize, n: usize, v: Complex64) {
        let i = self.shape.index(b, c, m, n);
        self.data[i] = v;
    }

    pub fn plane(&self, b: usize, c: usize) -> &[Complex64] {
        let o = self.shape.plane_offset(b, c);
        &self.data[o..o + self.shape.plane_len()]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [Complex64] {
        let o = self.shape.plane_offset(b, c);
        let n = self.shape.plane_len();
        &mut self.data[o..o + n]
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn rel_l2_error(&self, reference: &SpectrumMap) -> Result<f64> {
        if self.shape != reference.shape {
            return Err(Error::arg(format!(
                "shape mismatch: {} vs {}",
                self.shape, reference.shape
            )));
        }
        let diff: f64 =
            self.data.iter().zip(&reference.data).map(|(a, b)| (a - b).norm_sqr()).sum();
        let norm = reference.norm_l2();
        Ok(if norm > 0.0 { diff.sqrt() / norm } else { diff.sqrt() })
    }
}

/// Index of the Hermitian partner of bin `m` along an axis of extent `n`.
#[inline]
pub fn mirror_index(m: usize, n: usize) -> usize {
    (n - m) % n
}

/// True iff `s[b,c,m,n] = conj(s[b,c,-m,-n])` holds entrywise, where the
/// deviation is measured relative to the largest coefficient magnitude.
pub fn hermitian_symmetry_check(s: &SpectrumMap, tol: f64) -> bool {
    let shape = s.shape();
    let scale = s.data().iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for b in 0..shape.batch {
        for c in 0..shape.channels {
            for m in 0..shape.height {
                let mm = mirror_index(m, shape.height);
                for n in 0..shape.width {
                    let nn = mirror_index(n, shape.width);
                    let d = s.get(b, c, m, n) - s.get(b, c, mm, nn).conj();
                    if d.norm() > tol * scale {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Angular frequencies of the DFT bins, DC first, in radians per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    pub kx: Vec<f64>,
    pub ky: Vec<f64>,
}

impl FrequencyGrid {
    pub fn height(&self) -> usize {
        self.kx.len()
    }

    pub fn width(&self) -> usize {
        self.ky.len()
    }

    /// Whether bin `m` along the x axis is the (self-conjugate) Nyquist bin.
    pub fn is_nyquist_x(&self, m: usize) -> bool {
        is_nyquist(m, self.height())
    }

    pub fn is_nyquist_y(&self, n: usize) -> bool {
        is_nyquist(n, self.width())
    }
}

#[inline]
fn is_nyquist(m: usize, n: usize) -> bool {
    n % 2 == 0 && m == n / 2
}

fn axis_frequencies(n: usize) -> Vec<f64> {
    (0..n)
        .map(|m| {
            let signed = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
            2.0 * PI * signed / n as f64
        })
        .collect()
}

/// Builds the frequency grid for an `h × w` plane. The even-extent Nyquist
/// bin carries `+π`.
pub fn make_frequency_grid(h: usize, w: usize) -> Result<FrequencyGrid> {
    if h == 0 || w == 0 {
        return Err(Error::arg(format!("grid extents must be positive, got {h}×{w}")));
    }
    Ok(FrequencyGrid { kx: axis_frequencies(h), ky: axis_frequencies(w) })
}
