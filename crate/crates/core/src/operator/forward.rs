use num_complex::Complex64;
use rayon::prelude::*;

use super::{bin_points, check_compatible, embed_symbol, EffectiveParams, EmbedParams, PdeParams};
use crate::error::{Error, Result};
use crate::grid::{make_frequency_grid, mirror_index, FeatureMap, FrequencyGrid, Shape, SpectrumMap};
use crate::linalg::{gemm_real, ComplexMatrix, RealMatrix};
use crate::spectral::{real_projection_raw, Fft2};

/// Relative imaginary residue above which the real projection is rejected.
pub const MAX_IMAG_RESIDUE: f64 = 1e-6;

/// Upper bound on complex entries held by one batch of per-bin symbols.
const SYMBOL_CHUNK_ENTRIES: usize = 1 << 22;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Forward output together with the discarded imaginary residue, relative to
/// the output L2 norm.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub output: FeatureMap,
    pub imag_residue: f64,
}

/// An operator bound to fixed parameters and a fixed plane size.
///
/// Construction does the parameter-only work (mode projection, FFT planning);
/// [`PreparedOperator::apply`] runs the full per-input pipeline.
#[derive(Debug, Clone)]
pub struct PreparedOperator {
    g: EmbedParams,
    eff: EffectiveParams,
    grid: FrequencyGrid,
    fft: Fft2,
    decoupled: bool,
    canonical: Vec<usize>,
    nyquist: Vec<usize>,
}

impl PreparedOperator {
    pub fn new(g: &EmbedParams, z: &PdeParams, height: usize, width: usize) -> Result<Self> {
        check_compatible(g, z)?;
        let grid = make_frequency_grid(height, width)?;
        let eff = z.effective();
        let mut canonical = Vec::new();
        let mut nyquist = Vec::new();
        for m in 0..height {
            for n in 0..width {
                let idx = m * width + n;
                if grid.is_nyquist_x(m) || grid.is_nyquist_y(n) {
                    nyquist.push(idx);
                } else if idx <= mirror_index(m, height) * width + mirror_index(n, width) {
                    canonical.push(idx);
                }
            }
        }
        Ok(PreparedOperator {
            g: g.clone(),
            decoupled: eff.is_decoupled(),
            eff,
            grid,
            fft: Fft2::new(height, width),
            canonical,
            nyquist,
        })
    }

    pub fn c_in(&self) -> usize {
        self.g.c_in()
    }

    pub fn c_hid(&self) -> usize {
        self.g.c_hid()
    }

    /// Whether the evolution runs on the elementwise (channel-decoupled) path.
    pub fn is_decoupled(&self) -> bool {
        self.decoupled
    }

    pub fn apply(&self, u: &FeatureMap) -> Result<FeatureMap> {
        Ok(self.apply_full(u)?.output)
    }

    pub fn apply_full(&self, u: &FeatureMap) -> Result<ForwardOutput> {
        let shape = u.shape();
        let (h, w) = (self.grid.height(), self.grid.width());
        if shape.channels != self.c_in() {
            return Err(Error::arg(format!(
                "input has {} channels, embedding expects {}",
                shape.channels,
                self.c_in()
            )));
        }
        if shape.height != h || shape.width != w {
            return Err(Error::arg(format!(
                "input plane {}×{} does not match prepared grid {h}×{w}",
                shape.height, shape.width
            )));
        }
        if !u.is_finite() {
            return Err(Error::numeric("forward input contains non-finite values"));
        }
        let c = self.c_hid();
        let hw = h * w;
        let out_shape = shape.with_channels(c);

        // Channel projection and transform.
        let mut xhat = vec![ZERO; out_shape.len()];
        let mut proj = vec![0.0; c * hw];
        for b in 0..shape.batch {
            let ub = &u.data()[b * self.c_in() * hw..(b + 1) * self.c_in() * hw];
            gemm_real(c, self.c_in(), hw, self.g.r.data(), ub, &mut proj, false);
            let xb = &mut xhat[b * c * hw..(b + 1) * c * hw];
            xb.iter_mut().zip(&proj).for_each(|(x, &p)| *x = Complex64::new(p, 0.0));
        }
        self.fft.forward_planes(&mut xhat);

        let mut vhat = self.embed(&xhat, shape.batch);
        self.evolve(&mut vhat, shape.batch)?;
        self.nyquist_bins(&xhat, &mut vhat, shape.batch)?;

        self.fft.inverse_planes(&mut vhat);
        let proj = real_projection_raw(out_shape, &vhat);
        let norm = proj.map.norm_l2();
        let imag_residue = if norm > 0.0 { proj.imag_l2 / norm } else { proj.imag_l2 };
        if imag_residue > MAX_IMAG_RESIDUE {
            return Err(Error::numeric(format!(
                "imaginary residue {imag_residue:e} exceeds {MAX_IMAG_RESIDUE:e}: symbol is not Hermitian-compatible"
            )));
        }
        if !proj.map.is_finite() {
            return Err(Error::numeric("forward output is not finite"));
        }
        Ok(ForwardOutput { output: proj.map, imag_residue })
    }

    /// `v̂ = Γ₀x̂ + i·kx·(Γx x̂) + i·ky·(Γy x̂)` for every bin; the real channel
    /// mixes run as GEMMs over the interleaved complex storage.
    fn embed(&self, xhat: &[Complex64], batch: usize) -> Vec<Complex64> {
        let c = self.c_hid();
        let (h, w) = (self.grid.height(), self.grid.width());
        let hw = h * w;
        let mut vhat = vec![ZERO; xhat.len()];
        let use_x = self.g.gx.max_abs() > 0.0;
        let use_y = self.g.gy.max_abs() > 0.0;
        let mut tx = if use_x { vec![ZERO; c * hw] } else { Vec::new() };
        let mut ty = if use_y { vec![ZERO; c * hw] } else { Vec::new() };
        for b in 0..batch {
            let xb = as_f64(&xhat[b * c * hw..(b + 1) * c * hw]);
            gemm_real(c, c, 2 * hw, self.g.g0.data(), xb, as_f64_mut(&mut vhat[b * c * hw..(b + 1) * c * hw]), false);
            if use_x {
                gemm_real(c, c, 2 * hw, self.g.gx.data(), xb, as_f64_mut(&mut tx), false);
            }
            if use_y {
                gemm_real(c, c, 2 * hw, self.g.gy.data(), xb, as_f64_mut(&mut ty), false);
            }
            if !(use_x || use_y) {
                continue;
            }
            let vb = &mut vhat[b * c * hw..(b + 1) * c * hw];
            for ch in 0..c {
                for m in 0..h {
                    let kx = self.grid.kx[m];
                    for n in 0..w {
                        let i = ch * hw + m * w + n;
                        let mut d = ZERO;
                        if use_x {
                            d += tx[i] * kx;
                        }
                        if use_y {
                            d += ty[i] * self.grid.ky[n];
                        }
                        vb[i] += Complex64::new(-d.im, d.re);
                    }
                }
            }
        }
        vhat
    }

    /// Applies `exp(τΛ(k))` in place at every non-Nyquist bin.
    fn evolve(&self, vhat: &mut [Complex64], batch: usize) -> Result<()> {
        let c = self.c_hid();
        let (h, w) = (self.grid.height(), self.grid.width());
        let hw = h * w;
        if self.decoupled {
            let eff = &self.eff;
            let grid = &self.grid;
            vhat.par_chunks_mut(hw).enumerate().for_each(|(plane, data)| {
                let ch = plane % c;
                for m in 0..h {
                    if grid.is_nyquist_x(m) {
                        continue;
                    }
                    for n in 0..w {
                        if grid.is_nyquist_y(n) {
                            continue;
                        }
                        let lam = eff.diagonal_lambda(ch, grid.kx[m], grid.ky[n]);
                        data[m * w + n] *= (lam * eff.tau).exp();
                    }
                }
            });
            if vhat.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric("evolution overflowed"));
            }
            return Ok(());
        }

        let chunk = (SYMBOL_CHUNK_ENTRIES / (c * c)).max(1);
        let mut v = vec![ZERO; c];
        let mut out = vec![ZERO; c];
        for bins in self.canonical.chunks(chunk) {
            let symbols: Vec<ComplexMatrix> = bins
                .par_iter()
                .map(|&idx| self.eff.green(self.grid.kx[idx / w], self.grid.ky[idx % w]))
                .collect::<Result<_>>()?;
            for (&idx, sym) in bins.iter().zip(&symbols) {
                let (m, n) = (idx / w, idx % w);
                let partner = mirror_index(m, h) * w + mirror_index(n, w);
                for b in 0..batch {
                    let base = b * c * hw;
                    gather(vhat, base, hw, idx, &mut v);
                    sym.matvec(&v, &mut out);
                    scatter(vhat, base, hw, idx, &out);
                    if partner != idx {
                        gather(vhat, base, hw, partner, &mut v);
                        v.iter_mut().for_each(|x| *x = x.conj());
                        sym.matvec(&v, &mut out);
                        out.iter_mut().for_each(|x| *x = x.conj());
                        scatter(vhat, base, hw, partner, &out);
                    }
                }
            }
        }
        Ok(())
    }

    /// Overwrites Nyquist bins with the sign-averaged composed symbol applied
    /// to the projected spectrum.
    fn nyquist_bins(&self, xhat: &[Complex64], vhat: &mut [Complex64], batch: usize) -> Result<()> {
        let c = self.c_hid();
        let (h, w) = (self.grid.height(), self.grid.width());
        let hw = h * w;
        let mut x = vec![ZERO; c];
        let mut out = vec![ZERO; c];
        if self.decoupled {
            let (mut t0, mut tx, mut ty) = (vec![ZERO; c], vec![ZERO; c], vec![ZERO; c]);
            for &idx in &self.nyquist {
                let points = bin_points(&self.grid, idx / w, idx % w);
                for b in 0..batch {
                    gather(xhat, b * c * hw, hw, idx, &mut x);
                    real_matvec(&self.g.g0, &x, &mut t0);
                    real_matvec(&self.g.gx, &x, &mut tx);
                    real_matvec(&self.g.gy, &x, &mut ty);
                    out.iter_mut().for_each(|o| *o = ZERO);
                    for &(kx, ky, wgt) in &points {
                        for ch in 0..c {
                            let e = (self.eff.diagonal_lambda(ch, kx, ky) * self.eff.tau).exp();
                            let v = t0[ch] + Complex64::i() * (tx[ch] * kx + ty[ch] * ky);
                            out[ch] += e * v * wgt;
                        }
                    }
                    scatter(vhat, b * c * hw, hw, idx, &out);
                }
            }
            return Ok(());
        }
        for &idx in &self.nyquist {
            let sym = composed_from_points(&self.g, &self.eff, &bin_points(&self.grid, idx / w, idx % w))?;
            for b in 0..batch {
                gather(xhat, b * c * hw, hw, idx, &mut x);
                sym.matvec(&x, &mut out);
                scatter(vhat, b * c * hw, hw, idx, &out);
            }
        }
        Ok(())
    }
}

fn real_matvec(a: &RealMatrix, x: &[Complex64], out: &mut [Complex64]) {
    let c = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = a.data()[i * c..(i + 1) * c].iter().zip(x).map(|(&r, &v)| v * r).sum();
    }
}

#[inline]
fn gather(data: &[Complex64], base: usize, stride: usize, idx: usize, out: &mut [Complex64]) {
    for (ch, o) in out.iter_mut().enumerate() {
        *o = data[base + ch * stride + idx];
    }
}

#[inline]
fn scatter(data: &mut [Complex64], base: usize, stride: usize, idx: usize, src: &[Complex64]) {
    for (ch, s) in src.iter().enumerate() {
        data[base + ch * stride + idx] = *s;
    }
}

fn as_f64(data: &[Complex64]) -> &[f64] {
    // SAFETY: Complex64 is repr(C) with two f64 fields and no padding.
    unsafe { std::slice::from_raw_parts(data.as_ptr() as *const f64, data.len() * 2) }
}

fn as_f64_mut(data: &mut [Complex64]) -> &mut [f64] {
    // SAFETY: as in `as_f64`; the borrow is exclusive.
    unsafe { std::slice::from_raw_parts_mut(data.as_mut_ptr() as *mut f64, data.len() * 2) }
}

fn composed_from_points(g: &EmbedParams, eff: &EffectiveParams, points: &[(f64, f64, f64)]) -> Result<ComplexMatrix> {
    let mut acc = ComplexMatrix::zeros(g.c_hid());
    for &(kx, ky, wgt) in points {
        let t = eff.green(kx, ky)?.matmul(&embed_symbol(g, kx, ky));
        acc.axpy(Complex64::new(wgt, 0.0), &t);
    }
    Ok(acc)
}

/// Per-bin composed symbol `Ĝ(k)·B̂(k)` (hidden × hidden, excluding `R`),
/// sign-averaged at Nyquist bins.
pub fn composed_symbol(g: &EmbedParams, z: &PdeParams, grid: &FrequencyGrid, m: usize, n: usize) -> Result<ComplexMatrix> {
    check_compatible(g, z)?;
    composed_from_points(g, &z.effective(), &bin_points(grid, m, n))
}

/// Per-bin Green's symbol, sign-averaged at Nyquist bins.
pub fn green_symbol_bin(z: &PdeParams, grid: &FrequencyGrid, m: usize, n: usize) -> Result<ComplexMatrix> {
    let eff = z.effective();
    let mut acc = ComplexMatrix::zeros(z.c_hid());
    for (kx, ky, wgt) in bin_points(grid, m, n) {
        acc.axpy(Complex64::new(wgt, 0.0), &eff.green(kx, ky)?);
    }
    Ok(acc)
}

/// Multiplies every bin of `v` by `exp(τΛ(k))` evaluated at the grid
/// frequency of that bin (no Nyquist averaging).
pub fn apply_green_symbol(v: &SpectrumMap, z: &PdeParams) -> Result<SpectrumMap> {
    z.validate()?;
    let shape: Shape = v.shape();
    if shape.channels != z.c_hid() {
        return Err(Error::arg(format!("spectrum has {} channels, operator expects {}", shape.channels, z.c_hid())));
    }
    let grid = make_frequency_grid(shape.height, shape.width)?;
    let eff = z.effective();
    let c = shape.channels;
    let hw = shape.plane_len();
    let mut out = v.data().to_vec();
    let mut x = vec![ZERO; c];
    let mut y = vec![ZERO; c];
    for m in 0..shape.height {
        for n in 0..shape.width {
            let sym = eff.green(grid.kx[m], grid.ky[n])?;
            let idx = m * shape.width + n;
            for b in 0..shape.batch {
                gather(v.data(), b * c * hw, hw, idx, &mut x);
                sym.matvec(&x, &mut y);
                scatter(&mut out, b * c * hw, hw, idx, &y);
            }
        }
    }
    SpectrumMap::new(shape, out)
}

/// Runs the operator on `u` and returns the real output.
pub fn pde_ssm_forward(u: &FeatureMap, g: &EmbedParams, z: &PdeParams) -> Result<FeatureMap> {
    Ok(pde_ssm_forward_full(u, g, z)?.output)
}

/// As [`pde_ssm_forward`], also reporting the imaginary residue.
pub fn pde_ssm_forward_full(u: &FeatureMap, g: &EmbedParams, z: &PdeParams) -> Result<ForwardOutput> {
    let s = u.shape();
    PreparedOperator::new(g, z, s.height, s.width)?.apply_full(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RealMatrix;
    use crate::operator::{Mode, TermFlags};
    use crate::rng::Rng;
    use crate::spectral::{dft2, idft2_real};

    fn random_pde(c: usize, scale: f64, rng: &mut Rng) -> PdeParams {
        PdeParams {
            fx: rng.normal_matrix(c, c, scale),
            fy: rng.normal_matrix(c, c, scale),
            bx: rng.normal_matrix(c, c, scale),
            by: rng.normal_matrix(c, c, scale),
            rm: rng.normal_matrix(c, c, scale),
            tau: 0.8,
            flags: TermFlags::ALL,
            mode: Mode::Raw,
        }
    }

    fn random_embed(c_in: usize, c: usize, rng: &mut Rng) -> EmbedParams {
        EmbedParams {
            r: rng.normal_matrix(c, c_in, 0.7),
            g0: rng.normal_matrix(c, c, 0.7),
            gx: rng.normal_matrix(c, c, 0.3),
            gy: rng.normal_matrix(c, c, 0.3),
        }
    }

    /// Slow path: per-bin composed symbol on the spectrum of `R·u`.
    fn reference_forward(u: &FeatureMap, g: &EmbedParams, z: &PdeParams) -> FeatureMap {
        let s = u.shape();
        let c = g.c_hid();
        let proj = FeatureMap::from_fn(s.with_channels(c), |b, o, x, y| {
            (0..g.c_in()).map(|i| g.r.get(o, i) * u.get(b, i, x, y)).sum()
        });
        let xhat = dft2(&proj).unwrap();
        let grid = make_frequency_grid(s.height, s.width).unwrap();
        let mut out = SpectrumMap::zeros(proj.shape());
        for m in 0..s.height {
            for n in 0..s.width {
                let t = composed_symbol(g, z, &grid, m, n).unwrap();
                for b in 0..s.batch {
                    for o in 0..c {
                        let v: Complex64 = (0..c).map(|i| t.get(o, i) * xhat.get(b, i, m, n)).sum();
                        out.set(b, o, m, n, v);
                    }
                }
            }
        }
        idft2_real(&out).unwrap().map
    }

    #[test]
    fn fast_path_matches_per_bin_reference() {
        let mut rng = Rng::new(21);
        for (h, w) in [(8, 8), (5, 6), (7, 7), (4, 1)] {
            let g = random_embed(2, 3, &mut rng);
            let z = random_pde(3, 0.4, &mut rng);
            let u = rng.normal_map(Shape::new(2, 2, h, w).unwrap());
            let fast = pde_ssm_forward_full(&u, &g, &z).unwrap();
            let slow = reference_forward(&u, &g, &z);
            assert!(fast.output.rel_l2_error(&slow).unwrap() < 1e-12, "{h}×{w}");
            assert!(fast.imag_residue < 1e-13);
        }
    }

    #[test]
    fn decoupled_path_matches_coupled_reference() {
        let mut rng = Rng::new(22);
        let c = 3;
        let d = |rng: &mut Rng| RealMatrix::diag(&(0..c).map(|_| rng.normal() * 0.5).collect::<Vec<_>>());
        let z = PdeParams {
            fx: d(&mut rng),
            fy: d(&mut rng),
            bx: d(&mut rng),
            by: d(&mut rng),
            rm: d(&mut rng),
            tau: 0.6,
            flags: TermFlags::ALL,
            mode: Mode::Stable,
        };
        let g = random_embed(3, 3, &mut rng);
        assert!(PreparedOperator::new(&g, &z, 8, 6).unwrap().is_decoupled());
        let u = rng.normal_map(Shape::new(1, 3, 8, 6).unwrap());
        let fast = pde_ssm_forward(&u, &g, &z).unwrap();
        let slow = reference_forward(&u, &g, &z);
        assert!(fast.rel_l2_error(&slow).unwrap() < 1e-12);
    }

    #[test]
    fn identity_configuration() {
        let mut rng = Rng::new(23);
        let z = random_pde(3, 1.0, &mut rng).with_tau(1e-12);
        let u = rng.normal_map(Shape::new(2, 3, 8, 8).unwrap());
        let out = pde_ssm_forward(&u, &EmbedParams::identity(3), &z).unwrap();
        assert!(out.rel_l2_error(&u).unwrap() < 1e-9);
    }

    #[test]
    fn linear_in_input() {
        let mut rng = Rng::new(24);
        let g = random_embed(2, 2, &mut rng);
        let z = random_pde(2, 0.5, &mut rng);
        let s = Shape::new(1, 2, 6, 6).unwrap();
        let (u, v) = (rng.normal_map(s), rng.normal_map(s));
        let lhs = pde_ssm_forward(&u.lincomb(1.5, &v, -0.3).unwrap(), &g, &z).unwrap();
        let rhs = pde_ssm_forward(&u, &g, &z).unwrap().lincomb(1.5, &pde_ssm_forward(&v, &g, &z).unwrap(), -0.3).unwrap();
        assert!(lhs.rel_l2_error(&rhs).unwrap() < 1e-10);
    }

    #[test]
    fn reaction_off_preserves_channel_means() {
        let mut rng = Rng::new(25);
        let z = random_pde(3, 0.8, &mut rng).with_flags(TermFlags { reaction: false, ..TermFlags::ALL });
        let g = random_embed(3, 3, &mut rng);
        let u = rng.normal_map(Shape::new(1, 3, 8, 8).unwrap());
        let out = pde_ssm_forward(&u, &g, &z).unwrap();
        // Post-embedding DC equals Γ₀·R·mean(u) since derivative symbols vanish at k = 0.
        let gr = g.g0.matmul(&g.r);
        for o in 0..3 {
            let mean_out: f64 = out.plane(0, o).iter().sum::<f64>() / 64.0;
            let mean_in: f64 = (0..3).map(|i| gr.get(o, i) * u.plane(0, i).iter().sum::<f64>() / 64.0).sum();
            assert!((mean_out - mean_in).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let g = EmbedParams::identity(2);
        let z = PdeParams::zeros(2, 1.0);
        let u = FeatureMap::zeros(Shape::new(1, 3, 4, 4).unwrap());
        assert!(matches!(pde_ssm_forward(&u, &g, &z), Err(Error::Argument(_))));
    }
}
