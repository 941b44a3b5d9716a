//! Exact gradients of the operator and a small gradient-descent fitter.
//!
//! The backward pass works bin by bin in the frequency domain. For the
//! generator parameters it uses the adjoint form of the Fréchet derivative,
//! `⟨W, L(A, E)⟩ = ⟨L(Aᴴ, W), E⟩`, so each bin needs one block exponential
//! regardless of how many parameter entries there are.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{make_frequency_grid, FeatureMap, Shape, SpectrumMap};
use crate::linalg::{mat_exp, mat_exp_frechet, ComplexMatrix, RealMatrix};
use crate::operator::{
    bin_points, check_compatible, embed_symbol, pde_ssm_forward, EmbedParams, Mode, PdeParams,
};
use crate::spectral::{dft2, Fft2};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Gradients for every parameter of [`EmbedParams`] and [`PdeParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub r: RealMatrix,
    pub g0: RealMatrix,
    pub gx: RealMatrix,
    pub gy: RealMatrix,
    pub fx: RealMatrix,
    pub fy: RealMatrix,
    pub bx: RealMatrix,
    pub by: RealMatrix,
    pub rm: RealMatrix,
    pub d_tau: f64,
}

impl ParamGrads {
    pub fn zeros(c_in: usize, c: usize) -> Self {
        let sq = || RealMatrix::zeros(c, c);
        ParamGrads {
            r: RealMatrix::zeros(c, c_in),
            g0: sq(),
            gx: sq(),
            gy: sq(),
            fx: sq(),
            fy: sq(),
            bx: sq(),
            by: sq(),
            rm: sq(),
            d_tau: 0.0,
        }
    }

    /// Named matrix blocks in flattening order.
    pub fn blocks(&self) -> [(&'static str, &RealMatrix); 9] {
        [
            ("r", &self.r),
            ("g0", &self.g0),
            ("gx", &self.gx),
            ("gy", &self.gy),
            ("fx", &self.fx),
            ("fy", &self.fy),
            ("bx", &self.bx),
            ("by", &self.by),
            ("rm", &self.rm),
        ]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.blocks().iter().flat_map(|(_, m)| m.data().iter().copied()).collect();
        v.push(self.d_tau);
        v
    }

    pub fn from_flat(flat: &[f64], c_in: usize, c: usize) -> Result<Self> {
        let mut g = ParamGrads::zeros(c_in, c);
        let expected = c * c_in + 8 * c * c + 1;
        if flat.len() != expected {
            return Err(Error::arg(format!("expected {expected} gradient entries, got {}", flat.len())));
        }
        let mut off = 0;
        for m in [&mut g.r, &mut g.g0, &mut g.gx, &mut g.gy, &mut g.fx, &mut g.fy, &mut g.bx, &mut g.by, &mut g.rm] {
            let n = m.data().len();
            m.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        g.d_tau = flat[off];
        Ok(g)
    }

    pub fn is_finite(&self) -> bool {
        self.d_tau.is_finite() && self.blocks().iter().all(|(_, m)| m.is_finite())
    }
}

/// Parameters flattened in the order `r, g0, gx, gy, fx, fy, bx, by, rm, tau`.
pub fn flatten_params(g: &EmbedParams, z: &PdeParams) -> Vec<f64> {
    let mut v = Vec::new();
    for m in [&g.r, &g.g0, &g.gx, &g.gy, &z.fx, &z.fy, &z.bx, &z.by, &z.rm] {
        v.extend_from_slice(m.data());
    }
    v.push(z.tau);
    v
}

/// Inverse of [`flatten_params`]; shapes, flags and mode come from the templates.
pub fn unflatten_params(flat: &[f64], g: &EmbedParams, z: &PdeParams) -> Result<(EmbedParams, PdeParams)> {
    let (mut g, mut z) = (g.clone(), z.clone());
    let expected = flatten_params(&g, &z).len();
    if flat.len() != expected {
        return Err(Error::arg(format!("expected {expected} parameters, got {}", flat.len())));
    }
    let mut off = 0;
    for m in [&mut g.r, &mut g.g0, &mut g.gx, &mut g.gy, &mut z.fx, &mut z.fy, &mut z.bx, &mut z.by, &mut z.rm] {
        let n = m.data().len();
        m.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
    z.tau = flat[off];
    Ok((g, z))
}

/// Gradients of `⟨upstream, forward(u)⟩` with respect to the input and all
/// parameters. Defined for raw-mode parameters.
pub fn pde_ssm_backward(
    u: &FeatureMap,
    g: &EmbedParams,
    z: &PdeParams,
    upstream: &FeatureMap,
) -> Result<(FeatureMap, ParamGrads)> {
    check_compatible(g, z)?;
    if z.mode != Mode::Raw {
        return Err(Error::arg("gradients are defined for raw-mode parameters only"));
    }
    let s = u.shape();
    let (c_in, c) = (g.c_in(), g.c_hid());
    if s.channels != c_in {
        return Err(Error::arg(format!("input has {} channels, embedding expects {c_in}", s.channels)));
    }
    let out_shape = s.with_channels(c);
    if upstream.shape() != out_shape {
        return Err(Error::arg(format!(
            "upstream shape {} does not match forward output {out_shape}",
            upstream.shape()
        )));
    }
    let (h, w) = (s.height, s.width);
    let hw = h * w;
    let grid = make_frequency_grid(h, w)?;
    let eff = z.effective();
    let tau = z.tau;

    let proj = project(u, &g.r);
    let xhat = dft2(&proj)?;
    let uhat = dft2(upstream)?;
    let inv_n = 1.0 / hw as f64;

    let mut grads = ParamGrads::zeros(c_in, c);
    let mut rspec = SpectrumMap::zeros(out_shape);
    let mut acc = Accum::new(c);

    for m in 0..h {
        for n in 0..w {
            let xs: Vec<Vec<Complex64>> = (0..s.batch).map(|b| column(&xhat, b, m, n)).collect();
            let ws: Vec<Vec<Complex64>> =
                (0..s.batch).map(|b| column(&uhat, b, m, n).iter().map(|v| v * inv_n).collect()).collect();
            for (kx, ky, wt) in bin_points(&grid, m, n) {
                let bsym = embed_symbol(g, kx, ky);
                let lam = eff.lambda(kx, ky);
                let a = lam.scale_real(tau);
                let green = mat_exp(&a)?;

                let mut zmat = ComplexMatrix::zeros(c);
                let mut qmat = ComplexMatrix::zeros(c);
                for b in 0..s.batch {
                    let wb: Vec<Complex64> = ws[b].iter().map(|v| v * wt).collect();
                    let mut v = vec![ZERO; c];
                    bsym.matvec(&xs[b], &mut v);
                    let mut q = vec![ZERO; c];
                    green.matvec_adjoint(&wb, &mut q);
                    for i in 0..c {
                        for j in 0..c {
                            let zij = zmat.get(i, j) + wb[i] * v[j].conj();
                            zmat.set(i, j, zij);
                            let qij = qmat.get(i, j) + q[i].conj() * xs[b][j];
                            qmat.set(i, j, qij);
                        }
                    }
                    let mut r = vec![ZERO; c];
                    bsym.matvec_adjoint(&q, &mut r);
                    for (ch, rv) in r.into_iter().enumerate() {
                        let i = out_shape.index(b, ch, m, n);
                        rspec.data_mut()[i] += rv;
                    }
                }

                let (_, y) = mat_exp_frechet(&a.conj_transpose(), &zmat)?;
                acc.generator(&y, &lam, &eff.diffusion_factor(kx, ky), kx, ky, tau);
                acc.embedding(&qmat, kx, ky);
            }
        }
    }
    acc.finish(&mut grads, z);

    // Spatial adjoint: unnormalized inverse transform of r.
    let fft = Fft2::new(h, w);
    let mut rdata = rspec.into_data();
    rdata.chunks_mut(hw).for_each(|p| fft.inverse_plane_unnormalized(p));
    let gproj: Vec<f64> = rdata.iter().map(|v| v.re).collect();

    let mut input_grad = FeatureMap::zeros(s);
    for b in 0..s.batch {
        let gp = &gproj[b * c * hw..(b + 1) * c * hw];
        let ub = &u.data()[b * c_in * hw..(b + 1) * c_in * hw];
        for o in 0..c {
            for i in 0..c_in {
                let d: f64 = gp[o * hw..(o + 1) * hw].iter().zip(&ub[i * hw..(i + 1) * hw]).map(|(a, b)| a * b).sum();
                grads.r.set(o, i, grads.r.get(o, i) + d);
            }
        }
        let ig = &mut input_grad.data_mut()[b * c_in * hw..(b + 1) * c_in * hw];
        for i in 0..c_in {
            for o in 0..c {
                let rv = g.r.get(o, i);
                if rv == 0.0 {
                    continue;
                }
                ig[i * hw..(i + 1) * hw].iter_mut().zip(&gp[o * hw..(o + 1) * hw]).for_each(|(x, y)| *x += rv * y);
            }
        }
    }
    if !grads.is_finite() || !input_grad.is_finite() {
        return Err(Error::numeric("gradient is not finite"));
    }
    Ok((input_grad, grads))
}

/// Complex accumulators for the per-bin gradient contributions.
struct Accum {
    rm: ComplexMatrix,
    bx: RealMatrix,
    by: RealMatrix,
    fx: RealMatrix,
    fy: RealMatrix,
    tau: f64,
    g0: RealMatrix,
    gx: RealMatrix,
    gy: RealMatrix,
}

impl Accum {
    fn new(c: usize) -> Self {
        let z = || RealMatrix::zeros(c, c);
        Accum { rm: ComplexMatrix::zeros(c), bx: z(), by: z(), fx: z(), fy: z(), tau: 0.0, g0: z(), gx: z(), gy: z() }
    }

    /// `y = L(τΛᴴ, Z)`; with `P = τ·conj(y)` the loss variation is
    /// `Re Σ P_ij dΛ_ij`.
    fn generator(&mut self, y: &ComplexMatrix, lam: &ComplexMatrix, mfac: &RealMatrix, kx: f64, ky: f64, tau: f64) {
        let c = y.dim();
        let p = y.conj().scale_real(tau);
        self.rm.axpy(Complex64::new(1.0, 0.0), &p);
        for i in 0..c {
            for j in 0..c {
                let im = p.get(i, j).im;
                self.bx.set(i, j, self.bx.get(i, j) - kx * im);
                self.by.set(i, j, self.by.get(i, j) - ky * im);
            }
        }
        // dΛ = −(dM·Mᵀ + M·dMᵀ)  ⇒  ∂/∂M = −Re[(P + Pᵀ)·M]
        for i in 0..c {
            for l in 0..c {
                let mut d = 0.0;
                for j in 0..c {
                    d -= (p.get(i, j).re + p.get(j, i).re) * mfac.get(j, l);
                }
                self.fx.set(i, l, self.fx.get(i, l) + kx * d);
                self.fy.set(i, l, self.fy.get(i, l) + ky * d);
            }
        }
        self.tau += y.inner(lam).re;
    }

    fn embedding(&mut self, q: &ComplexMatrix, kx: f64, ky: f64) {
        let c = q.dim();
        for i in 0..c {
            for j in 0..c {
                let v = q.get(i, j);
                self.g0.set(i, j, self.g0.get(i, j) + v.re);
                self.gx.set(i, j, self.gx.get(i, j) - kx * v.im);
                self.gy.set(i, j, self.gy.get(i, j) - ky * v.im);
            }
        }
    }

    fn finish(self, grads: &mut ParamGrads, z: &PdeParams) {
        let c = self.rm.dim();
        grads.g0 = self.g0;
        grads.gx = self.gx;
        grads.gy = self.gy;
        grads.d_tau = self.tau;
        if z.flags.reaction {
            grads.rm = RealMatrix::from_fn(c, c, |i, j| self.rm.get(i, j).re);
        }
        if z.flags.convection {
            grads.bx = self.bx;
            grads.by = self.by;
        }
        if z.flags.diffusion {
            grads.fx = self.fx;
            grads.fy = self.fy;
        }
    }
}

fn column(s: &SpectrumMap, b: usize, m: usize, n: usize) -> Vec<Complex64> {
    (0..s.shape().channels).map(|c| s.get(b, c, m, n)).collect()
}

fn project(u: &FeatureMap, r: &RealMatrix) -> FeatureMap {
    let s = u.shape();
    let c = r.rows();
    let hw = s.plane_len();
    let mut out = FeatureMap::zeros(s.with_channels(c));
    for b in 0..s.batch {
        let ub = &u.data()[b * s.channels * hw..(b + 1) * s.channels * hw];
        let ob = &mut out.data_mut()[b * c * hw..(b + 1) * c * hw];
        crate::linalg::gemm_real(c, s.channels, hw, r.data(), ub, ob, false);
    }
    out
}

/// Mean squared error of the operator over all output entries of `pairs`.
pub fn mse_loss(pairs: &[(FeatureMap, FeatureMap)], g: &EmbedParams, z: &PdeParams) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (x, y) in pairs {
        let f = pde_ssm_forward(x, g, z)?;
        f.check_same_shape(y)?;
        sum += f.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        count += y.data().len();
    }
    Ok(sum / count as f64)
}

/// Loss and gradients of [`mse_loss`].
pub fn mse_loss_and_grad(
    pairs: &[(FeatureMap, FeatureMap)],
    g: &EmbedParams,
    z: &PdeParams,
) -> Result<(f64, ParamGrads)> {
    let count: usize = pairs.iter().map(|(_, y)| y.data().len()).sum();
    let mut total = ParamGrads::zeros(g.c_in(), g.c_hid());
    let mut sum = 0.0;
    for (x, y) in pairs {
        let f = pde_ssm_forward(x, g, z)?;
        f.check_same_shape(y)?;
        let resid = f.lincomb(1.0, y, -1.0)?;
        sum += resid.data().iter().map(|v| v * v).sum::<f64>();
        let upstream = resid.scaled(2.0 / count as f64);
        let (_, pg) = pde_ssm_backward(x, g, z, &upstream)?;
        let mut flat = total.to_flat();
        flat.iter_mut().zip(pg.to_flat()).for_each(|(a, b)| *a += b);
        total = ParamGrads::from_flat(&flat, g.c_in(), g.c_hid())?;
    }
    Ok((sum / count as f64, total))
}

/// Result of [`fit_operator`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub embed: EmbedParams,
    pub pde: PdeParams,
    /// Loss before the first step followed by the loss after every step.
    pub loss_trace: Vec<f64>,
}

/// Maximum step-size halvings per iteration.
pub const MAX_HALVINGS: usize = 20;

/// Gradient descent on [`mse_loss`] with backtracking: each step starts at
/// `lr` and halves until the loss does not increase. Parameters are fitted in
/// raw mode.
pub fn fit_operator(
    pairs: &[(FeatureMap, FeatureMap)],
    g0: &EmbedParams,
    z0: &PdeParams,
    lr: f64,
    steps: usize,
) -> Result<FitResult> {
    if !(lr > 0.0) || steps == 0 {
        return Err(Error::arg("lr must be positive and steps at least 1"));
    }
    if pairs.is_empty() {
        return Err(Error::arg("at least one training pair is required"));
    }
    let mut g = g0.clone();
    let mut z = z0.clone().with_mode(Mode::Raw);
    check_compatible(&g, &z)?;

    let (mut loss, mut grads) = mse_loss_and_grad(pairs, &g, &z)?;
    if !loss.is_finite() {
        return Err(Error::numeric("initial loss is not finite"));
    }
    let mut trace = vec![loss];
    for _ in 0..steps {
        let theta = flatten_params(&g, &z);
        let dir = grads.to_flat();
        let mut step = lr;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t - step * d).collect();
            let (tg, tz) = unflatten_params(&trial, &g, &z)?;
            if tz.tau > 0.0 {
                if let Ok(tl) = mse_loss(pairs, &tg, &tz) {
                    if tl.is_finite() && tl <= loss {
                        accepted = Some((tg, tz));
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        if let Some((tg, tz)) = accepted {
            g = tg;
            z = tz;
            let (l, gr) = mse_loss_and_grad(pairs, &g, &z)?;
            loss = l;
            grads = gr;
        }
        trace.push(loss);
    }
    Ok(FitResult { embed: g, pde: z, loss_trace: trace })
}

/// Target of the kernel-identification demo.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitTarget {
    /// Circular shift of the input by `(dx, dy)` cells.
    Shift { dx: isize, dy: isize },
    /// Output of a hidden random operator of the same width.
    Hidden,
}

/// Training pairs plus the starting parameters.
#[derive(Debug, Clone)]
pub struct FitProblem {
    pub pairs: Vec<(FeatureMap, FeatureMap)>,
    pub g0: EmbedParams,
    pub z0: PdeParams,
}

/// Gaussian-filtered white noise (filter width `width` cells), scaled to unit
/// RMS per map. White noise would make the shift loss flat away from the
/// optimum.
pub fn smooth_random_map(shape: Shape, width: f64, rng: &mut crate::rng::Rng) -> Result<FeatureMap> {
    let raw = rng.normal_map(shape);
    let grid = make_frequency_grid(shape.height, shape.width)?;
    let mut spec = dft2(&raw)?;
    let (h, w) = (shape.height, shape.width);
    for plane in spec.data_mut().chunks_mut(h * w) {
        for m in 0..h {
            for n in 0..w {
                let k2 = grid.kx[m].powi(2) + grid.ky[n].powi(2);
                plane[m * w + n] *= (-0.5 * width * width * k2).exp();
            }
        }
    }
    let out = crate::spectral::idft2_real(&spec)?.map;
    let rms = (out.data().iter().map(|v| v * v).sum::<f64>() / out.data().len() as f64).sqrt();
    Ok(out.scaled(1.0 / rms))
}

/// Builds the demo: `n_pairs` smooth single-sample inputs on an `h × w`
/// grid with `c` channels, their targets, and a near-identity start.
pub fn fit_problem(target: FitTarget, h: usize, w: usize, c: usize, n_pairs: usize, seed: u64) -> Result<FitProblem> {
    if n_pairs == 0 {
        return Err(Error::arg("at least one training pair is required"));
    }
    let mut rng = crate::rng::Rng::new(seed);
    let shape = Shape::new(1, c, h, w)?;
    let g0 = EmbedParams::init(c, c, &mut rng);
    let z0 = PdeParams::init(c, &mut rng).with_mode(Mode::Raw);
    let hidden = match target {
        FitTarget::Hidden => {
            let g = EmbedParams {
                r: &RealMatrix::identity(c) + &rng.normal_matrix(c, c, 0.3),
                g0: &RealMatrix::identity(c) + &rng.normal_matrix(c, c, 0.3),
                gx: rng.normal_matrix(c, c, 0.3),
                gy: rng.normal_matrix(c, c, 0.3),
            };
            let z = PdeParams {
                fx: rng.normal_matrix(c, c, 0.4),
                fy: rng.normal_matrix(c, c, 0.4),
                bx: rng.normal_matrix(c, c, 0.5),
                by: rng.normal_matrix(c, c, 0.5),
                rm: rng.normal_matrix(c, c, 0.2),
                tau: 1.0,
                flags: crate::operator::TermFlags::ALL,
                mode: Mode::Raw,
            };
            Some((g, z))
        }
        FitTarget::Shift { .. } => None,
    };
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let x = smooth_random_map(shape, 1.5, &mut rng)?;
        let y = match (target, &hidden) {
            (FitTarget::Shift { dx, dy }, _) => x.circular_shift(dx, dy),
            (FitTarget::Hidden, Some((g, z))) => pde_ssm_forward(&x, g, z)?,
            (FitTarget::Hidden, None) => unreachable!(),
        };
        pairs.push((x, y));
    }
    Ok(FitProblem { pairs, g0, z0 })
}

/// Mean of `y²` over all targets; divides [`mse_loss`] into a relative loss.
pub fn target_power(pairs: &[(FeatureMap, FeatureMap)]) -> f64 {
    let n: usize = pairs.iter().map(|(_, y)| y.data().len()).sum();
    pairs.iter().map(|(_, y)| y.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::TermFlags;
    use crate::oracle::finite_diff_grad;
    use crate::rng::Rng;

    fn random_instance(c: usize, rng: &mut Rng) -> (EmbedParams, PdeParams) {
        let g = EmbedParams {
            r: rng.normal_matrix(c, c, 0.5),
            g0: rng.normal_matrix(c, c, 0.5),
            gx: rng.normal_matrix(c, c, 0.3),
            gy: rng.normal_matrix(c, c, 0.3),
        };
        let z = PdeParams {
            fx: rng.normal_matrix(c, c, 0.3),
            fy: rng.normal_matrix(c, c, 0.3),
            bx: rng.normal_matrix(c, c, 0.3),
            by: rng.normal_matrix(c, c, 0.3),
            rm: rng.normal_matrix(c, c, 0.3),
            tau: 0.7,
            flags: TermFlags::ALL,
            mode: Mode::Raw,
        };
        (g, z)
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::new(31);
        let (g, z) = random_instance(2, &mut rng);
        let s = Shape::new(1, 2, 4, 4).unwrap();
        let u = rng.normal_map(s);
        let (ig, pg) = pde_ssm_backward(&u, &g, &z, &FeatureMap::zeros(s)).unwrap();
        assert!(ig.data().iter().all(|&v| v == 0.0));
        assert!(pg.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_configuration_passes_upstream_through() {
        let mut rng = Rng::new(32);
        let (_, z) = random_instance(2, &mut rng);
        let z = z.with_tau(1e-12);
        let s = Shape::new(2, 2, 5, 4).unwrap();
        let (u, up) = (rng.normal_map(s), rng.normal_map(s));
        let (ig, _) = pde_ssm_backward(&u, &EmbedParams::identity(2), &z, &up).unwrap();
        assert!(ig.max_abs_diff(&up).unwrap() < 1e-9);
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = Rng::new(33);
        for (h, w) in [(6, 6), (5, 4)] {
            let (g, z) = random_instance(2, &mut rng);
            let s = Shape::new(2, 2, h, w).unwrap();
            let (u, up) = (rng.normal_map(s), rng.normal_map(s));
            let f = pde_ssm_forward(&u, &g, &z).unwrap();
            let (ig, _) = pde_ssm_backward(&u, &g, &z, &up).unwrap();
            let lhs = up.dot(&f).unwrap();
            let rhs = ig.dot(&u).unwrap();
            assert!((lhs - rhs).abs() / lhs.abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = Rng::new(34);
        let (g, z) = random_instance(2, &mut rng);
        let s = Shape::new(1, 2, 6, 6).unwrap();
        let (u, up) = (rng.normal_map(s), rng.normal_map(s));
        let (_, pg) = pde_ssm_backward(&u, &g, &z, &up).unwrap();
        let theta = flatten_params(&g, &z);
        let fd = finite_diff_grad(
            |t| {
                let (tg, tz) = unflatten_params(t, &g, &z).unwrap();
                up.dot(&pde_ssm_forward(&u, &tg, &tz).unwrap()).unwrap()
            },
            &theta,
            1e-5,
        );
        let an = pg.to_flat();
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (i, (a, f)) in an.iter().zip(&fd).enumerate() {
            assert!((a - f).abs() <= 1e-5 * f.abs().max(1e-3 * scale), "entry {i}: {a} vs {f}");
        }
    }

    #[test]
    fn disabled_terms_have_zero_gradient() {
        let mut rng = Rng::new(35);
        let (g, z) = random_instance(2, &mut rng);
        let z = z.with_flags(TermFlags { diffusion: false, convection: false, reaction: true });
        let s = Shape::new(1, 2, 4, 4).unwrap();
        let (u, up) = (rng.normal_map(s), rng.normal_map(s));
        let (_, pg) = pde_ssm_backward(&u, &g, &z, &up).unwrap();
        assert_eq!(pg.fx.max_abs() + pg.bx.max_abs() + pg.by.max_abs() + pg.fy.max_abs(), 0.0);
        assert!(pg.rm.max_abs() > 0.0);
    }

    #[test]
    fn stable_mode_and_shape_errors() {
        let mut rng = Rng::new(36);
        let (g, z) = random_instance(2, &mut rng);
        let s = Shape::new(1, 2, 4, 4).unwrap();
        let u = rng.normal_map(s);
        let stable = z.clone().with_mode(Mode::Stable);
        assert!(pde_ssm_backward(&u, &g, &stable, &u).is_err());
        let bad = FeatureMap::zeros(Shape::new(1, 2, 4, 3).unwrap());
        assert!(matches!(pde_ssm_backward(&u, &g, &z, &bad), Err(Error::Argument(_))));
    }

    #[test]
    fn fit_on_self_generated_target_stays_at_zero() {
        let mut rng = Rng::new(37);
        let g = EmbedParams::init(1, 1, &mut rng);
        let z = PdeParams::init(1, &mut rng).with_mode(Mode::Raw);
        let x = rng.normal_map(Shape::new(1, 1, 6, 6).unwrap());
        let y = pde_ssm_forward(&x, &g, &z).unwrap();
        let fit = fit_operator(&[(x, y)], &g, &z, 0.1, 5).unwrap();
        assert!(fit.loss_trace.iter().all(|&l| l <= 1e-20));
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = Rng::new(38);
        let (g, z) = random_instance(3, &mut rng);
        let flat = flatten_params(&g, &z);
        let (g2, z2) = unflatten_params(&flat, &g, &z).unwrap();
        assert_eq!((g, z), (g2, z2));
    }
}
