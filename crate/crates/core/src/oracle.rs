//! Slow reference computations for tests and the `verify` command. Nothing
//! here calls the FFT or the Padé exponential.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grad::{flatten_params, unflatten_params, ParamGrads};
use crate::grid::{make_frequency_grid, FeatureMap, SpectrumMap};
use crate::linalg::ComplexMatrix;
use crate::operator::ssm1d::Ssm1dParams;
use crate::operator::{evolution_symbol, EmbedParams, KernelBank, PdeParams};

/// Forward DFT by direct double summation.
pub fn direct_dft2(u: &FeatureMap) -> SpectrumMap {
    let s = u.shape();
    let (h, w) = (s.height, s.width);
    let tx: Vec<Complex64> = (0..h).map(|j| Complex64::from_polar(1.0, -2.0 * PI * j as f64 / h as f64)).collect();
    let ty: Vec<Complex64> = (0..w).map(|j| Complex64::from_polar(1.0, -2.0 * PI * j as f64 / w as f64)).collect();
    let mut out = SpectrumMap::zeros(s);
    for b in 0..s.batch {
        for c in 0..s.channels {
            let p = u.plane(b, c);
            for m in 0..h {
                for n in 0..w {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for x in 0..h {
                        for y in 0..w {
                            acc += p[x * w + y] * tx[(m * x) % h] * ty[(n * y) % w];
                        }
                    }
                    out.set(b, c, m, n, acc);
                }
            }
        }
    }
    out
}

/// `exp(M)` by Taylor series on `M/2ˢ` summed to convergence, then squared.
pub fn taylor_exp(m: &ComplexMatrix) -> ComplexMatrix {
    let norm = m.frobenius();
    let mut s = 0;
    while norm / 2f64.powi(s) > 0.5 {
        s += 1;
    }
    let a = m.scale_real(0.5f64.powi(s));
    let n = m.dim();
    let mut sum = ComplexMatrix::identity(n);
    let mut term = ComplexMatrix::identity(n);
    for k in 1..200 {
        term = naive_mul(&term, &a).scale_real(1.0 / k as f64);
        sum = &sum + &term;
        if term.frobenius() <= 1e-20 * sum.frobenius() {
            break;
        }
    }
    for _ in 0..s {
        sum = naive_mul(&sum, &sum);
    }
    sum
}

fn naive_mul(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let n = a.dim();
    ComplexMatrix::from_fn(n, |i, j| (0..n).map(|l| a.get(i, l) * b.get(l, j)).sum())
}

/// Eigenvalues of the Hermitian part of `m`, ascending, by cyclic Jacobi
/// rotations on the real symmetric embedding `[[Re, −Im], [Im, Re]]`.
pub fn hermitian_eigenvalues(m: &ComplexMatrix) -> Vec<f64> {
    let n = m.dim();
    let h = |i: usize, j: usize| (m.get(i, j) + m.get(j, i).conj()) * 0.5;
    let nn = 2 * n;
    let mut a = vec![0.0; nn * nn];
    for i in 0..n {
        for j in 0..n {
            let v = h(i, j);
            a[i * nn + j] = v.re;
            a[(i + n) * nn + j + n] = v.re;
            a[i * nn + j + n] = -v.im;
            a[(i + n) * nn + j] = v.im;
        }
    }
    for _sweep in 0..100 {
        let off: f64 = (0..nn).flat_map(|i| (0..nn).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * nn + j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..nn {
            for q in p + 1..nn {
                let apq = a[p * nn + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * nn + q] - a[p * nn + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..nn {
                    let (akp, akq) = (a[k * nn + p], a[k * nn + q]);
                    a[k * nn + p] = c * akp - s * akq;
                    a[k * nn + q] = s * akp + c * akq;
                }
                for k in 0..nn {
                    let (apk, aqk) = (a[p * nn + k], a[q * nn + k]);
                    a[p * nn + k] = c * apk - s * aqk;
                    a[q * nn + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut d: Vec<f64> = (0..nn).map(|i| a[i * nn + i]).collect();
    d.sort_by(f64::total_cmp);
    // Every eigenvalue appears twice in the embedding.
    d.into_iter().step_by(2).collect()
}

/// Direct circular convolution `out[o] = Σᵢ kernel[o,i] ⊛ u[i]`.
pub fn spatial_circular_conv(u: &FeatureMap, kernels: &KernelBank) -> Result<FeatureMap> {
    let s = u.shape();
    if kernels.height != s.height || kernels.width != s.width || kernels.c_in != s.channels {
        return Err(Error::arg(format!(
            "kernel bank {}×{}×{}×{} does not fit input {s}",
            kernels.c_out, kernels.c_in, kernels.height, kernels.width
        )));
    }
    let (h, w) = (s.height, s.width);
    let out_shape = s.with_channels(kernels.c_out);
    let mut out = FeatureMap::zeros(out_shape);
    for b in 0..s.batch {
        for o in 0..kernels.c_out {
            let mut acc = vec![0.0; h * w];
            for i in 0..s.channels {
                let k = kernels.kernel(o, i);
                let p = u.plane(b, i);
                for x in 0..h {
                    for y in 0..w {
                        let mut v = 0.0;
                        for dx in 0..h {
                            for dy in 0..w {
                                v += k[dx * w + dy] * p[((x + h - dx) % h) * w + (y + w - dy) % w];
                            }
                        }
                        acc[x * w + y] += v;
                    }
                }
            }
            out.plane_mut(b, o).copy_from_slice(&acc);
        }
    }
    Ok(out)
}

/// Classical RK4 for `dĥ/dt = Λ(k)·ĥ` on `[0, τ]`, bin by bin at the grid
/// frequencies.
pub fn rk4_evolve_spectrum(v: &SpectrumMap, z: &PdeParams, steps: usize) -> Result<SpectrumMap> {
    z.validate()?;
    let s = v.shape();
    if s.channels != z.c_hid() {
        return Err(Error::arg(format!("spectrum has {} channels, parameters {}", s.channels, z.c_hid())));
    }
    if steps == 0 {
        return Err(Error::arg("steps must be at least 1"));
    }
    let grid = make_frequency_grid(s.height, s.width)?;
    let dt = z.tau / steps as f64;
    let c = s.channels;
    let mut out = v.clone();
    let apply = |lam: &ComplexMatrix, x: &[Complex64]| -> Vec<Complex64> {
        (0..c).map(|i| (0..c).map(|j| lam.get(i, j) * x[j]).sum()).collect()
    };
    for m in 0..s.height {
        for n in 0..s.width {
            let lam = evolution_symbol(z, grid.kx[m], grid.ky[n]);
            for b in 0..s.batch {
                let mut y: Vec<Complex64> = (0..c).map(|ch| v.get(b, ch, m, n)).collect();
                for _ in 0..steps {
                    let k1 = apply(&lam, &y);
                    let y2: Vec<_> = (0..c).map(|i| y[i] + k1[i] * (dt / 2.0)).collect();
                    let k2 = apply(&lam, &y2);
                    let y3: Vec<_> = (0..c).map(|i| y[i] + k2[i] * (dt / 2.0)).collect();
                    let k3 = apply(&lam, &y3);
                    let y4: Vec<_> = (0..c).map(|i| y[i] + k3[i] * dt).collect();
                    let k4 = apply(&lam, &y4);
                    for i in 0..c {
                        y[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0);
                    }
                }
                for (ch, val) in y.into_iter().enumerate() {
                    out.set(b, ch, m, n, val);
                }
            }
        }
    }
    Ok(out)
}

/// RK4 integration of `h' = A·h + B·u` from `h(0) = 0` with `u` held constant
/// on each sample interval; `p.steps` RK4 substeps per interval. Entry `n` of
/// the result is the state at `(n+1)·dt`.
pub fn rk4_ssm1d(p: &Ssm1dParams, u: &[Vec<f64>], dt: f64) -> Result<Vec<Vec<f64>>> {
    p.check_inputs(u, dt)?;
    let n = p.state_dim();
    let f = |h: &[f64], bu: &[f64]| -> Vec<f64> {
        (0..n).map(|i| (0..n).map(|j| p.a.get(i, j) * h[j]).sum::<f64>() + bu[i]).collect()
    };
    let hstep = dt / p.steps as f64;
    let mut h = vec![0.0; n];
    let mut out = Vec::with_capacity(u.len());
    for um in u {
        let bu: Vec<f64> = (0..n).map(|i| (0..um.len()).map(|j| p.b.get(i, j) * um[j]).sum()).collect();
        for _ in 0..p.steps {
            let k1 = f(&h, &bu);
            let y2: Vec<f64> = (0..n).map(|i| h[i] + 0.5 * hstep * k1[i]).collect();
            let k2 = f(&y2, &bu);
            let y3: Vec<f64> = (0..n).map(|i| h[i] + 0.5 * hstep * k2[i]).collect();
            let k3 = f(&y3, &bu);
            let y4: Vec<f64> = (0..n).map(|i| h[i] + hstep * k3[i]).collect();
            let k4 = f(&y4, &bu);
            for i in 0..n {
                h[i] += hstep / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        out.push(h.clone());
    }
    Ok(out)
}

/// Central differences of `loss` at `theta`, one entry at a time.
pub fn finite_diff_grad(loss: impl Fn(&[f64]) -> f64, theta: &[f64], eps: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            t[i] = theta[i] + eps;
            let up = loss(&t);
            t[i] = theta[i] - eps;
            let down = loss(&t);
            t[i] = theta[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// [`finite_diff_grad`] over all operator parameters.
pub fn finite_diff_param_grads(
    loss: impl Fn(&EmbedParams, &PdeParams) -> f64,
    g: &EmbedParams,
    z: &PdeParams,
    eps: f64,
) -> Result<ParamGrads> {
    if !(eps > 0.0) {
        return Err(Error::arg("eps must be positive"));
    }
    let theta = flatten_params(g, z);
    let flat = finite_diff_grad(
        |t| match unflatten_params(t, g, z) {
            Ok((tg, tz)) => loss(&tg, &tz),
            Err(_) => f64::NAN,
        },
        &theta,
        eps,
    );
    ParamGrads::from_flat(&flat, g.c_in(), g.c_hid())
}
