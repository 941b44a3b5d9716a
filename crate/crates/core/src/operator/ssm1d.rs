//! One-dimensional linear state-space model `h' = A·h + B·u`, solved by
//! causal convolution with the Green's function `exp(t·A)·𝟙(t ≥ 0)`.

use crate::error::{Error, Result};
use crate::linalg::{mat_exp, RealMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Ssm1dParams {
    /// State matrix, `n × n`.
    pub a: RealMatrix,
    /// Input matrix, `n × m`.
    pub b: RealMatrix,
    pub tau: f64,
    pub steps: usize,
}

impl Ssm1dParams {
    pub fn new(a: RealMatrix, b: RealMatrix, tau: f64, steps: usize) -> Result<Self> {
        let p = Ssm1dParams { a, b, tau, steps };
        p.validate()?;
        Ok(p)
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.a.is_square() || self.b.rows() != self.a.rows() {
            return Err(Error::arg(format!(
                "A must be n×n and B n×m, got {:?} and {:?}",
                self.a.shape(),
                self.b.shape()
            )));
        }
        if !(self.a.is_finite() && self.b.is_finite()) {
            return Err(Error::numeric("SSM matrices must be finite"));
        }
        if !(self.tau > 0.0) || self.steps == 0 {
            return Err(Error::arg("tau must be positive and steps at least 1"));
        }
        Ok(())
    }

    pub(crate) fn check_inputs(&self, u: &[Vec<f64>], dt: f64) -> Result<()> {
        self.validate()?;
        if !(dt > 0.0) {
            return Err(Error::arg(format!("dt must be positive, got {dt}")));
        }
        if let Some(v) = u.iter().find(|v| v.len() != self.input_dim()) {
            return Err(Error::arg(format!(
                "input vectors must have length {}, found {}",
                self.input_dim(),
                v.len()
            )));
        }
        Ok(())
    }
}

/// `exp(t·A)` for `t ≥ 0`, the zero matrix otherwise.
pub fn ssm1d_green(p: &Ssm1dParams, t: f64) -> Result<RealMatrix> {
    let n = p.state_dim();
    if t < 0.0 {
        return Ok(RealMatrix::zeros(n, n));
    }
    let e = mat_exp(&p.a.scale(t).to_complex())?;
    Ok(RealMatrix::from_fn(n, n, |i, j| e.get(i, j).re))
}

/// Discrete causal convolution `h[n] = Σ_{m ≤ n} exp((n−m)·dt·A)·B·u[m]·dt`.
pub fn ssm1d_apply(p: &Ssm1dParams, u: &[Vec<f64>], dt: f64) -> Result<Vec<Vec<f64>>> {
    p.check_inputs(u, dt)?;
    let len = u.len();
    let ns = p.state_dim();
    // kernel[j] = exp(j·dt·A)·B·dt
    let mut kernel = Vec::with_capacity(len);
    for j in 0..len {
        kernel.push(ssm1d_green(p, j as f64 * dt)?.matmul(&p.b).scale(dt));
    }
    let mut h = vec![vec![0.0; ns]; len];
    for (n, hn) in h.iter_mut().enumerate() {
        for (m, um) in u.iter().enumerate().take(n + 1) {
            let k = &kernel[n - m];
            for (i, hi) in hn.iter_mut().enumerate() {
                *hi += (0..um.len()).map(|j| k.get(i, j) * um[j]).sum::<f64>();
            }
        }
    }
    Ok(h)
}
