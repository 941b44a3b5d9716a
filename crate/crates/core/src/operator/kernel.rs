//! Spatial impulse responses of the operator.

use num_complex::Complex64;

use super::{check_compatible, composed_symbol, green_symbol_bin, EmbedParams, PdeParams};
use crate::error::{Error, Result};
use crate::grid::{make_frequency_grid, Shape, SpectrumMap};
use crate::linalg::ComplexMatrix;
use crate::spectral::idft2;

/// Circular convolution kernels, `(c_out, c_in, height, width)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    pub c_out: usize,
    pub c_in: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl KernelBank {
    pub fn kernel(&self, o: usize, i: usize) -> &[f64] {
        let n = self.height * self.width;
        let off = (o * self.c_in + i) * n;
        &self.data[off..off + n]
    }
}

/// A single real image, row-major `height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl KernelImage {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x * self.width + y]
    }

    /// Pixel of the impulse origin after centering.
    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    pub fn argmax(&self) -> (usize, usize) {
        let i = self
            .data
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0;
        (i / self.width, i % self.width)
    }
}

/// Inverse-transforms a stack of per-bin symbols, entry `(o, i)` per plane.
fn symbols_to_kernels(
    symbols: &[ComplexMatrix],
    c_out: usize,
    c_in: usize,
    h: usize,
    w: usize,
    entry: impl Fn(&ComplexMatrix, usize, usize) -> Complex64,
) -> Result<KernelBank> {
    let shape = Shape::new(1, c_out * c_in, h, w)?;
    let mut spec = SpectrumMap::zeros(shape);
    for (bin, sym) in symbols.iter().enumerate() {
        for o in 0..c_out {
            for i in 0..c_in {
                spec.data_mut()[(o * c_in + i) * h * w + bin] = entry(sym, o, i);
            }
        }
    }
    let spatial = idft2(&spec)?;
    Ok(KernelBank { c_out, c_in, height: h, width: w, data: spatial.data().iter().map(|v| v.re).collect() })
}

/// Kernels of the complete operator `u ↦ G ⋆ B(R·u)` from input channel to
/// hidden channel, uncentered (impulse origin at pixel `(0, 0)`).
pub fn operator_kernels(g: &EmbedParams, z: &PdeParams, height: usize, width: usize) -> Result<KernelBank> {
    check_compatible(g, z)?;
    let grid = make_frequency_grid(height, width)?;
    let (c, c_in) = (g.c_hid(), g.c_in());
    let mut symbols = Vec::with_capacity(height * width);
    for m in 0..height {
        for n in 0..width {
            symbols.push(composed_symbol(g, z, &grid, m, n)?);
        }
    }
    // Fold the 1×1 projection: entry (o, i) of T·R.
    symbols_to_kernels(&symbols, c, c_in, height, width, |t, o, i| {
        (0..c).map(|l| t.get(o, l) * g.r.get(l, i)).sum()
    })
}

/// Centered impulse response for one channel pair: the evolution alone, or
/// composed with the embedding (including `R`) when `g` is given.
pub fn kernel_image(
    z: &PdeParams,
    g: Option<&EmbedParams>,
    height: usize,
    width: usize,
    out_ch: usize,
    in_ch: usize,
) -> Result<KernelImage> {
    z.validate()?;
    let c_in = g.map_or(z.c_hid(), |g| g.c_in());
    if out_ch >= z.c_hid() || in_ch >= c_in {
        return Err(Error::arg(format!(
            "channel pair ({out_ch}, {in_ch}) out of range for {}×{c_in}",
            z.c_hid()
        )));
    }
    let bank = match g {
        Some(g) => operator_kernels(g, z, height, width)?,
        None => {
            let grid = make_frequency_grid(height, width)?;
            let mut symbols = Vec::with_capacity(height * width);
            for m in 0..height {
                for n in 0..width {
                    symbols.push(green_symbol_bin(z, &grid, m, n)?);
                }
            }
            symbols_to_kernels(&symbols, z.c_hid(), z.c_hid(), height, width, |t, o, i| t.get(o, i))?
        }
    };
    let k = bank.kernel(out_ch, in_ch);
    let (ch, cw) = (height / 2, width / 2);
    let mut data = vec![0.0; height * width];
    for x in 0..height {
        for y in 0..width {
            data[((x + ch) % height) * width + (y + cw) % width] = k[x * width + y];
        }
    }
    Ok(KernelImage { height, width, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RealMatrix;
    use crate::operator::{Mode, TermFlags};

    #[test]
    fn tiny_tau_gives_centered_delta() {
        let z = PdeParams::init(2, &mut crate::rng::Rng::new(1)).with_tau(1e-12);
        let img = kernel_image(&z, None, 16, 16, 0, 0).unwrap();
        assert_eq!(img.argmax(), img.center());
        assert!((img.get(8, 8) - 1.0).abs() < 1e-9);
        let off: f64 = img.data.iter().map(|v| v.abs()).sum::<f64>() - img.get(8, 8).abs();
        assert!(off < 1e-9);
    }

    #[test]
    fn convection_displaces_the_delta() {
        let mut z = PdeParams::zeros(1, 1.0).with_mode(Mode::Raw);
        z.flags = TermFlags::ALL;
        z.bx = RealMatrix::diag(&[2.0]);
        z.by = RealMatrix::diag(&[-3.0]);
        let img = kernel_image(&z, None, 16, 16, 0, 0).unwrap();
        // exp(iτ b·k) is the transform of an impulse at −τ·b.
        assert_eq!(img.argmax(), (8 - 2, 8 + 3));
        assert!((img.get(6, 11) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_pair_is_rejected() {
        let z = PdeParams::zeros(2, 1.0);
        assert!(matches!(kernel_image(&z, None, 4, 4, 2, 0), Err(Error::Argument(_))));
        let g = EmbedParams::init(3, 2, &mut crate::rng::Rng::new(2));
        assert!(kernel_image(&z, Some(&g), 4, 4, 1, 2).is_ok());
        assert!(kernel_image(&z, Some(&g), 4, 4, 1, 3).is_err());
    }
}
