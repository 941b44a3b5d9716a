//! The PDE-SSM mixing operator.
//!
//! An input map is projected to the hidden width by a 1×1 convolution `R`,
//! embedded with the first-order differential symbol `Γ₀ + i·kx·Γx + i·ky·Γy`,
//! and evolved for time `τ` under the coupled convection–diffusion–reaction
//! generator
//!
//! ```text
//! Λ(k) = −M(k)·M(k)ᵀ + Rm + i·(kx·Bx + ky·By),    M(k) = kx·Fx + ky·Fy
//! ```
//!
//! whose Green's function symbol `exp(τ·Λ(k))` is applied per frequency bin.

mod forward;
mod kernel;
pub mod ssm1d;

pub use forward::{
    apply_green_symbol, composed_symbol, green_symbol_bin, pde_ssm_forward, pde_ssm_forward_full,
    ForwardOutput, PreparedOperator,
};
pub use kernel::{kernel_image, operator_kernels, KernelBank, KernelImage};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::FrequencyGrid;
use crate::linalg::{mat_exp, ComplexMatrix, RealMatrix};
use crate::rng::Rng;

/// Embedding parameters: channel mixing `r` (`c_hid × c_in`) and the symbol
/// coefficients `g0`, `gx`, `gy` (`c_hid × c_hid`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedParams {
    pub r: RealMatrix,
    pub g0: RealMatrix,
    pub gx: RealMatrix,
    pub gy: RealMatrix,
}

impl EmbedParams {
    pub fn new(r: RealMatrix, g0: RealMatrix, gx: RealMatrix, gy: RealMatrix) -> Result<Self> {
        let p = EmbedParams { r, g0, gx, gy };
        p.validate()?;
        Ok(p)
    }

    /// `R = I`, `Γ₀ = I`, `Γx = Γy = 0`.
    pub fn identity(c: usize) -> Self {
        EmbedParams {
            r: RealMatrix::identity(c),
            g0: RealMatrix::identity(c),
            gx: RealMatrix::zeros(c, c),
            gy: RealMatrix::zeros(c, c),
        }
    }

    /// Near-identity initialization: `Γ₀ = I + noise`, small `Γx`, `Γy`.
    /// `R` is `I + noise` when square, otherwise uniform with fan-in scaling.
    pub fn init(c_in: usize, c_hid: usize, rng: &mut Rng) -> Self {
        const NOISE: f64 = 0.01;
        let r = if c_in == c_hid {
            &RealMatrix::identity(c_hid) + &rng.uniform_matrix(c_hid, c_in, NOISE)
        } else {
            rng.uniform_matrix(c_hid, c_in, 1.0 / (c_in as f64).sqrt())
        };
        EmbedParams {
            r,
            g0: &RealMatrix::identity(c_hid) + &rng.uniform_matrix(c_hid, c_hid, NOISE),
            gx: rng.uniform_matrix(c_hid, c_hid, NOISE),
            gy: rng.uniform_matrix(c_hid, c_hid, NOISE),
        }
    }

    pub fn c_in(&self) -> usize {
        self.r.cols()
    }

    pub fn c_hid(&self) -> usize {
        self.r.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.c_hid();
        for (name, m) in [("g0", &self.g0), ("gx", &self.gx), ("gy", &self.gy)] {
            if m.shape() != (c, c) {
                return Err(Error::arg(format!(
                    "embed.{name} must be {c}×{c}, got {}×{}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if c == 0 || self.c_in() == 0 {
            return Err(Error::arg("embedding channel counts must be positive"));
        }
        if ![&self.r, &self.g0, &self.gx, &self.gy].iter().all(|m| m.is_finite()) {
            return Err(Error::numeric("embedding parameters must be finite"));
        }
        Ok(())
    }
}

/// How the reaction and convection matrices enter the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Symmetric part of `Rm` is replaced by `−|sym(Rm)|`, convection matrices
    /// are symmetrized. The Hermitian part of `Λ(k)` is then negative
    /// semidefinite at every `k`, so `‖exp(τΛ)‖₂ ≤ 1`.
    #[default]
    Stable,
    /// Parameters enter `Λ(k)` verbatim.
    Raw,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "stable" => Some(Mode::Stable),
            "raw" => Some(Mode::Raw),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Stable => "stable",
            Mode::Raw => "raw",
        }
    }
}

/// Which generator terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermFlags {
    pub diffusion: bool,
    pub convection: bool,
    pub reaction: bool,
}

impl TermFlags {
    pub const ALL: TermFlags = TermFlags { diffusion: true, convection: true, reaction: true };
    pub const NONE: TermFlags = TermFlags { diffusion: false, convection: false, reaction: false };
}

impl Default for TermFlags {
    fn default() -> Self {
        TermFlags::ALL
    }
}

/// The six term-ablation configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Baseline,
    DiffusionReaction,
    DiffusionConvection,
    Convection,
    Diffusion,
    Reaction,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Baseline,
        Ablation::DiffusionReaction,
        Ablation::DiffusionConvection,
        Ablation::Convection,
        Ablation::Diffusion,
        Ablation::Reaction,
    ];

    pub fn flags(self) -> TermFlags {
        let (diffusion, convection, reaction) = match self {
            Ablation::Baseline => (true, true, true),
            Ablation::DiffusionReaction => (true, false, true),
            Ablation::DiffusionConvection => (true, true, false),
            Ablation::Convection => (false, true, false),
            Ablation::Diffusion => (true, false, false),
            Ablation::Reaction => (false, false, true),
        };
        TermFlags { diffusion, convection, reaction }
    }

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Baseline => "Baseline",
            Ablation::DiffusionReaction => "Diffusion + Reaction",
            Ablation::DiffusionConvection => "Diffusion + Convection",
            Ablation::Convection => "Convection",
            Ablation::Diffusion => "Diffusion",
            Ablation::Reaction => "Reaction",
        }
    }
}

/// Evolution parameters.
///
/// The diffusion tensor is carried through its factors: `kᵀKk = M(k)·M(k)ᵀ`
/// with `M(k) = kx·fx + ky·fy`, which is positive semidefinite for every `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeParams {
    pub fx: RealMatrix,
    pub fy: RealMatrix,
    pub bx: RealMatrix,
    pub by: RealMatrix,
    pub rm: RealMatrix,
    pub tau: f64,
    pub flags: TermFlags,
    pub mode: Mode,
}

impl PdeParams {
    /// All-zero generator (identity evolution) with the given `tau`.
    pub fn zeros(c: usize, tau: f64) -> Self {
        let z = RealMatrix::zeros(c, c);
        PdeParams {
            fx: z.clone(),
            fy: z.clone(),
            bx: z.clone(),
            by: z.clone(),
            rm: z,
            tau,
            flags: TermFlags::ALL,
            mode: Mode::Stable,
        }
    }

    /// Small-generator initialization: every matrix entry uniform in
    /// `±0.02/c`, `τ = 1`.
    pub fn init(c: usize, rng: &mut Rng) -> Self {
        let hw = 0.02 / c as f64;
        PdeParams {
            fx: rng.uniform_matrix(c, c, hw),
            fy: rng.uniform_matrix(c, c, hw),
            bx: rng.uniform_matrix(c, c, hw),
            by: rng.uniform_matrix(c, c, hw),
            rm: rng.uniform_matrix(c, c, hw),
            tau: 1.0,
            flags: TermFlags::ALL,
            mode: Mode::Stable,
        }
    }

    pub fn c_hid(&self) -> usize {
        self.fx.rows()
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_flags(mut self, flags: TermFlags) -> Self {
        self.flags = flags;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.c_hid();
        if c == 0 {
            return Err(Error::arg("hidden width must be positive"));
        }
        for (name, m) in [("fx", &self.fx), ("fy", &self.fy), ("bx", &self.bx), ("by", &self.by), ("rm", &self.rm)]
        {
            if m.shape() != (c, c) {
                return Err(Error::arg(format!(
                    "pde.{name} must be {c}×{c}, got {}×{}",
                    m.rows(),
                    m.cols()
                )));
            }
            if !m.is_finite() {
                return Err(Error::numeric(format!("pde.{name} is not finite")));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::arg(format!("tau must be positive and finite, got {}", self.tau)));
        }
        Ok(())
    }

    /// Matrices as they enter the generator after the mode projection and
    /// with disabled terms zeroed.
    pub fn effective(&self) -> EffectiveParams {
        let c = self.c_hid();
        let zero = || RealMatrix::zeros(c, c);
        let (fx, fy) = if self.flags.diffusion { (self.fx.clone(), self.fy.clone()) } else { (zero(), zero()) };
        let (bx, by) = match (self.flags.convection, self.mode) {
            (false, _) => (zero(), zero()),
            (true, Mode::Raw) => (self.bx.clone(), self.by.clone()),
            (true, Mode::Stable) => (self.bx.symmetric_part(), self.by.symmetric_part()),
        };
        let rm = match (self.flags.reaction, self.mode) {
            (false, _) => zero(),
            (true, Mode::Raw) => self.rm.clone(),
            (true, Mode::Stable) => &self.rm.skew_part() - &self.rm.symmetric_abs(),
        };
        EffectiveParams { fx, fy, bx, by, rm, tau: self.tau }
    }
}

/// Generator matrices after projection; see [`PdeParams::effective`].
#[derive(Debug, Clone)]
pub struct EffectiveParams {
    pub fx: RealMatrix,
    pub fy: RealMatrix,
    pub bx: RealMatrix,
    pub by: RealMatrix,
    pub rm: RealMatrix,
    pub tau: f64,
}

/// The three additive pieces of `Λ(k)`.
#[derive(Debug, Clone)]
pub struct EvolutionTerms {
    /// `−M(k)·M(k)ᵀ`
    pub diffusion: ComplexMatrix,
    /// `i·(kx·Bx + ky·By)`
    pub convection: ComplexMatrix,
    pub reaction: ComplexMatrix,
}

impl EvolutionTerms {
    pub fn total(&self) -> ComplexMatrix {
        &(&self.diffusion + &self.convection) + &self.reaction
    }
}

impl EffectiveParams {
    pub fn c_hid(&self) -> usize {
        self.fx.rows()
    }

    /// `M(k) = kx·Fx + ky·Fy`
    pub fn diffusion_factor(&self, kx: f64, ky: f64) -> RealMatrix {
        &self.fx.scale(kx) + &self.fy.scale(ky)
    }

    pub fn terms(&self, kx: f64, ky: f64) -> EvolutionTerms {
        let c = self.c_hid();
        let m = self.diffusion_factor(kx, ky);
        let mmt = m.matmul(&m.transpose());
        let diffusion = ComplexMatrix::from_fn(c, |i, j| Complex64::new(-mmt.get(i, j), 0.0));
        let convection = ComplexMatrix::from_fn(c, |i, j| {
            Complex64::new(0.0, kx * self.bx.get(i, j) + ky * self.by.get(i, j))
        });
        let reaction = self.rm.to_complex();
        EvolutionTerms { diffusion, convection, reaction }
    }

    pub fn lambda(&self, kx: f64, ky: f64) -> ComplexMatrix {
        let c = self.c_hid();
        let m = self.diffusion_factor(kx, ky);
        let mut out = ComplexMatrix::zeros(c);
        for i in 0..c {
            for j in 0..c {
                let mut d = 0.0;
                for l in 0..c {
                    d += m.get(i, l) * m.get(j, l);
                }
                out.set(
                    i,
                    j,
                    Complex64::new(self.rm.get(i, j) - d, kx * self.bx.get(i, j) + ky * self.by.get(i, j)),
                );
            }
        }
        out
    }

    pub fn green(&self, kx: f64, ky: f64) -> Result<ComplexMatrix> {
        mat_exp(&self.lambda(kx, ky).scale_real(self.tau))
    }

    /// True when every generator matrix is diagonal, i.e. the channels evolve
    /// independently and `exp(τΛ)` is elementwise.
    pub fn is_decoupled(&self) -> bool {
        [&self.fx, &self.fy, &self.bx, &self.by, &self.rm].iter().all(|m| m.is_diagonal())
    }

    /// Per-channel generator `λ_c(k)` for decoupled parameters.
    pub(crate) fn diagonal_lambda(&self, c: usize, kx: f64, ky: f64) -> Complex64 {
        let m = kx * self.fx.get(c, c) + ky * self.fy.get(c, c);
        Complex64::new(self.rm.get(c, c) - m * m, kx * self.bx.get(c, c) + ky * self.by.get(c, c))
    }
}

/// `Γ₀ + i·kx·Γx + i·ky·Γy`
pub fn embed_symbol(g: &EmbedParams, kx: f64, ky: f64) -> ComplexMatrix {
    let c = g.c_hid();
    ComplexMatrix::from_fn(c, |i, j| {
        Complex64::new(g.g0.get(i, j), kx * g.gx.get(i, j) + ky * g.gy.get(i, j))
    })
}

/// `Λ(k)` after mode projection and term flags.
pub fn evolution_symbol(z: &PdeParams, kx: f64, ky: f64) -> ComplexMatrix {
    z.effective().lambda(kx, ky)
}

/// `Λ(k)` split into its diffusion, convection and reaction terms.
pub fn evolution_terms(z: &PdeParams, kx: f64, ky: f64) -> EvolutionTerms {
    z.effective().terms(kx, ky)
}

/// `exp(τ·Λ(k))`
pub fn green_symbol(z: &PdeParams, kx: f64, ky: f64) -> Result<ComplexMatrix> {
    z.effective().green(kx, ky)
}

/// Frequencies at which the symbol of bin `(m, n)` is evaluated, with weights.
///
/// A self-conjugate Nyquist bin stands for both `+π` and `−π`; its symbol is
/// the average over the two signs (four combinations at a double-Nyquist
/// corner). This keeps the symbol Hermitian-compatible for odd terms and for
/// `kx·ky` cross terms, and equals taking the real part of the output.
pub fn bin_points(grid: &FrequencyGrid, m: usize, n: usize) -> Vec<(f64, f64, f64)> {
    let xs: Vec<f64> = if grid.is_nyquist_x(m) { vec![grid.kx[m], -grid.kx[m]] } else { vec![grid.kx[m]] };
    let ys: Vec<f64> = if grid.is_nyquist_y(n) { vec![grid.ky[n], -grid.ky[n]] } else { vec![grid.ky[n]] };
    let w = 1.0 / (xs.len() * ys.len()) as f64;
    xs.iter().flat_map(|&kx| ys.iter().map(move |&ky| (kx, ky, w))).collect()
}

pub(crate) fn check_compatible(g: &EmbedParams, z: &PdeParams) -> Result<()> {
    g.validate()?;
    z.validate()?;
    if g.c_hid() != z.c_hid() {
        return Err(Error::arg(format!(
            "embedding hidden width {} differs from evolution width {}",
            g.c_hid(),
            z.c_hid()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_frequency_grid;
    use crate::linalg::spectral_abscissa;
    use std::f64::consts::PI;

    fn random_pde(c: usize, scale: f64, rng: &mut Rng) -> PdeParams {
        PdeParams {
            fx: rng.normal_matrix(c, c, scale),
            fy: rng.normal_matrix(c, c, scale),
            bx: rng.normal_matrix(c, c, scale),
            by: rng.normal_matrix(c, c, scale),
            rm: rng.normal_matrix(c, c, scale),
            tau: 1.0,
            flags: TermFlags::ALL,
            mode: Mode::Stable,
        }
    }

    #[test]
    fn embed_symbol_examples() {
        let g = EmbedParams::identity(3);
        assert_eq!(embed_symbol(&g, 1.3, -0.4), ComplexMatrix::identity(3));
        let g = EmbedParams {
            r: RealMatrix::identity(2),
            g0: RealMatrix::zeros(2, 2),
            gx: RealMatrix::identity(2),
            gy: RealMatrix::zeros(2, 2),
        };
        let s = embed_symbol(&g, PI, 0.0);
        let expect = ComplexMatrix::identity(2).scale(Complex64::new(0.0, PI));
        assert!(s.rel_error(&expect) < 1e-15);
    }

    #[test]
    fn lambda_at_dc_is_reaction() {
        let mut rng = Rng::new(1);
        for mode in [Mode::Raw, Mode::Stable] {
            let z = random_pde(3, 0.5, &mut rng).with_mode(mode);
            let eff = z.effective();
            assert!(evolution_symbol(&z, 0.0, 0.0).rel_error(&eff.rm.to_complex()) < 1e-15);
        }
    }

    #[test]
    fn scalar_heat_symbol() {
        let sigma = 0.7;
        let mut z = PdeParams::zeros(1, 1.0);
        z.fx = RealMatrix::diag(&[sigma]);
        for kx in [0.3, -1.1, PI] {
            let l = evolution_symbol(&z, kx, 0.0).get(0, 0);
            assert!((l.re + sigma * sigma * kx * kx).abs() < 1e-15 && l.im == 0.0);
        }
    }

    #[test]
    fn lambda_matches_term_sum() {
        let mut rng = Rng::new(2);
        let z = random_pde(4, 0.3, &mut rng).with_mode(Mode::Raw);
        let eff = z.effective();
        let t = eff.terms(0.4, -2.0).total();
        assert!(eff.lambda(0.4, -2.0).rel_error(&t) < 1e-14);
    }

    #[test]
    fn stable_mode_abscissa_is_non_positive() {
        let mut rng = Rng::new(3);
        let grid = make_frequency_grid(16, 16).unwrap();
        for _ in 0..5 {
            let z = random_pde(3, 1.0, &mut rng);
            let eff = z.effective();
            for &kx in &grid.kx {
                for &ky in &grid.ky {
                    let a = spectral_abscissa(&eff.lambda(kx, ky));
                    assert!(a <= 1e-8, "abscissa {a} at ({kx}, {ky})");
                }
            }
        }
    }

    #[test]
    fn green_symbol_limits() {
        let mut rng = Rng::new(4);
        let z = random_pde(3, 1.0, &mut rng).with_tau(1e-12);
        let g = green_symbol(&z, 2.0, -1.0).unwrap();
        assert!((&g - &ComplexMatrix::identity(3)).max_abs() < 1e-10);

        let mut z = PdeParams::zeros(1, 1.0).with_mode(Mode::Raw);
        z.rm = RealMatrix::diag(&[-1.0]);
        let g = green_symbol(&z, 0.8, 0.1).unwrap().get(0, 0);
        assert!((g.re - 0.36787944117144233).abs() < 1e-15 && g.im == 0.0);

        let mut z = PdeParams::zeros(1, 2.0);
        z.fx = RealMatrix::diag(&[0.9]);
        z.fy = RealMatrix::diag(&[-0.4]);
        let grid = make_frequency_grid(9, 8).unwrap();
        for &kx in &grid.kx {
            for &ky in &grid.ky {
                assert!(green_symbol(&z, kx, ky).unwrap().get(0, 0).norm() <= 1.0);
            }
        }
    }

    #[test]
    fn raw_mode_large_reaction_overflows() {
        let mut z = PdeParams::zeros(2, 1.0).with_mode(Mode::Raw);
        z.rm = RealMatrix::from_rows(&[&[900.0, 1.0], &[0.0, 1.0]]).unwrap();
        assert!(matches!(green_symbol(&z, 0.0, 0.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn hermitian_compatibility_of_symbols() {
        let mut rng = Rng::new(5);
        let z = random_pde(3, 0.6, &mut rng).with_mode(Mode::Raw);
        let g = EmbedParams::init(3, 3, &mut rng);
        for (kx, ky) in [(0.5, 1.0), (-2.0, 0.3), (PI / 2.0, -PI / 3.0)] {
            let a = green_symbol(&z, kx, ky).unwrap();
            let b = green_symbol(&z, -kx, -ky).unwrap();
            assert!((&a.conj() - &b).max_abs() < 1e-13);
            assert!((&embed_symbol(&g, kx, ky).conj() - &embed_symbol(&g, -kx, -ky)).max_abs() == 0.0);
        }
    }

    #[test]
    fn ablation_flags_zero_disabled_terms() {
        let mut rng = Rng::new(6);
        let base = random_pde(3, 0.7, &mut rng);
        for ab in Ablation::ALL {
            let z = base.clone().with_flags(ab.flags());
            let t = evolution_terms(&z, 1.1, -0.6);
            let f = ab.flags();
            assert_eq!(t.diffusion.max_abs() == 0.0, !f.diffusion, "{}", ab.label());
            assert_eq!(t.convection.max_abs() == 0.0, !f.convection, "{}", ab.label());
            assert_eq!(t.reaction.max_abs() == 0.0, !f.reaction, "{}", ab.label());
        }
        let z = base.with_flags(TermFlags::NONE);
        assert_eq!(evolution_symbol(&z, 2.0, 1.0), ComplexMatrix::zeros(3));
    }

    #[test]
    fn nyquist_points_average_both_signs() {
        let grid = make_frequency_grid(4, 3).unwrap();
        assert_eq!(bin_points(&grid, 1, 1).len(), 1);
        let p = bin_points(&grid, 2, 1);
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].0, -p[1].0);
        assert!(p.iter().all(|&(_, _, w)| w == 0.5));
        let grid = make_frequency_grid(4, 4).unwrap();
        assert_eq!(bin_points(&grid, 2, 2).len(), 4);
    }

    #[test]
    fn validation_errors() {
        let mut z = PdeParams::zeros(2, 1.0);
        assert!(z.validate().is_ok());
        z.tau = 0.0;
        assert!(matches!(z.validate(), Err(Error::Argument(_))));
        let mut z = PdeParams::zeros(2, 1.0);
        z.bx = RealMatrix::zeros(3, 3);
        assert!(z.validate().is_err());
        let g = EmbedParams::identity(2);
        assert!(check_compatible(&g, &PdeParams::zeros(3, 1.0)).is_err());
    }
}
