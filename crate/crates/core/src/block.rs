//! Transformer-style block with the PDE operator as the token mixer, patch
//! layout ops and the flow-matching helpers. Forward only.

use crate::error::{Error, Result};
use crate::grid::{FeatureMap, Shape};
use crate::linalg::{gemm_real, RealMatrix};
use crate::operator::{check_compatible, EmbedParams, PdeParams, PreparedOperator};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    /// tanh approximation of GELU
    #[default]
    Gelu,
    Relu,
}

impl Activation {
    pub fn parse(s: &str) -> Option<Activation> {
        match s {
            "gelu" => Some(Activation::Gelu),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => {
                const C: f64 = 0.7978845608028654; // sqrt(2/π)
                0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
            }
        }
    }
}

/// Patch embedding: `k×k` patches of a `c_img`-channel image mapped to
/// `c_hid`-wide tokens by `w_embed` and back by `w_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchConfig {
    pub k: usize,
    pub c_img: usize,
    pub c_hid: usize,
    /// `c_hid × (c_img·k²)`
    pub w_embed: RealMatrix,
    /// `(c_img·k²) × c_hid`
    pub w_out: RealMatrix,
}

impl PatchConfig {
    pub fn new(k: usize, c_img: usize, c_hid: usize, w_embed: RealMatrix, w_out: RealMatrix) -> Result<Self> {
        let cfg = PatchConfig { k, c_img, c_hid, w_embed, w_out };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn init(k: usize, c_img: usize, c_hid: usize, rng: &mut Rng) -> Result<Self> {
        if k == 0 || c_img == 0 || c_hid == 0 {
            return Err(Error::arg("patch size and widths must be positive"));
        }
        let d = c_img * k * k;
        let w_embed = rng.normal_matrix(c_hid, d, 1.0 / (d as f64).sqrt());
        let w_out = rng.normal_matrix(d, c_hid, 1.0 / (c_hid as f64).sqrt());
        PatchConfig::new(k, c_img, c_hid, w_embed, w_out)
    }

    /// Length of a flattened patch.
    pub fn patch_dim(&self) -> usize {
        self.c_img * self.k * self.k
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.patch_dim();
        if self.k == 0 || self.c_img == 0 || self.c_hid == 0 {
            return Err(Error::arg("patch size and widths must be positive"));
        }
        if self.w_embed.shape() != (self.c_hid, d) || self.w_out.shape() != (d, self.c_hid) {
            return Err(Error::arg(format!(
                "patch weights must be {}×{d} and {d}×{}, got {:?} and {:?}",
                self.c_hid,
                self.c_hid,
                self.w_embed.shape(),
                self.w_out.shape()
            )));
        }
        if !(self.w_embed.is_finite() && self.w_out.is_finite()) {
            return Err(Error::numeric("patch weights must be finite"));
        }
        Ok(())
    }
}

/// Splits each image into a grid of `k×k` patches and embeds every patch.
/// Patch vectors are ordered channel first, then row, then column.
pub fn patchify(img: &FeatureMap, cfg: &PatchConfig) -> Result<FeatureMap> {
    cfg.validate()?;
    let s = img.shape();
    if s.channels != cfg.c_img {
        return Err(Error::arg(format!("image has {} channels, patch config expects {}", s.channels, cfg.c_img)));
    }
    let k = cfg.k;
    if s.height % k != 0 || s.width % k != 0 {
        return Err(Error::arg(format!("image {}×{} is not divisible by patch size {k}", s.height, s.width)));
    }
    let (ph, pw) = (s.height / k, s.width / k);
    let t = ph * pw;
    let d = cfg.patch_dim();
    let out_shape = Shape::new(s.batch, cfg.c_hid, ph, pw)?;
    let mut out = FeatureMap::zeros(out_shape);
    let mut cols = vec![0.0; d * t];
    for b in 0..s.batch {
        for c in 0..s.channels {
            let plane = img.plane(b, c);
            for dx in 0..k {
                for dy in 0..k {
                    let row = &mut cols[((c * k + dx) * k + dy) * t..][..t];
                    for px in 0..ph {
                        for py in 0..pw {
                            row[px * pw + py] = plane[(px * k + dx) * s.width + py * k + dy];
                        }
                    }
                }
            }
        }
        let dst = &mut out.data_mut()[b * cfg.c_hid * t..(b + 1) * cfg.c_hid * t];
        gemm_real(cfg.c_hid, d, t, cfg.w_embed.data(), &cols, dst, false);
    }
    Ok(out)
}

/// Inverse layout of [`patchify`] through `w_out`.
pub fn unpatchify(tokens: &FeatureMap, cfg: &PatchConfig) -> Result<FeatureMap> {
    cfg.validate()?;
    let s = tokens.shape();
    if s.channels != cfg.c_hid {
        return Err(Error::arg(format!("tokens have {} channels, patch config expects {}", s.channels, cfg.c_hid)));
    }
    let k = cfg.k;
    let (ph, pw) = (s.height, s.width);
    let t = ph * pw;
    let d = cfg.patch_dim();
    let out_shape = Shape::new(s.batch, cfg.c_img, ph * k, pw * k)?;
    let width = pw * k;
    let mut out = FeatureMap::zeros(out_shape);
    let mut cols = vec![0.0; d * t];
    for b in 0..s.batch {
        let src = &tokens.data()[b * cfg.c_hid * t..(b + 1) * cfg.c_hid * t];
        gemm_real(d, cfg.c_hid, t, cfg.w_out.data(), src, &mut cols, false);
        for c in 0..cfg.c_img {
            let plane = out.plane_mut(b, c);
            for dx in 0..k {
                for dy in 0..k {
                    let row = &cols[((c * k + dx) * k + dy) * t..][..t];
                    for px in 0..ph {
                        for py in 0..pw {
                            plane[(px * k + dx) * width + py * k + dy] = row[px * pw + py];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Parameters of one block: the PDE mixer and a position-wise two-layer MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub g: EmbedParams,
    pub z: PdeParams,
    /// `c_mlp × c_hid`
    pub mlp_w1: RealMatrix,
    pub mlp_b1: Vec<f64>,
    /// `c_hid × c_mlp`
    pub mlp_w2: RealMatrix,
    pub mlp_b2: Vec<f64>,
    pub activation: Activation,
}

impl BlockParams {
    /// Mixer near the identity, MLP with `1/√fan_in` Gaussian weights and
    /// zero biases.
    pub fn init(c_hid: usize, mlp_ratio: usize, activation: Activation, rng: &mut Rng) -> Self {
        let c_mlp = c_hid * mlp_ratio.max(1);
        let g = EmbedParams::init(c_hid, c_hid, rng);
        let z = PdeParams::init(c_hid, rng);
        let mlp_w1 = rng.normal_matrix(c_mlp, c_hid, 1.0 / (c_hid as f64).sqrt());
        let mlp_w2 = rng.normal_matrix(c_hid, c_mlp, 1.0 / (c_mlp as f64).sqrt());
        BlockParams { g, z, mlp_w1, mlp_b1: vec![0.0; c_mlp], mlp_w2, mlp_b2: vec![0.0; c_hid], activation }
    }

    pub fn c_hid(&self) -> usize {
        self.g.c_hid()
    }

    pub fn c_mlp(&self) -> usize {
        self.mlp_w1.rows()
    }

    pub fn validate(&self) -> Result<()> {
        check_compatible(&self.g, &self.z)?;
        let (c, m) = (self.c_hid(), self.c_mlp());
        if self.g.c_in() != c {
            return Err(Error::arg(format!("block mixer must map width {c} to itself, R is {c}×{}", self.g.c_in())));
        }
        if self.mlp_w1.shape() != (m, c) || self.mlp_w2.shape() != (c, m) || self.mlp_b1.len() != m || self.mlp_b2.len() != c
        {
            return Err(Error::arg(format!("MLP shapes do not match width {c} and hidden size {m}")));
        }
        if !(self.mlp_w1.is_finite() && self.mlp_w2.is_finite())
            || !self.mlp_b1.iter().chain(&self.mlp_b2).all(|v| v.is_finite())
        {
            return Err(Error::numeric("MLP parameters must be finite"));
        }
        Ok(())
    }
}

fn mlp_residual(h: &mut FeatureMap, p: &BlockParams) {
    let s = h.shape();
    let (c, m, t) = (p.c_hid(), p.c_mlp(), s.plane_len());
    let mut hidden = vec![0.0; m * t];
    let mut out = vec![0.0; c * t];
    for b in 0..s.batch {
        let x = &mut h.data_mut()[b * c * t..(b + 1) * c * t];
        gemm_real(m, c, t, p.mlp_w1.data(), x, &mut hidden, false);
        for (row, bias) in hidden.chunks_mut(t).zip(&p.mlp_b1) {
            row.iter_mut().for_each(|v| *v = p.activation.apply(*v + bias));
        }
        gemm_real(c, m, t, p.mlp_w2.data(), &hidden, &mut out, false);
        for ((xr, or), bias) in x.chunks_mut(t).zip(out.chunks(t)).zip(&p.mlp_b2) {
            xr.iter_mut().zip(or).for_each(|(a, o)| *a += o + bias);
        }
    }
}

/// `h + mixer(h)`, then `+ MLP(·)` per token.
pub fn dit_block_forward(h: &FeatureMap, p: &BlockParams) -> Result<FeatureMap> {
    p.validate()?;
    let s = h.shape();
    if s.channels != p.c_hid() {
        return Err(Error::arg(format!("input width {} does not match block width {}", s.channels, p.c_hid())));
    }
    let op = PreparedOperator::new(&p.g, &p.z, s.height, s.width)?;
    let mixed = op.apply(h)?;
    let mut out = h.lincomb(1.0, &mixed, 1.0)?;
    mlp_residual(&mut out, p);
    if !out.is_finite() {
        return Err(Error::numeric("block output is not finite"));
    }
    Ok(out)
}

/// Patchify, run the blocks in order, unpatchify.
pub fn stack_forward(img: &FeatureMap, cfg: &PatchConfig, blocks: &[BlockParams]) -> Result<FeatureMap> {
    Ok(stack_forward_traced(img, cfg, blocks)?.0)
}

/// As [`stack_forward`], also returning the token L2 norm after patchify and
/// after every block.
pub fn stack_forward_traced(img: &FeatureMap, cfg: &PatchConfig, blocks: &[BlockParams]) -> Result<(FeatureMap, Vec<f64>)> {
    let mut h = patchify(img, cfg)?;
    let mut norms = vec![h.norm_l2()];
    for (i, b) in blocks.iter().enumerate() {
        if b.c_hid() != cfg.c_hid {
            return Err(Error::arg(format!("block {i} has width {}, stack width is {}", b.c_hid(), cfg.c_hid)));
        }
        h = dit_block_forward(&h, b)?;
        norms.push(h.norm_l2());
    }
    Ok((unpatchify(&h, cfg)?, norms))
}

/// `t·u + (1−t)·z`
pub fn fm_interpolate(u: &FeatureMap, z: &FeatureMap, t: f64) -> Result<FeatureMap> {
    u.lincomb(t, z, 1.0 - t)
}

/// Mean over all entries of `(v − (u − z))²`.
pub fn fm_loss(v: &FeatureMap, u: &FeatureMap, z: &FeatureMap) -> Result<f64> {
    v.check_same_shape(u)?;
    v.check_same_shape(z)?;
    let sum: f64 = v.data().iter().zip(u.data()).zip(z.data()).map(|((v, u), z)| (v - (u - z)).powi(2)).sum();
    Ok(sum / v.data().len() as f64)
}

/// Clean-image estimate `u_t + (1−t)·v`.
pub fn fm_denoise(u_t: &FeatureMap, v: &FeatureMap, t: f64) -> Result<FeatureMap> {
    u_t.lincomb(1.0, v, 1.0 - t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RealMatrix;
    use crate::operator::{Mode, TermFlags};

    fn map(seed: u64, b: usize, c: usize, h: usize, w: usize) -> FeatureMap {
        Rng::new(seed).normal_map(Shape::new(b, c, h, w).unwrap())
    }

    #[test]
    fn patch_size_one_with_identity_is_relayout() {
        let img = map(1, 2, 3, 4, 5);
        let cfg = PatchConfig::new(1, 3, 3, RealMatrix::identity(3), RealMatrix::identity(3)).unwrap();
        assert_eq!(patchify(&img, &cfg).unwrap(), img);
        assert_eq!(unpatchify(&img, &cfg).unwrap(), img);
    }

    #[test]
    fn whole_image_patch_is_one_token() {
        let img = map(2, 1, 2, 4, 4);
        let cfg = PatchConfig::new(4, 2, 32, RealMatrix::identity(32), RealMatrix::identity(32)).unwrap();
        let t = patchify(&img, &cfg).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 32, 1, 1).unwrap());
        assert_eq!(t.data(), img.data());
    }

    #[test]
    fn round_trip_with_pseudo_inverse() {
        let mut rng = Rng::new(3);
        let (k, c_img, c_hid) = (2, 2, 12);
        let d = c_img * k * k;
        let we = rng.normal_matrix(c_hid, d, 1.0);
        // (WᵀW)⁻¹Wᵀ through nalgebra
        let w = nalgebra::DMatrix::from_row_slice(c_hid, d, we.data());
        let pinv = w.pseudo_inverse(1e-12).unwrap();
        let wo = RealMatrix::from_fn(d, c_hid, |i, j| pinv[(i, j)]);
        let cfg = PatchConfig::new(k, c_img, c_hid, we, wo).unwrap();
        let img = map(4, 2, c_img, 8, 8);
        let back = unpatchify(&patchify(&img, &cfg).unwrap(), &cfg).unwrap();
        assert!(back.max_abs_diff(&img).unwrap() < 1e-8);
    }

    #[test]
    fn unpatchify_locality() {
        let mut rng = Rng::new(5);
        let cfg = PatchConfig::init(2, 1, 4, &mut rng).unwrap();
        let s = Shape::new(1, 4, 3, 3).unwrap();
        assert!(unpatchify(&FeatureMap::zeros(s), &cfg).unwrap().data().iter().all(|&v| v == 0.0));
        let mut t = FeatureMap::zeros(s);
        for c in 0..4 {
            t.set(0, c, 1, 2, 1.0);
        }
        let img = unpatchify(&t, &cfg).unwrap();
        for x in 0..6 {
            for y in 0..6 {
                let inside = x / 2 == 1 && y / 2 == 2;
                assert!(inside || img.get(0, 0, x, y) == 0.0);
            }
        }
        assert!(img.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn divisibility_is_checked() {
        let mut rng = Rng::new(6);
        let cfg = PatchConfig::init(3, 1, 4, &mut rng).unwrap();
        assert!(matches!(patchify(&map(1, 1, 1, 8, 9), &cfg), Err(Error::Argument(_))));
    }

    fn zero_mlp(c: usize, g: EmbedParams, z: PdeParams) -> BlockParams {
        BlockParams {
            g,
            z,
            mlp_w1: RealMatrix::zeros(4 * c, c),
            mlp_b1: vec![0.0; 4 * c],
            mlp_w2: RealMatrix::zeros(c, 4 * c),
            mlp_b2: vec![0.0; c],
            activation: Activation::Relu,
        }
    }

    #[test]
    fn zero_residuals_give_identity() {
        let mut g = EmbedParams::identity(3);
        g.g0 = RealMatrix::zeros(3, 3);
        let p = zero_mlp(3, g, PdeParams::zeros(3, 1e-12));
        let h = map(7, 2, 3, 4, 4);
        assert_eq!(dit_block_forward(&h, &p).unwrap(), h);
    }

    #[test]
    fn shift_mixer_adds_shifted_copy() {
        let mut z = PdeParams::zeros(1, 1.0).with_mode(Mode::Raw).with_flags(TermFlags::ALL);
        z.bx = RealMatrix::diag(&[2.0]);
        let p = zero_mlp(1, EmbedParams::identity(1), z);
        let h = map(8, 1, 1, 8, 8);
        let expect = h.lincomb(1.0, &h.circular_shift(-2, 0), 1.0).unwrap();
        assert!(dit_block_forward(&h, &p).unwrap().max_abs_diff(&expect).unwrap() < 1e-9);
    }

    #[test]
    fn block_is_nonlinear_with_relu() {
        let mut rng = Rng::new(9);
        let mut p = BlockParams::init(4, 4, Activation::Relu, &mut rng);
        // relu with zero biases is positively homogeneous
        p.mlp_b1.iter_mut().for_each(|b| *b = rng.normal());
        let h = map(10, 1, 4, 6, 6);
        let f1 = dit_block_forward(&h, &p).unwrap().scaled(2.0);
        let f2 = dit_block_forward(&h.scaled(2.0), &p).unwrap();
        assert!(f1.max_abs_diff(&f2).unwrap() > 1e-6);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let p = BlockParams::init(4, 4, Activation::Gelu, &mut Rng::new(11));
        assert!(matches!(dit_block_forward(&map(1, 1, 3, 4, 4), &p), Err(Error::Argument(_))));
    }

    #[test]
    fn default_block_output_is_bounded() {
        let mut rng = Rng::new(12);
        let p = BlockParams::init(8, 4, Activation::Gelu, &mut rng);
        let h = map(13, 1, 8, 8, 8);
        let h = h.scaled(1.0 / h.norm_l2());
        let out = dit_block_forward(&h, &p).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1e6));
    }

    #[test]
    fn stack_depths() {
        let mut rng = Rng::new(14);
        let cfg = PatchConfig::init(2, 1, 6, &mut rng).unwrap();
        let img = map(15, 1, 1, 8, 8);
        let layout = unpatchify(&patchify(&img, &cfg).unwrap(), &cfg).unwrap();
        assert_eq!(stack_forward(&img, &cfg, &[]).unwrap(), layout);
        let b = BlockParams::init(6, 2, Activation::Gelu, &mut rng);
        let direct = unpatchify(&dit_block_forward(&patchify(&img, &cfg).unwrap(), &b).unwrap(), &cfg).unwrap();
        let stacked = stack_forward(&img, &cfg, std::slice::from_ref(&b)).unwrap();
        assert_eq!(stacked, direct);
        let deep = [b.clone(), b];
        assert_eq!(stack_forward(&img, &cfg, &deep).unwrap(), stack_forward(&img, &cfg, &deep).unwrap());
    }

    #[test]
    fn flow_matching_algebra() {
        let u = map(16, 1, 2, 4, 4);
        let z = map(17, 1, 2, 4, 4);
        assert_eq!(fm_interpolate(&u, &z, 1.0).unwrap(), u);
        assert_eq!(fm_interpolate(&u, &z, 0.0).unwrap(), z);
        let v = u.lincomb(1.0, &z, -1.0).unwrap();
        assert_eq!(fm_loss(&v, &u, &z).unwrap(), 0.0);
        for t in [0.0, 0.3, 0.5, 1.0] {
            let ut = fm_interpolate(&u, &z, t).unwrap();
            assert!(fm_denoise(&ut, &v, t).unwrap().max_abs_diff(&u).unwrap() < 1e-12);
        }
        let s = Shape::new(1, 1, 2, 2).unwrap();
        let c = FeatureMap::from_fn(s, |_, _, _, _| 1.5);
        assert!((fm_loss(&FeatureMap::zeros(s), &c, &FeatureMap::zeros(s)).unwrap() - 2.25).abs() < 1e-15);
    }
}
