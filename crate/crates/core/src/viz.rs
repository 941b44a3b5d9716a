//! Kernel images: rendering from configs, PGM/PPM encoding and the shape
//! metrics used to check them.

use crate::config::{Config, KERNELVIZ_KEYS};
use crate::error::{Error, Result};
use crate::operator::{kernel_image, KernelImage, PdeParams};

/// The four default kernel panels: localized, anisotropic, shifted, combined.
pub const FIG1_PANELS: [(&str, &str); 4] = [
    ("fig1a_localized", include_str!("../../../configs/fig1a_localized.cfg")),
    ("fig1b_anisotropic", include_str!("../../../configs/fig1b_anisotropic.cfg")),
    ("fig1c_shifted", include_str!("../../../configs/fig1c_shifted.cfg")),
    ("fig1d_combined", include_str!("../../../configs/fig1d_combined.cfg")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImageFormat {
    /// Grayscale, min-max normalized.
    #[default]
    Pgm,
    /// Signed: red for negative, blue for positive values.
    Ppm,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Ppm => "ppm",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderedKernel {
    /// File stem, e.g. `fig1a_localized_0_0`.
    pub name: String,
    pub out_ch: usize,
    pub in_ch: usize,
    pub image: KernelImage,
}

#[derive(Debug, Clone)]
pub struct KernelViz {
    pub seed: u64,
    pub format: ImageFormat,
    pub pde: PdeParams,
    pub kernels: Vec<RenderedKernel>,
}

fn parse_pairs(cfg: &Config) -> Result<Vec<(usize, usize)>> {
    let raw = cfg.raw("viz.pairs").unwrap_or("0:0");
    raw.split(',')
        .map(|p| {
            let (o, i) = p.trim().split_once(':').ok_or_else(|| Error::config(0, format!("bad channel pair `{p}`")))?;
            match (o.trim().parse(), i.trim().parse()) {
                (Ok(o), Ok(i)) => Ok((o, i)),
                _ => Err(Error::config(0, format!("bad channel pair `{p}`"))),
            }
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::Config { message, .. } => {
                let line = cfg.line_of("viz.pairs");
                Error::Config { line, message }
            }
            other => other,
        })
}

/// Parses a kernelviz config and computes every requested kernel image.
pub fn render_kernels(text: &str, default_name: &str) -> Result<KernelViz> {
    let cfg = Config::parse(text, KERNELVIZ_KEYS)?;
    let (h, w) = cfg.grid()?;
    let (g, z) = cfg.operator_params()?;
    let with_embed = cfg.get_bool("viz.embed", false)?;
    let format = match cfg.raw("viz.format").unwrap_or("pgm") {
        "pgm" => ImageFormat::Pgm,
        "ppm" => ImageFormat::Ppm,
        other => return Err(Error::config(cfg.line_of("viz.format"), format!("viz.format must be pgm or ppm, got `{other}`"))),
    };
    let stem = cfg.raw("viz.name").unwrap_or(default_name).to_string();
    let mut kernels = Vec::new();
    for (o, i) in parse_pairs(&cfg)? {
        let image = kernel_image(&z, with_embed.then_some(&g), h, w, o, i)
            .map_err(|e| Error::config(cfg.line_of("viz.pairs"), e.to_string()))?;
        kernels.push(RenderedKernel { name: format!("{stem}_{o}_{i}"), out_ch: o, in_ch: i, image });
    }
    Ok(KernelViz { seed: cfg.seed()?, format, pde: z, kernels })
}

/// Binary PGM (`P5`, maxval 255), min-max normalized, with a `# seed=N`
/// header comment.
pub fn encode_pgm(img: &KernelImage, seed: u64) -> Vec<u8> {
    let (lo, hi) = img.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = hi - lo;
    let mut out = format!("P5\n# seed={seed}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 }));
    out
}

/// Binary PPM (`P6`); red encodes negative and blue positive values, both
/// scaled by the largest magnitude.
pub fn encode_ppm_signed(img: &KernelImage, seed: u64) -> Vec<u8> {
    let m = img.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut out = format!("P6\n# seed={seed}\n{} {}\n255\n", img.width, img.height).into_bytes();
    for &v in &img.data {
        let level = if m > 0.0 { (v.abs() / m * 255.0).round() as u8 } else { 0 };
        if v < 0.0 {
            out.extend([level, 0, 0]);
        } else {
            out.extend([0, 0, level]);
        }
    }
    out
}

pub fn encode(img: &KernelImage, format: ImageFormat, seed: u64) -> Vec<u8> {
    match format {
        ImageFormat::Pgm => encode_pgm(img, seed),
        ImageFormat::Ppm => encode_ppm_signed(img, seed),
    }
}

/// Parses a binary PGM into `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes.get(pos) == Some(&b'#') {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::arg("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::arg(format!("bad PGM header field `{s}`")));
    if fields[0] != "P5" || num(&fields[3])? != 255 {
        return Err(Error::arg("not an 8-bit binary PGM"));
    }
    let (w, h) = (num(&fields[1])?, num(&fields[2])?);
    let px = bytes.get(pos..pos + w * h).ok_or_else(|| Error::arg("truncated PGM data"))?;
    Ok((w, h, px.to_vec()))
}

/// Signed argmax position relative to the image center.
pub fn argmax_offset(img: &KernelImage) -> (isize, isize) {
    let (ax, ay) = img.argmax();
    let (cx, cy) = img.center();
    (ax as isize - cx as isize, ay as isize - cy as isize)
}

/// Fraction of `Σ|k|` within Euclidean distance `r` of the center.
pub fn mass_within_radius(img: &KernelImage, r: f64) -> f64 {
    let (cx, cy) = img.center();
    let mut inside = 0.0;
    let mut total = 0.0;
    for x in 0..img.height {
        for y in 0..img.width {
            let v = img.get(x, y).abs();
            total += v;
            let (dx, dy) = (x as f64 - cx as f64, y as f64 - cy as f64);
            if dx * dx + dy * dy <= r * r {
                inside += v;
            }
        }
    }
    if total > 0.0 {
        inside / total
    } else {
        0.0
    }
}

/// Second moments `(mxx, myy, mxy)` of `|k|` about the point `at`.
pub fn second_moments_about(img: &KernelImage, at: (f64, f64)) -> (f64, f64, f64) {
    let (mut sxx, mut syy, mut sxy, mut total) = (0.0, 0.0, 0.0, 0.0);
    for x in 0..img.height {
        for y in 0..img.width {
            let v = img.get(x, y).abs();
            let (dx, dy) = (x as f64 - at.0, y as f64 - at.1);
            sxx += v * dx * dx;
            syy += v * dy * dy;
            sxy += v * dx * dy;
            total += v;
        }
    }
    (sxx / total, syy / total, sxy / total)
}

/// Ratio of the larger to the smaller principal second moment about the
/// center.
pub fn anisotropy_ratio(img: &KernelImage) -> f64 {
    let (cx, cy) = img.center();
    let (a, b, c) = second_moments_about(img, (cx as f64, cy as f64));
    let mean = 0.5 * (a + b);
    let d = (0.25 * (a - b).powi(2) + c * c).sqrt();
    (mean + d) / (mean - d)
}

/// Mean squared distance of `|k|` from its argmax, in cells².
pub fn spread_about_peak(img: &KernelImage) -> f64 {
    let (px, py) = img.argmax();
    let (a, b, _) = second_moments_about(img, (px as f64, py as f64));
    a + b
}

/// Largest difference between the kernel and its copy rotated by 90° about
/// the center. Requires a square image.
pub fn rotation_asymmetry(img: &KernelImage) -> f64 {
    let n = img.height;
    let (c, _) = img.center();
    let mut worst = 0.0f64;
    for x in 0..n {
        for y in 0..n {
            // (x−c, y−c) ↦ (y−c, c−x)
            let v = img.get(y, (2 * c + n - x) % n);
            worst = worst.max((img.get(x, y) - v).abs());
        }
    }
    worst
}

/// Impulse displacement predicted for channel `ch` by the convection terms:
/// `−τ·(bx, by)`.
pub fn predicted_offset(z: &PdeParams, ch: usize) -> (f64, f64) {
    let eff = z.effective();
    (-z.tau * eff.bx.get(ch, ch), -z.tau * eff.by.get(ch, ch))
}
