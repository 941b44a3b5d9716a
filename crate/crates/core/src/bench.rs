//! Wall-clock comparison of the PDE mixer against naive softmax attention.

use std::fmt;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::grid::{FeatureMap, Shape};
use crate::linalg::{gemm_real, RealMatrix};
use crate::operator::{EmbedParams, PdeParams, PreparedOperator, TermFlags};
use crate::rng::Rng;

pub const WARMUP: usize = 3;
pub const MIN_REPEATS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mixer {
    Attention,
    /// Channel-diagonal evolution with full channel mixing in `R` and the
    /// embedding symbol.
    PdeSsm,
    /// Fully coupled evolution: one dense matrix exponential per bin.
    PdeSsmCoupled,
}

impl Mixer {
    pub fn as_str(self) -> &'static str {
        match self {
            Mixer::Attention => "attention",
            Mixer::PdeSsm => "pde_ssm",
            Mixer::PdeSsmCoupled => "pde_ssm_coupled",
        }
    }

    pub fn parse(s: &str) -> Option<Mixer> {
        match s {
            "attention" => Some(Mixer::Attention),
            "pde_ssm" => Some(Mixer::PdeSsm),
            "pde_ssm_coupled" => Some(Mixer::PdeSsmCoupled),
            _ => None,
        }
    }
}

impl fmt::Display for Mixer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threads {
    Single,
    Auto,
}

impl Threads {
    pub fn parse(s: &str) -> Option<Threads> {
        match s {
            "1" => Some(Threads::Single),
            "auto" => Some(Threads::Auto),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub mixer: Mixer,
    pub image_size: usize,
    pub patch_size: usize,
    pub tokens: usize,
    pub width: usize,
    pub repeats: usize,
    pub median_seconds: f64,
    pub p10_seconds: f64,
    pub p90_seconds: f64,
}

pub const CSV_HEADER: &str = "mixer,image_size,patch_size,tokens,width,repeats,median_s,p10_s,p90_s";

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6e},{:.6e},{:.6e}",
            self.mixer,
            self.image_size,
            self.patch_size,
            self.tokens,
            self.width,
            self.repeats,
            self.median_seconds,
            self.p10_seconds,
            self.p90_seconds
        )
    }
}

/// CSV text with a leading `# seed=…` comment, rows ordered by mixer, size
/// and patch.
pub fn records_to_csv(records: &[BenchRecord], seed: u64) -> String {
    let mut rows: Vec<&BenchRecord> = records.iter().collect();
    rows.sort_by_key(|r| (r.mixer, r.image_size, r.patch_size));
    let mut out = format!("# seed={seed}\n{CSV_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub patches: Vec<usize>,
    pub width: usize,
    pub repeats: usize,
    pub threads: Threads,
    pub mixers: Vec<Mixer>,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![32, 64, 128, 256],
            patches: vec![2],
            width: 192,
            repeats: MIN_REPEATS,
            threads: Threads::Single,
            mixers: vec![Mixer::Attention, Mixer::PdeSsm],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    /// One entry per skipped configuration.
    pub warnings: Vec<String>,
}

/// Single-head softmax attention over the flattened token grid with an
/// explicit tokens × tokens score matrix.
pub fn attention_forward(tokens: &FeatureMap, wq: &RealMatrix, wk: &RealMatrix, wv: &RealMatrix) -> Result<FeatureMap> {
    let s = tokens.shape();
    let c = s.channels;
    for (name, w) in [("Wq", wq), ("Wk", wk), ("Wv", wv)] {
        if w.shape() != (c, c) {
            return Err(Error::arg(format!("{name} must be {c}×{c}, got {:?}", w.shape())));
        }
    }
    let t = s.plane_len();
    let scale = 1.0 / (c as f64).sqrt();
    let mut out = FeatureMap::zeros(s);
    let (mut q, mut k, mut v) = (vec![0.0; c * t], vec![0.0; c * t], vec![0.0; c * t]);
    let mut qt = vec![0.0; t * c];
    let mut vt = vec![0.0; t * c];
    let mut scores = vec![0.0; t * t];
    let mut ot = vec![0.0; t * c];
    for b in 0..s.batch {
        let x = &tokens.data()[b * c * t..(b + 1) * c * t];
        gemm_real(c, c, t, wq.data(), x, &mut q, false);
        gemm_real(c, c, t, wk.data(), x, &mut k, false);
        gemm_real(c, c, t, wv.data(), x, &mut v, false);
        transpose(&q, c, t, &mut qt);
        transpose(&v, c, t, &mut vt);
        // S = Qᵀ·K, row t holds the scores of query t.
        gemm_real(t, c, t, &qt, &k, &mut scores, false);
        for row in scores.chunks_mut(t) {
            let mx = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)) * scale;
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v * scale - mx).exp();
                sum += *v;
            }
            let inv = 1.0 / sum;
            row.iter_mut().for_each(|v| *v *= inv);
        }
        gemm_real(t, t, c, &scores, &vt, &mut ot, false);
        transpose(&ot, t, c, &mut out.data_mut()[b * c * t..(b + 1) * c * t]);
    }
    Ok(out)
}

fn transpose(src: &[f64], rows: usize, cols: usize, dst: &mut [f64]) {
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

/// Operator parameters used for timing. Evolution matrices are diagonal
/// unless `coupled` is set.
pub fn bench_operator(width: usize, coupled: bool, rng: &mut Rng) -> (EmbedParams, PdeParams) {
    let g = EmbedParams::init(width, width, rng);
    let mut z = PdeParams::init(width, rng).with_flags(TermFlags::ALL);
    if !coupled {
        for m in [&mut z.fx, &mut z.fy, &mut z.bx, &mut z.by, &mut z.rm] {
            let d: Vec<f64> = (0..width).map(|i| m.get(i, i)).collect();
            *m = RealMatrix::diag(&d);
        }
    }
    (g, z)
}

/// Median, 10th and 90th percentile (linear interpolation).
pub fn summarize(times: &[f64]) -> (f64, f64, f64) {
    let mut t = times.to_vec();
    t.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (t.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        t[lo] + (t[hi] - t[lo]) * (pos - lo as f64)
    };
    (q(0.5), q(0.1), q(0.9))
}

fn time_repeats(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    for _ in 0..WARMUP {
        f()?;
    }
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
    }
    Ok(times)
}

/// Times every mixer on identical token grids for each (size, patch) pair.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.repeats < MIN_REPEATS {
        return Err(Error::arg(format!("repeats must be at least {MIN_REPEATS}")));
    }
    if cfg.width == 0 || cfg.sizes.is_empty() || cfg.patches.is_empty() || cfg.mixers.is_empty() {
        return Err(Error::arg("width, sizes, patches and mixers must be non-empty"));
    }
    let threads = match cfg.threads {
        Threads::Single => 1,
        Threads::Auto => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::arg(format!("cannot build thread pool: {e}")))?;
    pool.install(|| run_configs(cfg))
}

fn run_configs(cfg: &BenchConfig) -> Result<BenchReport> {
    let mut report = BenchReport::default();
    let c = cfg.width;
    let mut rng = Rng::new(cfg.seed);
    let wq = rng.normal_matrix(c, c, 1.0 / (c as f64).sqrt());
    let wk = rng.normal_matrix(c, c, 1.0 / (c as f64).sqrt());
    let wv = rng.normal_matrix(c, c, 1.0 / (c as f64).sqrt());
    let diag = bench_operator(c, false, &mut rng);
    let coupled = bench_operator(c, true, &mut rng);
    for &size in &cfg.sizes {
        for &patch in &cfg.patches {
            if patch == 0 || size % patch != 0 {
                report.warnings.push(format!("skipped image {size} with patch {patch}: size is not divisible by patch"));
                continue;
            }
            let n = size / patch;
            let tokens = rng.normal_map(Shape::new(1, c, n, n)?);
            for &mixer in &cfg.mixers {
                let times = match mixer {
                    Mixer::Attention => time_repeats(cfg.repeats, || attention_forward(&tokens, &wq, &wk, &wv).map(drop))?,
                    Mixer::PdeSsm | Mixer::PdeSsmCoupled => {
                        let (g, z) = if mixer == Mixer::PdeSsm { &diag } else { &coupled };
                        let op = PreparedOperator::new(g, z, n, n)?;
                        time_repeats(cfg.repeats, || op.apply(&tokens).map(drop))?
                    }
                };
                let (median, p10, p90) = summarize(&times);
                report.records.push(BenchRecord {
                    mixer,
                    image_size: size,
                    patch_size: patch,
                    tokens: n * n,
                    width: c,
                    repeats: cfg.repeats,
                    median_seconds: median,
                    p10_seconds: p10,
                    p90_seconds: p90,
                });
            }
        }
    }
    Ok(report)
}

/// Least-squares slope of `log(median)` against `log(tokens)`.
pub fn fit_scaling_exponent(records: &[BenchRecord], mixer: Mixer) -> Result<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.mixer == mixer)
        .map(|r| ((r.tokens as f64).ln(), r.median_seconds.ln()))
        .collect();
    let mut distinct: Vec<f64> = pts.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::arg(format!("need records at 3 distinct token counts for {mixer}, found {}", distinct.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
