//! Plain-text `key=value` configuration with dotted section prefixes.
//!
//! Blank lines and lines starting with `#` are ignored. Matrix values are a
//! single number (that multiple of the identity), `diag:a,b,…`, or a
//! row-major comma-separated list of `c²` numbers.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::block::{Activation, BlockParams, PatchConfig};
use crate::error::{Error, Result};
use crate::grad::{fit_problem, FitProblem, FitTarget};
use crate::linalg::RealMatrix;
use crate::operator::{EmbedParams, Mode, PdeParams, TermFlags};
use crate::rng::Rng;

const GRID_KEYS: &[&str] = &["seed", "grid.h", "grid.w"];
const PARAM_KEYS: &[&str] = &[
    "params.init",
    "embed.c_in",
    "embed.c_hid",
    "embed.r",
    "embed.g0",
    "embed.gx",
    "embed.gy",
    "pde.tau",
    "pde.mode",
    "pde.fx",
    "pde.fy",
    "pde.bx",
    "pde.by",
    "pde.rm",
    "pde.diffusion",
    "pde.convection",
    "pde.reaction",
];
pub const KERNELVIZ_KEYS: &[&str] = &["viz.pairs", "viz.embed", "viz.format", "viz.name"];
pub const STACK_KEYS: &[&str] =
    &["stack.depth", "stack.patch", "stack.image", "stack.c_img", "stack.batch", "stack.mlp_ratio", "stack.activation"];
pub const FIT_KEYS: &[&str] = &["fit.target", "fit.shift_x", "fit.shift_y", "fit.pairs", "fit.steps", "fit.lr"];

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed configuration. Every key must be known to the command reading it.
#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
}

impl Config {
    /// Parses `text`, accepting the shared grid/parameter keys plus `extra`.
    pub fn parse(text: &str, extra: &[&str]) -> Result<Config> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let (k, v) = s.split_once('=').ok_or_else(|| Error::config(line, format!("expected key=value, got `{s}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if !GRID_KEYS.contains(&k) && !PARAM_KEYS.contains(&k) && !extra.contains(&k) {
                return Err(Error::config(line, format!("unknown key `{k}`")));
            }
            if entries.insert(k.to_string(), Entry { value: v.to_string(), line }).is_some() {
                return Err(Error::config(line, format!("duplicate key `{k}`")));
            }
        }
        Ok(Config { entries })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    /// Line on which `key` was set, 0 when absent.
    pub fn line_of(&self, key: &str) -> usize {
        self.line(key)
    }

    fn line(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(e) => e.value.parse().map_err(|_| Error::config(e.line, format!("invalid value `{}` for `{key}`", e.value))),
        }
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("true" | "on" | "1") => Ok(true),
            Some("false" | "off" | "0") => Ok(false),
            Some(v) => Err(Error::config(self.line(key), format!("`{key}` must be true or false, got `{v}`"))),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed", 0)
    }

    fn matrix(&self, key: &str, rows: usize, cols: usize) -> Result<Option<RealMatrix>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        let line = self.line(key);
        let nums = |s: &str| -> Result<Vec<f64>> {
            s.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| Error::config(line, format!("invalid number `{x}` in `{key}`"))))
                .collect()
        };
        let m = if let Some(d) = v.strip_prefix("diag:") {
            let d = nums(d)?;
            if rows != cols || d.len() != rows {
                return Err(Error::config(line, format!("`{key}` needs {rows} diagonal entries, got {}", d.len())));
            }
            RealMatrix::diag(&d)
        } else {
            let vals = nums(v)?;
            if vals.len() == 1 && rows == cols {
                RealMatrix::identity(rows).scale(vals[0])
            } else if vals.len() == rows * cols {
                RealMatrix::from_vec(rows, cols, vals)?
            } else {
                return Err(Error::config(
                    line,
                    format!("`{key}` must be one number or {} numbers for a {rows}×{cols} matrix", rows * cols),
                ));
            }
        };
        if !m.is_finite() {
            return Err(Error::config(line, format!("`{key}` must be finite")));
        }
        Ok(Some(m))
    }

    /// `(height, width)` of the grid.
    pub fn grid(&self) -> Result<(usize, usize)> {
        let h: usize = self.get("grid.h", 64)?;
        let w: usize = self.get("grid.w", h)?;
        if h == 0 || w == 0 || h > 512 || w > 512 {
            return Err(Error::config(self.line("grid.h").max(self.line("grid.w")), "grid extents must be in 1..=512"));
        }
        Ok((h, w))
    }

    /// Embedding and evolution parameters. Unset matrices come from the
    /// seeded initializer when `params.init=random`, otherwise from the
    /// neutral configuration (`R = G0 = I`, everything else zero).
    pub fn operator_params(&self) -> Result<(EmbedParams, PdeParams)> {
        let c: usize = self.get("embed.c_hid", 1)?;
        let c_in: usize = self.get("embed.c_in", c)?;
        if c == 0 || c_in == 0 {
            return Err(Error::config(self.line("embed.c_hid").max(self.line("embed.c_in")), "widths must be positive"));
        }
        let random = match self.raw("params.init").unwrap_or("neutral") {
            "random" => true,
            "neutral" => false,
            other => {
                return Err(Error::config(self.line("params.init"), format!("params.init must be random or neutral, got `{other}`")))
            }
        };
        let mut rng = Rng::new(self.seed()?);
        let (mut g, mut z) = if random {
            (EmbedParams::init(c_in, c, &mut rng), PdeParams::init(c, &mut rng))
        } else {
            let r = if c == c_in { RealMatrix::identity(c) } else { RealMatrix::zeros(c, c_in) };
            let g = EmbedParams { r, ..EmbedParams::identity(c) };
            (g, PdeParams::zeros(c, 1.0).with_flags(TermFlags::ALL))
        };
        if let Some(m) = self.matrix("embed.r", c, c_in)? {
            g.r = m;
        }
        for (key, slot) in [("embed.g0", &mut g.g0), ("embed.gx", &mut g.gx), ("embed.gy", &mut g.gy)] {
            if let Some(m) = self.matrix(key, c, c)? {
                *slot = m;
            }
        }
        for (key, slot) in [("pde.fx", &mut z.fx), ("pde.fy", &mut z.fy), ("pde.bx", &mut z.bx), ("pde.by", &mut z.by), ("pde.rm", &mut z.rm)]
        {
            if let Some(m) = self.matrix(key, c, c)? {
                *slot = m;
            }
        }
        z.tau = self.get("pde.tau", z.tau)?;
        if !(z.tau > 0.0) || !z.tau.is_finite() {
            return Err(Error::config(self.line("pde.tau"), "pde.tau must be positive"));
        }
        if let Some(m) = self.raw("pde.mode") {
            z.mode = Mode::parse(m)
                .ok_or_else(|| Error::config(self.line("pde.mode"), format!("pde.mode must be stable or raw, got `{m}`")))?;
        }
        z.flags = TermFlags {
            diffusion: self.get_bool("pde.diffusion", true)?,
            convection: self.get_bool("pde.convection", true)?,
            reaction: self.get_bool("pde.reaction", true)?,
        };
        Ok((g, z))
    }

    /// Patch layout and blocks for `forward`. The block width is `embed.c_hid`.
    pub fn stack(&self) -> Result<StackSpec> {
        let width: usize = self.get("embed.c_hid", 64)?;
        let depth: usize = self.get("stack.depth", 1)?;
        let patch: usize = self.get("stack.patch", 2)?;
        let image: usize = self.get("stack.image", 32)?;
        let c_img: usize = self.get("stack.c_img", 3)?;
        let batch: usize = self.get("stack.batch", 1)?;
        let ratio: usize = self.get("stack.mlp_ratio", 4)?;
        let act = self.raw("stack.activation").unwrap_or("gelu");
        let activation = Activation::parse(act)
            .ok_or_else(|| Error::config(self.line("stack.activation"), format!("unknown activation `{act}`")))?;
        if let Some(c_in) = self.raw("embed.c_in") {
            if c_in != width.to_string() {
                return Err(Error::config(
                    self.line("embed.c_in"),
                    format!("block mixer maps width {width} to itself, embed.c_in={c_in} does not match"),
                ));
            }
        }
        if width == 0 || patch == 0 || image == 0 || c_img == 0 || batch == 0 || ratio == 0 {
            return Err(Error::config(0, "stack sizes must be positive"));
        }
        if image % patch != 0 {
            return Err(Error::config(self.line("stack.patch"), format!("image {image} is not divisible by patch {patch}")));
        }
        let seed = self.seed()?;
        let mut rng = Rng::new(seed);
        let patch_cfg = PatchConfig::init(patch, c_img, width, &mut rng)?;
        let mode = match self.raw("pde.mode") {
            Some(m) => Mode::parse(m)
                .ok_or_else(|| Error::config(self.line("pde.mode"), format!("pde.mode must be stable or raw, got `{m}`")))?,
            None => Mode::Stable,
        };
        let blocks = (0..depth)
            .map(|_| {
                let mut b = BlockParams::init(width, ratio, activation, &mut rng);
                b.z.mode = mode;
                b
            })
            .collect();
        Ok(StackSpec { seed, batch, image, patch: patch_cfg, blocks })
    }
}

/// Settings of the fitting demo.
#[derive(Debug, Clone)]
pub struct FitSpec {
    pub seed: u64,
    pub problem: FitProblem,
    pub lr: f64,
    pub steps: usize,
}

impl Config {
    pub fn fit(&self) -> Result<FitSpec> {
        let (h, w) = self.grid()?;
        let c: usize = self.get("embed.c_hid", 1)?;
        let seed = self.seed()?;
        let target = match self.raw("fit.target").unwrap_or("shift") {
            "shift" => FitTarget::Shift { dx: self.get("fit.shift_x", 2)?, dy: self.get("fit.shift_y", 0)? },
            "hidden" => FitTarget::Hidden,
            other => {
                return Err(Error::config(self.line("fit.target"), format!("fit.target must be shift or hidden, got `{other}`")))
            }
        };
        let n_pairs: usize = self.get("fit.pairs", 4)?;
        let steps: usize = self.get("fit.steps", 2000)?;
        let lr: f64 = self.get("fit.lr", 1.0)?;
        if c == 0 || n_pairs == 0 || steps == 0 || !(lr > 0.0) {
            return Err(Error::config(0, "fit needs positive width, pairs, steps and lr"));
        }
        let problem = fit_problem(target, h, w, c, n_pairs, seed)?;
        Ok(FitSpec { seed, problem, lr, steps })
    }
}

#[derive(Debug, Clone)]
pub struct StackSpec {
    pub seed: u64,
    pub batch: usize,
    pub image: usize,
    pub patch: PatchConfig,
    pub blocks: Vec<BlockParams>,
}
