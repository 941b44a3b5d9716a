use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pdessm::bench::{records_to_csv, run_bench, BenchConfig, Mixer, Threads};
use pdessm::block::stack_forward_traced;
use pdessm::config::{Config, FIT_KEYS, STACK_KEYS};
use pdessm::grad::{fit_operator, target_power};
use pdessm::rng::Rng;
use pdessm::verify::{self, Fault, Suite};
use pdessm::viz::{encode, render_kernels, FIG1_PANELS};
use pdessm::{FeatureMap, Shape};

const EXIT_VERIFY: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "pdessm", version, about = "Spectral PDE state-space operator toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render Green's kernels to PGM/PPM images.
    Kernelviz {
        /// Kernel config file.
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        /// Built-in panel set.
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run oracle equivalence checks.
    Verify {
        #[arg(default_value = "all", value_parser = parse_suite)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Deliberately break the operator to confirm the checks catch it.
        #[arg(long, hide = true, value_parser = parse_fault)]
        inject_fault: Option<Fault>,
    },
    /// Time attention against the spectral mixer.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = vec![32, 64, 128, 256])]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![2])]
        patches: Vec<usize>,
        #[arg(long, default_value_t = 192)]
        width: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// `1` or `auto`; PDESSM_THREADS takes precedence.
        #[arg(long, default_value = "1")]
        threads: String,
        #[arg(long, value_delimiter = ',', default_value = "attention,pde_ssm")]
        mixers: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a block stack on seeded random input and print statistics.
    Forward {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit operator parameters to a target map and write the loss trace.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Fig1,
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    Suite::parse(s).ok_or_else(|| format!("unknown suite `{s}` (all, spectral, operator, grad, ssm1d)"))
}

fn parse_fault(s: &str) -> Result<Fault, String> {
    Fault::parse(s).ok_or_else(|| format!("unknown fault `{s}`"))
}

struct Failure {
    code: u8,
    message: String,
}

impl From<pdessm::Error> for Failure {
    fn from(e: pdessm::Error) -> Self {
        let code = match e {
            pdessm::Error::Numeric(_) => EXIT_VERIFY,
            _ => EXIT_CONFIG,
        };
        Failure { code, message: e.to_string() }
    }
}

fn config_err(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_CONFIG, message: message.into() }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: EXIT_IO, message: format!("{}: {e}", path.display()) }
}

fn read_config(path: &Path) -> Result<String, Failure> {
    // An unreadable config is a configuration problem, not an output failure.
    fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn emit_text(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Kernelviz { config, preset, out } => cmd_kernelviz(config.as_deref(), preset, &out),
        Cmd::Verify { suite, seed, inject_fault } => cmd_verify(suite, seed, inject_fault),
        Cmd::Bench { sizes, patches, width, repeats, threads, mixers, seed, out } => {
            cmd_bench(sizes, patches, width, repeats, &threads, &mixers, seed, out.as_deref())
        }
        Cmd::Forward { config } => cmd_forward(&config),
        Cmd::Fit { config, steps, lr, out } => cmd_fit(&config, steps, lr, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}

fn cmd_kernelviz(config: Option<&Path>, preset: Option<Preset>, out: &Path) -> Result<(), Failure> {
    let panels: Vec<(String, String)> = match (config, preset) {
        (Some(path), _) => {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "kernel".into());
            vec![(stem, read_config(path)?)]
        }
        (None, Some(Preset::Fig1)) => FIG1_PANELS.iter().map(|(n, t)| (n.to_string(), t.to_string())).collect(),
        (None, None) => return Err(config_err("either --config or --preset is required")),
    };
    let mut rendered = Vec::new();
    for (name, text) in &panels {
        let viz = render_kernels(text, name).map_err(|e| config_err(format!("{name}: {e}")))?;
        rendered.push(viz);
    }
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    for viz in &rendered {
        for k in &viz.kernels {
            let path = out.join(format!("{}.{}", k.name, viz.format.extension()));
            write_file(&path, &encode(&k.image, viz.format, viz.seed))?;
            println!("seed={} wrote {} ({}x{}, out {} in {})", viz.seed, path.display(), k.image.width, k.image.height, k.out_ch, k.in_ch);
        }
    }
    Ok(())
}

fn cmd_verify(suite: Suite, seed: u64, fault: Option<Fault>) -> Result<(), Failure> {
    println!("# seed={seed}");
    let checks = verify::run(suite, fault, seed)?;
    for c in &checks {
        println!("{c}");
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    println!("{} checks, {} failed", checks.len(), failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure { code: EXIT_VERIFY, message: format!("failed: {}", failed.join(", ")) })
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    sizes: Vec<usize>,
    patches: Vec<usize>,
    width: usize,
    repeats: usize,
    threads: &str,
    mixers: &[String],
    seed: u64,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let threads_raw = std::env::var("PDESSM_THREADS").unwrap_or_else(|_| threads.to_string());
    let threads =
        Threads::parse(threads_raw.trim()).ok_or_else(|| config_err(format!("threads must be 1 or auto, got `{threads_raw}`")))?;
    let mixers = mixers
        .iter()
        .map(|m| Mixer::parse(m.trim()).ok_or_else(|| config_err(format!("unknown mixer `{m}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = BenchConfig { sizes, patches, width, repeats, threads, mixers, seed };
    let report = run_bench(&cfg).map_err(|e| config_err(e.to_string()))?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    emit_text(out, &records_to_csv(&report.records, seed))
}

fn stats(m: &FeatureMap) -> String {
    let d = m.data();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    format!("mean={mean:.6e} std={std:.6e} min={min:.6e} max={max:.6e}")
}

fn cmd_forward(path: &Path) -> Result<(), Failure> {
    let text = read_config(path)?;
    let spec = Config::parse(&text, STACK_KEYS)?.stack()?;
    let shape = Shape::new(spec.batch, spec.patch.c_img, spec.image, spec.image)?;
    let input = Rng::new(spec.seed.wrapping_add(1)).normal_map(shape);
    println!("# seed={}", spec.seed);
    println!(
        "depth={} width={} patch={} image={} batch={}",
        spec.blocks.len(),
        spec.patch.c_hid,
        spec.patch.k,
        spec.image,
        spec.batch
    );
    println!("input  {}", stats(&input));
    let (out, norms) = stack_forward_traced(&input, &spec.patch, &spec.blocks)?;
    for (i, n) in norms.iter().enumerate() {
        let label = if i == 0 { "patchify".to_string() } else { format!("block {i}") };
        println!("norm {label:<9} {n:.6e}");
    }
    println!("output {}", stats(&out));
    Ok(())
}

fn cmd_fit(path: &Path, steps: Option<usize>, lr: Option<f64>, out: Option<&Path>) -> Result<(), Failure> {
    let text = read_config(path)?;
    let spec = Config::parse(&text, FIT_KEYS)?.fit()?;
    let steps = steps.unwrap_or(spec.steps);
    let lr = lr.unwrap_or(spec.lr);
    if steps == 0 || !(lr > 0.0) {
        return Err(config_err("--steps must be positive and --lr greater than zero"));
    }
    let p = &spec.problem;
    let fit = fit_operator(&p.pairs, &p.g0, &p.z0, lr, steps)?;
    let power = target_power(&p.pairs);
    let mut csv = format!("# seed={}\nstep,loss\n", spec.seed);
    for (i, l) in fit.loss_trace.iter().enumerate() {
        csv.push_str(&format!("{i},{l:e}\n"));
    }
    emit_text(out, &csv)?;
    let (first, last) = (fit.loss_trace[0], *fit.loss_trace.last().unwrap_or(&fit.loss_trace[0]));
    eprintln!(
        "seed={} relative loss {:.3e} -> {:.3e} over {} steps",
        spec.seed,
        first / power,
        last / power,
        fit.loss_trace.len() - 1
    );
    Ok(())
}
