//! Benchmark CLI: runs the full evaluation protocol, alpha sweeps, and
//! per-pixel histogram exports from a JSON config file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use svct_bench::bench::{
    build_prior, export_histograms, resolve_output_root, run_benchmark, run_id, sweep_alpha,
    ExperimentConfig,
};
use svct_bench::error::Error;
use svct_bench::gmm::make_phantoms;
use svct_bench::guidance::GuidanceMethod;

#[derive(Parser)]
#[command(
    name = "bench",
    about = "Posterior-sampling benchmark for diffusion guidance methods in sparse-view CT",
    version
)]
struct Cli {
    /// Bound on parallel chains (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Path to a JSON experiment config.
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full benchmark: every configured (method, p) cell.
    Run(ConfigArg),
    /// Sweep the guidance weight multiplier for one cell.
    SweepAlpha {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Method to sweep (mcg or dps).
        #[arg(long)]
        method: String,
        /// Projection count of the cell.
        #[arg(long)]
        p: usize,
        /// Comma-separated alpha multipliers.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        /// Chains per grid point (default 500).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Export per-pixel posterior histograms against the analytic marginal.
    Histograms {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        method: String,
        #[arg(long)]
        p: usize,
        /// Comma-separated pixel indices (row-major).
        #[arg(long, value_delimiter = ',', required = true)]
        pixels: Vec<usize>,
        /// Chains for the fixed conditioning sinogram.
        #[arg(long, default_value_t = 2000)]
        num_samples: usize,
    },
    /// Emit the procedural phantom template set for the configured prior.
    Phantoms(ConfigArg),
    /// Parse and validate a config without running anything.
    Validate(ConfigArg),
}

const EXIT_CONFIG: u8 = 2;
const EXIT_COMPUTE: u8 = 3;

fn parse_method(name: &str) -> Result<GuidanceMethod, Error> {
    match name {
        "none" => Ok(GuidanceMethod::None),
        "mcg" => Ok(GuidanceMethod::Mcg),
        "dps" => Ok(GuidanceMethod::Dps),
        "pig" => Ok(GuidanceMethod::Pig),
        "exact" => Ok(GuidanceMethod::Exact),
        other => Err(Error::Config(format!(
            "unknown method '{other}' (expected none, mcg, dps, pig, exact)"
        ))),
    }
}

fn classify(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        _ => EXIT_COMPUTE,
    }
}

fn run(cli: Cli) -> Result<u8, (u8, Error)> {
    let config_path = match &cli.command {
        Command::Run(c) | Command::Phantoms(c) | Command::Validate(c) => &c.config,
        Command::SweepAlpha { cfg, .. } | Command::Histograms { cfg, .. } => &cfg.config,
    };
    let cfg = ExperimentConfig::from_file(config_path).map_err(|e| (EXIT_CONFIG, e))?;
    let out_root = resolve_output_root(&cfg);

    match cli.command {
        Command::Validate(_) => {
            // Also resolve the prior so dimension mismatches surface here.
            build_prior(&cfg).map_err(|e| (EXIT_CONFIG, e))?;
            println!("config ok: run id {}", run_id(&cfg));
            Ok(0)
        }
        Command::Phantoms(_) => {
            let (_, grid) = build_prior(&cfg).map_err(|e| (EXIT_CONFIG, e))?;
            let templates = make_phantoms(
                grid,
                cfg.prior.template_count,
                cfg.prior.phantom_seed,
            )
            .map_err(|e| (classify(&e), e))?;
            let dir = out_root.join(run_id(&cfg)).join("phantoms");
            std::fs::create_dir_all(&dir).map_err(|e| (EXIT_COMPUTE, e.into()))?;
            for (i, t) in templates.templates.iter().enumerate() {
                let path = dir.join(format!("template_{i}.bin"));
                svct_bench::io::write_tensor(
                    &path,
                    &[grid.side, grid.side],
                    "row-major",
                    t.data.as_slice().expect("contiguous image"),
                )
                .map_err(|e| (EXIT_COMPUTE, e))?;
                println!("wrote {}", path.display());
            }
            Ok(0)
        }
        Command::Run(_) => {
            let out = run_benchmark(&cfg, &out_root).map_err(|e| (classify(&e), e))?;
            println!("run {} -> {}", out.manifest.run_id, out.run_dir.display());
            let mut failed = 0usize;
            for r in &out.reports {
                println!(
                    "  {:<6} p={:<4} status={} nmc={}",
                    r.method,
                    r.p,
                    r.status,
                    r.nmc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
                );
                if r.status.starts_with("failed") {
                    failed += 1;
                }
            }
            for obs in &out.manifest.observations {
                println!("note: {obs}");
            }
            if failed > 0 {
                eprintln!("{failed} cell(s) failed");
                Ok(EXIT_COMPUTE)
            } else {
                Ok(0)
            }
        }
        Command::SweepAlpha { method, p, grid, n, .. } => {
            let method = parse_method(&method).map_err(|e| (EXIT_CONFIG, e))?;
            let out = sweep_alpha(&cfg, &out_root, method, p, &grid, n)
                .map_err(|e| (classify(&e), e))?;
            println!("sweep -> {}", out.run_dir.display());
            let mut failed = 0usize;
            for row in &out.rows {
                println!(
                    "  alpha={:<8} status={} nmc={}",
                    row.alpha_scale,
                    row.status,
                    row.nmc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
                );
                if row.status.starts_with("failed") {
                    failed += 1;
                }
            }
            if failed > 0 {
                eprintln!("{failed} grid point(s) failed");
                Ok(EXIT_COMPUTE)
            } else {
                Ok(0)
            }
        }
        Command::Histograms { method, p, pixels, num_samples, .. } => {
            let method = parse_method(&method).map_err(|e| (EXIT_CONFIG, e))?;
            let out = export_histograms(&cfg, &out_root, method, p, &pixels, num_samples)
                .map_err(|e| (classify(&e), e))?;
            println!("histograms -> {}", out.run_dir.display());
            for r in &out.reports {
                println!(
                    "  pixel {:<5} W1={:.6} (marginal std {:.6})",
                    r.pixel_index, r.wasserstein1, r.marginal_std
                );
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        if workers == 0 {
            eprintln!("error: --workers must be >= 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
            eprintln!("error: cannot configure worker pool: {e}");
            return ExitCode::from(EXIT_COMPUTE);
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err((code, err)) => {
            eprintln!("error: {err}");
            ExitCode::from(code)
        }
    }
}
