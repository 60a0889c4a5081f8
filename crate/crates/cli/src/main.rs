use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use patchpnp_core::experiment::{run_experiment, ExperimentConfig};
use patchpnp_core::io::{self, PgmDepth};
use patchpnp_core::metrics::{edge_band_rmse, psnr, rmse, seam_artifact_score};
use patchpnp_core::phantom::{gen_phantom, PhantomKind, PhantomSpec};
use patchpnp_core::{Error, PaddingMode, PatchGrid};

const THREADS_ENV: &str = "PATCHPNP_THREADS";

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "patchpnp",
    version,
    about = "Patch-based diffusion plug-and-play restoration experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every sweep point in a key=value experiment config.
    Run { config: PathBuf },
    /// Write a synthetic phantom (F32I, or PGM when the name ends in .pgm).
    Phantom {
        #[arg(long, default_value = "shepp-like-ellipses")]
        kind: String,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Overrides --size for the row count.
        #[arg(long)]
        height: Option<usize>,
        /// Overrides --size for the column count.
        #[arg(long)]
        width: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Depth::Sixteen)]
        depth: Depth,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Compare a restored image against a reference.
    Metrics {
        restored: PathBuf,
        reference: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        peak: f64,
        #[arg(long, default_value_t = 8)]
        band: usize,
        /// Also report the seam score for this patch lattice.
        #[arg(long)]
        patch: Option<usize>,
        #[arg(long, default_value_t = 0)]
        offset_y: usize,
        #[arg(long, default_value_t = 0)]
        offset_x: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Depth {
    #[value(name = "8")]
    Eight,
    #[value(name = "16")]
    Sixteen,
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = match raw.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => bail!(Error::Config(format!(
            "{THREADS_ENV} must be a positive integer, got `{raw}`"
        ))),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring worker pool")
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = run_experiment(&cfg)?;
            for r in out.rows() {
                println!(
                    "{} {} patch={} padding={} policy={} seed={} psnr={:.3} seam={:.5} edge_band_rmse={:.5} peak_bytes={}",
                    r.task, r.solver, r.patch, r.padding, r.policy, r.seed, r.psnr, r.seam_score, r.edge_band_rmse, r.peak_bytes
                );
            }
            println!("wrote {}", out.csv_path.display());
        }
        Command::Phantom {
            kind,
            size,
            height,
            width,
            seed,
            depth,
            output,
        } => {
            let kind: PhantomKind = kind.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
            let img = gen_phantom(&PhantomSpec {
                kind,
                height: height.unwrap_or(size),
                width: width.unwrap_or(size),
                seed,
            })
            .map_err(|e| Error::Config(e.to_string()))?;
            let is_pgm = output.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
            if is_pgm {
                let depth = match depth {
                    Depth::Eight => PgmDepth::Eight,
                    Depth::Sixteen => PgmDepth::Sixteen,
                };
                io::write_pgm(&output, &img, depth)?;
            } else {
                io::write_f32i(&output, &img)?;
            }
        }
        Command::Metrics {
            restored,
            reference,
            peak,
            band,
            patch,
            offset_y,
            offset_x,
        } => {
            let a = io::read_image(&restored)?;
            let b = io::read_image(&reference)?;
            let cfg_err = |e: Error| Error::Config(e.to_string());
            println!("psnr={}", psnr(&a, &b, peak).map_err(cfg_err)?);
            println!("rmse={}", rmse(&a, &b).map_err(cfg_err)?);
            println!("edge_band_rmse={}", edge_band_rmse(&a, &b, band).map_err(cfg_err)?);
            if let Some(p) = patch {
                let grid = PatchGrid::new(p, (offset_y, offset_x), 0, PaddingMode::Reflect).map_err(cfg_err)?;
                let score = seam_artifact_score(&a, &grid, &[(offset_y, offset_x)]).map_err(cfg_err)?;
                println!("seam_score={score}");
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Diverged { .. }) => EXIT_DIVERGED,
        _ => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("patchpnp: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
