use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use hypkit::cli::{self, RunConfig};

#[derive(Parser)]
#[command(
    name = "hypkit",
    about = "Hyperbolicity diagnostics, graph transforms, local invariant manifolds, and orbit closing for germ sequences"
)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Sampling seed (overrides the config's `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fail instead of warn when a transformed manifold leaves its class.
    #[arg(long, global = true)]
    strict_class: bool,
    /// Tolerance overrides, KEY=VALUE (splitting_tol, newton_tol, solver_tol).
    #[arg(long = "tol", global = true, value_parser = parse_tol)]
    tol: Vec<(String, f64)>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract linear data and effective-hyperbolicity diagnostics.
    Analyze,
    /// Detect effective hyperbolic times and non-uniformity constants.
    Eht,
    /// Grow an admissible manifold through the window, dumping every step.
    Grow {
        /// Seed manifold JSON (defaults to the zero graph).
        #[arg(long)]
        manifold: Option<PathBuf>,
    },
    /// Solve the backward fixed-point problem for the unstable family.
    Unstable,
    /// Certify an orbit segment and close it to a hyperbolic periodic point.
    Close {
        /// Segment descriptor (JSON).
        #[arg(long)]
        segment: PathBuf,
    },
    /// Full diagnostic pipeline with one combined report.
    Report,
}

fn parse_tol(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected KEY=VALUE")?;
    Ok((k.to_string(), v.parse::<f64>().map_err(|e| e.to_string())?))
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let config_path = match &cli.config {
        Some(p) => p.clone(),
        None => bail!("--config is required"),
    };
    let mut cfg = RunConfig::load(&config_path)
        .with_context(|| format!("loading config {}", config_path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.strict_class {
        cfg.strict_class = true;
    }
    for (k, v) in &cli.tol {
        cfg.tolerances.insert(k.clone(), *v);
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;

    match cli.command {
        Command::Analyze => {
            let report = cli::cmd_analyze(&cfg, &out)?;
            println!(
                "analyze: chi_e = {:.6}, effectively_hyperbolic = {}, gamma = {}/{}",
                report.chi_e, report.effectively_hyperbolic, report.gamma_count, report.window
            );
        }
        Command::Eht => {
            let summary = cli::cmd_eht(&cfg, &out)?;
            println!(
                "eht: chi_hat = {:.6}, |Gamma| = {} (density {:.4}, bound {:.4})",
                summary.chi_hat, summary.gamma_count, summary.gamma_density, summary.density_lb
            );
        }
        Command::Grow { manifold } => {
            let n = cli::cmd_grow(&cfg, &out, manifold.as_deref())?;
            println!("grow: wrote {n} manifolds to {}", out.display());
        }
        Command::Unstable => {
            let report = cli::cmd_unstable(&cfg, &out)?;
            println!(
                "unstable: converged = {}, window = {}, residual = {:.3e}",
                report.converged, report.window, report.c0_residual
            );
        }
        Command::Close { segment } => {
            let result = cli::cmd_close(&cfg, &out, &segment)?;
            println!(
                "close: residual = {:.3e}, distance = {:.3e}, hyperbolic = {}",
                result.residual, result.distance, result.hyperbolic
            );
        }
        Command::Report => {
            let combined = cli::cmd_report(&cfg, &out)?;
            println!(
                "report: chi_e = {:.6}, effectively_hyperbolic = {}, best beta_bar = {:.3}",
                combined.effective.chi_e,
                combined.effective.effectively_hyperbolic,
                combined.beta_density.best.beta_bar
            );
        }
    }
    Ok(())
}
