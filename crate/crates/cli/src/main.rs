use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use eqfmm::harness::{append_csv, run_experiment, DistributionKind, ExperimentConfig, NcritSetting};
use eqfmm::Strategy;

/// Runs one directional FMM experiment and prints its JSON record.
#[derive(Debug, Parser)]
#[command(name = "eqfmm", version)]
struct Args {
    /// JSON experiment configuration; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,

    /// uniform-cube, sphere, refined-cube or ellipse.
    #[arg(long)]
    distribution: Option<DistributionKind>,

    /// Number of particles.
    #[arg(long)]
    n: Option<usize>,

    /// Wavenumber times the side of the bounding cube.
    #[arg(long = "kappa-d")]
    kappa_d: Option<f64>,

    /// Interpolation nodes per axis.
    #[arg(long)]
    order: Option<usize>,

    /// Maximum particles per leaf, or `auto`.
    #[arg(long)]
    ncrit: Option<NcritSetting>,

    /// Admissibility parameter.
    #[arg(long)]
    eta: Option<f64>,

    /// t, t+s or t+s+r.
    #[arg(long)]
    strategy: Option<Strategy>,

    /// Number of sampled targets checked against direct summation (0 disables).
    #[arg(long = "check-error")]
    check_error: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,

    /// Particle file (`x y z re_q im_q` per line) used instead of a generator.
    #[arg(long)]
    input: Option<PathBuf>,

    /// Writes the JSON record to this file.
    #[arg(long)]
    output: Option<PathBuf>,

    /// Appends a CSV row to this file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

impl Args {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_json_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.distribution {
            cfg.distribution = v;
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.kappa_d {
            cfg.kappa_d = v;
        }
        if let Some(v) = self.order {
            cfg.order = v;
        }
        if let Some(v) = self.ncrit {
            cfg.ncrit = v;
        }
        if let Some(v) = self.eta {
            cfg.eta = v;
        }
        if let Some(v) = self.strategy {
            cfg.strategy = v;
        }
        if let Some(v) = self.check_error {
            cfg.check_error = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if self.input.is_some() {
            cfg.input = self.input.clone();
        }
        Ok(cfg)
    }
}

fn run(args: &Args) -> Result<()> {
    let cfg = args.experiment()?;
    let (record, _) = run_experiment(&cfg)?;
    let json = record.to_json()?;
    if let Some(path) = &args.output {
        std::fs::write(path, &json).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.csv {
        append_csv(path, &record)?;
    }
    println!("{json}");
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
