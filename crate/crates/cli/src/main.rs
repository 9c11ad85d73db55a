use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use platehom::config::RunConfig;
use platehom::study::{self, Study, StudyOptions};

/// Homogenized plate coefficients, plate solves and asymptotic studies.
#[derive(Parser, Debug)]
#[command(name = "platehom", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to `output.dir` of the config
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for independent runs and assembly
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// RNG seed; overrides `seed` of the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory of the corrector cache
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Write legacy VTK field files next to the reports
    #[arg(long, global = true)]
    emit_vtk: bool,
    /// Record wall times in the reports (makes them non-reproducible)
    #[arg(long, global = true)]
    timings: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the cell problems and write the plate coefficients
    Cell,
    /// Solve the homogenized plate from the coefficients file
    Plate,
    /// Solve the fine 3D plates over the ε-ladder
    Fine,
    /// Run an asymptotic study
    Verify {
        #[arg(value_enum)]
        study: StudyArg,
    },
    /// Unfolding identities, Kirchhoff–Love audits and two-scale errors
    UnfoldDiag,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StudyArg {
    Shd,
    Linearize,
    Commute,
}

impl From<StudyArg> for Study {
    fn from(s: StudyArg) -> Self {
        match s {
            StudyArg::Shd => Study::Shd,
            StudyArg::Linearize => Study::Linearize,
            StudyArg::Commute => Study::Commute,
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let path = cli.config.context("--config PATH is required")?;
    let cfg = RunConfig::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    let opts = StudyOptions {
        out: cli.out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir)),
        workers: cli.workers,
        cache_dir: cli.cache,
        emit_vtk: cli.emit_vtk,
        timings: cli.timings,
    };
    let command = cli.command;
    let report = study::with_workers(opts.workers, || match command {
        Command::Cell => study::cmd_cell(&cfg, &opts, seed),
        Command::Plate => study::cmd_plate(&cfg, &opts, seed),
        Command::Fine => study::cmd_fine(&cfg, &opts, seed),
        Command::Verify { study: s } => study::cmd_verify(&cfg, &opts, seed, s.into()),
        Command::UnfoldDiag => study::cmd_unfold_diag(&cfg, &opts, seed),
    })??;
    let written = report.write(&opts.out, &cfg.short_hash())?;
    for p in &written {
        eprintln!("wrote {}", p.display());
    }
    for c in &report.criteria {
        println!("{}", c.line());
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
