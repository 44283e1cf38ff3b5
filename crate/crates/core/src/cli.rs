//! Command-line driver.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::adapt::{sequential_solve, uniform_solve, RunOutcome};
use crate::error::{Error, Result};
use crate::io::{
    compare_dirs, generate_field, load_config, read_report, write_atomic, write_field, write_outputs,
    write_resolved_config, FieldSpec,
};
use crate::solver::SparseLu;

#[derive(Debug, Parser)]
#[command(name = "stflow", version, about = "Space-time adaptive oil-water flow simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sequential local refinement run.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Output directory of a reference run whose report.json is used for
        /// the efficiency ratios.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Run on the mesh refined to the finest level everywhere.
    RunUniform {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare output directory A against reference B.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Comma-separated times (days).
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<f64>,
        /// Writes the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic rock field.
    GenField {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        nx: usize,
        #[arg(long)]
        ny: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        k_background: Option<f64>,
        #[arg(long)]
        k_ratio: Option<f64>,
        #[arg(long)]
        phi_background: Option<f64>,
        #[arg(long)]
        phi_ratio: Option<f64>,
        #[arg(long)]
        features: Option<usize>,
        #[arg(long)]
        width: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Gaussian,
    Channel,
}

/// Runs the command line `argv` (including the program name) and returns
/// the process exit status: 0 on success, 1 on failure, 2 on usage errors.
pub fn cli_run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { config, out, reference } => run(&config, out, reference.as_deref(), false),
        Command::RunUniform { config, out } => run(&config, out, None, true),
        Command::Compare { a, b, times, out } => {
            let csv = compare_dirs(&a, &b, &times)?.to_csv();
            match out {
                Some(path) => write_atomic(&path, &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::GenField {
            kind,
            nx,
            ny,
            seed,
            k_background,
            k_ratio,
            phi_background,
            phi_ratio,
            features,
            width,
            out,
        } => {
            let mut spec = match kind {
                KindArg::Gaussian => FieldSpec::gaussian(nx, ny, seed),
                KindArg::Channel => FieldSpec::channel(nx, ny, seed),
            };
            spec.k_background = k_background.unwrap_or(spec.k_background);
            spec.k_ratio = k_ratio.unwrap_or(spec.k_ratio);
            spec.phi_background = phi_background.unwrap_or(spec.phi_background);
            spec.phi_ratio = phi_ratio.unwrap_or(spec.phi_ratio);
            spec.features = features.unwrap_or(spec.features);
            spec.width = width.unwrap_or(spec.width);
            write_field(&generate_field(&spec)?, &out)
        }
    }
}

fn run(config: &Path, out: Option<PathBuf>, reference: Option<&Path>, uniform: bool) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    let problem = cfg.to_problem()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_resolved_config(&cfg, &dir)?;
    let linear = SparseLu::default();
    let mut outcome: RunOutcome = if uniform {
        uniform_solve(&problem, &linear)?
    } else {
        sequential_solve(&problem, &linear)?
    };
    if let Some(r) = reference {
        let reference = read_report(&r.join("report.json"))?;
        outcome.report.compare_with(&reference);
    }
    write_outputs(&problem, &outcome, &dir, &cfg.output, cfg.t_scale())?;
    let rep = &outcome.report;
    println!(
        "{} run: {} slabs, {} final leaves, wall {:.3} s (assembly {:.3} s, linear {:.3} s); outputs in {}",
        rep.mode,
        outcome.slabs.len(),
        rep.final_leaves,
        rep.wall_s,
        rep.total_assembly_s,
        rep.total_linear_solve_s,
        dir.display()
    );
    outcome.check()
}
