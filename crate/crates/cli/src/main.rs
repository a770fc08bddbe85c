use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use richards_core::driver::case::parse_case;
use richards_core::driver::gardner::{validate_gardner, DEFAULT_FLUXES};
use richards_core::driver::simulation::{
    partition_check, run, scaling_csv, scaling_study, Problem, RunOptions, ScalingMode,
};
use richards_core::exchange::DEFAULT_TIMEOUT;
use richards_core::Error;

#[derive(Parser)]
#[command(name = "richards", version, about = "Variably saturated flow solver on structured grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a transient simulation.
    Run {
        case: PathBuf,
        /// Number of subdomains (one worker thread each).
        #[arg(long)]
        parts: Option<usize>,
        /// Worker threads; must match --parts when both are given.
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory (default: <case>.out next to the case file).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Seconds a worker waits on a collective before reporting a deadlock.
        #[arg(long, default_value_t = DEFAULT_TIMEOUT.as_secs())]
        timeout: u64,
    },
    /// Compare the solver with a closed-form solution.
    Validate {
        #[command(subcommand)]
        which: Validation,
    },
    /// Run a case under several partitionings and compare the results.
    PartitionCheck {
        case: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        parts: Vec<usize>,
    },
    /// Time a case for several part counts and print a speedup table.
    Scaling {
        case: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        parts: Vec<usize>,
        #[arg(long, value_enum, default_value_t = Mode::Strong)]
        mode: Mode,
        /// Also write the CSV to this file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Validation {
    /// Steady flow in a Gardner column above a water table.
    Gardner {
        #[arg(long, default_value_t = 100)]
        cells: usize,
        /// Outward top fluxes [m/s] (negative = infiltration).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        fluxes: Vec<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Strong,
    Weak,
}

/// Failure classes mapped to exit codes.
enum Failure {
    /// Bad input: exit 2.
    Input(anyhow::Error),
    /// The solver or a check failed: exit 1.
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

fn is_input_error(e: &Error) -> bool {
    matches!(e, Error::Parse(_) | Error::InvalidInput(_) | Error::InvalidSpec(_) | Error::Config(_) | Error::Validity(_) | Error::Io(_))
}

fn classify(e: Error) -> Failure {
    if is_input_error(&e) {
        Failure::Input(e.into())
    } else {
        Failure::Run(e.into())
    }
}

fn load(case: &Path) -> Result<Problem, Failure> {
    Problem::load(case).map_err(|e| Failure::Input(anyhow::Error::new(e).context(format!("loading {}", case.display()))))
}

fn resolve_parts(parts: Option<usize>, threads: Option<usize>) -> anyhow::Result<usize> {
    let p = match (parts, threads) {
        (Some(p), Some(t)) if p != t => bail!("--threads {t} differs from --parts {p}; each part runs on its own thread"),
        (Some(p), _) | (None, Some(p)) => p,
        (None, None) => 1,
    };
    if p == 0 {
        bail!("the part count must be at least 1");
    }
    Ok(p)
}

fn cmd_run(case: &Path, parts: usize, output: Option<PathBuf>, timeout: u64) -> Result<(), Failure> {
    let problem = load(case)?;
    let dir = output.unwrap_or_else(|| case.with_extension("out"));
    let opts = RunOptions { parts, timeout: Duration::from_secs(timeout), output_dir: Some(dir.clone()), keep_history: false };
    let s = run(&problem, &opts).map_err(classify)?;
    println!("parts {} (cuts {:?}), {} cells", s.parts, s.cuts, problem.n_cells());
    println!(
        "{} steps accepted, {} rejected, {} PCG iterations, t = {} s, wall {:.3} s",
        s.log.steps.len(),
        s.log.rejected_steps,
        s.log.total_pcg_iters(),
        s.t,
        s.wall.as_secs_f64()
    );
    println!("mass balance error {:.3e} of initial storage", s.ledger.relative_error());
    if let Some(q) = s.log.patch_fluxes.last() {
        for ((name, q), a) in problem.patch_names().iter().zip(q).zip(problem.patch_areas()) {
            println!("  patch {name}: {:e} m/s outward", q / a);
        }
    }
    println!("outputs in {}", dir.display());
    s.result.map_err(|e| Failure::Run(anyhow::Error::new(e).context("run failed; see run_log.csv")))
}

fn cmd_gardner(cells: usize, fluxes: Vec<f64>) -> Result<(), Failure> {
    let fluxes = if fluxes.is_empty() { DEFAULT_FLUXES.to_vec() } else { fluxes };
    println!("q_out_m_per_s,max_error_m,tolerance_m,status");
    let mut failed = false;
    for q in fluxes {
        let r = validate_gardner(cells, q).map_err(classify)?;
        println!("{:e},{:e},{:e},{}", r.q_out, r.max_error, r.tolerance, if r.passed() { "PASS" } else { "FAIL" });
        failed |= !r.passed();
    }
    if failed {
        return Err(Failure::Run(anyhow::anyhow!("error above tolerance")));
    }
    Ok(())
}

fn cmd_partition_check(case: &Path, parts: &[usize]) -> Result<(), Failure> {
    let problem = load(case)?;
    if parts.contains(&0) {
        return Err(Failure::Input(anyhow::anyhow!("part counts must be at least 1")));
    }
    let r = partition_check(&problem, parts, DEFAULT_TIMEOUT).map_err(classify)?;
    for s in &r.runs {
        println!(
            "parts {:>3} cuts {:?}: {} steps, {} PCG iterations, {}",
            s.parts,
            s.cuts,
            s.log.steps.len(),
            s.log.total_pcg_iters(),
            match &s.result {
                Ok(()) => "ok".to_string(),
                Err(e) => e.to_string(),
            }
        );
    }
    let limit = 10.0 * problem.config.picard.pcg_tol;
    println!("max head discrepancy {:e} m (limit {:e} m)", r.max_discrepancy, limit);
    println!("step sequences identical: {}", r.sequences_identical);
    if !r.all_succeeded() || !r.sequences_identical || !(r.max_discrepancy <= limit) {
        return Err(Failure::Run(anyhow::anyhow!("partitionings disagree")));
    }
    Ok(())
}

fn cmd_scaling(case: &Path, parts: &[usize], mode: Mode, output: Option<PathBuf>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(case).with_context(|| format!("reading {}", case.display()))?;
    let spec = parse_case(&text).map_err(|e| Failure::Input(e.into()))?;
    let mode = match mode {
        Mode::Strong => ScalingMode::Strong,
        Mode::Weak => ScalingMode::Weak,
    };
    let base = case.parent().unwrap_or(Path::new("."));
    let rows = scaling_study(&spec, base, parts, mode, DEFAULT_TIMEOUT).map_err(classify)?;
    let csv = scaling_csv(&rows);
    print!("{csv}");
    if let Some(path) = output {
        std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { case, parts, threads, output, timeout } => {
            resolve_parts(parts, threads).map_err(Failure::Input).and_then(|p| cmd_run(&case, p, output, timeout))
        }
        Command::Validate { which: Validation::Gardner { cells, fluxes } } => cmd_gardner(cells, fluxes),
        Command::PartitionCheck { case, parts } => cmd_partition_check(&case, &parts),
        Command::Scaling { case, parts, mode, output } => cmd_scaling(&case, &parts, mode, output),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
