//! `onoff`: simulate on/off click data, reconstruct photon statistics and
//! density matrices, and export plot-ready tables.
//!
//! Exit status: 0 success, 1 I/O failure, 2 reconstruction did not
//! converge, 3 invalid input or configuration, 4 ill-conditioned inversion.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use onoff_core::config::{DisplacementConfig, ExperimentConfig, GridSpec, Scenario, Spacing};
use onoff_core::io::ReportFile;
use onoff_core::workflow;
use onoff_core::Error;

/// Environment variable naming the default output directory.
const OUTPUT_DIR_ENV: &str = "ONOFF_OUTPUT_DIR";
const DEFAULT_OUTPUT_DIR: &str = "onoff-out";

#[derive(Parser, Debug)]
#[command(
    name = "onoff",
    version,
    about = "On/off photodetection simulation and state reconstruction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate click data for the configured state and efficiency grid.
    Simulate(SimulateArgs),
    /// Reconstruct a photon distribution (single mode or bipartite).
    Reconstruct(ReconstructArgs),
    /// Reconstruct a density matrix from a phase scan.
    FullRho(FullRhoArgs),
    /// Write plot-ready CSV tables from a saved report.
    Report(ReportArgs),
}

/// Options shared by every pipeline command; each overrides the config file.
#[derive(Args, Debug)]
struct Common {
    /// TOML experiment configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// single_mode, bipartite or full_rho.
    #[arg(long)]
    scenario: Option<Scenario>,
    /// Output directory (default: config, then $ONOFF_OUTPUT_DIR, then ./onoff-out).
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Click-data file (phase scans: file or directory).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EmArgs {
    /// Fock truncation N of the reconstruction.
    #[arg(long)]
    truncation: Option<usize>,
    /// Iteration budget per reconstruction.
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Stop once the mean absolute residual drops below this value.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Ground-truth state file for fidelity traces and difference maps.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    /// Trials per efficiency setting (and phase).
    #[arg(long)]
    runs: Option<u64>,
    /// Write noise-free frequencies instead of sampled counts.
    #[arg(long)]
    exact: bool,
    /// Largest efficiency of a linear grid (requires --count).
    #[arg(long, requires = "count")]
    eta_max: Option<f64>,
    /// Number of efficiency settings K.
    #[arg(long, requires = "eta_max")]
    count: Option<usize>,
    #[command(flatten)]
    displacement: DisplacementArgs,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    em: EmArgs,
}

#[derive(Args, Debug)]
struct DisplacementArgs {
    /// Displacement magnitude |alpha|.
    #[arg(long, requires = "phases")]
    magnitude: Option<f64>,
    /// Number of equally spaced phases.
    #[arg(long, requires = "magnitude")]
    phases: Option<usize>,
}

#[derive(Args, Debug)]
struct FullRhoArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    em: EmArgs,
    #[command(flatten)]
    displacement: DisplacementArgs,
    /// Fock truncation n0 of the reconstructed matrix.
    #[arg(long)]
    hilbert_truncation: Option<usize>,
    /// Highest reconstructed band s.
    #[arg(long)]
    max_sideband: Option<usize>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// report.json written by `reconstruct` or `full-rho`.
    #[arg(long)]
    report: PathBuf,
    /// Ground-truth state file (adds the difference map for density matrices).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Single-mode click data (adds measured versus model off frequencies).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.scenario {
        config.scenario = s;
    }
    if let Some(d) = &common.data {
        config.paths.data = Some(d.clone());
    }
    Ok(config)
}

fn output_dir(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    flag.or(config)
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

fn apply_em(config: &mut ExperimentConfig, em: &EmArgs) -> Result<(), Error> {
    if let Some(n) = em.truncation {
        config.em.truncation = n;
    }
    if let Some(m) = em.max_iterations {
        config.em.max_iterations = m;
    }
    if let Some(e) = em.epsilon {
        config.em.epsilon_threshold = e;
    }
    if let Some(r) = &em.reference {
        config.paths.reference = Some(r.clone());
        config.check_inputs_exist()?;
    }
    Ok(())
}

fn apply_displacement(config: &mut ExperimentConfig, d: &DisplacementArgs) {
    if let (Some(magnitude), Some(phases)) = (d.magnitude, d.phases) {
        config.displacement = Some(DisplacementConfig { magnitude, phases });
    }
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn summarize(report: &ReportFile) {
    match report {
        ReportFile::SingleMode(r) => {
            println!(
                "iterations {} ({:?}), epsilon {:.3e}",
                r.iterations_used, r.stop_reason, r.final_epsilon
            );
            if let Some(g) = r.final_fidelity() {
                println!("fidelity {g:.6}");
            }
        }
        ReportFile::Bipartite(r) => {
            println!(
                "iterations {} ({:?}), epsilon {:.3e}",
                r.iterations_used, r.stop_reason, r.final_epsilon
            );
            if let Some(g) = r.final_fidelity() {
                println!("fidelity {g:.6}");
            }
        }
        ReportFile::FullRho(r) => {
            println!(
                "trace before normalization {:.6}, clipped mass {:.3e}, condition numbers {:?}",
                r.trace_before_normalization, r.clipped_mass, r.condition_numbers
            );
        }
    }
}

enum Outcome {
    Done,
    NotConverged,
}

fn run(cli: Cli) -> Result<Outcome, Error> {
    match cli.command {
        Command::Simulate(args) => {
            let mut config = load_config(&args.common)?;
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            if let Some(runs) = args.runs {
                config.runs = runs;
            }
            if args.exact {
                config.exact = true;
            }
            if let (Some(eta_max), Some(count)) = (args.eta_max, args.count) {
                config.grid = Some(GridSpec::Generated {
                    eta_max,
                    count,
                    spacing: Spacing::Linear,
                });
            }
            apply_displacement(&mut config, &args.displacement);
            let out = output_dir(
                args.common.output_dir.as_deref(),
                config.paths.output_dir.as_deref(),
            );
            let written = workflow::simulate(&config, &out)?;
            print_files(&[written.data, written.truth, written.manifest]);
            Ok(Outcome::Done)
        }
        Command::Reconstruct(args) => {
            let mut config = load_config(&args.common)?;
            apply_em(&mut config, &args.em)?;
            reconstruct(&config, args.common.output_dir.as_deref())
        }
        Command::FullRho(args) => {
            let mut config = load_config(&args.common)?;
            config.scenario = Scenario::FullRho;
            apply_em(&mut config, &args.em)?;
            apply_displacement(&mut config, &args.displacement);
            if let Some(n0) = args.hilbert_truncation {
                config.full_rho.hilbert_truncation = n0;
            }
            if let Some(s) = args.max_sideband {
                config.full_rho.max_sideband = s;
            }
            reconstruct(&config, args.common.output_dir.as_deref())
        }
        Command::Report(args) => {
            let out = output_dir(args.output_dir.as_deref(), None);
            let files = workflow::report(
                &args.report,
                args.reference.as_deref(),
                args.data.as_deref(),
                &out,
            )?;
            print_files(&files);
            Ok(Outcome::Done)
        }
    }
}

fn reconstruct(config: &ExperimentConfig, flag: Option<&Path>) -> Result<Outcome, Error> {
    let out = output_dir(flag, config.paths.output_dir.as_deref());
    let result = workflow::reconstruct(config, &out)?;
    summarize(&result.report);
    print_files(&result.files);
    Ok(if result.converged {
        Outcome::Done
    } else {
        eprintln!("warning: reconstruction did not converge");
        Outcome::NotConverged
    })
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::IllConditioned { .. } => 4,
        Error::Domain(_)
        | Error::DegenerateModel { .. }
        | Error::Parse { .. }
        | Error::Validation { .. }
        | Error::Config(_)
        | Error::Json(_) => 3,
        Error::Io(_) => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
