use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use neass_core::experiment::{bundled_names, run, ExperimentConfig, RunOptions, RunReport, Stage, CONFIG_SCHEMA};
use neass_core::lattice::{FluxConfig, PotentialConfig};
use neass_core::response::chern_number_momentum;
use neass_core::Error;

const EXIT_CODES: &str = "\
Exit codes:
  0  success, every enabled criterion passed
  1  at least one criterion failed
  2  configuration or usage error
  3  invalid model (torus not commensurate, bad flux, potential or translation)
  4  no usable spectral gap (no gap, Fermi level on the spectrum, gapless filling)
  5  numerical failure (eigensolver, contour, quadrature, gap too small)
  6  fit failure (degenerate fit, too few data points)
  7  input/output error
  8  other internal error";

#[derive(Parser)]
#[command(name = "neass", version, about = "Hall response of non-equilibrium almost-stationary states on magnetic tori", after_help = EXIT_CODES)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Configuration file; defaults to the bundled "hofstadter_q3_n2".
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use a bundled configuration by name.
    #[arg(long, global = true, conflicts_with = "config")]
    bundled: Option<String>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Random seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Multiplies every tolerance.
    #[arg(long, global = true, default_value_t = 1.0)]
    tol_scale: f64,
    /// Worker threads for parameter sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues, gap, Riesz projection and inverse-Liouvillian checks.
    Spectrum,
    /// NEASS generators and residual sweep.
    Neass,
    /// Hall conductivity, Hall current sweep and Kubo defect.
    Response,
    /// Decay fits of projections, currents and resolvents.
    Localize,
    /// Momentum-space Chern number of the lowest bands.
    Oracle {
        #[arg(long)]
        p: i64,
        #[arg(long)]
        q: i64,
        #[arg(long)]
        bands: usize,
    },
    /// Every stage with every criterion.
    Verify,
    /// The stages listed in the configuration.
    Run,
    /// Configuration utilities.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Parse and validate a configuration without computing anything.
    Validate,
    /// Print the configuration schema.
    Schema,
    /// Print a bundled configuration.
    Show,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::NonCommensurateTorus { .. }
        | Error::InvalidFlux { .. }
        | Error::InvalidPotential(_)
        | Error::InvalidTranslation(..)
        | Error::FlagViolation(_) => 3,
        Error::NoGap { .. } | Error::FermiOnSpectrum { .. } | Error::GaplessAtFilling(_) | Error::ZTooCloseToSpectrum { .. } => 4,
        Error::SolverFailure(_)
        | Error::EnclosureFailure(_)
        | Error::QuadratureDivergence(_)
        | Error::GapTooSmall(_)
        | Error::MissingGenerator(..)
        | Error::JetOrderExhausted(_) => 5,
        Error::DegenerateFit(_) | Error::InsufficientData(_) => 6,
        Error::Io(_) => 7,
    }
}

fn load(g: &Global) -> Result<ExperimentConfig, Error> {
    match (&g.config, &g.bundled) {
        (Some(p), _) => ExperimentConfig::load(p),
        (None, Some(name)) => ExperimentConfig::bundled(name),
        (None, None) => ExperimentConfig::bundled("hofstadter_q3_n2"),
    }
}

fn summarize(report: &RunReport) {
    for c in &report.checks {
        println!("{} {} = {:.6e} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
    }
    for t in &report.timings {
        println!("stage {} took {:.2} s", t.stage, t.seconds);
    }
    if let Some(p) = report.artifacts.last() {
        println!("report written to {p}");
    }
}

fn execute(cli: Cli) -> Result<u8, Error> {
    let g = &cli.global;
    let stages = match &cli.command {
        Command::Oracle { p, q, bands } => {
            let r = chern_number_momentum(FluxConfig::new(*p, *q)?, &PotentialConfig::default(), *bands)?;
            println!("{}", r.chern.round() as i64);
            return Ok(0);
        }
        Command::Config { action } => {
            match action {
                ConfigAction::Validate => {
                    let cfg = load(g)?;
                    println!("configuration {} is valid", cfg.name);
                }
                ConfigAction::Schema => print!("{CONFIG_SCHEMA}"),
                ConfigAction::Show => {
                    let name = g.bundled.as_deref().unwrap_or("hofstadter_q3_n2");
                    let text = neass_core::experiment::BUNDLED
                        .iter()
                        .find(|(n, _)| *n == name)
                        .map(|(_, t)| *t)
                        .ok_or_else(|| Error::Config(format!("bundled configs: {}", bundled_names().join(", "))))?;
                    print!("{text}");
                }
            }
            return Ok(0);
        }
        Command::Spectrum => Some(vec![Stage::Spectrum]),
        Command::Neass => Some(vec![Stage::Neass]),
        Command::Response => Some(vec![Stage::Response]),
        Command::Localize => Some(vec![Stage::Localize]),
        Command::Verify => Some(Stage::all()),
        Command::Run => None,
    };
    let cfg = load(g)?;
    let opts = RunOptions { out_dir: g.out_dir.clone(), seed: g.seed, tol_scale: g.tol_scale, threads: g.threads, stages };
    let report = run(&cfg, &opts)?;
    summarize(&report);
    Ok(if report.passed() { 0 } else { 1 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
