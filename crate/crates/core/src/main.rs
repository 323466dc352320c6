use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dflat::control::ControllerKind;
use dflat::sim::output::{write_all_series, write_noise_aggregates, write_path_aggregates, write_trials, RunMetadata};
use dflat::sim::verify::{verify_all, write_reports};
use dflat::sim::{run_trials, sweep_noise, track_path, ControllerFactory, ExperimentConfig, ReferenceSpec, TrialSpec};
use dflat::Error;

#[derive(Parser)]
#[command(name = "dflat", version, about = "Flatness-based predictive control experiments for multirotors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single closed-loop trial.
    Simulate(Common),
    /// Average output error versus measurement noise.
    SweepNoise(Common),
    /// Path error statistics versus speed on a polyline reference.
    TrackPath(Common),
    /// Round-trip checks of the flat maps and the QP solver.
    VerifyFlatness(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Run only this controller.
    #[arg(long, value_enum)]
    controller: Option<ControllerArg>,
    /// Trials per level, overriding the config.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ControllerArg {
    Df,
    Fmpc,
    Pd,
}

impl From<ControllerArg> for ControllerKind {
    fn from(c: ControllerArg) -> Self {
        match c {
            ControllerArg::Df => ControllerKind::Df,
            ControllerArg::Fmpc => ControllerKind::Fmpc,
            ControllerArg::Pd => ControllerKind::Pd,
        }
    }
}

enum Failure {
    Config(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Numerical(m) | Failure::Io(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::InvalidPath(_) | Error::InvalidStep(_) => {
                Failure::Config(e.to_string())
            }
            other => Failure::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| Failure::Config(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = common.trials {
        cfg.trials = trials;
    }
    if let Some(c) = common.controller {
        cfg.controllers.enabled = vec![c.into()];
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn prepare(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| Failure::Io(format!("cannot create {}: {e}", out.display())))
}

fn simulate(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    prepare(&common.out)?;
    let controller = cfg.controllers.enabled[0];
    let speed = match &cfg.reference {
        ReferenceSpec::Path { speeds, .. } => Some(speeds[0]),
        ReferenceSpec::Point { .. } => None,
    };
    let factory = ControllerFactory::new(&cfg, &[controller])?;
    let spec = TrialSpec { controller, sigma: cfg.noise.sigma, speed, trial: 0 };
    let results = run_trials(&factory, &[spec])?;
    write_all_series(&common.out, &results)?;
    write_trials(&common.out.join("trials.csv"), &results)?;
    let failed = results.iter().filter(|r| !r.status.is_success()).count();
    RunMetadata::new("simulate", &cfg, 1, failed).write(&common.out.join("metadata.json"))?;
    let r = &results[0];
    match r.average_output_error() {
        Some(e) => {
            println!("{controller}: {} steps, average output error {e:.6} m", r.series.len());
            Ok(())
        }
        None => Err(Failure::Numerical(format!("{controller} trial {}: {}", r.status.label(), r.status.detail()))),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into())
}

fn sweep(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    prepare(&common.out)?;
    let outcome = sweep_noise(&cfg, &cfg.controllers.enabled, &cfg.noise.sweep, cfg.trials)?;
    write_all_series(&common.out, &outcome.trials)?;
    write_trials(&common.out.join("trials.csv"), &outcome.trials)?;
    write_noise_aggregates(&common.out.join("aggregate.csv"), &outcome.aggregates)?;
    let failed = outcome.trials.iter().filter(|r| !r.status.is_success()).count();
    RunMetadata::new("sweep-noise", &cfg, cfg.trials, failed).write(&common.out.join("metadata.json"))?;
    println!("{:<6} {:>10} {:>8} {:>14}", "ctrl", "sigma", "failed", "mean_error_m");
    for a in &outcome.aggregates {
        println!("{:<6} {:>10.1e} {:>8} {:>14}", a.controller.name(), a.sigma, a.failed, fmt_opt(a.mean_error));
    }
    Ok(())
}

fn track(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    let ReferenceSpec::Path { speeds, .. } = &cfg.reference else {
        return Err(Failure::Config("track-path needs a [reference] with kind = \"path\"".into()));
    };
    prepare(&common.out)?;
    let outcome = track_path(&cfg, &cfg.controllers.enabled, speeds, cfg.trials)?;
    write_all_series(&common.out, &outcome.trials)?;
    write_trials(&common.out.join("trials.csv"), &outcome.trials)?;
    write_path_aggregates(&common.out.join("aggregate.csv"), &outcome.aggregates)?;
    let failed = outcome.trials.iter().filter(|r| !r.status.is_success()).count();
    RunMetadata::new("track-path", &cfg, cfg.trials, failed).write(&common.out.join("metadata.json"))?;
    println!("{:<6} {:>7} {:>8} {:>10} {:>10}", "ctrl", "speed", "failed", "median_m", "max_m");
    for a in &outcome.aggregates {
        println!(
            "{:<6} {:>7.2} {:>8} {:>10} {:>10}",
            a.controller.name(),
            a.speed,
            a.failed,
            fmt_opt(a.stats.map(|s| s.median)),
            fmt_opt(a.stats.map(|s| s.max))
        );
    }
    Ok(())
}

fn verify(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    prepare(&common.out)?;
    let reports = verify_all(&cfg.flatness, cfg.seed)?;
    write_reports(&common.out.join("verify.csv"), &reports)?;
    let failed = reports.iter().filter(|r| !r.passed).count();
    RunMetadata::new("verify-flatness", &cfg, 0, failed).write(&common.out.join("metadata.json"))?;
    for r in &reports {
        let mark = if r.passed { "PASS" } else { "FAIL" };
        println!(
            "{mark} {:<40} max error {:.3e} (tolerance {:.0e}, {} samples)",
            r.name, r.max_error, r.tolerance, r.samples
        );
    }
    if failed > 0 {
        return Err(Failure::Numerical(format!("{failed} check(s) exceeded tolerance")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::SweepNoise(c) => sweep(c),
        Command::TrackPath(c) => track(c),
        Command::VerifyFlatness(c) => verify(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
