use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use l1mppi::course::Course;
use l1mppi::harness::{format_table, run_grid_with, Config, ExperimentSpec, RaceResult};
use l1mppi::plant::UncertaintyCase;

#[derive(Parser)]
#[command(
    name = "race",
    version,
    about = "Race the MPPI / baseline / L1 stack around a gate course"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Race one case with L1 on or off over a seed range.
    Run {
        /// Uncertainty case, 1..=5.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
        case: u8,
        #[arg(long, value_enum)]
        l1: Toggle,
        #[command(flatten)]
        common: Common,
    },
    /// Race every case with L1 on and off.
    Sweep {
        #[arg(long, required = true)]
        all: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Check a course file.
    Validate {
        #[arg(long)]
        course: PathBuf,
    },
    /// Print the configuration as JSON.
    Config {
        #[arg(long)]
        faithful: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct Common {
    /// Races per cell [default: 5, or 15 with --faithful].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    runs: Option<u64>,
    /// First seed; runs use seed, seed+1, ...
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Course JSON [default: the shipped circuit].
    #[arg(long)]
    course: Option<PathBuf>,
    /// Configuration JSON [default: built-in values].
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for CSV and JSON results.
    #[arg(long)]
    out: Option<PathBuf>,
    /// MPPI sample count, overriding the configuration.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    samples: Option<u64>,
    /// Full sample count and run count.
    #[arg(long)]
    faithful: bool,
    /// Skip the per-run telemetry files.
    #[arg(long)]
    no_telemetry: bool,
}

fn build_config(c: &Common) -> l1mppi::Result<Config> {
    let mut cfg = match &c.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if c.faithful {
        cfg.mppi.samples = Config::faithful().mppi.samples;
    }
    if let Some(m) = c.samples {
        cfg.mppi.samples = m as usize;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn specs(cells: &[(UncertaintyCase, bool)], c: &Common) -> Vec<ExperimentSpec> {
    let runs = c.runs.unwrap_or(if c.faithful { 15 } else { 5 }) as usize;
    cells
        .iter()
        .map(|&(case, l1)| ExperimentSpec {
            course: c.course.clone(),
            out: c.out.clone(),
            telemetry: c.out.is_some() && !c.no_telemetry,
            ..ExperimentSpec::new(case, l1, runs, c.seed)
        })
        .collect()
}

fn progress(r: &RaceResult) {
    eprintln!(
        "case {} L1 {:<3} seed {:<4} {:<20} lap {:>8} rms {:.5} m",
        r.case,
        if r.l1 { "on" } else { "off" },
        r.seed,
        r.failure.map(|f| f.as_str()).unwrap_or("completed"),
        r.lap_time.map(|t| format!("{t:.3} s")).unwrap_or_else(|| "-".into()),
        r.rms_error
    );
}

fn campaign(cells: &[(UncertaintyCase, bool)], c: &Common) -> l1mppi::Result<()> {
    let cfg = build_config(c)?;
    if let Some(path) = &c.course {
        Course::load(path)?;
    }
    let out = run_grid_with(&specs(cells, c), &cfg, c.out.as_deref(), progress)?;
    print!("{}", format_table(&out.summary));
    if let Some(files) = &out.files {
        println!(
            "results: {}",
            files.runs_csv.parent().unwrap_or(&files.runs_csv).display()
        );
    }
    Ok(())
}

fn execute(cli: Cli) -> l1mppi::Result<()> {
    match cli.command {
        Command::Run { case, l1, common } => {
            let case = UncertaintyCase::from_id(case)?;
            campaign(&[(case, matches!(l1, Toggle::On))], &common)
        }
        Command::Sweep { common, .. } => {
            let mut cells = Vec::new();
            for id in 1..=5 {
                let case = UncertaintyCase::from_id(id)?;
                cells.push((case, false));
                cells.push((case, true));
            }
            campaign(&cells, &common)
        }
        Command::Validate { course } => {
            let c = Course::load(&course)?;
            println!(
                "{}: ok, {} waypoints, {} gates, centerline {:.2} m",
                course.display(),
                c.waypoints.len(),
                c.gates.len(),
                c.length()
            );
            Ok(())
        }
        Command::Config { faithful } => {
            let cfg = if faithful {
                Config::faithful()
            } else {
                Config::default()
            };
            println!("{}", cfg.to_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
