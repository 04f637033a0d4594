//! `nnsse` command line: generate trajectories, run estimator rosters and
//! re-render saved reports.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 an estimator
//! failed numerically (the partial report is still written).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use nnsse::bench::{
    emit_report, render_summary, render_table, run_experiment, ExperimentConfig, ReportFormat,
    RunReport,
};
use nnsse::signals::{gen_sine, save_run, save_trajectory, SineParams};
use nnsse::Error;

#[derive(Parser)]
#[command(name = "nnsse", version, about = "Online trajectory prediction benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Table => ReportFormat::Table,
            Format::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a noisy sine trajectory CSV.
    Simulate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10.0)]
        amplitude: f64,
        #[arg(long, default_value_t = 1.0)]
        period: f64,
        #[arg(long, default_value_t = 200.0)]
        rate: f64,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        noise_var: f64,
        /// Output file; `-` writes to stdout.
        #[arg(long, short, default_value = "trajectory.csv")]
        out: PathBuf,
    },
    /// Run the estimator roster of a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Run estimators concurrently (affects timings only).
        #[arg(long)]
        parallel: bool,
    },
    /// Re-render saved JSON run reports.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
}

enum Failure {
    Input(Error),
    Estimator,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e)
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Estimator) => ExitCode::from(2),
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Simulate {
            seed,
            amplitude,
            period,
            rate,
            steps,
            noise_var,
            out,
        } => {
            let traj = gen_sine(&SineParams {
                amplitude,
                period_s: period,
                rate_hz: rate,
                steps,
                noise_var,
                seed,
            })?;
            if out.as_os_str() == "-" {
                nnsse::signals::write_csv(std::io::stdout().lock(), &traj, &[])?;
            } else {
                save_trajectory(&out, &traj)?;
            }
            Ok(())
        }
        Command::Run {
            config,
            seed,
            out_dir,
            format,
            parallel,
        } => run(&config, seed, &out_dir, format.into(), parallel),
        Command::Report { reports, format } => {
            let loaded: Vec<RunReport> = reports
                .iter()
                .map(|p| read_report(p))
                .collect::<Result<_, _>>()?;
            let mut stdout = std::io::stdout().lock();
            for r in &loaded {
                emit_report(r, format.into(), &mut stdout)?;
            }
            if loaded.len() > 1 && matches!(format, Format::Table) {
                println!("{}", render_summary(&loaded));
            }
            Ok(())
        }
    }
}

fn read_report(path: &Path) -> Result<RunReport, Error> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn run(
    config_path: &Path,
    seed: Option<u64>,
    out_dir: &Path,
    format: ReportFormat,
    parallel: bool,
) -> Result<(), Failure> {
    let mut config = ExperimentConfig::from_file(config_path)?;
    if let Some(seed) = seed {
        config.seeds = vec![seed];
    }
    fs::create_dir_all(out_dir).map_err(Error::from)?;

    let mut reports = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let report = run_experiment(&config, seed, parallel)?;
        let stem = out_dir.join(format!("run_seed{seed}"));
        save_run(&stem.with_extension("csv"), &report)?;
        fs::write(
            stem.with_extension("json"),
            serde_json::to_string(&report).map_err(Error::from)?,
        )
        .map_err(Error::from)?;
        match format {
            ReportFormat::Table => print!("{}", render_table(&report)),
            ReportFormat::Csv => emit_report(&report, format, std::io::stdout().lock())?,
        }
        for e in &report.estimators {
            if let Some(msg) = &e.failure {
                eprintln!("seed {seed}: {} failed: {msg}", e.name);
            }
        }
        reports.push(report);
    }
    if reports.len() > 1 && format == ReportFormat::Table {
        println!();
        print!("{}", render_summary(&reports));
    }
    if reports.iter().any(RunReport::any_failure) {
        return Err(Failure::Estimator);
    }
    Ok(())
}
