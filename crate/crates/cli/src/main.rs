//! `altiloc` command-line simulator.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use altiloc::harness::{
    monte_carlo, run_scenario, synth_stream, table1, trace_records, write_epochs_to, write_summary_to, write_trace,
    write_trace_to, Format, MonteCarloReport, ScenarioConfig,
};
use altiloc::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "altiloc", version, about = "Single-site 3D emitter localization simulator")]
struct Cli {
    /// Scenario file (TOML); the built-in reference scenario when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Exit with status 2 when any run fails to converge.
    #[arg(long, global = true)]
    strict: bool,

    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,

    /// Worker threads for Monte Carlo trials.
    #[arg(long, global = true, default_value_t = default_jobs())]
    jobs: usize,

    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthesised measurement stream.
    Synth {
        /// Noise variance (m²) overriding the scenario.
        #[arg(long)]
        sigma2: Option<f64>,
    },
    /// Run the resolver once and write its per-iteration trace.
    Run {
        #[arg(long)]
        sigma2: Option<f64>,
    },
    /// Monte Carlo sweep of both methods; writes the RMSE summary.
    Montecarlo {
        /// Trials per noise level, overriding the scenario.
        #[arg(long)]
        runs: Option<usize>,
        /// Comma-separated noise variances (m²), overriding the scenario sweep.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<f64>>,
        /// Also write every trial's trace to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Print the iteration-by-hypothesis table of one run.
    Table1 {
        #[arg(long)]
        sigma2: Option<f64>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum OutputFormat {
    Csv,
    JsonLines,
}

impl From<OutputFormat> for Format {
    fn from(f: OutputFormat) -> Self {
        match f {
            OutputFormat::Csv => Format::Csv,
            OutputFormat::JsonLines => Format::JsonLines,
        }
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        })?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load(cli: &Cli, sigma2: Option<f64>) -> Result<ScenarioConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(s) = sigma2 {
        cfg.noise.sigma2 = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Whether every requested run completed and converged.
struct Outcome {
    completed: bool,
    converged: bool,
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let format = Format::from(cli.format);
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Synth { sigma2 } => {
            let cfg = load(cli, *sigma2)?;
            let epochs = synth_stream(&cfg, &cfg.noise, cfg.seed)?;
            write_epochs_to(&epochs, format, output(out)?)?;
            Ok(Outcome {
                completed: true,
                converged: true,
            })
        }
        Command::Run { sigma2 } => {
            let cfg = load(cli, *sigma2)?;
            let run = run_scenario(&cfg)?;
            write_trace_to(&trace_records(0, &run.result), format, output(out)?)?;
            let r = &run.result;
            eprintln!(
                "altitude {:.1} m (truth {:.1} m), 3D error {:.1} m, {} iterations, {}",
                r.altitude_ml,
                run.truth.h,
                run.error_3d(),
                r.iterations,
                if r.converged { "converged" } else { "not converged" }
            );
            Ok(Outcome {
                completed: true,
                converged: r.converged,
            })
        }
        Command::Montecarlo { runs, sweep, trace } => {
            let mut cfg = load(cli, None)?;
            if let Some(n) = runs {
                cfg.runs = *n;
            }
            if let Some(s) = sweep {
                cfg.sweep = Some(s.clone());
            }
            cfg.validate()?;
            let report = monte_carlo(&cfg, cli.jobs)?;
            write_summary_to(&report.rows, format, output(out)?)?;
            if let Some(path) = trace {
                let records: Vec<_> = report
                    .runs
                    .iter()
                    .flat_map(|r| trace_records(r.trial, &r.result))
                    .collect();
                write_trace(&records, format, path)?;
            }
            report_failures(&report);
            Ok(Outcome {
                completed: report.failures.is_empty(),
                converged: report.runs.iter().all(|r| r.result.converged),
            })
        }
        Command::Table1 { sigma2 } => {
            let cfg = load(cli, *sigma2)?;
            let run = run_scenario(&cfg)?;
            let mut w = output(out)?;
            w.write_all(table1(&run.result).as_bytes())
                .and_then(|_| w.flush())
                .map_err(|source| Error::Io {
                    path: out.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf),
                    source,
                })?;
            Ok(Outcome {
                completed: true,
                converged: run.result.converged,
            })
        }
    }
}

fn report_failures(report: &MonteCarloReport) {
    for f in &report.failures {
        eprintln!("trial {} at sigma2 = {} failed: {}", f.trial, f.sigma2, f.message);
    }
    let unconverged = report.runs.iter().filter(|r| !r.result.converged).count();
    if unconverged > 0 {
        eprintln!("{unconverged} trial(s) did not converge");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(o) if !o.completed => ExitCode::from(1),
        Ok(o) if cli.strict && !o.converged => {
            eprintln!("not every run converged (--strict)");
            ExitCode::from(2)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
