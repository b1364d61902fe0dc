//! Command-line front end. Exit codes: 0 success, 1 validation error, 2 runtime error.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use infersim::catalog::{select_model_naive, select_model_paragon, Catalog, ConstraintSet};
use infersim::cloud::{cost_per_million, RateCard};
use infersim::experiment::{compare, emit_plot_data, run_experiment};
use infersim::sim::{replay_verify, MetricsReport};
use infersim::workload::{gen_burst, gen_constant, peak_to_median, ArrivalTrace, Jitter};
use infersim::{Error, Result};

#[derive(Parser)]
#[command(name = "infersim", version, about = "Inference-serving procurement simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and print its comparison table.
    Run {
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare saved reports against a baseline policy.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        baseline: String,
        /// Also write plot-ready CSV here.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Trace utilities.
    Trace {
        #[command(subcommand)]
        command: TraceCommand,
    },
    /// Re-price a report's ledger and check it against the report's totals.
    Verify {
        report: PathBuf,
        /// Price with this card instead of the one embedded in the report.
        #[arg(long)]
        rate_card: Option<PathBuf>,
    },
    /// Pick a model for an accuracy floor and latency ceiling.
    Select {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        acc_min: f64,
        #[arg(long)]
        lat_max: u64,
        /// Most accurate model, ignoring the constraints.
        #[arg(long)]
        naive: bool,
        /// Rate card used to price candidates (default: the bundled card).
        #[arg(long)]
        rate_card: Option<PathBuf>,
        /// Request rate used to price candidates.
        #[arg(long, default_value_t = 100.0)]
        rate: f64,
    },
}

#[derive(Subcommand)]
enum TraceCommand {
    /// Generate a synthetic trace.
    Gen(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Constant,
    Burst,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    /// One arrival timestamp (ms) per line.
    Timestamps,
    /// "sec,count" per-second rates.
    Rates,
}

#[derive(Args)]
struct GenArgs {
    #[arg(value_enum)]
    shape: Shape,
    /// Rate (constant) or base rate (burst), per second.
    #[arg(long)]
    rate: f64,
    #[arg(long, default_value_t = 3600.0)]
    duration: f64,
    #[arg(long)]
    peak_rate: Option<f64>,
    #[arg(long)]
    peak_start: Option<f64>,
    #[arg(long)]
    peak_len: Option<f64>,
    /// Poisson arrivals instead of even spacing.
    #[arg(long)]
    poisson: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Timestamps)]
    format: Format,
    #[arg(short, long)]
    output: PathBuf,
}

fn gen_trace(a: &GenArgs) -> Result<ArrivalTrace> {
    let jitter = if a.poisson { Jitter::Poisson } else { Jitter::None };
    match a.shape {
        Shape::Constant => gen_constant(a.rate, a.duration, jitter, a.seed),
        Shape::Burst => {
            let need = |v: Option<f64>, flag: &str| v.ok_or_else(|| Error::Validation(format!("burst needs --{flag}")));
            gen_burst(
                a.rate,
                need(a.peak_rate, "peak-rate")?,
                need(a.peak_start, "peak-start")?,
                need(a.peak_len, "peak-len")?,
                a.duration,
                jitter,
                a.seed,
            )
        }
    }
}

/// Writes to stdout; a closed pipe surfaces as an `Io` error.
fn emit(text: &str) -> Result<()> {
    std::io::stdout().lock().write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, seed } => {
            let out = run_experiment(&config, seed)?;
            emit(&out.table.render())?;
            for f in &out.files {
                emit(&format!("wrote {}\n", f.display()))?;
            }
        }
        Command::Compare {
            reports,
            baseline,
            plot,
        } => {
            let reports = reports.iter().map(MetricsReport::load).collect::<Result<Vec<_>>>()?;
            let table = compare(&reports, &baseline)?;
            emit(&table.render())?;
            if let Some(path) = plot {
                std::fs::write(&path, emit_plot_data(&table)?).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
            }
        }
        Command::Trace {
            command: TraceCommand::Gen(args),
        } => {
            let trace = gen_trace(&args)?;
            match args.format {
                Format::Timestamps => trace.write_csv(&args.output)?,
                Format::Rates => trace.write_rate_csv(&args.output)?,
            }
            emit(&format!(
                "{} arrivals over {} s, peak-to-median {:.1}%\n",
                trace.len(),
                trace.duration_ms / 1000,
                peak_to_median(&trace, 1)
            ))?;
        }
        Command::Verify { report, rate_card } => {
            let report = MetricsReport::load(&report)?;
            let card = match rate_card {
                Some(path) => RateCard::load(path)?,
                None => report.rate_card.clone(),
            };
            let ok = replay_verify(&report, &card)?;
            emit(&format!(
                "{}: {} (total {}, vm {}, serverless {})\n",
                report.policy_name,
                if ok { "ledger matches" } else { "MISMATCH" },
                report.total_cost,
                report.vm_cost,
                report.serverless_cost
            ))?;
            return Ok(ok);
        }
        Command::Select {
            catalog,
            acc_min,
            lat_max,
            naive,
            rate_card,
            rate,
        } => {
            let catalog = Catalog::load(catalog)?;
            let card = match rate_card {
                Some(path) => RateCard::load(path)?,
                None => RateCard::bundled(),
            };
            let c = ConstraintSet::accuracy_latency(acc_min, lat_max);
            let choice = if naive {
                select_model_naive(&catalog, &c)
            } else {
                select_model_paragon(&catalog, &c, |m| {
                    cost_per_million(m, &card, rate, lat_max).expect("catalog models fit the reference VM")
                })?
            };
            emit(&format!("{}\n", serde_json::to_string_pretty(&choice)?))?;
            return Ok(choice.satisfied);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        // a failed check or an unsatisfiable selection
        Ok(false) => ExitCode::from(1),
        Err(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
