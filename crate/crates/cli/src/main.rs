mod config;
mod error;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Operation, Overrides, PipelineConfig};
use error::{CliError, CliResult};
use pipeline::Report;

/// Lüders-measurement qutrit simulator and process-tomography pipeline.
///
/// Settings come from flags, then the `--config` JSON file, then built-in
/// defaults (the four drive strengths a-d).
#[derive(Parser, Debug)]
#[command(name = "luders", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// JSON pipeline configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Run a single configured row.
    #[arg(long, global = true, value_name = "NAME")]
    row: Option<String>,
    /// Shots per tomography setting.
    #[arg(long, global = true, value_name = "N")]
    shots: Option<u64>,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Counts CSV (`i,j,n,N`) to use instead of simulating; needs one row.
    #[arg(long, value_name = "PATH")]
    dataset: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the ion dynamics and report g0 and P_scatt per row.
    Dynamics,
    /// Simulate tomography counts from the model channel.
    Simulate,
    /// Reconstruct the Choi matrix from counts.
    Reconstruct(DataArgs),
    /// Reconstruct and compare with the model channel.
    Fidelity(DataArgs),
    /// Likelihood-ratio test of trace preservation.
    Tptest(DataArgs),
    /// Parametric bootstrap intervals of the reconstruction.
    Bootstrap(DataArgs),
    /// Run the operations listed in the configuration.
    Pipeline,
}

impl Command {
    fn operations(&self, config: &PipelineConfig) -> Vec<Operation> {
        match self {
            Command::Dynamics => vec![Operation::Dynamics],
            Command::Simulate => vec![Operation::Simulate],
            Command::Reconstruct(_) => vec![Operation::Reconstruct],
            Command::Fidelity(_) => vec![Operation::Reconstruct, Operation::Compare],
            Command::Tptest(_) => vec![Operation::Tptest],
            Command::Bootstrap(_) => vec![Operation::Bootstrap],
            Command::Pipeline => config.operations.clone(),
        }
    }

    fn dataset(&self) -> Option<PathBuf> {
        match self {
            Command::Reconstruct(d) | Command::Fidelity(d) | Command::Tptest(d) | Command::Bootstrap(d) => {
                d.dataset.clone()
            }
            _ => None,
        }
    }
}

fn run(cli: Cli) -> CliResult<Report> {
    let overrides = Overrides {
        seed: cli.common.seed,
        shots: cli.common.shots,
        out: cli.common.out,
        row: cli.common.row,
        dataset: cli.command.dataset(),
    };
    let mut config = PipelineConfig::load(cli.common.config.as_deref(), &overrides)?;
    config.operations = cli.command.operations(&config);
    config.validate()?;
    let report = pipeline::run(&config, &config.operations)?;
    print_summary(&report);
    println!("wrote {}", config.output_dir.join("report.json").display());

    let failed: Vec<_> = report.rows.iter().filter(|r| r.error.is_some()).collect();
    if !failed.is_empty() {
        let code = failed.iter().map(|r| r.exit_code).max().unwrap_or(3);
        return Err(CliError::Rows { failed: failed.len(), total: report.rows.len(), code });
    }
    Ok(report)
}

fn print_summary(report: &Report) {
    println!("{:<6} {:>9} {:>10} {:>10} {:>9} {:>8}", "row", "Ω/2π MHz", "P_scatt", "P_model", "F", "σ_TP");
    let opt = |v: Option<f64>, digits: usize| v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"));
    for row in &report.rows {
        if let Some(err) = &row.error {
            println!("{:<6} {:>9.2} failed: {err}", row.name, row.rabi_mhz);
            continue;
        }
        let rec = row.reconstruction.as_ref();
        println!(
            "{:<6} {:>9.2} {:>10} {:>10} {:>9} {:>8}",
            row.name,
            row.rabi_mhz,
            opt(row.dynamics.as_ref().map(|d| d.p_scatt_adiabatic), 4),
            opt(row.p_scatt, 4),
            opt(rec.and_then(|r| r.fidelity_vs_model), 4),
            opt(row.tptest.as_ref().map(|t| t.significance_sigma), 2),
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_parse_after_subcommand() {
        let cli =
            Cli::try_parse_from(["luders", "reconstruct", "--row", "a", "--dataset", "x.csv", "--seed", "3"]).unwrap();
        assert_eq!(cli.common.seed, Some(3));
        assert_eq!(cli.command.dataset(), Some(PathBuf::from("x.csv")));
    }
}
