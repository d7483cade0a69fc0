//! `fibersat`: exact conditional tests on contingency tables from the
//! command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fibersat_core::mcmc::HybridSchedule;

#[derive(Parser, Debug)]
#[command(
    name = "fibersat",
    version,
    about = "SAT-assisted exact conditional tests for contingency tables"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode a fiber as DIMACS CNF plus a layout sidecar.
    Encode {
        #[command(flatten)]
        model: ModelArgs,
        /// Output prefix; writes PREFIX.cnf and PREFIX.layout.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// List or count fiber elements, by backtracking or from a CNF file.
    Enumerate {
        #[command(flatten)]
        model: ModelArgs,
        /// Enumerate models of this CNF instead of the fiber given by model flags.
        #[arg(long)]
        cnf: Option<PathBuf>,
        /// Layout sidecar for --cnf (default: the CNF path with a .layout extension).
        #[arg(long)]
        layout: Option<PathBuf>,
        /// Stop after this many elements.
        #[arg(long)]
        cap: Option<usize>,
        /// Print every element.
        #[arg(long)]
        list: bool,
    },
    /// Approximate the conditional p-value of an observed table.
    Test {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
        /// alternating:N, parallel:N,K, moves or sat.
        #[arg(long, default_value = "alternating:10", value_parser = parse_schedule)]
        schedule: HybridSchedule,
        /// basic, cycle, or a path to a move file.
        #[arg(long, default_value = "basic")]
        moves: String,
        #[arg(long, default_value_t = 100_000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Enumerate the fiber for an exact p-value up to this many elements.
        #[arg(long, default_value_t = 100_000)]
        exact_cap: usize,
        /// Write the p-value sequence as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run an evaluation experiment described by a TOML config.
    Bench {
        #[arg(long, short)]
        config: PathBuf,
        /// Results directory.
        #[arg(long, short)]
        out: PathBuf,
        /// Override the master seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for independent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Measure a sampler's total variation distance to the uniform law.
    Diagnose {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
        /// Number of draws (default: 100 times the fiber size).
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModelKindArg {
    Independence,
    Quasi,
    N3f,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "independence")]
    model: ModelKindArg,
    /// Table shape, e.g. 3,3; for n3f the side length d.
    #[arg(long, value_delimiter = ',')]
    shape: Vec<usize>,
    /// Structural zeros as row:col, e.g. --zeros 0:1,2:2.
    #[arg(long, value_delimiter = ',')]
    zeros: Vec<String>,
    /// File of structural zeros, one index per line.
    #[arg(long)]
    zeros_file: Option<PathBuf>,
    /// Margin vector b.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    margins: Vec<i64>,
    /// Observed table file (shape line, then cells).
    #[arg(long)]
    observed: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SamplerKindArg {
    Uniform,
    Biased,
    External,
}

#[derive(Args, Debug, Clone)]
struct SamplerArgs {
    #[arg(long, value_enum, default_value = "uniform")]
    sampler: SamplerKindArg,
    /// Strength s of the biased sampler (weights exp(s * u_1)).
    #[arg(long, default_value_t = 2.0)]
    bias_strength: f64,
    /// External command with {cnf}, {count} and {seed} placeholders.
    #[arg(long)]
    sampler_cmd: Option<String>,
    /// Seconds before an external sampler is killed.
    #[arg(long, default_value_t = 600.0)]
    sampler_timeout: f64,
}

fn parse_schedule(s: &str) -> Result<HybridSchedule, String> {
    let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
    let num = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| format!("bad number {t:?} in schedule {s:?}"))
    };
    match kind {
        "alternating" => Ok(HybridSchedule::Alternating { n: num(arg)? }),
        "parallel" => {
            let (n, k) = arg
                .split_once(',')
                .ok_or_else(|| format!("expected parallel:N,K, got {s:?}"))?;
            Ok(HybridSchedule::ParallelStarts {
                n: num(n)?,
                k: num(k)?,
            })
        }
        "moves" if arg.is_empty() => Ok(HybridSchedule::MovesOnly),
        "sat" if arg.is_empty() => Ok(HybridSchedule::SatOnly),
        _ => Err(format!(
            "unknown schedule {s:?}; use alternating:N, parallel:N,K, moves or sat"
        )),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules_parse() {
        assert_eq!(
            parse_schedule("alternating:10"),
            Ok(HybridSchedule::Alternating { n: 10 })
        );
        assert_eq!(
            parse_schedule("parallel:25,4"),
            Ok(HybridSchedule::ParallelStarts { n: 25, k: 4 })
        );
        assert_eq!(parse_schedule("moves"), Ok(HybridSchedule::MovesOnly));
        assert_eq!(parse_schedule("sat"), Ok(HybridSchedule::SatOnly));
        assert!(parse_schedule("parallel:3").is_err());
        assert!(parse_schedule("walk").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
