//! Command-line driver. Every subcommand writes CSV.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{BenchError, Result};
use crate::experiments::{
    optimal_memento_bits, run_bulkbench, run_expansion_experiment, run_fpr_experiment, run_fuzz,
    run_memento_size_sweep,
};
use crate::report::write_csv;
use crate::workload::{Dataset, QueryKind, WorkloadSpec};

#[derive(Debug, Parser)]
#[command(name = "memento-bench", version, about = "Range filter experiments with CSV output")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// False positive rate of empty range queries.
    Fpr(WorkloadArgs),
    /// FPR and insert throughput across six doublings of an expandable filter.
    Expand(WorkloadArgs),
    /// FPR and probes per query for several memento lengths at a fixed budget.
    Sweep {
        #[command(flatten)]
        workload: WorkloadArgs,
        /// Memento lengths to try; defaults to 1 through the optimum plus two.
        #[arg(long, value_delimiter = ',')]
        memento_bits: Vec<u32>,
    },
    /// Bulk-load time and insert, point and range query throughput.
    Bulkbench(WorkloadArgs),
    /// Random operation sequences checked against an exact set.
    Fuzz {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        rounds: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DatasetArg {
    Uniform,
    Normal,
    File,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum QueryArg {
    Uncorrelated,
    Correlated,
    Real,
}

#[derive(Debug, Args)]
struct WorkloadArgs {
    #[arg(long, value_enum, default_value = "uniform")]
    dataset: DatasetArg,
    /// Little-endian u64 key file for `--dataset file`.
    #[arg(long, required_if_eq("dataset", "file"))]
    dataset_path: Option<PathBuf>,
    #[arg(long)]
    n_keys: usize,
    #[arg(long, default_value_t = 20.0)]
    bits_per_key: f64,
    #[arg(long, default_value_t = 32)]
    range_len: u64,
    /// Query kind; `--correlation` alone implies correlated queries.
    #[arg(long, value_enum)]
    query_kind: Option<QueryArg>,
    /// Correlation degree D in [0, 1].
    #[arg(long)]
    correlation: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    queries: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Use the expandable filter.
    #[arg(long)]
    expandable: bool,
    /// Write CSV here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Insert threads for bulkbench.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

impl WorkloadArgs {
    fn spec(&self) -> Result<WorkloadSpec> {
        let dataset = match self.dataset {
            DatasetArg::Uniform => Dataset::Uniform,
            DatasetArg::Normal => Dataset::Normal,
            DatasetArg::File => Dataset::File(self.dataset_path.clone().expect("enforced by clap")),
        };
        let queries = match (self.query_kind, self.correlation) {
            (None | Some(QueryArg::Correlated), Some(d)) => QueryKind::Correlated(d),
            (Some(QueryArg::Correlated), None) => {
                return Err(BenchError::InvalidSpec("correlated queries need --correlation".into()))
            }
            (None | Some(QueryArg::Uncorrelated), None) => QueryKind::Uncorrelated,
            (Some(QueryArg::Real), None) => QueryKind::Real,
            (Some(_), Some(_)) => {
                return Err(BenchError::InvalidSpec("--correlation only applies to correlated queries".into()))
            }
        };
        let spec = WorkloadSpec {
            dataset,
            n_keys: self.n_keys,
            queries,
            range_len: self.range_len,
            n_queries: self.queries,
            seed: self.seed,
            bits_per_key: self.bits_per_key,
            expandable: self.expandable,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn sink<'a>(path: &Option<PathBuf>, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
    Ok(match path {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(stdout),
    })
}

fn execute(command: Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Fpr(w) => {
            let report = run_fpr_experiment(&w.spec()?)?;
            write_csv(sink(&w.output, stdout)?, &[report])
        }
        Command::Expand(w) => {
            let reports = run_expansion_experiment(&w.spec()?)?;
            write_csv(sink(&w.output, stdout)?, &reports)
        }
        Command::Sweep { workload, memento_bits } => {
            let spec = workload.spec()?;
            let rs = if memento_bits.is_empty() {
                (1..=optimal_memento_bits(spec.range_len) + 2).collect()
            } else {
                memento_bits
            };
            let reports = run_memento_size_sweep(&spec, &rs)?;
            write_csv(sink(&workload.output, stdout)?, &reports)
        }
        Command::Bulkbench(w) => {
            let report = run_bulkbench(&w.spec()?, w.threads.max(1))?;
            write_csv(sink(&w.output, stdout)?, &[report])
        }
        Command::Fuzz { seed, rounds, output } => {
            let report = run_fuzz(seed, rounds);
            let mut out = csv::Writer::from_writer(sink(&output, stdout)?);
            out.write_record(["rounds", "operations", "queries", "disagreements"])?;
            out.write_record([
                report.rounds.to_string(),
                report.operations.to_string(),
                report.queries.to_string(),
                report.disagreements.to_string(),
            ])?;
            out.flush()?;
            if report.disagreements > 0 {
                return Err(BenchError::Check(format!("{} disagreements with the exact set", report.disagreements)));
            }
            Ok(())
        }
    }
}

/// Runs the CLI and returns the process exit code: 0 on success, 2 for
/// usage errors, 1 for runtime failures.
pub fn run(args: impl IntoIterator<Item = impl Into<OsString> + Clone>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = write!(stderr, "{text}");
            }
            return code;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if matches!(e, BenchError::InvalidSpec(_)) {
                2
            } else {
                1
            }
        }
    }
}
