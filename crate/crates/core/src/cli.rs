//! Command-line front end.
//!
//! Output files, for `--output-prefix P` and an order-N tensor:
//!
//! * `P_factors_1.bin` .. `P_factors_N.bin`: normalized factor matrices
//! * `P_lambda.txt`: component weights, one per line
//! * `P_convergence.csv`: one row per outer iteration (row 0 is the start)

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;

use crate::driver::{nncp_parallel, nncp_sequential, Category, RunConfig, RunReport};
use crate::error::{Error, Result};
use crate::grid::GridShape;
use crate::io::{read_dims, read_tensor, write_lambda, write_matrix};
use crate::nnls::Algorithm;
use crate::synthetic::{generate_synthetic, SyntheticSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "nncp", version, about = "Nonnegative CP decomposition of dense tensors")]
struct Args {
    /// Tensor file to factor.
    #[arg(long, value_name = "PATH", conflicts_with = "dims")]
    input: Option<PathBuf>,

    /// Dimensions of a synthetic exact low-rank tensor, e.g. 30,30,30.
    #[arg(long, value_name = "D1,D2,..", value_delimiter = ',')]
    dims: Option<Vec<usize>>,

    /// True rank of the synthetic tensor.
    #[arg(long, value_name = "R")]
    synthetic_rank: Option<usize>,

    /// Rank of the decomposition.
    #[arg(long)]
    rank: usize,

    #[arg(long, default_value = "bpp", value_parser = parse_algorithm)]
    algo: Algorithm,

    /// Maximum number of outer iterations.
    #[arg(long, default_value_t = 100)]
    iters: usize,

    /// Relative-error tolerance.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Processor grid; runs the parallel driver when given.
    #[arg(long, value_name = "P1,P2,..", value_delimiter = ',')]
    grid: Option<Vec<usize>>,

    /// Compute every MTTKRP from scratch instead of through the dimension tree.
    #[arg(long)]
    no_dimtree: bool,

    #[arg(long, default_value = "nncp")]
    output_prefix: String,
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

/// Parses `argv` (program name first), runs, writes outputs. Returns the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::new().filter_level(log::LevelFilter::Warn).try_init();
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&args) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {}", msg);
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {}", e);
            EXIT_RUNTIME
        }
    }
}

fn run(args: &Args) -> std::result::Result<(), CliError> {
    let order = match (&args.input, &args.dims) {
        (Some(p), None) => read_dims(p)?.len(),
        (None, Some(d)) => {
            if args.synthetic_rank.is_none() {
                return Err(CliError::Usage("--dims needs --synthetic-rank".into()));
            }
            d.len()
        }
        (None, None) => return Err(CliError::Usage("give either --input or --dims".into())),
        (Some(_), Some(_)) => return Err(CliError::Usage("--input and --dims are exclusive".into())),
    };
    if args.input.is_some() && args.synthetic_rank.is_some() {
        return Err(CliError::Usage("--synthetic-rank only applies with --dims".into()));
    }
    let grid = match &args.grid {
        Some(g) => {
            if g.len() != order {
                return Err(CliError::Usage(format!(
                    "grid has {} dimensions but the tensor has order {}",
                    g.len(),
                    order
                )));
            }
            Some(GridShape::new(g.clone()).map_err(|e| CliError::Usage(e.to_string()))?)
        }
        None => None,
    };

    let x = match (&args.input, &args.dims) {
        (Some(p), _) => read_tensor(p)?,
        (_, Some(d)) => {
            let spec = SyntheticSpec::new(d.clone(), args.synthetic_rank.unwrap_or(1), args.seed);
            generate_synthetic(&spec)?.0
        }
        _ => unreachable!("checked above"),
    };

    let mut cfg = RunConfig::new(args.rank, args.algo);
    cfg.max_iters = args.iters;
    cfg.tol = args.tol;
    cfg.seed = args.seed;
    cfg.dimtree = !args.no_dimtree;
    cfg.grid = grid;
    let report = if cfg.grid.is_some() { nncp_parallel(&x, &cfg)? } else { nncp_sequential(&x, &cfg)? };

    write_outputs(&args.output_prefix, &report)?;
    println!(
        "{}: {} iterations, relative error {:e}, {:.3} s{}",
        args.algo,
        report.iterations(),
        report.final_error(),
        report.wall.as_secs_f64(),
        if report.converged { ", converged" } else { "" }
    );
    Ok(())
}

pub fn csv_header() -> Vec<String> {
    let mut h = vec!["iter".to_string(), "relerr".to_string()];
    h.extend(Category::ALL.iter().map(|c| c.name().to_string()));
    h.push("other".into());
    h.push("words_communicated".into());
    h
}

/// Writes the factor files, weights and convergence table.
pub fn write_outputs(prefix: &str, report: &RunReport) -> Result<()> {
    for (n, h) in report.model.factors.iter().enumerate() {
        write_matrix(format!("{}_factors_{}.bin", prefix, n + 1), h)?;
    }
    write_lambda(format!("{}_lambda.txt", prefix), &report.model.lambda)?;

    let mut w = csv::Writer::from_path(format!("{}_convergence.csv", prefix)).map_err(csv_err)?;
    w.write_record(csv_header()).map_err(csv_err)?;
    for rec in &report.records {
        let mut row = vec![rec.iter.to_string(), rec.relerr.to_string()];
        for c in Category::ALL {
            row.push(rec.breakdown.time(c).as_secs_f64().to_string());
        }
        let other = rec.wall.saturating_sub(rec.breakdown.total_time());
        row.push(other.as_secs_f64().to_string());
        row.push(rec.words.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Io(std::io::Error::other(format!("{:?}", other))),
    }
}
