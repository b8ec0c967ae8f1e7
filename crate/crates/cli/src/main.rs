use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scacopf::benders::{run, RunStatus};
use scacopf::config::{PenaltyWeights, SolverConfig};
use scacopf::contingency::render_trace;
use scacopf::grid::parse_case;
use scacopf::report::{render_tables, Format, ScopfReport};

/// Security-constrained AC optimal power flow.
#[derive(Parser, Debug)]
#[command(name = "scacopf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a case and write the report.
    Solve(SolveArgs),
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Case file (JSON).
    #[arg(long, env = "SCACOPF_CASE")]
    case: PathBuf,
    /// Fraction of ranked contingencies to keep, in (0, 1].
    #[arg(long, env = "SCACOPF_FILTER", default_value_t = 1.0)]
    filter: f64,
    #[arg(long, env = "SCACOPF_WORKERS", default_value_t = 1)]
    workers: usize,
    /// Stop once the total mismatch cost is at most this.
    #[arg(long, env = "SCACOPF_TOL", default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, env = "SCACOPF_MAX_ITERS", default_value_t = 100)]
    max_iters: usize,
    /// Slack penalties wP,wQ,wS.
    #[arg(long, env = "SCACOPF_PENALTY", default_value = "1000,1000,1000", value_parser = parse_penalty)]
    penalty: PenaltyWeights,
    /// Weight of the contingency term in the objective.
    #[arg(long, env = "SCACOPF_DELTA", default_value_t = 1.0)]
    delta: f64,
    /// json, csv or text.
    #[arg(long, env = "SCACOPF_FORMAT", default_value = "json")]
    format: String,
    /// Write the report here instead of stdout.
    #[arg(long, env = "SCACOPF_OUT")]
    out: Option<PathBuf>,
    /// Directory for per-contingency AGC traces.
    #[arg(long, env = "SCACOPF_TRACE")]
    trace: Option<PathBuf>,
}

fn parse_penalty(s: &str) -> Result<PenaltyWeights, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [p, q, s] => Ok(PenaltyWeights { p, q, s }),
        _ => Err(format!("expected three comma-separated weights, got {}", parts.len())),
    }
}

fn solve(args: SolveArgs) -> Result<RunStatus, String> {
    let format: Format = args.format.parse().map_err(|e| format!("{e}"))?;
    let bytes = fs::read(&args.case).map_err(|e| format!("{}: {e}", args.case.display()))?;
    let grid = parse_case(&bytes).map_err(|e| format!("{}: {e}", args.case.display()))?;
    let config = SolverConfig {
        filter_level: args.filter,
        tol_mismatch: args.tol,
        max_iterations: args.max_iters,
        workers: args.workers,
        penalty: args.penalty,
        delta: args.delta,
        ..SolverConfig::default()
    };
    config.validate().map_err(|e| e.to_string())?;
    let outcome = run(&grid, &config).map_err(|e| e.to_string())?;
    let report = ScopfReport::from_outcome(&grid, &outcome).map_err(|e| e.to_string())?;
    let text = render_tables(&report, format).map_err(|e| e.to_string())?;
    match &args.out {
        Some(path) => fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))?,
        None => print!("{text}"),
    }
    if let Some(dir) = &args.trace {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        for (c, r) in outcome.selected.iter().zip(&outcome.results) {
            let path = dir.join(format!("contingency-{}.txt", c.id));
            fs::write(&path, render_trace(c, &r.trace))
                .map_err(|e| format!("{}: {e}", path.display()))?;
        }
    }
    if outcome.status == RunStatus::Infeasible {
        eprintln!("the original problem is infeasible");
    }
    Ok(outcome.status)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let Command::Solve(args) = cli.command;
    match solve(args) {
        Ok(RunStatus::Optimal) => ExitCode::SUCCESS,
        Ok(RunStatus::IterationLimit) => ExitCode::from(2),
        Ok(RunStatus::Infeasible) => ExitCode::from(3),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
