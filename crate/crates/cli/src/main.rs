use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use metamap::metastability::markov_stationary;
use metamap::report;
use metamap::scenario::{load_scenario, parse_rational, Scenario};

/// Invariant densities and metastable structure of piecewise expanding maps.
#[derive(Parser)]
#[command(name = "metamap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its sweep table, densities and plots.
    Run {
        /// Scenario file or `builtin:<name>`.
        #[arg(long)]
        scenario: String,
        /// Comma-separated eps values, strictly decreasing (decimals or p/q).
        #[arg(long)]
        eps: Option<String>,
        /// Number of grid cells.
        #[arg(long)]
        grid: Option<usize>,
        /// Worker threads for the sweep rows.
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory (default: the scenario's, else `out/<name>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the hypothesis report of a scenario.
    Validate {
        #[arg(long)]
        scenario: String,
    },
    /// Stationary weight and second eigenvalue of the two-state chain.
    Markov {
        #[arg(long = "eps-lr")]
        eps_lr: f64,
        #[arg(long = "eps-rl")]
        eps_rl: f64,
    },
}

fn parse_eps_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            let r = parse_rational(t).map_err(anyhow::Error::msg).with_context(|| format!("--eps entry '{t}'"))?;
            Ok(*r.numer() as f64 / *r.denom() as f64)
        })
        .collect()
}

fn load(source: &str) -> Result<Scenario> {
    load_scenario(source).with_context(|| format!("loading scenario {source}"))
}

fn run(scenario: &str, eps: Option<String>, grid: Option<usize>, jobs: Option<usize>, out: Option<PathBuf>) -> Result<ExitCode> {
    let mut s = load(scenario)?;
    if let Some(e) = eps {
        s = s.with_eps(parse_eps_list(&e)?)?;
    }
    if let Some(n) = grid {
        s = s.with_grid(n)?;
    }
    if jobs == Some(0) {
        bail!("--jobs must be at least 1");
    }
    let out = out.or_else(|| s.output.clone()).unwrap_or_else(|| PathBuf::from("out").join(&s.name));
    let summary = report::run(&s, &out, jobs).with_context(|| format!("running scenario {}", s.name))?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(outcome) = &summary.outcome {
        println!("{}", report::SWEEP_HEADER);
        print!("{}", report::sweep_csv(&outcome.rows).lines().skip(1).map(|l| format!("{l}\n")).collect::<String>());
    }
    println!("wrote {} files to {}", summary.files.len(), out.display());
    if summary.failed_rows > 0 {
        eprintln!("{} sweep rows failed", summary.failed_rows);
    }
    Ok(ExitCode::from(summary.exit_code as u8))
}

fn validate(scenario: &str) -> Result<ExitCode> {
    let s = load(scenario)?;
    let Some(rep) = report::validate(&s)? else {
        println!("{}: the two-state chain has no map hypotheses to check", s.name);
        return Ok(ExitCode::SUCCESS);
    };
    println!("scenario: {}", s.name);
    println!("min expansion: {}", rep.min_expansion);
    println!("distortion: {}", rep.distortion);
    println!("invariant halves: {}", rep.invariant_halves);
    println!("I2 (depth {}): {}", rep.i2_depth, rep.passes_i2);
    println!("I4a: {}", rep.passes_i4a);
    println!("P2: {}", rep.passes_p2);
    for d in &rep.diagnostics {
        println!("  - {d}");
    }
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    Ok(if rep.all_pass() { ExitCode::SUCCESS } else { ExitCode::from(report::EXIT_DEGRADED as u8) })
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { scenario, eps, grid, jobs, out } => run(&scenario, eps, grid, jobs, out),
        Command::Validate { scenario } => validate(&scenario),
        Command::Markov { eps_lr, eps_rl } => {
            let (alpha, rho) = markov_stationary(eps_lr, eps_rl)?;
            println!("alpha = {alpha}");
            println!("rho = {rho}");
            Ok(ExitCode::SUCCESS)
        }
    }
}
