use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hykoop::cli_io::{
    error_json, format_table, positivity_command, run_checks, run_oracle, simulate, trajectories_command, CheckRow,
    RunConfig,
};
use hykoop::operator_algebra::algebra_suite;
use hykoop::Error;

/// Hybrid classical-quantum wave dynamics: batch runs and invariant checks.
///
/// Exit codes: 0 success, 1 a check failed or an I/O error, 2 bad config or
/// arguments, 3 numerical abort, 4 grid above the size guard.  Errors are
/// written to stderr as one JSON object.
#[derive(Parser)]
#[command(name = "hykoop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// JSON run configuration
    #[arg(long, short)]
    config: PathBuf,
    /// Override the output directory from the config
    #[arg(long, short)]
    output: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::from_path(&self.config)?;
        if let Some(o) = &self.output {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the configured state; writes snapshots, diagnostics.csv, exports and manifest.json
    Simulate(ConfigArgs),
    /// Run invariant suites and print a PASS/FAIL table
    Check {
        #[command(flatten)]
        args: ConfigArgs,
        /// dynamics, oracle, algebra, positivity or all
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Compare the RK4 state at t_final with the dense matrix-exponential propagator
    Oracle(ConfigArgs),
    /// Advect seeds and a material loop; writes paths.csv and loop.csv
    Trajectories(ConfigArgs),
    /// Residual table for the operator identities on the preset matrix
    Algebra {
        #[arg(long, default_value_t = 1.0)]
        hbar: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sector-wise evolution and sign report for in-family Hamiltonians
    Positivity(ConfigArgs),
}

fn all_pass(rows: &[CheckRow]) -> bool {
    rows.iter().all(|r| r.pass != Some(false))
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Simulate(a) => {
            let cfg = a.load()?;
            let out = simulate(&cfg)?;
            let last = out.records.last().expect("at least the initial record");
            let first = &out.records[0];
            println!("wrote {} files to {}", out.files.len(), cfg.output_dir.display());
            println!("t = {}  norm drift = {:.3e}", last.t, (last.norm - first.norm).abs());
            Ok(true)
        }
        Command::Check { args, suite } => {
            let rows = run_checks(&args.load()?, &suite)?;
            print!("{}", format_table(&rows));
            Ok(all_pass(&rows))
        }
        Command::Oracle(a) => {
            let r = run_oracle(&a.load()?)?;
            println!("{}", r.line());
            Ok(r.pass)
        }
        Command::Trajectories(a) => {
            let cfg = a.load()?;
            let out = trajectories_command(&cfg)?;
            if let Some(p) = &out.paths {
                println!("{} paths over {} times", p.paths.len(), p.times.len());
            }
            if let Some(r) = &out.loop_rate {
                println!(
                    "loop rate: mismatch vs -∮V_x dx = {:.3e}, vs +∮V_x dx = {:.3e}{}",
                    r.relative_mismatch(),
                    r.source_mismatch(),
                    if r.degenerate { " (loop stretched)" } else { "" }
                );
            }
            Ok(true)
        }
        Command::Algebra { hbar, seed } => {
            if !(hbar > 0.0 && hbar.is_finite()) {
                return Err(Error::Config("hbar must be positive".into()));
            }
            let rows: Vec<CheckRow> = algebra_suite(hbar, seed)?
                .into_iter()
                .map(|r| CheckRow {
                    suite: "algebra".into(),
                    pass: Some(r.pass()),
                    name: r.name,
                    value: r.residual,
                    tolerance: r.tolerance,
                })
                .collect();
            print!("{}", format_table(&rows));
            Ok(all_pass(&rows))
        }
        Command::Positivity(a) => {
            let rep = positivity_command(&a.load()?)?;
            let m0 = rep.min_sector_density.first().copied().unwrap_or(0.0);
            let worst = rep.min_sector_density.iter().cloned().fold(f64::INFINITY, f64::min);
            println!("initial min D̃ = {m0:.3e} (non-negative: {})", rep.initial_nonnegative);
            println!("min D̃ over run = {worst:.3e}, min ρ_c over run = {:.3e}", rep.worst_rho_c());
            println!("{}", if rep.pass { "PASS" } else { "FAIL" });
            Ok(rep.pass)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let msg = e.render().to_string();
            eprintln!("{}", serde_json::json!({ "error": "usage", "message": msg.trim(), "exit_code": 2 }));
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
