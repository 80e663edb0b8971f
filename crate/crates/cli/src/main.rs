use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use monovi::selftest::{run_selftest, SelftestOptions};
use monovi_cli::error::{CliError, EXIT_CHECK, EXIT_OK};
use monovi_cli::output::write_atomic;
use monovi_cli::run::{run, sha256_hex, RunOptions};

#[derive(Parser)]
#[command(name = "monovi", version, about = "Extremal solutions of quasilinear problems with discontinuous nonlinearities")]
struct Cli {
    /// Seed for randomized steps; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "MONOVI_THREADS")]
    threads: Option<usize>,

    /// Directory for output files; overrides the config.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the problem described by a TOML config.
    Run { config: PathBuf },
    /// Run the built-in invariant suites.
    Selftest {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn fail(e: &CliError) -> ExitCode {
    let d = e.diagnostic();
    eprintln!("{}", serde_json::to_string(&d).expect("serializable diagnostic"));
    ExitCode::from(d.exit_code as u8)
}

fn selftest(cli: &Cli, inject_fault: bool) -> Result<i32, CliError> {
    let report = run_selftest(SelftestOptions {
        seed: cli.seed.unwrap_or(0),
        inject_flux_sign_fault: inject_fault,
    })?;
    let mut bytes = serde_json::to_vec_pretty(&report).expect("serializable report");
    bytes.push(b'\n');
    if let Some(dir) = &cli.output_dir {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        write_atomic(&dir.join("selftest.json"), &bytes)?;
    }
    for s in &report.suites {
        println!(
            "{:<22} {:>5} cases  worst {:.3e}  bound {:.1e}  {}",
            s.name,
            s.cases,
            s.worst,
            s.bound,
            if s.passed { "ok" } else { "FAILED" }
        );
    }
    println!("sha256 {}", sha256_hex(&bytes));
    if report.passed {
        Ok(EXIT_OK)
    } else {
        let failing: Vec<_> = report.failing().collect();
        eprintln!("failing suites: {}", failing.join(", "));
        Ok(EXIT_CHECK)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(&CliError::Config(format!("--threads: {e}")));
        }
    }
    let result = match &cli.command {
        Command::Selftest { inject_fault } => selftest(&cli, *inject_fault),
        Command::Run { config } => {
            let options = RunOptions {
                seed: cli.seed,
                output_dir: cli.output_dir.clone(),
                threads: cli.threads,
            };
            run(config, &options).map(|outcome| {
                for f in &outcome.failures {
                    eprintln!("{f}");
                }
                if let Some(d) = &outcome.diagnostic {
                    eprintln!("{}", serde_json::to_string(d).expect("serializable diagnostic"));
                }
                println!(
                    "{} {}  summary sha256 {}",
                    if outcome.exit_code == EXIT_OK { "passed" } else { "failed" },
                    outcome.output_dir.display(),
                    outcome.summary_sha256
                );
                outcome.exit_code
            })
        }
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => fail(&e),
    }
}
