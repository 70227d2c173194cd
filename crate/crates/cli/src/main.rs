use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use dsmp_cli::{exit_code, output_dir, run, CliError, ExperimentConfig};

/// Run one experiment described by a TOML config.
#[derive(Debug, Parser)]
#[command(name = "dsmp", version, about)]
struct Args {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Print the summary and artifact paths.
    #[arg(long, short)]
    verbose: bool,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    ExitCode::from(main_inner(&args) as u8)
}

fn main_inner(args: &Args) -> i32 {
    if let Some(n) = args.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return 2;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return 2;
        }
    }
    let config = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let dir = output_dir(&config, args.out.as_deref());
    match run(&config, &dir) {
        Ok(outcome) => {
            if args.verbose {
                print!("{}", outcome.summary());
                for t in &outcome.tables {
                    println!("wrote {} ({} rows)", dir.join(&t.file).display(), t.len());
                }
                println!("wrote {}", dir.join("manifest.toml").display());
            } else {
                for v in &outcome.verdicts {
                    println!("{} {}", if v.passed { "PASS" } else { "FAIL" }, v.name);
                }
            }
            exit_code(&outcome)
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Task { .. } = e {
                eprintln!("summary and manifest written to {}", dir.display());
            }
            e.exit_code()
        }
    }
}
