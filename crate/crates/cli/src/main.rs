use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use frogsim_cli::{run, ConfigFile, RunError};

#[derive(Parser)]
#[command(name = "frogsim", version, about = "Frog model with death: simulation and estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write results.csv, report.json and plot.gp.
    Run(Args),
    /// Print every configuration problem and exit.
    Validate(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Optional `key = value` config file followed by `key=value` overrides.
    #[arg(value_name = "CONFIG|KEY=VALUE")]
    items: Vec<String>,
}

fn load(args: &Args) -> Result<ConfigFile, RunError> {
    let mut cfg = ConfigFile::default();
    let mut overrides = args.items.as_slice();
    if let Some(first) = overrides.first().filter(|s| !s.contains('=')) {
        cfg = ConfigFile::read(&PathBuf::from(first))?;
        overrides = &overrides[1..];
    }
    let mut diags = Vec::new();
    for item in overrides {
        if let Err(d) = cfg.apply_override(item) {
            diags.push(d);
        }
    }
    if diags.is_empty() {
        Ok(cfg)
    } else {
        Err(RunError::Invalid(diags))
    }
}

fn report(err: &RunError) -> ExitCode {
    match err {
        RunError::Invalid(diags) => {
            for d in diags {
                eprintln!("invalid: {d}");
            }
        }
        other => eprintln!("error: {other}"),
    }
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate(args) => {
            let cfg = match load(&args) {
                Ok(c) => c,
                Err(e) => return report(&e),
            };
            let diags = cfg.validate();
            if diags.is_empty() {
                println!("ok");
                ExitCode::SUCCESS
            } else {
                report(&RunError::Invalid(diags))
            }
        }
        Command::Run(args) => {
            let resolved = load(&args).and_then(|c| c.resolve().map_err(RunError::Invalid));
            let outcome = resolved.and_then(|cfg| run(&cfg));
            match outcome {
                Ok(out) => {
                    for r in &out.reports {
                        let failed = r.failed_checks();
                        if !failed.is_empty() {
                            eprintln!("{}: failed checks {}", r.name, failed.join(", "));
                        }
                    }
                    for f in &out.files {
                        println!("wrote {}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => report(&e),
            }
        }
    }
}
