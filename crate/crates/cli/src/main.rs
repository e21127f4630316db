use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use noisereg::cli_io::{parse_config_with, run_with_threads, ExperimentKind};
use noisereg::Error;

/// Run a noisereg experiment and write its CSV/JSON artifacts.
#[derive(Debug, Parser)]
#[command(name = "noisereg", version)]
struct Args {
    /// pde-solve, lambda-sweep, flow-sim, flow-modulus, mollify-convergence,
    /// transport, weak-residual, nonuniqueness-demo or modulus-verify
    kind: String,

    /// TOML config; omitted means all defaults
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. --set mc.paths=4000
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,

    /// Worker thread cap; results do not depend on it
    #[arg(long)]
    threads: Option<usize>,

    /// Output directory; beats the config and NOISEREG_OUTPUT_DIR
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(args: Args) -> Result<PathBuf, Error> {
    let kind: ExperimentKind = args.kind.parse()?;
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    let mut cfg = parse_config_with(&text, Some(kind), &args.overrides)?;
    if let Some(dir) = args.out {
        cfg.output_dir = Some(dir);
    }
    if args.threads == Some(0) {
        return Err(Error::validation("threads", "must be positive"));
    }
    let dir = cfg.resolve_output_dir();
    run_with_threads(&cfg, &dir, args.threads)?;
    Ok(dir)
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("noisereg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
