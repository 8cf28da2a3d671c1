use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use flowtopo::config::{parse_config, Mode};
use flowtopo::runner::{run, write_error_record};

/// Phase-field topology optimization of stationary Navier-Stokes flow.
#[derive(Parser, Debug)]
#[command(name = "flowtopo", version)]
struct Cli {
    /// solve | optimize | continue | verify-gradient | verify-shape | gamma-check
    mode: String,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    verbose: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = std::env::var("FLOWTOPO_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("FLOWTOPO_THREADS ignored: {e}");
        }
    }
    let Some(mode) = Mode::parse(&cli.mode) else {
        let names: Vec<&str> = Mode::ALL.iter().map(|m| m.name()).collect();
        eprintln!("error: unknown mode `{}`\n\nUsage: flowtopo <{}> --config <path> [--out <dir>] [--seed <n>] [--verbose]", cli.mode, names.join("|"));
        return ExitCode::from(2);
    };
    let mut config = match parse_config(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(out) = cli.out {
        config.output = out;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match run(mode, &config) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string_pretty(&outcome.summary).unwrap_or_default());
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("{} gate failed; see {}", mode.name(), outcome.output.join("summary.json").display());
                ExitCode::from(1)
            }
        }
        Err(e) => {
            write_error_record(&config.output, mode, &e);
            eprintln!("error [{}]: {e}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
