use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use sgdlm::io::config::RunConfig;
use sgdlm::io::run::{execute, Command};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sub {
    Fit,
    Forecast,
    Counterfactual,
    Factors,
    DiscountGrid,
    Simulate,
    Diagnose,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Fit => Command::Fit,
            Sub::Forecast => Command::Forecast,
            Sub::Counterfactual => Command::Counterfactual,
            Sub::Factors => Command::Factors,
            Sub::DiscountGrid => Command::DiscountGrid,
            Sub::Simulate => Command::Simulate,
            Sub::Diagnose => Command::Diagnose,
        }
    }
}

/// Simultaneous graphical dynamic linear models.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[arg(value_enum)]
    command: Sub,
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's [output] dir, then ./out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "SGDLM_THREADS")]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let mut cfg = match RunConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", cli.config.display());
            return ExitCode::from(2);
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli
        .out
        .or_else(|| cfg.output_dir().map(|p| p.to_path_buf()))
        .unwrap_or_else(|| PathBuf::from("out"));
    match execute(cli.command.into(), &cfg, &out, cli.threads) {
        Ok(r) => {
            println!("{}", r.summary);
            for f in &r.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
