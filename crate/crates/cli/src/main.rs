use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use towerlab::config::RunConfig;
use towerlab::pipeline::{Pipeline, StageOutcome, StatKind};
use towerlab::Error;

#[derive(Parser)]
#[command(name = "towerlab", version, about = "Induced Markov towers and statistics for interval maps")]
struct Cli {
    /// Run configuration (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Build the tower even when a hypothesis check fails.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Audit the hypotheses and write hypotheses.csv and binding.csv.
    Check,
    /// Build the tower: escape_tail.csv, tower.csv, return_tail.csv, distortion.csv.
    Tower,
    /// Statistics from orbits and, where needed, the tower.
    Stats {
        #[arg(value_enum)]
        which: Vec<Which>,
    },
    /// check, tower and every statistic.
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Acip,
    Lyapunov,
    Corr,
    Clt,
    Symbolic,
}

impl From<Which> for StatKind {
    fn from(w: Which) -> StatKind {
        match w {
            Which::Acip => StatKind::Acip,
            Which::Lyapunov => StatKind::Lyapunov,
            Which::Corr => StatKind::Corr,
            Which::Clt => StatKind::Clt,
            Which::Symbolic => StatKind::Symbolic,
        }
    }
}

const EXIT_HYPOTHESIS: u8 = 2;
const EXIT_LIMITS: u8 = 3;
const EXIT_CONFIG: u8 = 4;

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let src = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::from_toml(&src)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.display().to_string();
    }
    Ok(cfg)
}

fn print(o: &StageOutcome) {
    for l in &o.lines {
        println!("{l}");
    }
}

fn run(cli: &Cli) -> Result<u8> {
    let p = Pipeline::new(load_config(cli)?)?;
    let mut total = StageOutcome::default();
    let needs_check = matches!(cli.command, Command::Check | Command::Tower | Command::All);
    if needs_check {
        let o = p.check()?;
        print(&o);
        let failed = o.hypotheses_failed;
        total.merge(o);
        if failed {
            if matches!(cli.command, Command::Check) || !cli.force {
                eprintln!("hypothesis check failed; see {}", p.path("hypotheses.csv").display());
                return Ok(EXIT_HYPOTHESIS);
            }
            eprintln!("WARNING: hypothesis check failed; continuing because of --force");
        }
    }
    if matches!(cli.command, Command::Tower | Command::All) {
        let o = p.tower()?;
        print(&o);
        total.merge(o);
    }
    let which: Vec<StatKind> = match &cli.command {
        Command::Stats { which } if !which.is_empty() => which.iter().map(|&w| w.into()).collect(),
        Command::Stats { .. } | Command::All => StatKind::ALL.to_vec(),
        _ => Vec::new(),
    };
    if !which.is_empty() {
        let o = p.stats(&which)?;
        print(&o);
        total.merge(o);
    }
    Ok(if total.limit_hit {
        EXIT_LIMITS
    } else if total.hypotheses_failed {
        EXIT_HYPOTHESIS
    } else {
        0
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = matches!(
                e.downcast_ref::<Error>(),
                Some(Error::Config(_) | Error::Toml(_) | Error::Range(_) | Error::InvalidMap(_) | Error::Parse { .. } | Error::ReturnSearchExhausted { .. })
            );
            ExitCode::from(if config { EXIT_CONFIG } else { 1 })
        }
    }
}
