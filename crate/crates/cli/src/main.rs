//! `conjlab`: command-line front end for conjlab-core.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde_json::json;

use config::RunConfig;
use output::Outputs;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Check the smallness conditions on the configured system.
    Hypotheses,
    /// Construct H and G numerically and check the conjugacy identities.
    Verify,
    /// Estimate Lipschitz constants and Hölder exponents of a map.
    Regularity,
    /// Certify the dichotomic integral inequalities on worst-case solutions.
    Gronwall,
    /// Run the oracle self-test of a builtin example.
    Example,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Hypotheses => "hypotheses",
            Command::Verify => "verify",
            Command::Regularity => "regularity",
            Command::Gronwall => "gronwall",
            Command::Example => "example",
        }
    }
}

/// Exit codes: 0 pass, 1 verification violation, 2 config error,
/// 3 hypothesis failure.
#[derive(Debug, Parser)]
#[command(name = "conjlab", version, about)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Directory for report.json and CSV tables; the report goes to stdout
    /// when neither this nor the config names one.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Hypothesis(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Hypothesis(_) => 3,
            Failure::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Hypothesis(m) => write!(f, "hypothesis failure: {m}"),
            Failure::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<conjlab_core::Error> for Failure {
    fn from(e: conjlab_core::Error) -> Self {
        use conjlab_core::Error as E;
        match e {
            E::InvalidArgument(_) => Failure::Config(e.to_string()),
            E::HypothesisViolated { .. } | E::ContractionViolated { .. } => Failure::Hypothesis(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("CONJLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("CONJLAB_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn status(code: u8) -> &'static str {
    match code {
        0 => "pass",
        1 => "verification_violation",
        3 => "hypothesis_failure",
        _ => "error",
    }
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    configure_threads()?;
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", cli.config.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    let out_dir = cli.out.clone().or_else(|| cfg.output.as_ref().map(PathBuf::from));
    cfg.output = out_dir.as_ref().map(|p| p.display().to_string());
    let outcome = match cli.command {
        Command::Hypotheses => commands::hypotheses(&mut cfg)?,
        Command::Verify => commands::verify(&mut cfg)?,
        Command::Regularity => commands::regularity(&mut cfg)?,
        Command::Gronwall => commands::gronwall(&mut cfg)?,
        Command::Example => commands::example(&mut cfg)?,
    };
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let report = json!({
        "command": cli.command.name(),
        "status": status(outcome.code),
        "exit_code": outcome.code,
        "summary": outcome.summary,
        "warnings": outcome.warnings,
        "config": cfg,
        "result": outcome.result,
    });
    let mut files = Outputs::default();
    files.add_json("report.json", &report)?;
    for (name, text) in outcome.tables {
        files.add(&name, text);
    }
    match out_dir {
        Some(dir) => {
            files.write_to(&dir)?;
            println!("{} {}: {}", cli.command.name(), status(outcome.code), outcome.summary);
        }
        None => print!("{}", files.get("report.json").unwrap_or_default()),
    }
    Ok(outcome.code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("conjlab {}: {f}", cli.command.name());
            ExitCode::from(f.code())
        }
    }
}
