//! `collapsim`: runs one scenario from a configuration file.
//!
//! Exit status 0 on success, 1 when a requested audit fails or the run
//! itself fails, 2 on usage or configuration errors (nothing is written).
//!
//! The master seed comes from `--seed`, else the configuration, else the
//! `COLLAPSIM_SEED` environment variable, else 0. The resolved seed and the
//! emit selection are written into the manifest, which can be passed back
//! as `--config` to reproduce every file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use collapsim::scenario::{load_config, write_outputs, Emit, ScenarioConfig, ScenarioKind};

const SEED_ENV: &str = "COLLAPSIM_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "collapsim",
    version,
    about = "Interaction-induced stochastic collapse scenarios"
)]
struct Args {
    /// Scenario configuration (or a manifest from an earlier run).
    #[arg(long, value_name = "PATH", required_unless_present = "dump_preset")]
    config: Option<PathBuf>,

    /// Master seed; overrides the configuration.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,

    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", required_unless_present = "dump_preset")]
    out: Option<PathBuf>,

    /// Worker threads; results do not depend on this.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,

    /// Comma-separated outputs to add: traces, gamma, audits (replaces the
    /// configuration's selection; `none` clears it).
    #[arg(long, value_name = "LIST")]
    emit: Option<String>,

    /// Print the documented template of a built-in scenario and exit.
    #[arg(long, value_name = "NAME", conflicts_with_all = ["config", "out"])]
    dump_preset: Option<String>,
}

enum Failure {
    Usage(String),
    Run(String),
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{SEED_ENV}={v} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn resolve(args: &Args) -> Result<ScenarioConfig, Failure> {
    let path = args.config.as_ref().expect("clap enforces --config");
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut config =
        load_config(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let seed = match args.seed {
        Some(s) => s,
        None => match config.seed {
            Some(s) => s,
            None => env_seed()?.unwrap_or(0),
        },
    };
    config.seed = Some(seed);
    if let Some(list) = &args.emit {
        config.emit = Emit::parse_list(list).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(config)
}

fn run(args: Args) -> Result<bool, Failure> {
    if let Some(name) = &args.dump_preset {
        let kind = ScenarioKind::from_name(name).ok_or_else(|| {
            let names: Vec<&str> = ScenarioKind::ALL.iter().map(|k| k.name()).collect();
            Failure::Usage(format!(
                "unknown preset `{name}`; available: {}",
                names.join(", ")
            ))
        })?;
        print!("{}", kind.template());
        return Ok(true);
    }
    let config = resolve(&args)?;
    let prepared = config
        .prepare()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let workers = match args.workers {
        Some(0) => return Err(Failure::Usage("--workers must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let out = args.out.as_ref().expect("clap enforces --out");
    eprintln!(
        "collapsim: {} with seed {} on {workers} worker(s)",
        config.scenario.name(),
        config.seed_or_default()
    );
    let progress = |line: &str| eprintln!("collapsim: {line}");
    let output = prepared
        .run(workers, &progress)
        .map_err(|e| Failure::Run(e.to_string()))?;
    write_outputs(out, &config, &output).map_err(|e| Failure::Run(e.to_string()))?;
    for name in output.files.keys() {
        eprintln!("collapsim: wrote {}", out.join(name).display());
    }
    if let Some(report) = &output.audits {
        for check in report.checks.iter().filter(|c| !c.pass) {
            eprintln!(
                "collapsim: audit {} failed: {:e} > {:e}",
                check.name, check.max_residual, check.tolerance
            );
        }
    }
    Ok(output.audits_pass())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Run(msg)) => {
            eprintln!("collapsim: error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("collapsim: {msg}");
            ExitCode::from(2)
        }
    }
}
