use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kahler_killing::pipeline::{parse_config, run, Command, FailureReport, RunConfig, RunOptions};
use kahler_killing::verify::GridSpec;
use kahler_killing::Error;

/// Build, verify and recover Kähler metrics with a Killing potential whose
/// gradient is geodesic.
#[derive(Parser)]
#[command(name = "kk", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Dump metric samples and the profile table.
    Construct(Common),
    /// Run the identity suite.
    Verify(Common),
    /// Recover the construction data from the metric.
    Extract {
        #[command(flatten)]
        common: Common,
        /// Rebuild from the extracted data and compare metrics.
        #[arg(long)]
        round_trip: bool,
    },
    /// Gradient-flow checks.
    Flow(Common),
    /// Fubini–Study cross-check on complex projective space.
    FubiniCheck(Common),
    /// Run the command named in the configuration file.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        round_trip: bool,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "X")]
    tol_scale: Option<f64>,
    /// "bx,by,nt,nth"
    #[arg(long, value_name = "SPEC")]
    grid: Option<GridSpec>,
}

const EXIT_CHECKS_FAILED: u8 = 1;
const EXIT_ERROR: u8 = 2;

fn load(common: &Common, command: Option<Command>) -> Result<RunConfig, Error> {
    let text = match &common.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        None if command == Some(Command::FubiniCheck) => r#"{"oracle": "fubini"}"#.to_string(),
        None => return Err(Error::config("", "--config is required")),
    };
    let mut cfg = parse_config(&text)?;
    if let Some(s) = common.seed {
        cfg.verify.seed = s;
    }
    if let Some(x) = common.tol_scale {
        cfg.verify.tol_scale = x;
    }
    if let Some(g) = common.grid {
        cfg.verify.grid = g;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_all(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    for (name, bytes) in files {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn out_dir(common: &Common, cfg: Option<&RunConfig>) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.dir.as_ref().map(PathBuf::from)))
        .unwrap_or_else(|| PathBuf::from("kk-out"))
}

fn fail(dir: &Path, command: Option<Command>, err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    let report = FailureReport::new(command, err);
    if let Err(e) = write_all(dir, &[("error.json".to_string(), report.to_json())]) {
        eprintln!("error: {e}");
    }
    ExitCode::from(EXIT_ERROR)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, command, opts) = match &cli.command {
        Cmd::Construct(c) => (c, Some(Command::Construct), RunOptions::default()),
        Cmd::Verify(c) => (c, Some(Command::Verify), RunOptions::default()),
        Cmd::Flow(c) => (c, Some(Command::Flow), RunOptions::default()),
        Cmd::FubiniCheck(c) => (c, Some(Command::FubiniCheck), RunOptions::default()),
        Cmd::Extract { common, round_trip } | Cmd::Run { common, round_trip } => {
            let cmd = matches!(cli.command, Cmd::Extract { .. }).then_some(Command::Extract);
            (common, cmd, RunOptions { round_trip: *round_trip })
        }
    };
    let cfg = match load(common, command) {
        Ok(c) => c,
        Err(e) => return fail(&out_dir(common, None), command, &e),
    };
    let dir = out_dir(common, Some(&cfg));
    let Some(command) = command.or(cfg.command) else {
        return fail(&dir, None, &Error::config("command", "missing"));
    };
    let outcome = match run(command, &cfg, opts) {
        Ok(o) => o,
        Err(e) => return fail(&dir, Some(command), &e),
    };
    let files: Vec<(String, Vec<u8>)> = outcome.artifacts.iter().map(|a| (a.name.clone(), a.bytes.clone())).collect();
    if let Err(e) = write_all(&dir, &files) {
        return fail(&dir, Some(command), &e);
    }
    if !outcome.reports.is_empty() {
        print!("{}", outcome.summary());
    }
    let pass = outcome.pass();
    println!("{}: {} ({})", command.name(), if pass { "PASS" } else { "FAIL" }, dir.display());
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECKS_FAILED)
    }
}
