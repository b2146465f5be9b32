use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use pma_core::experiments::{self, Artifact};
use pma_core::scenario::Scenario;
use pma_core::{Error, Trajectory};

#[derive(Parser)]
#[command(name = "pma", version, about = "Pneumatic muscle actuator experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; defaults to the scenario's `output_dir`, then `out/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scenario's `rng_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Open-loop response to the scenario's pressure signal.
    Characterize(Common),
    /// Multistart parameter identification.
    Identify(Common),
    /// Closed-loop tracking run with metrics.
    Track(Common),
    /// Runs a feedback (first) and a computed-torque (second) scenario side by side.
    Compare {
        /// Two scenario files: FB then CT.
        #[arg(long, num_args = 2, required = true)]
        scenario: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Metrics of an existing trajectory CSV against the scenario's reference.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// Grid search for the gains of a tracking scenario.
    Tune(Common),
}

/// Failure classes with distinct exit codes.
enum Failure {
    Validation(anyhow::Error),
    Divergence(anyhow::Error),
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Divergence(_) => 3,
            Failure::Other(_) => 1,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e.root() {
            Error::Invalid { .. } | Error::Parse(_) | Error::Calibration(_) | Error::GridMismatch(_) | Error::TooShort(_) | Error::Csv(_) => {
                Failure::Validation(e.into())
            }
            Error::Diverged { .. } => Failure::Divergence(e.into()),
            _ => Failure::Other(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

struct Loaded {
    path: PathBuf,
    text: String,
    scenario: Scenario,
}

fn load(path: &Path, seed: Option<u64>) -> Result<Loaded, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Validation)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut scenario = Scenario::parse(&text, base).map_err(|e| {
        Failure::from(e).map(|err| err.context(format!("in {}", path.display())))
    })?;
    if let Some(s) = seed {
        scenario.rng_seed = s;
    }
    Ok(Loaded {
        path: path.to_path_buf(),
        text,
        scenario,
    })
}

impl Failure {
    fn map(self, f: impl FnOnce(anyhow::Error) -> anyhow::Error) -> Self {
        match self {
            Failure::Validation(e) => Failure::Validation(f(e)),
            Failure::Divergence(e) => Failure::Divergence(f(e)),
            Failure::Other(e) => Failure::Other(f(e)),
        }
    }
}

fn out_dir(explicit: Option<PathBuf>, scenario: &Scenario) -> PathBuf {
    explicit
        .or_else(|| scenario.output_dir.clone())
        .unwrap_or_else(|| Path::new("out").join(&scenario.name))
}

/// Writes through a temp file in the same directory, then renames.
fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> anyhow::Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(dir.join(name))
        .with_context(|| format!("writing {name}"))?;
    Ok(())
}

fn sha256(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn write_run(
    dir: &Path,
    command: &str,
    inputs: &[&Loaded],
    extra_inputs: &[(&Path, String)],
    artifacts: &[Artifact],
) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for a in artifacts {
        write_atomic(dir, &a.name, a.contents.as_bytes())?;
    }
    let scenarios: Vec<_> = inputs
        .iter()
        .map(|l| {
            json!({
                "name": l.scenario.name,
                "path": l.path.display().to_string(),
                "sha256": sha256(&l.text),
                "rng_seed": l.scenario.rng_seed,
                "text": l.text,
            })
        })
        .collect();
    let extra: Vec<_> = extra_inputs
        .iter()
        .map(|(p, text)| json!({ "path": p.display().to_string(), "sha256": sha256(text) }))
        .collect();
    let files: Vec<_> = artifacts
        .iter()
        .map(|a| json!({ "name": a.name, "sha256": sha256(&a.contents) }))
        .collect();
    let manifest = json!({
        "tool": "pma",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "scenarios": scenarios,
        "inputs": extra,
        "artifacts": files,
    });
    let mut body = serde_json::to_string_pretty(&manifest)?;
    body.push('\n');
    write_atomic(dir, "manifest.json", body.as_bytes())
}

fn run(cli: Cli) -> Result<PathBuf, Failure> {
    let single = |c: Common,
                  name: &str,
                  f: fn(&Scenario) -> pma_core::Result<Vec<Artifact>>|
     -> Result<PathBuf, Failure> {
        let l = load(&c.scenario, c.seed)?;
        let artifacts = f(&l.scenario)?;
        let dir = out_dir(c.out, &l.scenario);
        write_run(&dir, name, &[&l], &[], &artifacts)?;
        Ok(dir)
    };
    match cli.command {
        Command::Characterize(c) => single(c, "characterize", experiments::run_characterize),
        Command::Identify(c) => single(c, "identify", experiments::run_identify),
        Command::Track(c) => single(c, "track", experiments::run_track),
        Command::Tune(c) => single(c, "tune", experiments::run_tune),
        Command::Compare { scenario, out, seed } => {
            let fb = load(&scenario[0], seed)?;
            let ct = load(&scenario[1], seed)?;
            let artifacts = experiments::run_compare(&fb.scenario, &ct.scenario)?;
            let dir = out.unwrap_or_else(|| {
                Path::new("out").join(format!("{}_vs_{}", fb.scenario.name, ct.scenario.name))
            });
            write_run(&dir, "compare", &[&fb, &ct], &[], &artifacts)?;
            Ok(dir)
        }
        Command::Metrics { common, trajectory } => {
            let l = load(&common.scenario, common.seed)?;
            let text = fs::read_to_string(&trajectory)
                .with_context(|| format!("reading {}", trajectory.display()))
                .map_err(Failure::Validation)?;
            let traj = Trajectory::read_csv(BufReader::new(text.as_bytes()))?;
            let artifacts = experiments::run_metrics(&l.scenario, &traj)?;
            let dir = out_dir(common.out, &l.scenario);
            write_run(&dir, "metrics", &[&l], &[(&trajectory, text)], &artifacts)?;
            Ok(dir)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(f) => {
            let code = f.code();
            let (Failure::Validation(e) | Failure::Divergence(e) | Failure::Other(e)) = f;
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
