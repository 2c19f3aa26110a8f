//! `dltsim` command line: `run`, `sweep`, `carbon` and `report`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

pub mod carbon;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};

use crate::metrics::CarbonParams;
use crate::netsim::{run_scenario, sweep_cell, RunError, SweepRow};
use crate::types::PlatformId;
use config::{Effective, Overrides, GHG_ENV};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Invalid(e) => CliError::Config(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dltsim", version, about = "Private DLT network simulator and carbon accounting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario and write its report directory.
    Run(RunArgs),
    /// Run a managers x load grid; finished cells are reused unless --force.
    Sweep(RunArgs),
    /// Energy and GHG per platform from average CPU shares.
    Carbon(CarbonArgs),
    /// Regenerate derived report files under a directory.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output root; the run directory is created inside it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    platform: Option<PlatformId>,
    /// Comma-separated manager counts. `run` accepts a single value.
    #[arg(long, value_delimiter = ',')]
    managers: Option<Vec<usize>>,
    /// Comma-separated loads in tx/s. For `sweep` these are aggregate rates;
    /// `run` takes one value with the scenario's own load convention.
    #[arg(long, value_delimiter = ',')]
    load: Option<Vec<f64>>,
    /// Recompute sweep cells that already have results.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct CarbonArgs {
    /// CSV with columns platform,cpu_percent. Defaults to the bundled
    /// testbed averages.
    #[arg(long, conflicts_with = "runs")]
    cpu: Option<PathBuf>,
    /// Take each platform's mean manager CPU share from the run
    /// directories under this path instead.
    #[arg(long)]
    runs: Option<PathBuf>,
    /// Scenario file whose [carbon] table sets power, horizon and intensity.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Also write carbon.csv into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// A run directory, a sweep directory, or any directory above them.
    #[arg(long)]
    out: PathBuf,
}

/// Entry point used by the binary.
pub fn main() -> ExitCode {
    let env = std::env::var(GHG_ENV).ok();
    let code = run(std::env::args_os(), env.as_deref(), &mut std::io::stdout().lock());
    ExitCode::from(code)
}

/// Parses `args` and executes the command. Diagnostics go to stderr.
pub fn run<I, T>(args: I, ghg_env: Option<&str>, out: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a, ghg_env, out),
        Command::Sweep(a) => cmd_sweep(&a, ghg_env, out),
        Command::Carbon(a) => cmd_carbon(&a, ghg_env, out),
        Command::Report(a) => cmd_report(&a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("dltsim: {e}");
            e.exit_code()
        }
    }
}

fn overrides(a: &RunArgs) -> Overrides {
    Overrides {
        out: a.out.clone(),
        seed: a.seed,
        platform: a.platform,
        managers: a.managers.clone(),
        loads: a.load.clone(),
        force: a.force,
    }
}

fn single<T: Copy>(flag: &str, v: &Option<Vec<T>>) -> Result<Option<T>, CliError> {
    match v.as_deref() {
        None => Ok(None),
        Some([x]) => Ok(Some(*x)),
        Some(_) => Err(CliError::Config(format!("`run` takes one value for --{flag}"))),
    }
}

fn cmd_run(a: &RunArgs, ghg_env: Option<&str>, out: &mut dyn Write) -> Result<(), CliError> {
    let managers = single("managers", &a.managers)?;
    let load = single("load", &a.load)?;
    let flags = Overrides {
        managers: None,
        loads: None,
        ..overrides(a)
    };
    let mut eff = config::load(&a.scenario, &flags, ghg_env)?;
    if let Some(m) = managers {
        eff.scenario.managers = m;
    }
    if let Some(l) = load {
        eff.scenario.input_tps = l;
    }
    let report = run_scenario(&eff.scenario)?;
    let dir = output::run_dir(&eff.out, &eff.scenario.name, eff.scenario.seed);
    output::create_dir(&dir)?;
    output::store(&dir, &report, &eff.to_toml())?;
    let _ = write!(out, "{}", report.summary());
    let _ = writeln!(out, "\nwrote {}", dir.display());
    Ok(())
}

fn cmd_sweep(a: &RunArgs, ghg_env: Option<&str>, out: &mut dyn Write) -> Result<(), CliError> {
    let eff = config::load(&a.scenario, &overrides(a), ghg_env)?;
    let base = &eff.scenario;
    let dir = output::sweep_dir(&eff.out, &base.name, base.seed);
    let cells_dir = dir.join(output::CELLS);
    output::create_dir(&cells_dir)?;
    output::write(&dir.join("effective_config.toml"), eff.to_toml())?;

    let mut todo = Vec::new();
    let mut reused = 0;
    for &m in &eff.managers {
        for &l in &eff.loads {
            let cell = sweep_cell(base, m, l);
            let cdir = output::run_dir(&cells_dir, &cell.name, cell.seed);
            if !eff.force && cdir.join(output::ROW).is_file() && cdir.join(output::METRICS).is_file() {
                reused += 1;
            } else {
                todo.push((cell, cdir, l));
            }
        }
    }
    let ran = todo.len();
    run_cells(&eff, todo)?;
    let rows = output::assemble_grid(&dir)?;
    let _ = writeln!(out, "{rows} rows, {ran} cells simulated, {reused} reused");
    let _ = writeln!(out, "wrote {}", dir.join(output::GRID).display());
    Ok(())
}

/// Runs cells on a small worker pool; each worker owns whole cells.
fn run_cells(eff: &Effective, todo: Vec<(crate::netsim::Scenario, PathBuf, f64)>) -> Result<(), CliError> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(todo.len().max(1));
    let next = AtomicUsize::new(0);
    let first_err: Mutex<Option<CliError>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((cell, cdir, load)) = todo.get(i) else { break };
                let done = (|| -> Result<(), CliError> {
                    let report = run_scenario(cell)?;
                    output::create_dir(cdir)?;
                    let cell_eff = Effective {
                        scenario: cell.clone(),
                        managers: vec![cell.managers],
                        loads: vec![*load],
                        ..eff.clone()
                    };
                    output::store(cdir, &report, &cell_eff.to_toml())?;
                    let row = SweepRow::from_report(&report, *load);
                    output::write(&cdir.join(output::ROW), output::rows_csv(&[row]))
                })();
                if let Err(e) = done {
                    first_err.lock().expect("no poisoning").get_or_insert(e);
                }
            });
        }
    });
    match first_err.into_inner().expect("no poisoning") {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn cmd_carbon(a: &CarbonArgs, ghg_env: Option<&str>, out: &mut dyn Write) -> Result<(), CliError> {
    let rows = match (&a.cpu, &a.runs) {
        (Some(p), _) => {
            let src = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read `{}`: {e}", p.display())))?;
            carbon::parse_cpu(&src, &p.display().to_string())?
        }
        (None, Some(dir)) => carbon::cpu_from_runs(dir)?,
        (None, None) => carbon::parse_cpu(carbon::TESTBED_CPU, "bundled testbed_cpu.csv")?,
    };
    let params = match &a.scenario {
        Some(p) => config::load(p, &Overrides::default(), ghg_env)?
            .scenario
            .carbon
            .manager_params()
            .map_err(|e| CliError::Config(format!("{}: field `carbon`: {e}", p.display())))?,
        None => {
            let mut params = CarbonParams::default();
            if let Some(raw) = ghg_env {
                let v: f64 = raw
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("{GHG_ENV}={raw:?} is not a number")))?;
                params = params
                    .with_intensity(v)
                    .map_err(|e| CliError::Config(format!("{GHG_ENV}: {e}")))?;
            }
            params
        }
    };
    let csv = carbon::to_csv(&carbon::compute(&rows, &params), &params);
    if let Some(dir) = &a.out {
        output::create_dir(dir)?;
        output::write(&dir.join("carbon.csv"), &csv)?;
    }
    let _ = write!(out, "{csv}");
    Ok(())
}

fn cmd_report(a: &ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !a.out.is_dir() {
        return Err(CliError::Config(format!("`{}` is not a directory", a.out.display())));
    }
    let (runs, sweeps) = output::discover(&a.out)?;
    if runs.is_empty() {
        return Err(CliError::Config(format!(
            "no run directories (containing {}) under `{}`",
            output::METRICS,
            a.out.display()
        )));
    }
    for dir in &runs {
        output::render(dir)?;
    }
    for dir in &sweeps {
        output::assemble_grid(dir)?;
    }
    let _ = writeln!(out, "regenerated {} runs, {} grids", runs.len(), sweeps.len());
    Ok(())
}
