//! Command-line front end: `run`, `check-energy` and `export`.
//!
//! Exit codes: 0 success, 1 audit failure or I/O error, 2 bad configuration
//! or missing inputs, 3 solver failure (outputs written so far are kept).

pub mod config;
pub mod output;
pub mod vtk;

use clap::{Args, Parser, Subcommand};
use config::{parse_override, resolve, ConfigError, RunConfig};
use output::{audit_run, Audit, CheckError, RunLog, RunWriter};
use std::path::{Path, PathBuf};
use toml::Value;

use crate::driver::RunHistory;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pfrac", version, about = "Phase-field brittle fracture with energy-controlled backtracking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation and write its outputs.
    Run(RunArgs),
    /// Recompute the energy bounds from a run directory's snapshots.
    CheckEnergy {
        /// Output directory of a previous run.
        dir: PathBuf,
    },
    /// Write the resolved configuration (and optionally the mesh) to files.
    Export {
        #[command(flatten)]
        config: ConfigArgs,
        /// Config file to write; stdout if omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Also write the mesh in Gmsh format.
        #[arg(long)]
        mesh: Option<PathBuf>,
    },
}

#[derive(Debug, Args, Default, Clone)]
pub struct ConfigArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Benchmark preset: sent, sens, lshape or bend3d.
    #[arg(long)]
    pub preset: Option<String>,
    /// Mesh coarsening factor in (0, 1].
    #[arg(long)]
    pub scale: Option<f64>,
    /// Override a config entry, e.g. `--set material.ell=0.02`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Maximum number of backtracking steps (0 disables backtracking).
    #[arg(long)]
    pub k_back: Option<usize>,
    /// Tolerance of the two-sided energy check.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Evaluate the lower bound with the lifting as displacement argument.
    #[arg(long)]
    pub compat_box1_lb: bool,
}

#[derive(Debug, Args, Default, Clone)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Keep the states visited while backtracking.
    #[arg(long)]
    pub save_intermediates: bool,
    /// Write a field snapshot every this many steps.
    #[arg(long)]
    pub snapshot_every: Option<usize>,
}

impl ConfigArgs {
    /// Flags as dotted overrides, `--set` entries last.
    pub fn overrides(&self) -> Result<Vec<(String, Value)>, ConfigError> {
        let mut v = Vec::new();
        if let Some(p) = &self.preset {
            v.push(("run.preset".into(), Value::String(p.clone())));
        }
        if let Some(s) = self.scale {
            v.push(("run.scale".into(), Value::Float(s)));
        }
        if let Some(k) = self.k_back {
            v.push(("backtrack.max_back".into(), Value::Integer(k as i64)));
        }
        if let Some(e) = self.eta {
            v.push(("backtrack.eta".into(), Value::Float(e)));
        }
        if self.compat_box1_lb {
            v.push(("backtrack.compat_box1_lb".into(), Value::Boolean(true)));
        }
        for s in &self.set {
            v.push(parse_override(s)?);
        }
        Ok(v)
    }

    pub fn resolve(&self, extra: Vec<(String, Value)>) -> Result<RunConfig, ConfigError> {
        let mut ov = extra;
        ov.extend(self.overrides()?);
        resolve(self.config.as_deref(), &ov)
    }
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut extra = Vec::new();
        if let Some(o) = &self.out {
            extra.push(("run.out".into(), Value::String(o.to_string_lossy().into_owned())));
        }
        if self.save_intermediates {
            extra.push(("run.save_intermediates".into(), Value::Boolean(true)));
        }
        if let Some(m) = self.snapshot_every {
            extra.push(("run.snapshot_every".into(), Value::Integer(m as i64)));
        }
        // config-file values first, command-line flags win
        let mut ov = self.config.overrides()?;
        let sets = ov.split_off(ov.len() - self.config.set.len());
        ov.extend(extra);
        ov.extend(sets);
        resolve(self.config.config.as_deref(), &ov)
    }
}

/// Outcome of [`run_with_config`].
#[derive(Debug)]
pub struct RunOutcome {
    pub code: i32,
    pub history: Option<RunHistory>,
    pub dir: PathBuf,
}

/// Execute a resolved configuration, writing into `cfg.run.out`.
pub fn run_with_config(cfg: &RunConfig) -> RunOutcome {
    let dir = PathBuf::from(&cfg.run.out);
    let fail = |code| RunOutcome { code, history: None, dir: dir.clone() };
    let mesh = match cfg.build_mesh() {
        Ok(m) => m,
        Err(e) => {
            log::error!("{e}");
            return fail(EXIT_CONFIG);
        }
    };
    let sim = match cfg.simulation(mesh) {
        Ok(s) => s,
        Err(e) => {
            log::error!("{e}");
            return fail(EXIT_CONFIG);
        }
    };
    log::info!(
        "{} nodes, {} elements, {} steps, K = {}, {} threads",
        sim.disc.mesh.num_nodes(),
        sim.disc.mesh.num_elements(),
        sim.program.steps,
        sim.backtrack.max_back,
        crate::par::current_threads()
    );
    let mut writer = match RunWriter::create(&dir, &sim, cfg) {
        Ok(w) => w,
        Err(e) => {
            log::error!("cannot prepare {}: {e}", dir.display());
            return fail(EXIT_CONFIG);
        }
    };
    if let Err(e) = RunLog::new("running", cfg, &sim, &RunHistory::default()).write(&dir) {
        log::error!("{e}");
        return fail(EXIT_FAIL);
    }
    let history = sim.run(&mut writer);
    let status = if history.abort.is_some() { "aborted" } else { "completed" };
    let mut code = if history.abort.is_some() { EXIT_SOLVER } else { EXIT_OK };
    if let Some(e) = writer.error.take() {
        log::error!("output error: {e}");
        code = code.max(EXIT_FAIL);
    }
    if let Err(e) = RunLog::new(status, cfg, &sim, &history).write(&dir) {
        log::error!("{e}");
        code = code.max(EXIT_FAIL);
    }
    for w in &history.warnings {
        log::warn!("{w}");
    }
    RunOutcome { code, history: Some(history), dir }
}

/// Audit a run directory and print a report; returns the exit status.
pub fn check_energy(dir: &Path) -> (i32, Option<Audit>) {
    match audit_run(dir) {
        Ok(a) => {
            for m in &a.mismatches {
                println!("mismatch: {m}");
            }
            if !a.failing.is_empty() {
                println!("steps violating the two-sided inequality: {:?}", a.failing);
            }
            println!(
                "{} rows checked, {} mismatches, {} failing steps",
                a.rows,
                a.mismatches.len(),
                a.failing.len()
            );
            (if a.ok() { EXIT_OK } else { EXIT_FAIL }, Some(a))
        }
        Err(e @ CheckError::Missing(_)) | Err(e @ CheckError::Corrupt(_)) => {
            eprintln!("{e}");
            (EXIT_CONFIG, None)
        }
    }
}

fn export(config: &ConfigArgs, output: Option<&Path>, mesh: Option<&Path>) -> i32 {
    let cfg = match config.resolve(vec![]) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    let text = match cfg.to_toml() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    match output {
        Some(p) => {
            if let Err(e) = output::write_atomic(p, text.as_bytes()) {
                eprintln!("{}: {e}", p.display());
                return EXIT_FAIL;
            }
        }
        None => print!("{text}"),
    }
    if let Some(p) = mesh {
        let m = match cfg.build_mesh() {
            Ok(m) => m,
            Err(e) => {
                eprintln!("{e}");
                return EXIT_CONFIG;
            }
        };
        if let Err(e) = output::write_atomic(p, crate::mesh::write_gmsh(&m).as_bytes()) {
            eprintln!("{}: {e}", p.display());
            return EXIT_FAIL;
        }
    }
    EXIT_OK
}

/// Honour `PF_THREADS` before any parallel work starts.
pub fn init_threads_from_env() {
    if let Ok(v) = std::env::var("PF_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                if !crate::par::init_threads(n) {
                    log::warn!("PF_THREADS ignored: thread pool already initialised or parallel feature off");
                }
            }
            _ => log::warn!("PF_THREADS must be a positive integer, got `{v}`"),
        }
    }
}

/// Entry point shared by the binary and tests.
pub fn main_with(cli: Cli) -> i32 {
    init_threads_from_env();
    match cli.command {
        Command::Run(args) => match args.resolve() {
            Ok(cfg) => run_with_config(&cfg).code,
            Err(e) => {
                eprintln!("{e}");
                EXIT_CONFIG
            }
        },
        Command::CheckEnergy { dir } => check_energy(&dir).0,
        Command::Export { config, output, mesh } => export(&config, output.as_deref(), mesh.as_deref()),
    }
}
