//! Command-line front end: argument and config parsing, dispatch to the core
//! crate, and output writers.

pub mod config;

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};
use thiserror::Error;

use sfunnel_core::basins::{basin_grid, mc_volume, CrossSection, Region};
use sfunnel_core::equilibria::{find_equilibria, trace_stable_manifold, ManifoldOptions, SearchBox, Stability};
use sfunnel_core::experiments::{self, ExperimentError, PresetOptions};
use sfunnel_core::io::{format_number, CsvTable, IoError};
use sfunnel_core::{BasinLabel, Classifier, ModelTag, SlowFastSystem};

pub use config::{Config, Format};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
    /// Help or version text requested; not a failure.
    #[error("{0}")]
    Info(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Info(_) => 0,
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::UnknownPreset(_) | ExperimentError::SchemaMismatch(_) | ExperimentError::InvalidInput(_) => {
                CliError::Usage(e.to_string())
            }
            ExperimentError::Numeric(m) => CliError::Numeric(m),
            ExperimentError::Io(e) => CliError::Io(e.to_string()),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

fn numeric(e: impl std::fmt::Display) -> CliError {
    CliError::Numeric(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "sfunnel", version, about = "Basins, funnels and volume scaling of slow-fast systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Integrate one trajectory from --ic.
    Simulate,
    /// Locate and classify equilibria.
    Equilibria,
    /// Trace the stable manifold of each saddle.
    Manifold,
    /// Tabulate the reduced potential.
    Reduce,
    /// Classify a grid of initial conditions.
    BasinGrid,
    /// Monte Carlo volume of one basin.
    McVolume,
    /// Volumes over --eps-list with a log-linear fit.
    ScalingSweep {
        /// Add the quadrature prediction of the exponent (rotator only).
        #[arg(long)]
        predict: bool,
    },
    /// Run a named figure preset.
    Preset { name: String },
    /// Compare two preset run directories.
    Diff { run_a: PathBuf, run_b: PathBuf },
}

/// Flags mirror the config keys; a flag beats the config file, which beats the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// `key = value` file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub a: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub b: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub omega: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub eta: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub alpha: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub kappa: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub eps: Option<String>,
    /// Number of rotators (network model).
    #[arg(long, global = true)]
    pub n: Option<String>,
    /// Comma-separated natural frequencies (network model).
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub omegas: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Monte Carlo trials.
    #[arg(long = "M", global = true)]
    pub trials: Option<String>,
    /// Worker threads, 0 for all cores.
    #[arg(long, global = true)]
    pub threads: Option<String>,
    #[arg(long, global = true)]
    pub grid: Option<String>,
    #[arg(long = "mu-lo", global = true, allow_hyphen_values = true)]
    pub mu_lo: Option<String>,
    #[arg(long = "mu-hi", global = true, allow_hyphen_values = true)]
    pub mu_hi: Option<String>,
    #[arg(long = "eps-list", global = true)]
    pub eps_list: Option<String>,
    /// Initial condition, e.g. "phi=6,mu=-5".
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub ic: Option<String>,
    #[arg(long = "t-end", global = true)]
    pub t_end: Option<String>,
    #[arg(long, global = true)]
    pub dt: Option<String>,
    #[arg(long, global = true)]
    pub points: Option<String>,
    /// Output directory (default: $SFUNNEL_OUT_DIR or ./sfunnel-out).
    #[arg(long, global = true)]
    pub out: Option<String>,
    /// csv or json.
    #[arg(long, global = true)]
    pub format: Option<String>,
    #[arg(long, global = true)]
    pub scale: Option<String>,
    /// Shorthand for --scale paper.
    #[arg(long = "paper-scale", global = true)]
    pub paper_scale: bool,
    /// Tolerance of the diff subcommand.
    #[arg(long, global = true)]
    pub tol: Option<String>,
    #[arg(long = "rel-tol", global = true)]
    pub rel_tol: Option<String>,
    #[arg(long = "abs-tol", global = true)]
    pub abs_tol: Option<String>,
    /// Basin label counted by mc-volume and scaling-sweep.
    #[arg(long, global = true)]
    pub target: Option<String>,
}

impl Flags {
    fn pairs(&self) -> Vec<(String, String)> {
        let fields = [
            ("model", &self.model),
            ("a", &self.a),
            ("b", &self.b),
            ("omega", &self.omega),
            ("eta", &self.eta),
            ("alpha", &self.alpha),
            ("kappa", &self.kappa),
            ("eps", &self.eps),
            ("n", &self.n),
            ("omegas", &self.omegas),
            ("seed", &self.seed),
            ("M", &self.trials),
            ("threads", &self.threads),
            ("grid", &self.grid),
            ("mu-lo", &self.mu_lo),
            ("mu-hi", &self.mu_hi),
            ("eps-list", &self.eps_list),
            ("ic", &self.ic),
            ("t-end", &self.t_end),
            ("dt", &self.dt),
            ("points", &self.points),
            ("out", &self.out),
            ("format", &self.format),
            ("scale", &self.scale),
            ("tol", &self.tol),
            ("rel-tol", &self.rel_tol),
            ("abs-tol", &self.abs_tol),
            ("target", &self.target),
        ];
        let mut out: Vec<(String, String)> =
            fields.iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))).collect();
        if self.paper_scale {
            out.push(("scale".into(), "paper".into()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub command: Option<Command>,
    pub config: Config,
}

/// Resolves `argv` (program name first) into a validated invocation.
pub fn parse_args_and_config<I, T>(argv: I) -> Result<Invocation, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => CliError::Info(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    })?;
    let mut config = Config::from_env();
    if let Some(path) = &cli.flags.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        config.apply(&config::parse_config_file(&text)?)?;
    }
    config.apply(&cli.flags.pairs())?;
    if let Some(Command::ScalingSweep { predict: true }) = cli.command {
        config.predict = true;
    }
    config.validate()?;
    Ok(Invocation { command: cli.command, config })
}

/// Parses, dispatches and reports; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let result = parse_args_and_config(argv).and_then(|inv| {
        for (k, v) in inv.config.entries() {
            eprintln!("# {k} = {v}");
        }
        dispatch(&inv)
    });
    match result {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(CliError::Info(text)) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("sfunnel: {e}");
            e.exit_code()
        }
    }
}

/// Runs the subcommand and returns the text for stdout.
pub fn dispatch(inv: &Invocation) -> Result<String, CliError> {
    let c = &inv.config;
    if c.threads > 0 {
        // Only the first call in a process can size the global pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(c.threads).build_global();
    }
    match &inv.command {
        None => Ok(c.to_file_string()),
        Some(Command::Simulate) => simulate(c),
        Some(Command::Equilibria) => equilibria(c),
        Some(Command::Manifold) => manifold(c),
        Some(Command::Reduce) => reduce(c),
        Some(Command::BasinGrid) => grid(c),
        Some(Command::McVolume) => volume(c),
        Some(Command::ScalingSweep { .. }) => sweep(c),
        Some(Command::Preset { name }) => preset(c, name),
        Some(Command::Diff { run_a, run_b }) => diff(c, run_a, run_b),
    }
}

/// Writes `table` as `<out>/<stem>.csv` or `<out>/<stem>.ndjson`.
pub fn emit(config: &Config, stem: &str, table: &CsvTable) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&config.out).map_err(|e| CliError::Io(format!("{}: {e}", config.out.display())))?;
    let (path, text) = match config.format {
        Format::Csv => (config.out.join(format!("{stem}.csv")), table.render()),
        Format::Json => {
            let meta: Map<String, Value> = table.meta.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
            let mut text = serde_json::to_string(&json!({ "meta": meta })).map_err(numeric)? + "\n";
            for row in &table.rows {
                let obj: Map<String, Value> = table.header.iter().cloned().zip(row.iter().map(|v| json!(v))).collect();
                text += &(serde_json::to_string(&obj).map_err(numeric)? + "\n");
            }
            (config.out.join(format!("{stem}.ndjson")), text)
        }
    };
    std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn write_json(config: &Config, stem: &str, value: &Value) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&config.out).map_err(|e| CliError::Io(format!("{}: {e}", config.out.display())))?;
    let path = config.out.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(value).map_err(numeric)? + "\n";
    std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

/// Plot window of `mu` for each model, overridden by `mu-lo` / `mu-hi`.
fn mu_window(c: &Config, system: &SlowFastSystem) -> (f64, f64) {
    let (lo, hi) = match system.tag() {
        ModelTag::Pitchfork => (-4.0, 8.0),
        ModelTag::Tanh => (-8.0, 8.0),
        ModelTag::Rotator => (-10.0, 12.0),
        ModelTag::Network => (-1.0, 11.0),
    };
    (c.mu_lo.unwrap_or(lo), c.mu_hi.unwrap_or(hi))
}

fn fast_window(system: &SlowFastSystem) -> (f64, f64) {
    match system.tag() {
        ModelTag::Pitchfork => (0.0, 3.0),
        ModelTag::Tanh => (0.0, 4.0),
        _ => (0.0, TAU),
    }
}

fn simulate(c: &Config) -> Result<String, CliError> {
    let system = c.system()?;
    let y0 = c.initial_condition()?;
    let t_end = c.t_end.unwrap_or(10.0 / system.eps());
    let table = experiments::trajectory_table(&system, &y0, t_end, c.dt, (c.rel_tol, c.abs_tol))?;
    let last = table.rows.last().cloned().unwrap_or_default();
    let path = emit(c, "simulate", &table)?;
    let end: Vec<String> = last.iter().map(|v| format_number(*v)).collect();
    Ok(format!("wrote {} ({} rows)\nfinal {}\n", path.display(), table.rows.len(), end.join(",")))
}

fn equilibria(c: &Config) -> Result<String, CliError> {
    let system = c.system()?;
    let found = find_equilibria(&system, &SearchBox::default_for(&system), 16);
    let names = system.coordinate_names();
    let header = names.iter().cloned().chain(["max_re".to_string(), "stable".to_string()]);
    let mut table = CsvTable::new(header).meta("model", system.tag());
    let mut summary = String::new();
    for (k, e) in found.iter().enumerate() {
        table = table.meta(format!("e{}", k + 1), e.classification);
        let max_re = e.eigenvalues.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
        table.push(e.state.iter().copied().chain([max_re, e.is_stable() as u8 as f64]).collect());
        let coords: Vec<String> = names.iter().zip(&e.state).map(|(n, v)| format!("{n}={v:.10}")).collect();
        summary += &format!("e{} {} {}\n", k + 1, e.classification, coords.join(" "));
    }
    let path = emit(c, "equilibria", &table)?;
    Ok(format!("{summary}wrote {}\n", path.display()))
}

fn manifold(c: &Config) -> Result<String, CliError> {
    let system = c.system()?;
    let saddles: Vec<_> = find_equilibria(&system, &SearchBox::default_for(&system), 16)
        .into_iter()
        .filter(|e| e.classification == Stability::Saddle && e.stable_count() == 1)
        .collect();
    if saddles.is_empty() {
        return Err(CliError::Numeric("no saddle with a one-dimensional stable manifold".into()));
    }
    let names = system.coordinate_names();
    let header = ["saddle", "branch", "s"].into_iter().map(String::from).chain(names);
    let mut table = CsvTable::new(header).meta("model", system.tag()).meta("eps", system.eps());
    let options = ManifoldOptions { max_segment: 0.02, ..ManifoldOptions::for_system(&system) };
    let mut summary = String::new();
    for (k, s) in saddles.iter().enumerate() {
        let (plus, minus) = trace_stable_manifold(&system, s, &options).map_err(numeric)?;
        for (branch, curve) in [(1.0, &plus), (-1.0, &minus)] {
            summary += &format!(
                "saddle {} branch {:+} arclength {:.6} termination {:?}\n",
                k + 1,
                branch,
                curve.total_arclength(),
                curve.termination
            );
            for (p, s) in curve.points.iter().zip(&curve.arclength) {
                table.push([k as f64 + 1.0, branch, *s].into_iter().chain(p.iter().copied()).collect());
            }
        }
    }
    let path = emit(c, "manifold", &table)?;
    Ok(format!("{summary}wrote {}\n", path.display()))
}

fn reduce(c: &Config) -> Result<String, CliError> {
    let system = c.system()?;
    let window = mu_window(c, &system);
    if !(window.0 < window.1) {
        return Err(CliError::Usage("mu-lo must be < mu-hi".into()));
    }
    let (table, info) = experiments::potential_table(&system, window, c.points.unwrap_or(1201), c.seed)?;
    let path = emit(c, "reduce", &table)?;
    Ok(format!("minima {}\nmaxima {}\nwrote {}\n", info["minima"], info["maxima"], path.display()))
}

fn grid(c: &Config) -> Result<String, CliError> {
    let system = c.system()?;
    let n = c.grid.unwrap_or(c.scale.grid());
    let mu = mu_window(c, &system);
    let base = if c.ic.is_some() { c.initial_condition()? } else { vec![0.0; system.dim()] };
    let section = CrossSection::plane(&system, base, (0, fast_window(&system).0, fast_window(&system).1), (system.slow_index(), mu.0, mu.1), n);
    let classifier = Classifier::new(system);
    let grid = basin_grid(&classifier, &section).map_err(|e| CliError::Usage(e.to_string()))?;
    let table = experiments::grid_table(&grid);
    let counts: Vec<String> = [BasinLabel::RotatingOrbit, BasinLabel::BoundedCycle, BasinLabel::Undecided]
        .into_iter()
        .chain((0..classifier.attractors.len()).map(BasinLabel::PointAttractor))
        .map(|l| format!("{l}: {}", grid.count(l)))
        .collect();
    let path = emit(c, "basin-grid", &table)?;
    Ok(format!("{}\nwrote {}\n", counts.join(", "), path.display()))
}

/// Sampling region: all phases over `[0, 2 pi)`, or `x` over the fast window,
/// and `mu` over `[mu-lo, mu-hi]` (default `[-10, 0]`).
fn region(c: &Config, system: &SlowFastSystem) -> Result<Region, CliError> {
    let (lo, hi) = (c.mu_lo.unwrap_or(-10.0), c.mu_hi.unwrap_or(0.0));
    let region = if system.has_rotations() {
        Region::phases_and_mu(system.fast_dim(), lo, hi)
    } else {
        let (x0, x1) = fast_window(system);
        Region { lo: vec![x0, lo], hi: vec![x1, hi] }
    };
    region.validate().map_err(|e| CliError::Usage(format!("empty region: {e}")))?;
    Ok(region)
}

fn default_target(c: &Config, system: &SlowFastSystem) -> BasinLabel {
    c.target.unwrap_or(if system.has_rotations() { BasinLabel::RotatingOrbit } else { BasinLabel::PointAttractor(0) })
}

fn volume(c: &Config) -> Result<String, CliError> {
    let system = c.system()?;
    let region = region(c, &system)?;
    let target = default_target(c, &system);
    let trials = c.trials.unwrap_or(c.scale.trials());
    let est = mc_volume(&Classifier::new(system.clone()), &region, trials, c.seed, target).map_err(numeric)?;
    let mut table = CsvTable::new(["eps", "volume", "stderr", "hits", "trials", "undecided"])
        .meta("model", system.tag())
        .meta("target", target)
        .meta("seed", c.seed);
    table.push(vec![est.eps, est.volume, est.stderr, est.hits as f64, est.trials as f64, est.undecided as f64]);
    let path = emit(c, "mc-volume", &table)?;
    Ok(format!(
        "V = {:.6} +- {:.6} ({} of {} trials, {} undecided)\nwrote {}\n",
        est.volume,
        est.stderr,
        est.hits,
        est.trials,
        est.undecided,
        path.display()
    ))
}

fn sweep(c: &Config) -> Result<String, CliError> {
    let system = c.system()?;
    if c.predict && system.tag() != ModelTag::Rotator {
        return Err(CliError::Usage("predict is only available for the rotator model".into()));
    }
    let region = region(c, &system)?;
    let eps = c.eps_list.clone().unwrap_or_else(|| experiments::SWEEP_EPS.to_vec());
    let trials = c.trials.unwrap_or(c.scale.trials());
    let (table, info) =
        experiments::sweep_table(&[(0.0, system.clone())], &region, &eps, trials, c.seed, default_target(c, &system), c.predict)?;
    let path = emit(c, "scaling-sweep", &table)?;
    let fit_path = write_json(c, "scaling-sweep-fit", &info)?;
    let fit = &info["fits"][0]["fit"];
    let mut out = match fit.is_null() {
        true => "fit: too few points with V > 0\n".to_string(),
        false => format!("C = {} log A = {} R2 = {}\n", fit["c"], fit["log_a"], fit["r2"]),
    };
    if let Some(p) = info.get("predicted") {
        out += &format!("C_pred = {}\n", p["c_pred"]);
    }
    Ok(format!("{out}wrote {}\nwrote {}\n", path.display(), fit_path.display()))
}

fn preset(c: &Config, name: &str) -> Result<String, CliError> {
    let options = PresetOptions { scale: c.scale, grid: c.grid, trials: c.trials, eps_list: c.eps_list.clone(), points: c.points };
    let record = experiments::run_preset(name, c.seed, &c.out, &options)?;
    Ok(format!(
        "{} seed {} hash {} in {:.2} s\nwrote {}\n",
        record.preset,
        record.seed,
        record.content_hash,
        record.wall_time_s,
        record.directory.display()
    ))
}

fn diff(c: &Config, a: &Path, b: &Path) -> Result<String, CliError> {
    let report = experiments::diff_runs(a, b, c.tol)?;
    Ok(serde_json::to_string_pretty(&report).map_err(numeric)? + "\n")
}
