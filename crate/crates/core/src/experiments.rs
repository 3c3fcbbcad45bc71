//! Named figure presets that run a full pipeline and persist its output as
//! `<out>/<preset>/<seed>/{data.csv, data.json, meta.json}`.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::basins::{basin_grid, BasinGrid, BasinLabel, Classifier, CrossSection, Region};
use crate::equilibria::{find_equilibria, trace_stable_manifold, wrap_polyline, ManifoldOptions, SearchBox, Stability};
use crate::io::{content_hash, io_err, CsvTable, IoError};
use crate::models::{NetworkParams, PitchforkParams, RotatorParams, SlowFastSystem, TanhParams};
use crate::ode::{self, OdeSpec};
use crate::reduction::{
    linspace, numeric_average_network_with, numeric_potential, AveragingProtocol, ReducedSystem, StationaryKind,
};
use crate::scaling::{fit_scaling, predicted_funnel_constant, volume_sweep, ScalingError, ScalingPoint};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error("runs are not comparable: {0}")]
    SchemaMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn numeric(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Numeric(e.to_string())
}

pub const PRESET_NAMES: [&str; 14] = [
    "fig1a", "fig1b", "fig1c", "fig1d", "fig2a", "fig2b", "fig2c", "fig2d", "fig3a", "fig3b", "fig3c", "fig3d", "fig4a",
    "fig4bc",
];

pub const SCHEMA_GRID: &str = "basin-grid/1";
pub const SCHEMA_POTENTIAL: &str = "potential/1";
pub const SCHEMA_SWEEP: &str = "volume-sweep/1";
pub const SCHEMA_TRAJECTORIES: &str = "trajectory-pair/1";

/// The eps grid of the volume sweeps.
pub const SWEEP_EPS: [f64; 6] = [0.05, 0.0667, 0.08, 0.1, 0.133, 0.2];

/// Phase of the second rotator on the `fig3b` section.
pub const FIG3B_PHASE: f64 = 1.2461;
/// Slow coordinate of the `fig3d` section.
pub const FIG3D_MU: f64 = 2.86;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// 256 x 256 grids, 10^4 Monte Carlo trials.
    #[default]
    Desk,
    /// 1024 x 1024 grids, 10^6 Monte Carlo trials.
    Paper,
}

impl Scale {
    pub fn grid(self) -> usize {
        match self {
            Scale::Desk => 256,
            Scale::Paper => 1024,
        }
    }

    pub fn trials(self) -> u64 {
        match self {
            Scale::Desk => 10_000,
            Scale::Paper => 1_000_000,
        }
    }
}

/// Overrides of the scale defaults. `None` keeps the default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PresetOptions {
    pub scale: Scale,
    pub grid: Option<usize>,
    pub trials: Option<u64>,
    pub eps_list: Option<Vec<f64>>,
    /// Number of potential samples.
    pub points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
enum Plan {
    Grid { system: SlowFastSystem, base: Vec<f64>, axes: [(usize, f64, f64); 2], manifolds: bool },
    Potential { system: SlowFastSystem, mu: (f64, f64), desk_points: usize, paper_points: usize },
    Sweep { groups: Vec<(f64, SlowFastSystem)>, region: Region, predict: bool },
    Twin { system: SlowFastSystem, phi0: f64, mu0: [f64; 2], eps_scan: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPreset {
    pub name: String,
    pub title: String,
    pub schema: &'static str,
    /// Parameters not given by the figure and chosen here.
    pub assumed: Vec<String>,
    plan: Plan,
}

fn fig3_network(eps: f64) -> NetworkParams {
    NetworkParams { omegas: vec![-4.0, -3.0], kappa: 1.0, eta: 10.0, alpha: FRAC_PI_2, eps }
}

const FIG3_ASSUMED: &str = "omega2 = -3 and alpha = pi/2";

/// Looks up a preset by name.
pub fn preset(name: &str) -> Result<ExperimentPreset> {
    let pitchfork = SlowFastSystem::pitchfork(PitchforkParams::default());
    let tanh = SlowFastSystem::tanh(TanhParams::default());
    let rotator = SlowFastSystem::rotator(RotatorParams::default());
    let mk = |title: &str, schema, assumed: &[&str], plan| ExperimentPreset {
        name: name.to_string(),
        title: title.to_string(),
        schema,
        assumed: assumed.iter().map(|s| s.to_string()).collect(),
        plan,
    };
    let p = match name {
        "fig1a" => mk(
            "pitchfork basins",
            SCHEMA_GRID,
            &["window x in [0, 3], mu in [-4, 8]"],
            Plan::Grid { system: pitchfork, base: vec![0.0, 0.0], axes: [(0, 0.0, 3.0), (1, -4.0, 8.0)], manifolds: true },
        ),
        "fig1b" => mk(
            "pitchfork reduced potential",
            SCHEMA_POTENTIAL,
            &["window mu in [-4, 8]"],
            Plan::Potential { system: pitchfork, mu: (-4.0, 8.0), desk_points: 1201, paper_points: 4801 },
        ),
        "fig1c" => mk(
            "tanh model basins",
            SCHEMA_GRID,
            &["window x in [0, 4], mu in [-8, 8]"],
            Plan::Grid { system: tanh, base: vec![0.0, 0.0], axes: [(0, 0.0, 4.0), (1, -8.0, 8.0)], manifolds: true },
        ),
        "fig1d" => mk(
            "tanh model reduced potential",
            SCHEMA_POTENTIAL,
            &["window mu in [-8, 8]"],
            Plan::Potential { system: tanh, mu: (-8.0, 8.0), desk_points: 1601, paper_points: 6401 },
        ),
        "fig2a" | "fig2c" => {
            let eps = if name == "fig2a" { 0.1 } else { 0.01 };
            mk(
                "rotator basins",
                SCHEMA_GRID,
                &["window mu in [-10, 12]"],
                Plan::Grid {
                    system: rotator.with_eps(eps),
                    base: vec![0.0, 0.0],
                    axes: [(0, 0.0, TAU), (1, -10.0, 12.0)],
                    manifolds: true,
                },
            )
        }
        "fig2b" => mk(
            "rotator averaged potential",
            SCHEMA_POTENTIAL,
            &["window mu in [-10, 12]"],
            Plan::Potential { system: rotator, mu: (-10.0, 12.0), desk_points: 2201, paper_points: 8801 },
        ),
        "fig2d" => mk(
            "rotator funnel volume against eps",
            SCHEMA_SWEEP,
            &["eps grid"],
            Plan::Sweep { groups: vec![(0.0, rotator)], region: Region::rotator_extended(1), predict: true },
        ),
        "fig3a" => mk(
            "two-rotator averaged potential",
            SCHEMA_POTENTIAL,
            &[FIG3_ASSUMED],
            Plan::Potential {
                system: SlowFastSystem::network(fig3_network(0.1)),
                mu: (-1.0, 11.0),
                desk_points: 121,
                paper_points: 481,
            },
        ),
        "fig3b" => mk(
            "two-rotator basins, phase section",
            SCHEMA_GRID,
            &[FIG3_ASSUMED, "the fixed phase belongs to the omega = -3 rotator", "window mu in [-10, 12]"],
            Plan::Grid {
                system: SlowFastSystem::network(fig3_network(0.1)),
                base: vec![0.0, FIG3B_PHASE, 0.0],
                axes: [(0, 0.0, TAU), (2, -10.0, 12.0)],
                manifolds: false,
            },
        ),
        "fig3c" => mk(
            "two-rotator funnel volume against eps",
            SCHEMA_SWEEP,
            &["alpha = pi/2", "omega2 = omega1 - delta_omega", "eps grid"],
            Plan::Sweep {
                groups: [0.6, 1.0, 2.2]
                    .iter()
                    .map(|&d| (d, SlowFastSystem::network(NetworkParams::two_rotators(d, 0.1))))
                    .collect(),
                region: Region::rotator_default(2),
                predict: false,
            },
        ),
        "fig3d" => mk(
            "two-rotator basins, mu section",
            SCHEMA_GRID,
            &[FIG3_ASSUMED],
            Plan::Grid {
                system: SlowFastSystem::network(fig3_network(0.1)),
                base: vec![0.0, 0.0, FIG3D_MU],
                axes: [(0, 0.0, TAU), (1, 0.0, TAU)],
                manifolds: false,
            },
        ),
        "fig4a" => mk(
            "ten-rotator funnel volume against eps",
            SCHEMA_SWEEP,
            &["eps grid"],
            Plan::Sweep {
                groups: vec![(0.0, SlowFastSystem::network(NetworkParams::ten_rotators(0.1)))],
                region: Region::rotator_default(10),
                predict: false,
            },
        ),
        "fig4bc" => mk(
            "ten-rotator twin trajectories",
            SCHEMA_TRAJECTORIES,
            &["eps scanned over {0.05, 0.1}"],
            Plan::Twin {
                system: SlowFastSystem::network(NetworkParams::ten_rotators(0.1)),
                phi0: 6.0,
                mu0: [-5.0, -5.1],
                eps_scan: vec![0.05, 0.1],
            },
        ),
        other => return Err(ExperimentError::UnknownPreset(other.to_string())),
    };
    Ok(p)
}

pub fn list_presets() -> Vec<ExperimentPreset> {
    PRESET_NAMES.iter().map(|n| preset(n).expect("known preset")).collect()
}

impl ExperimentPreset {
    /// Full parameter record after applying `options`.
    pub fn parameters(&self, options: &PresetOptions) -> Value {
        match &self.plan {
            Plan::Grid { system, base, axes, .. } => json!({
                "model": system.model,
                "base": base,
                "axes": axes.iter().map(|(i, lo, hi)| json!({"index": i, "lo": lo, "hi": hi})).collect::<Vec<_>>(),
                "grid": options.grid.unwrap_or(options.scale.grid()),
            }),
            Plan::Potential { system, mu, .. } => json!({
                "model": system.model,
                "mu": [mu.0, mu.1],
                "points": self.points(options),
            }),
            Plan::Sweep { groups, region, .. } => json!({
                "groups": groups.iter().map(|(g, s)| json!({"group": g, "model": s.model})).collect::<Vec<_>>(),
                "region": region,
                "eps": self.eps_list(options),
                "trials": options.trials.unwrap_or(options.scale.trials()),
                "target": BasinLabel::RotatingOrbit.to_string(),
            }),
            Plan::Twin { system, phi0, mu0, eps_scan } => json!({
                "model": system.model,
                "phi0": phi0,
                "mu0": mu0,
                "eps": options.eps_list.clone().unwrap_or_else(|| eps_scan.clone()),
            }),
        }
    }

    fn points(&self, options: &PresetOptions) -> usize {
        match &self.plan {
            Plan::Potential { desk_points, paper_points, .. } => options.points.unwrap_or(match options.scale {
                Scale::Desk => *desk_points,
                Scale::Paper => *paper_points,
            }),
            _ => 0,
        }
    }

    fn eps_list(&self, options: &PresetOptions) -> Vec<f64> {
        options.eps_list.clone().unwrap_or_else(|| SWEEP_EPS.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub preset: String,
    pub schema: String,
    pub timestamp_unix: u64,
    pub seed: u64,
    /// SHA-256 of `data.csv` and `data.json`.
    pub content_hash: String,
    pub wall_time_s: f64,
    pub directory: PathBuf,
}

/// Output of one preset before it is written.
#[derive(Debug, Clone, PartialEq)]
pub struct RunData {
    pub table: CsvTable,
    pub json: Value,
}

/// Computes a preset without touching the file system.
pub fn compute_preset(preset: &ExperimentPreset, seed: u64, options: &PresetOptions) -> Result<RunData> {
    let (table, json) = match &preset.plan {
        Plan::Grid { system, base, axes, manifolds } => {
            let n = options.grid.unwrap_or(options.scale.grid());
            if n == 0 {
                return Err(ExperimentError::InvalidInput("grid resolution must be positive".into()));
            }
            grid_run(system, base, axes, *manifolds, n)?
        }
        Plan::Potential { system, mu, .. } => {
            let points = preset.points(options);
            if points < 3 {
                return Err(ExperimentError::InvalidInput("a potential needs at least 3 points".into()));
            }
            potential_table(system, *mu, points, seed)?
        }
        Plan::Sweep { groups, region, predict } => {
            let trials = options.trials.unwrap_or(options.scale.trials());
            sweep_table(groups, region, &preset.eps_list(options), trials, seed, BasinLabel::RotatingOrbit, *predict)?
        }
        Plan::Twin { system, phi0, mu0, eps_scan } => {
            let eps = options.eps_list.clone().unwrap_or_else(|| eps_scan.clone());
            twin_run(system, *phi0, *mu0, &eps)?
        }
    };
    let table = table.meta("preset", &preset.name).meta("schema", preset.schema).meta("seed", seed);
    Ok(RunData { table, json })
}

/// Runs preset `name` and writes its outputs under `out_dir/<name>/<seed>/`.
pub fn run_preset(name: &str, seed: u64, out_dir: &Path, options: &PresetOptions) -> Result<RunRecord> {
    let preset = preset(name)?;
    let start = Instant::now();
    let data = compute_preset(&preset, seed, options)?;
    let dir = out_dir.join(name).join(seed.to_string());
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let csv = data.table.render();
    let json = serde_json::to_string_pretty(&data.json).map_err(IoError::from)? + "\n";
    let hash = content_hash([("data.csv", csv.as_bytes()), ("data.json", json.as_bytes())]);
    write(&dir.join("data.csv"), &csv)?;
    write(&dir.join("data.json"), &json)?;
    let record = RunRecord {
        preset: name.to_string(),
        schema: preset.schema.to_string(),
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        seed,
        content_hash: hash,
        wall_time_s: start.elapsed().as_secs_f64(),
        directory: dir.clone(),
    };
    let meta = json!({
        "record": record,
        "title": preset.title,
        "scale": options.scale,
        "parameters": preset.parameters(options),
        "assumed": preset.assumed,
    });
    write(&dir.join("meta.json"), &(serde_json::to_string_pretty(&meta).map_err(IoError::from)? + "\n"))?;
    Ok(record)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))?;
    Ok(())
}

fn equilibria_json(system: &SlowFastSystem) -> Vec<Value> {
    find_equilibria(system, &SearchBox::default_for(system), 16)
        .iter()
        .map(|e| json!({"state": e.state, "classification": e.classification.name(), "eigenvalues": e.eigenvalues}))
        .collect()
}

/// Label codes of a basin grid, one row per node of the second axis.
pub fn grid_table(grid: &BasinGrid) -> CsvTable {
    let system = SlowFastSystem::from(grid.model.clone());
    let [a0, a1] = &grid.section.axes;
    let header = std::iter::once(a1.name.clone()).chain((0..a0.count).map(|i| format!("c{i}")));
    let mut table = CsvTable::new(header)
        .meta("model", system.tag().name())
        .meta("eps", grid.eps)
        .meta("columns", format!("{} from {} to {} in {} cells", a0.name, a0.lo, a0.hi, a0.count))
        .meta("rows", format!("{} from {} to {} in {} cells", a1.name, a1.lo, a1.hi, a1.count))
        .meta("labels", "0 undecided, 1 rotating orbit, 2 bounded cycle, 10+k point attractor k");
    for (name, v) in &grid.fixed {
        table = table.meta(format!("fixed {name}"), v);
    }
    for j in 0..a1.count {
        let row = std::iter::once(a1.node(j)).chain((0..a0.count).map(|i| grid.label(i, j).code() as f64)).collect();
        table.push(row);
    }
    table
}

fn grid_run(
    system: &SlowFastSystem,
    base: &[f64],
    axes: &[(usize, f64, f64); 2],
    manifolds: bool,
    n: usize,
) -> Result<(CsvTable, Value)> {
    let section = CrossSection::plane(system, base.to_vec(), axes[0], axes[1], n);
    let classifier = Classifier::new(system.clone());
    let grid = basin_grid(&classifier, &section).map_err(numeric)?;
    let table = grid_table(&grid);
    let mut counts = serde_json::Map::new();
    for l in grid.labels.iter() {
        let e = counts.entry(l.to_string()).or_insert(json!(0));
        *e = json!(e.as_u64().unwrap_or(0) + 1);
    }
    let mut curves = Vec::new();
    if manifolds {
        let saddles: Vec<_> = find_equilibria(system, &SearchBox::default_for(system), 16)
            .into_iter()
            .filter(|e| e.classification == Stability::Saddle)
            .collect();
        let options = ManifoldOptions { max_segment: 0.05, ..ManifoldOptions::for_system(system) };
        for s in &saddles {
            let (plus, minus) = trace_stable_manifold(system, s, &options).map_err(numeric)?;
            for c in [plus, minus] {
                curves.push(json!({
                    "saddle": s.state,
                    "side": c.side,
                    "termination": c.termination,
                    "pieces": wrap_polyline(system, &c.points),
                }));
            }
        }
    }
    let json = json!({
        "equilibria": equilibria_json(system),
        "attractors": classifier.attractors.iter().map(|e| e.state.clone()).collect::<Vec<_>>(),
        "counts": counts,
        "manifolds": curves,
    });
    Ok((table, json))
}

/// Potential samples `mu, U, f` with the stationary points in the JSON part.
/// Network models are averaged numerically, one seed per sample.
pub fn potential_table(system: &SlowFastSystem, mu: (f64, f64), points: usize, seed: u64) -> Result<(CsvTable, Value)> {
    if points < 3 || !(mu.0 < mu.1) {
        return Err(ExperimentError::InvalidInput("need at least 3 points on a non-empty mu range".into()));
    }
    let grid = linspace(mu.0, mu.1, points - 1);
    let mut table = CsvTable::new(["mu", "U", "f"]).meta("model", system.tag().name()).meta("convention", "U' = -f");
    let stationary: Vec<(f64, StationaryKind)>;
    let provenance;
    if let Some(reduced) = ReducedSystem::of(system) {
        for &m in &grid {
            table.push(vec![m, reduced.potential(m), reduced.f(m)]);
        }
        stationary = reduced
            .roots(mu.0, mu.1, 4 * points)
            .into_iter()
            .map(|r| (r, if reduced.slope(r) < 0.0 { StationaryKind::Minimum } else { StationaryKind::Maximum }))
            .collect();
        provenance = "analytic";
    } else if let crate::models::Model::Network(p) = &system.model {
        let proto = AveragingProtocol::trimmed();
        let samples = grid
            .par_iter()
            .enumerate()
            .map(|(k, &m)| numeric_average_network_with(p, m, seed.wrapping_add(k as u64), &proto))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(numeric)?;
        let pot = numeric_potential(&samples).map_err(numeric)?;
        for k in 0..pot.mu.len() {
            table.push(vec![pot.mu[k], pot.u[k], pot.g_bar[k]]);
        }
        stationary = pot.stationary_points();
        provenance = "numeric-averaged";
    } else {
        return Err(ExperimentError::InvalidInput("model has no reduced system".into()));
    }
    let kinds = |k: StationaryKind| stationary.iter().filter(|s| s.1 == k).map(|s| s.0).collect::<Vec<_>>();
    let full: Vec<f64> =
        find_equilibria(system, &SearchBox::default_for(system), 16).iter().map(|e| e.mu()).collect();
    let json = json!({
        "provenance": provenance,
        "minima": kinds(StationaryKind::Minimum),
        "maxima": kinds(StationaryKind::Maximum),
        "equilibrium_mu": full,
    });
    Ok((table, json))
}

/// Volume sweeps for each `(group, system)`, with a scaling fit per group.
/// `predict` adds the rotator's quadrature constant between the region's
/// upper `mu` and the saddle.
pub fn sweep_table(
    groups: &[(f64, SlowFastSystem)],
    region: &Region,
    eps: &[f64],
    trials: u64,
    seed: u64,
    target: BasinLabel,
    predict: bool,
) -> Result<(CsvTable, Value)> {
    let mut table = CsvTable::new(["group", "eps", "volume", "stderr", "hits", "trials", "undecided"])
        .meta("target", target)
        .meta("region lo", format!("{:?}", region.lo))
        .meta("region hi", format!("{:?}", region.hi));
    let mut fits = Vec::new();
    for (g, system) in groups {
        let rows = volume_sweep(system, region, eps, trials, seed, target).map_err(|e| match e {
            ScalingError::InvalidInput(m) => ExperimentError::InvalidInput(m),
            other => numeric(other),
        })?;
        for (e, est) in &rows {
            table.push(vec![
                *g,
                *e,
                est.volume,
                est.stderr,
                est.hits as f64,
                est.trials as f64,
                est.undecided as f64,
            ]);
        }
        let points: Vec<ScalingPoint> = rows.iter().map(|(_, est)| ScalingPoint::from(est)).collect();
        let fit = match fit_scaling(&points) {
            Ok(f) => json!({"log_a": f.log_a, "c": f.c, "r2": f.r2, "excluded": f.excluded.len()}),
            Err(ScalingError::TooFewPoints { .. }) => Value::Null,
            Err(e) => return Err(numeric(e)),
        };
        fits.push(json!({"group": g, "fit": fit}));
    }
    let mut json = json!({ "fits": fits });
    if predict {
        if let crate::models::Model::Rotator(p) = &groups[0].1.model {
            let saddle = find_equilibria(&groups[0].1, &SearchBox::default_for(&groups[0].1), 16)
                .into_iter()
                .find(|e| e.classification == Stability::Saddle)
                .ok_or_else(|| numeric("no saddle found"))?;
            let span = (*region.hi.last().expect("region"), saddle.mu());
            let c = predicted_funnel_constant(p, span).map_err(numeric)?;
            json["predicted"] = json!({"c_pred": c.c_pred, "span": [span.0, span.1]});
        }
    }
    Ok((table, json))
}

/// Uniform samples of one trajectory as rows `t, y...`, integrated with
/// tolerances `(rel, abs)`.
pub fn sample_trajectory(
    system: &SlowFastSystem,
    y0: &[f64],
    t_end: f64,
    dt: f64,
    tol: (f64, f64),
) -> Result<Vec<Vec<f64>>> {
    if y0.len() != system.dim() || !system.in_domain(y0) {
        return Err(ExperimentError::InvalidInput("initial condition does not fit the model".into()));
    }
    if !(t_end > 0.0 && dt > 0.0 && t_end.is_finite()) {
        return Err(ExperimentError::InvalidInput("need t_end > 0 and dt > 0".into()));
    }
    let spec = OdeSpec::new(system.dim(), |_t, y: &[f64], dy: &mut [f64]| system.rhs(y, dy)).tolerances(tol.0, tol.1);
    let traj = ode::integrate(&spec, y0, (0.0, t_end)).map_err(numeric)?;
    let count = (t_end / dt + 1e-9).floor() as usize + 1;
    let states = traj.sample_uniform(0.0, dt, count).map_err(numeric)?;
    Ok(states
        .into_iter()
        .enumerate()
        .map(|(k, y)| std::iter::once(k as f64 * dt).chain(y).collect())
        .collect())
}

/// Trajectory table with columns `t` and the coordinate names.
pub fn trajectory_table(system: &SlowFastSystem, y0: &[f64], t_end: f64, dt: f64, tol: (f64, f64)) -> Result<CsvTable> {
    let mut table = CsvTable::new(std::iter::once("t".to_string()).chain(system.coordinate_names()))
        .meta("model", system.tag().name())
        .meta("eps", system.eps());
    for row in sample_trajectory(system, y0, t_end, dt, tol)? {
        table.push(row);
    }
    Ok(table)
}

fn twin_run(system: &SlowFastSystem, phi0: f64, mu0: [f64; 2], eps_scan: &[f64]) -> Result<(CsvTable, Value)> {
    let header = ["eps", "run", "t"].into_iter().map(String::from).chain(system.coordinate_names());
    let mut table = CsvTable::new(header).meta("sample step", 0.1);
    let mut runs = Vec::new();
    let mut split_eps = Value::Null;
    for &eps in eps_scan {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(ExperimentError::InvalidInput(format!("eps = {eps}")));
        }
        let sys = system.with_eps(eps);
        let classifier = Classifier::new(sys.clone());
        let mut labels = Vec::new();
        for (run, &m) in mu0.iter().enumerate() {
            let mut y0 = vec![phi0; sys.fast_dim()];
            y0.push(m);
            let label = classifier.classify(&y0);
            for row in sample_trajectory(&sys, &y0, classifier.horizon(), 0.1, (1e-9, 1e-9))? {
                table.push([eps, run as f64].into_iter().chain(row).collect());
            }
            runs.push(json!({"eps": eps, "run": run, "mu0": m, "label": label.to_string()}));
            labels.push(label);
        }
        if split_eps.is_null() && labels[0] != labels[1] {
            split_eps = json!(eps);
        }
    }
    Ok((table, json!({"runs": runs, "split_eps": split_eps})))
}

/// Outcome of comparing two runs of the same preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub preset: String,
    pub schema: String,
    pub same_hash: bool,
    pub cells_compared: usize,
    pub max_abs_diff: f64,
    pub cells_over_tol: usize,
    /// Grids: fraction of coincident nodes with equal labels.
    pub label_agreement: Option<f64>,
    /// Sweeps: largest `|V_a - V_b| / sqrt(se_a^2 + se_b^2)`.
    pub max_z: Option<f64>,
}

fn read_meta(dir: &Path) -> Result<(String, String, String)> {
    let path = dir.join("meta.json");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let v: Value = serde_json::from_str(&text).map_err(IoError::from)?;
    let field = |k: &str| {
        v["record"][k]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ExperimentError::Io(IoError::Parse(format!("{}: missing record.{k}", path.display()))))
    };
    Ok((field("preset")?, field("schema")?, field("content_hash")?))
}

/// Compares the `data.csv` of two run directories cell by cell.
pub fn diff_runs(a: &Path, b: &Path, tol: f64) -> Result<DiffReport> {
    let (preset_a, schema_a, hash_a) = read_meta(a)?;
    let (preset_b, schema_b, hash_b) = read_meta(b)?;
    if preset_a != preset_b || schema_a != schema_b {
        return Err(ExperimentError::SchemaMismatch(format!("{preset_a} ({schema_a}) vs {preset_b} ({schema_b})")));
    }
    let ta = CsvTable::read(&a.join("data.csv"))?;
    let tb = CsvTable::read(&b.join("data.csv"))?;
    let mut report = DiffReport {
        preset: preset_a,
        schema: schema_a.clone(),
        same_hash: hash_a == hash_b,
        cells_compared: 0,
        max_abs_diff: 0.0,
        cells_over_tol: 0,
        label_agreement: None,
        max_z: None,
    };
    if schema_a == SCHEMA_GRID && ta.header.len() != tb.header.len() {
        let (agreement, shared) = coincident_agreement(&ta, &tb)?;
        report.label_agreement = Some(agreement);
        report.cells_compared = shared;
        return Ok(report);
    }
    if ta.header != tb.header || ta.rows.len() != tb.rows.len() {
        return Err(ExperimentError::SchemaMismatch("tables differ in shape".into()));
    }
    for (ra, rb) in ta.rows.iter().zip(&tb.rows) {
        for (x, y) in ra.iter().zip(rb) {
            let d = (x - y).abs();
            report.cells_compared += 1;
            report.max_abs_diff = report.max_abs_diff.max(d);
            report.cells_over_tol += (d > tol) as usize;
        }
    }
    if schema_a == SCHEMA_GRID {
        let same = ta.rows.iter().zip(&tb.rows).map(|(x, y)| x[1..].iter().zip(&y[1..]).filter(|(u, v)| u == v).count());
        let total: usize = ta.rows.iter().map(|r| r.len() - 1).sum();
        report.label_agreement = Some(same.sum::<usize>() as f64 / total.max(1) as f64);
    }
    if schema_a == SCHEMA_SWEEP {
        let (v, s) = (ta.header.iter().position(|h| h == "volume"), ta.header.iter().position(|h| h == "stderr"));
        if let (Some(v), Some(s)) = (v, s) {
            let z = ta
                .rows
                .iter()
                .zip(&tb.rows)
                .map(|(x, y)| {
                    let se = (x[s] * x[s] + y[s] * y[s]).sqrt();
                    let d = (x[v] - y[v]).abs();
                    if d == 0.0 {
                        0.0
                    } else if se > 0.0 {
                        d / se
                    } else {
                        f64::INFINITY
                    }
                })
                .fold(0.0, f64::max);
            report.max_z = Some(z);
        }
    }
    Ok(report)
}

/// Label agreement on the nodes shared by two grids whose resolutions divide
/// each other, and the number of shared nodes.
fn coincident_agreement(a: &CsvTable, b: &CsvTable) -> Result<(f64, usize)> {
    let (coarse, fine) = if a.rows.len() <= b.rows.len() { (a, b) } else { (b, a) };
    let (nc, nf) = (coarse.rows.len(), fine.rows.len());
    let (mc, mf) = (coarse.header.len() - 1, fine.header.len() - 1);
    if nc == 0 || nf % nc != 0 || mf % mc != 0 || nf / nc != mf / mc {
        return Err(ExperimentError::SchemaMismatch(format!("grids {mc}x{nc} and {mf}x{nf} share no node lattice")));
    }
    let r = nf / nc;
    let mut same = 0usize;
    for j in 0..nc {
        for i in 0..mc {
            same += (coarse.rows[j][1 + i] == fine.rows[j * r][1 + i * r]) as usize;
        }
    }
    Ok((same as f64 / (nc * mc) as f64, nc * mc))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(grid: usize) -> PresetOptions {
        PresetOptions { grid: Some(grid), points: Some(241), ..Default::default() }
    }

    #[test]
    fn every_name_resolves_and_unknown_fails() {
        assert_eq!(list_presets().len(), 14);
        assert!(matches!(preset("fig9z"), Err(ExperimentError::UnknownPreset(_))));
        for p in list_presets() {
            if p.name.starts_with("fig3") || p.name.starts_with("fig4") {
                assert!(!p.assumed.is_empty(), "{}", p.name);
            }
        }
    }

    #[test]
    fn fig1b_has_double_well() {
        let data = compute_preset(&preset("fig1b").unwrap(), 1, &small(8)).unwrap();
        let minima: Vec<f64> = serde_json::from_value(data.json["minima"].clone()).unwrap();
        let maxima: Vec<f64> = serde_json::from_value(data.json["maxima"].clone()).unwrap();
        assert_eq!(minima.len(), 2);
        assert!((minima[0] + 2.0).abs() < 1e-9 && (minima[1] - 4.0).abs() < 1e-9, "{minima:?}");
        assert_eq!(maxima.len(), 1);
        assert!((maxima[0] - 1.0).abs() < 1e-9);
        assert_eq!(data.table.rows.len(), 241);
    }

    #[test]
    fn fig2a_saddle_matches_fig2b_maximum() {
        let a = compute_preset(&preset("fig2a").unwrap(), 1, &small(8)).unwrap();
        let b = compute_preset(&preset("fig2b").unwrap(), 1, &small(8)).unwrap();
        let saddle = a.json["equilibria"]
            .as_array()
            .unwrap()
            .iter()
            .find(|e| e["classification"] == "saddle")
            .map(|e| e["state"][1].as_f64().unwrap())
            .unwrap();
        let max = b.json["maxima"][0].as_f64().unwrap();
        assert!((saddle - max).abs() < 1e-6, "{saddle} vs {max}");
        assert!(!a.json["manifolds"].as_array().unwrap().is_empty());
    }

    #[test]
    fn same_seed_same_hash_and_zero_diff() {
        let dir = tempfile::tempdir().unwrap();
        let (d1, d2) = (dir.path().join("a"), dir.path().join("b"));
        let r1 = run_preset("fig1a", 5, &d1, &small(12)).unwrap();
        let r2 = run_preset("fig1a", 5, &d2, &small(12)).unwrap();
        assert_eq!(r1.content_hash, r2.content_hash);
        assert!(r1.directory.join("meta.json").exists());
        let rep = diff_runs(&r1.directory, &r2.directory, 0.0).unwrap();
        assert!(rep.same_hash);
        assert_eq!(rep.max_abs_diff, 0.0);
        assert_eq!(rep.label_agreement, Some(1.0));
    }

    #[test]
    fn diff_rejects_other_presets() {
        let dir = tempfile::tempdir().unwrap();
        let a = run_preset("fig1b", 1, dir.path(), &small(8)).unwrap();
        let b = run_preset("fig1d", 1, dir.path(), &small(8)).unwrap();
        assert!(matches!(diff_runs(&a.directory, &b.directory, 0.0), Err(ExperimentError::SchemaMismatch(_))));
    }

    #[test]
    fn grid_refinement_agrees_on_shared_nodes() {
        let dir = tempfile::tempdir().unwrap();
        let a = run_preset("fig1a", 1, &dir.path().join("a"), &small(16)).unwrap();
        let b = run_preset("fig1a", 1, &dir.path().join("b"), &small(32)).unwrap();
        let rep = diff_runs(&a.directory, &b.directory, 0.0).unwrap();
        assert_eq!(rep.label_agreement, Some(1.0));
    }

    #[test]
    fn trajectory_rows_are_uniform() {
        let sys = SlowFastSystem::rotator(RotatorParams::default());
        let t = trajectory_table(&sys, &[6.0, -5.0], 1.0, 0.25, (1e-9, 1e-9)).unwrap();
        assert_eq!(t.header, ["t", "phi", "mu"]);
        assert_eq!(t.column("t").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(t.rows[0][1..], [6.0, -5.0]);
        assert!(trajectory_table(&sys, &[6.0], 1.0, 0.25, (1e-9, 1e-9)).is_err());
    }
}
