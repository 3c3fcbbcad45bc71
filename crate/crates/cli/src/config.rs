//! Resolved run configuration: defaults, then a `key = value` file, then flags.

use std::f64::consts::FRAC_PI_2;
use std::path::PathBuf;
use std::str::FromStr;

use sfunnel_core::experiments::Scale;
use sfunnel_core::{BasinLabel, ModelTag, NetworkParams, PitchforkParams, RotatorParams, SlowFastSystem, TanhParams};

use crate::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SFUNNEL_OUT_DIR";

pub const KEYS: [&str; 29] = [
    "model", "a", "b", "omega", "eta", "alpha", "kappa", "eps", "n", "omegas", "seed", "M", "threads", "grid", "mu-lo",
    "mu-hi", "eps-list", "ic", "t-end", "dt", "points", "out", "format", "scale", "tol", "rel-tol", "abs-tol", "predict",
    "target",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err("format must be csv or json".into()),
        }
    }
}

impl std::fmt::Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub model: ModelTag,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub omega: Option<f64>,
    pub eta: Option<f64>,
    pub alpha: Option<f64>,
    pub kappa: Option<f64>,
    pub eps: f64,
    pub n: Option<usize>,
    pub omegas: Option<Vec<f64>>,
    pub seed: u64,
    /// Monte Carlo trials; `None` takes the scale default.
    pub trials: Option<u64>,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    /// Grid cells per axis; `None` takes the scale default.
    pub grid: Option<usize>,
    pub mu_lo: Option<f64>,
    pub mu_hi: Option<f64>,
    pub eps_list: Option<Vec<f64>>,
    pub ic: Option<String>,
    pub t_end: Option<f64>,
    pub dt: f64,
    pub points: Option<usize>,
    pub out: PathBuf,
    pub format: Format,
    pub scale: Scale,
    pub tol: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub predict: bool,
    pub target: Option<BasinLabel>,
}

impl Default for Config {
    /// The single-rotator basin figure: `omega = -4`, `eta = 10`, `alpha = pi/2`, `eps = 0.1`.
    fn default() -> Self {
        Self {
            model: ModelTag::Rotator,
            a: None,
            b: None,
            omega: None,
            eta: None,
            alpha: None,
            kappa: None,
            eps: 0.1,
            n: None,
            omegas: None,
            seed: 0,
            trials: None,
            threads: 0,
            grid: None,
            mu_lo: None,
            mu_hi: None,
            eps_list: None,
            ic: None,
            t_end: None,
            dt: 0.1,
            points: None,
            out: PathBuf::from("sfunnel-out"),
            format: Format::Csv,
            scale: Scale::Desk,
            tol: 0.0,
            rel_tol: 1e-9,
            abs_tol: 1e-9,
            predict: false,
            target: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.trim().parse().map_err(|_| CliError::Usage(format!("{key}: cannot parse '{value}'")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, CliError> {
    value.split(',').map(|v| parse(key, v)).collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl Config {
    /// Defaults with the output directory taken from the environment when set.
    pub fn from_env() -> Self {
        let mut c = Self::default();
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
            c.out = PathBuf::from(dir);
        }
        c
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "model" => self.model = value.parse().map_err(|_| CliError::Usage(format!("model: unknown model '{value}'")))?,
            "a" => self.a = Some(parse(key, value)?),
            "b" => self.b = Some(parse(key, value)?),
            "omega" => self.omega = Some(parse(key, value)?),
            "eta" => self.eta = Some(parse(key, value)?),
            "alpha" => self.alpha = Some(parse(key, value)?),
            "kappa" => self.kappa = Some(parse(key, value)?),
            "eps" => self.eps = parse(key, value)?,
            "n" => self.n = Some(parse(key, value)?),
            "omegas" => self.omegas = Some(parse_list(key, value)?),
            "seed" => self.seed = parse(key, value)?,
            "M" => self.trials = Some(parse(key, value)?),
            "threads" => self.threads = parse(key, value)?,
            "grid" => self.grid = Some(parse(key, value)?),
            "mu-lo" => self.mu_lo = Some(parse(key, value)?),
            "mu-hi" => self.mu_hi = Some(parse(key, value)?),
            "eps-list" => self.eps_list = Some(parse_list(key, value)?),
            "ic" => self.ic = Some(value.trim().to_string()),
            "t-end" => self.t_end = Some(parse(key, value)?),
            "dt" => self.dt = parse(key, value)?,
            "points" => self.points = Some(parse(key, value)?),
            "out" => self.out = PathBuf::from(value.trim()),
            "format" => self.format = value.trim().parse().map_err(|e: String| CliError::Usage(format!("format: {e}")))?,
            "scale" => {
                self.scale = match value.trim() {
                    "desk" => Scale::Desk,
                    "paper" => Scale::Paper,
                    _ => return Err(CliError::Usage("scale must be desk or paper".into())),
                }
            }
            "tol" => self.tol = parse(key, value)?,
            "rel-tol" => self.rel_tol = parse(key, value)?,
            "abs-tol" => self.abs_tol = parse(key, value)?,
            "predict" => self.predict = parse(key, value)?,
            "target" => {
                self.target = Some(value.trim().parse().map_err(|_| CliError::Usage(format!("target: unknown label '{value}'")))?)
            }
            _ => return Err(CliError::Usage(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Every key with its resolved value; optional keys only when set.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e: Vec<(&'static str, String)> = vec![("model", self.model.name().to_string())];
        let opt = [
            ("a", self.a),
            ("b", self.b),
            ("omega", self.omega),
            ("eta", self.eta),
            ("alpha", self.alpha),
            ("kappa", self.kappa),
        ];
        e.extend(opt.iter().filter_map(|(k, v)| v.map(|v| (*k, v.to_string()))));
        e.push(("eps", self.eps.to_string()));
        if let Some(n) = self.n {
            e.push(("n", n.to_string()));
        }
        if let Some(w) = &self.omegas {
            e.push(("omegas", join(w)));
        }
        e.push(("seed", self.seed.to_string()));
        if let Some(m) = self.trials {
            e.push(("M", m.to_string()));
        }
        e.push(("threads", self.threads.to_string()));
        if let Some(g) = self.grid {
            e.push(("grid", g.to_string()));
        }
        if let Some(v) = self.mu_lo {
            e.push(("mu-lo", v.to_string()));
        }
        if let Some(v) = self.mu_hi {
            e.push(("mu-hi", v.to_string()));
        }
        if let Some(l) = &self.eps_list {
            e.push(("eps-list", join(l)));
        }
        if let Some(ic) = &self.ic {
            e.push(("ic", ic.clone()));
        }
        if let Some(t) = self.t_end {
            e.push(("t-end", t.to_string()));
        }
        e.push(("dt", self.dt.to_string()));
        if let Some(p) = self.points {
            e.push(("points", p.to_string()));
        }
        e.push(("out", self.out.display().to_string()));
        e.push(("format", self.format.to_string()));
        e.push(("scale", if self.scale == Scale::Paper { "paper" } else { "desk" }.to_string()));
        e.push(("tol", self.tol.to_string()));
        e.push(("rel-tol", self.rel_tol.to_string()));
        e.push(("abs-tol", self.abs_tol.to_string()));
        e.push(("predict", self.predict.to_string()));
        if let Some(t) = self.target {
            e.push(("target", t.to_string()));
        }
        e
    }

    /// `key = value` lines that [`parse_config_file`] reads back into the same config.
    pub fn to_file_string(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<(), CliError> {
        pairs.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    /// Checks the model invariants and the ranges of the numeric settings.
    pub fn validate(&self) -> Result<(), CliError> {
        self.system()?;
        let usage = |m: &str| Err(CliError::Usage(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return usage("dt must be > 0");
        }
        if let Some(t) = self.t_end {
            if !(t > 0.0 && t.is_finite()) {
                return usage("t-end must be > 0");
            }
        }
        if self.grid == Some(0) {
            return usage("grid must be > 0");
        }
        if self.trials == Some(0) {
            return usage("M must be > 0");
        }
        if self.points.is_some_and(|p| p < 3) {
            return usage("points must be >= 3");
        }
        if let Some(l) = &self.eps_list {
            if l.is_empty() || l.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return usage("eps-list entries must be > 0");
            }
        }
        if !(self.tol >= 0.0) {
            return usage("tol must be >= 0");
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return usage("rel-tol and abs-tol must be > 0");
        }
        if let (Some(lo), Some(hi)) = (self.mu_lo, self.mu_hi) {
            if !(lo < hi) {
                return usage("mu-lo must be < mu-hi");
            }
        }
        if self.ic.is_some() {
            self.initial_condition()?;
        }
        Ok(())
    }

    fn reject_foreign(&self, allowed: &[&str]) -> Result<(), CliError> {
        let set = [
            ("a", self.a.is_some()),
            ("b", self.b.is_some()),
            ("omega", self.omega.is_some()),
            ("eta", self.eta.is_some()),
            ("alpha", self.alpha.is_some()),
            ("kappa", self.kappa.is_some()),
            ("n", self.n.is_some()),
            ("omegas", self.omegas.is_some()),
        ];
        match set.iter().find(|(k, on)| *on && !allowed.contains(k)) {
            Some((k, _)) => Err(CliError::Usage(format!("{k} does not apply to model {}", self.model))),
            None => Ok(()),
        }
    }

    /// The model instance described by this config.
    pub fn system(&self) -> Result<SlowFastSystem, CliError> {
        let bad = |e: sfunnel_core::models::ModelError| CliError::Usage(e.to_string());
        match self.model {
            ModelTag::Pitchfork => {
                self.reject_foreign(&["a", "b"])?;
                let d = PitchforkParams::default();
                Ok(SlowFastSystem::pitchfork(
                    PitchforkParams::new(self.a.unwrap_or(d.a), self.b.unwrap_or(d.b), self.eps).map_err(bad)?,
                ))
            }
            ModelTag::Tanh => {
                self.reject_foreign(&["a", "b"])?;
                let d = TanhParams::default();
                Ok(SlowFastSystem::tanh(TanhParams::new(self.a.unwrap_or(d.a), self.b.unwrap_or(d.b), self.eps).map_err(bad)?))
            }
            ModelTag::Rotator => {
                self.reject_foreign(&["omega", "eta", "alpha"])?;
                let d = RotatorParams::default();
                Ok(SlowFastSystem::rotator(
                    RotatorParams::new(
                        self.omega.unwrap_or(d.omega),
                        self.eta.unwrap_or(d.eta),
                        self.alpha.unwrap_or(d.alpha),
                        self.eps,
                    )
                    .map_err(bad)?,
                ))
            }
            ModelTag::Network => {
                self.reject_foreign(&["eta", "alpha", "kappa", "n", "omegas"])?;
                let omegas = match (&self.omegas, self.n) {
                    (Some(w), Some(n)) if w.len() != n => {
                        return Err(CliError::Usage(format!("omegas has {} entries but n = {n}", w.len())))
                    }
                    (Some(w), _) => w.clone(),
                    (None, n) => default_omegas(n.unwrap_or(10))?,
                };
                Ok(SlowFastSystem::network(
                    NetworkParams::new(
                        omegas,
                        self.kappa.unwrap_or(1.0),
                        self.eta.unwrap_or(10.0),
                        self.alpha.unwrap_or(FRAC_PI_2),
                        self.eps,
                    )
                    .map_err(bad)?,
                ))
            }
        }
    }

    /// Parses `ic`, e.g. `phi=6,mu=-5`. `phi` sets every phase; `phi3` one of
    /// them. Unnamed coordinates start at 0.
    pub fn initial_condition(&self) -> Result<Vec<f64>, CliError> {
        let system = self.system()?;
        let names = system.coordinate_names();
        let mut y = vec![0.0; system.dim()];
        let text = self.ic.as_deref().ok_or_else(|| CliError::Usage("ic is required".into()))?;
        for part in text.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| CliError::Usage(format!("ic: expected name=value, got '{part}'")))?;
            let (k, v) = (k.trim(), parse::<f64>("ic", v)?);
            if k == "phi" && system.has_rotations() {
                (0..system.fast_dim()).for_each(|i| y[i] = v);
            } else if let Some(i) = names.iter().position(|n| n == k) {
                y[i] = v;
            } else {
                return Err(CliError::Usage(format!("ic: unknown coordinate '{k}' (expected one of {})", names.join(", "))));
            }
        }
        if !system.in_domain(&y) {
            return Err(CliError::Usage("ic: initial condition outside the model domain".into()));
        }
        Ok(y)
    }
}

/// `n` natural frequencies spread evenly over `[-4, -3]`.
pub fn default_omegas(n: usize) -> Result<Vec<f64>, CliError> {
    match n {
        0 => Err(CliError::Usage("n must be > 0".into())),
        1 => Ok(vec![-4.0]),
        _ => Ok((0..n).map(|i| -4.0 + i as f64 / (n - 1) as f64).collect()),
    }
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) =
            line.split_once('=').ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", k + 1)))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(CliError::Usage(format!("config line {}: unknown key '{key}'", k + 1)));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}
