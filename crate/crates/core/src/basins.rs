//! Initial-condition classification, basin cross-sections and Monte Carlo
//! basin volumes.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibria::{classify, find_equilibria, Equilibrium, SearchBox};
use crate::models::{Model, SlowFastSystem};
use crate::ode::{self, Direction, EventSpec, OdeSpec, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BasinError {
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, BasinError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasinLabel {
    /// Index into [`Classifier::attractors`].
    PointAttractor(usize),
    RotatingOrbit,
    BoundedCycle,
    Undecided,
}

impl BasinLabel {
    /// Integer code used in grid files: 0 undecided, 1 rotating, 2 bounded
    /// cycle, `10 + k` for point attractor `k`.
    pub fn code(self) -> u32 {
        match self {
            BasinLabel::Undecided => 0,
            BasinLabel::RotatingOrbit => 1,
            BasinLabel::BoundedCycle => 2,
            BasinLabel::PointAttractor(k) => 10 + k as u32,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(BasinLabel::Undecided),
            1 => Some(BasinLabel::RotatingOrbit),
            2 => Some(BasinLabel::BoundedCycle),
            c if c >= 10 => Some(BasinLabel::PointAttractor((c - 10) as usize)),
            _ => None,
        }
    }
}

impl std::fmt::Display for BasinLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BasinLabel::PointAttractor(k) => write!(f, "point-attractor-{k}"),
            BasinLabel::RotatingOrbit => f.write_str("rotating-orbit"),
            BasinLabel::BoundedCycle => f.write_str("bounded-cycle"),
            BasinLabel::Undecided => f.write_str("undecided"),
        }
    }
}

impl std::str::FromStr for BasinLabel {
    type Err = BasinError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotating-orbit" | "rotating" => Ok(BasinLabel::RotatingOrbit),
            "bounded-cycle" => Ok(BasinLabel::BoundedCycle),
            "undecided" => Ok(BasinLabel::Undecided),
            other => other
                .strip_prefix("point-attractor-")
                .and_then(|k| k.parse().ok())
                .map(BasinLabel::PointAttractor)
                .ok_or_else(|| BasinError::InvalidInput(format!("unknown basin label '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Integration horizon; `None` picks a per-model multiple of `1 / eps`.
    pub horizon: Option<f64>,
    /// Rotation is declared once `mu` exceeds this (rotator models only).
    pub mu_threshold: Option<f64>,
    pub proximity: f64,
    /// Minimum advance of every phase over the second half of the horizon that counts as rotation.
    pub winding: f64,
    /// How many times the horizon may be extended by its own length before giving up.
    pub extensions: u32,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: u64,
}

impl ClassifierConfig {
    pub fn for_system(system: &SlowFastSystem) -> Self {
        let (mu_threshold, abs_tol) = if system.has_rotations() { (Some(9.0), 1e-9) } else { (None, 1e-14) };
        Self {
            horizon: None,
            mu_threshold,
            proximity: 1e-3,
            winding: 2.0 * TAU,
            extensions: 1,
            rel_tol: 1e-9,
            abs_tol,
            max_steps: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: BasinLabel,
    /// Time at which the decision was made.
    pub t_end: f64,
    pub diagnostic: Option<String>,
}

impl Classification {
    fn at(label: BasinLabel, t_end: f64) -> Self {
        Self { label, t_end, diagnostic: None }
    }
}

/// A system together with its known stable equilibria and classification rules.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub system: SlowFastSystem,
    /// Stable equilibria sorted by slow coordinate.
    pub attractors: Vec<Equilibrium>,
    pub config: ClassifierConfig,
}

impl Classifier {
    pub fn new(system: SlowFastSystem) -> Self {
        let config = ClassifierConfig::for_system(&system);
        Self::with_config(system, config)
    }

    pub fn with_config(system: SlowFastSystem, config: ClassifierConfig) -> Self {
        let attractors =
            find_equilibria(&system, &SearchBox::default_for(&system), 16).into_iter().filter(|e| e.is_stable()).collect();
        Self { system, attractors, config }
    }

    /// `10 / eps` for the rotator models. The pitchfork's upper equilibrium
    /// relaxes with rate ~0.25 eps, so the fast-variable models get `40 / eps`.
    pub fn horizon(&self) -> f64 {
        let slow_units = if self.system.has_rotations() { 10.0 } else { 40.0 };
        self.config.horizon.unwrap_or(slow_units / self.system.eps())
    }

    fn nearest_attractor(&self, y: &[f64]) -> Option<usize> {
        self.attractors.iter().position(|e| self.system.distance(y, &e.state) <= self.config.proximity)
    }

    fn spec(&self) -> OdeSpec<impl Fn(f64, &[f64], &mut [f64]) + '_> {
        let sys = &self.system;
        OdeSpec::new(sys.dim(), move |_t: f64, y: &[f64], dy: &mut [f64]| sys.rhs(y, dy))
            .tolerances(self.config.rel_tol, self.config.abs_tol)
            .max_steps(self.config.max_steps)
    }

    fn check_input(&self, y0: &[f64]) -> Option<Classification> {
        if y0.len() != self.system.dim() || y0.iter().any(|v| !v.is_finite()) {
            return Some(Classification {
                label: BasinLabel::Undecided,
                t_end: 0.0,
                diagnostic: Some("initial condition has the wrong length or is not finite".into()),
            });
        }
        if !self.system.in_domain(y0) {
            return Some(Classification {
                label: BasinLabel::Undecided,
                t_end: 0.0,
                diagnostic: Some("initial condition outside the model domain".into()),
            });
        }
        self.nearest_attractor(y0).map(|k| Classification::at(BasinLabel::PointAttractor(k), 0.0))
    }

    pub fn classify(&self, y0: &[f64]) -> BasinLabel {
        self.classify_detailed(y0).label
    }

    /// Event-driven classification: stops at the `mu` threshold or on entering
    /// the proximity ball of a stable equilibrium.
    pub fn classify_detailed(&self, y0: &[f64]) -> Classification {
        if let Some(c) = self.check_input(y0) {
            return c;
        }
        let sys = &self.system;
        let spec = self.spec();
        let slow = sys.slow_index();
        let mut events: Vec<EventSpec<'_>> = Vec::with_capacity(self.attractors.len() + 1);
        let threshold = self.config.mu_threshold.filter(|_| sys.has_rotations());
        for e in &self.attractors {
            let prox = self.config.proximity;
            events.push(EventSpec::new(move |y: &[f64], _t| sys.distance(y, &e.state) - prox, Direction::Falling, true));
        }
        if let Some(level) = threshold {
            events.push(EventSpec::threshold(slow, level, Direction::Rising, true));
        }
        let horizon = self.horizon();
        let mut start = y0.to_vec();
        let mut t0 = 0.0;
        for round in 0..=self.config.extensions {
            let t1 = horizon * (round + 1) as f64;
            let traj = match ode::integrate_with_events(&spec, &start, (t0, t1), &events) {
                Ok(t) => t,
                Err(err) => {
                    return Classification { label: BasinLabel::Undecided, t_end: t0, diagnostic: Some(err.to_string()) }
                }
            };
            if traj.terminated_by_event {
                let id = traj.events.last().map(|e| e.id).unwrap_or(0);
                let label = if id < self.attractors.len() { BasinLabel::PointAttractor(id) } else { BasinLabel::RotatingOrbit };
                return Classification::at(label, traj.final_time());
            }
            if let Some(label) = self.judge_final(&traj) {
                return Classification::at(label, traj.final_time());
            }
            start = traj.final_state().to_vec();
            t0 = t1;
        }
        Classification {
            label: BasinLabel::Undecided,
            t_end: t0,
            diagnostic: Some("horizon expired with no criterion met".into()),
        }
    }

    /// Classification by phase winding and final proximity only; no event
    /// detection. Serves as the oracle for [`Classifier::classify`].
    pub fn classify_by_winding(&self, y0: &[f64]) -> BasinLabel {
        if let Some(c) = self.check_input(y0) {
            return c.label;
        }
        let spec = self.spec();
        let horizon = self.horizon();
        let mut start = y0.to_vec();
        let mut t0 = 0.0;
        for round in 0..=self.config.extensions {
            let t1 = horizon * (round + 1) as f64;
            let Ok(traj) = ode::integrate(&spec, &start, (t0, t1)) else {
                return BasinLabel::Undecided;
            };
            if let Some(label) = self.judge_final(&traj) {
                return label;
            }
            start = traj.final_state().to_vec();
            t0 = t1;
        }
        BasinLabel::Undecided
    }

    /// Post-horizon rules shared by both classifiers.
    fn judge_final(&self, traj: &Trajectory) -> Option<BasinLabel> {
        let sys = &self.system;
        if sys.has_rotations() && self.winding(traj) > self.config.winding {
            return Some(BasinLabel::RotatingOrbit);
        }
        let last = traj.final_state();
        if let Some(k) = self.nearest_attractor(last) {
            return Some(BasinLabel::PointAttractor(k));
        }
        if let Some(k) = self.polish_to_attractor(last) {
            return Some(BasinLabel::PointAttractor(k));
        }
        if sys.has_rotations() && self.bounded_oscillation(traj) {
            return Some(BasinLabel::BoundedCycle);
        }
        None
    }

    /// Smallest absolute phase advance over the second half of the
    /// trajectory. A partially locked state, where some rotators drift while
    /// others stay locked, does not count as rotating.
    fn winding(&self, traj: &Trajectory) -> f64 {
        let n = self.system.fast_dim();
        let (a, b) = (traj.first_time(), traj.final_time());
        let Ok(mid) = traj.dense_eval(0.5 * (a + b)) else { return 0.0 };
        let end = traj.final_state();
        (0..n).map(|i| (end[i] - mid[i]).abs()).fold(f64::INFINITY, f64::min)
    }

    /// `mu` keeps turning around with non-negligible amplitude over the second half.
    fn bounded_oscillation(&self, traj: &Trajectory) -> bool {
        let slow = self.system.slow_index();
        let half = 0.5 * (traj.first_time() + traj.final_time());
        let mut turns = 0;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut last_sign = 0.0;
        for i in (0..traj.len()).filter(|&i| traj.time(i) >= half) {
            let mu = traj.state(i)[slow];
            lo = lo.min(mu);
            hi = hi.max(mu);
            let s = traj.derivative(i)[slow].signum();
            if s != 0.0 && last_sign != 0.0 && s != last_sign {
                turns += 1;
            }
            if s != 0.0 {
                last_sign = s;
            }
        }
        turns >= 4 && hi - lo > 10.0 * self.config.proximity
    }

    /// Near-stationary end states (residual below 1e-6) are refined with the
    /// equilibrium classifier and matched against the known attractors.
    fn polish_to_attractor(&self, y: &[f64]) -> Option<usize> {
        let r = self.system.rhs_vec(y).iter().map(|v| v * v).sum::<f64>().sqrt();
        if r > 1e-6 {
            return None;
        }
        let eq = classify(&self.system, y).ok()?;
        if !eq.is_stable() {
            return None;
        }
        self.attractors.iter().position(|e| self.system.distance(&eq.state, &e.state) <= 1e-2)
    }
}

/// Sampling box over all coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let r = Self { lo, hi };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(BasinError::InvalidRegion("bounds must have equal, non-zero length".into()));
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
            return Err(BasinError::InvalidRegion("bounds must be finite with lo < hi".into()));
        }
        Ok(())
    }

    /// Phases over `[0, 2 pi)` and `mu` over `[mu_lo, mu_hi]`.
    pub fn phases_and_mu(n_phases: usize, mu_lo: f64, mu_hi: f64) -> Self {
        let mut lo = vec![0.0; n_phases + 1];
        let mut hi = vec![TAU; n_phases + 1];
        lo[n_phases] = mu_lo;
        hi[n_phases] = mu_hi;
        Self { lo, hi }
    }

    /// `mu(0)` in `[-10, 0]`.
    pub fn rotator_default(n_phases: usize) -> Self {
        Self::phases_and_mu(n_phases, -10.0, 0.0)
    }

    /// `mu(0)` in `[-10, 3]`.
    pub fn rotator_extended(n_phases: usize) -> Self {
        Self::phases_and_mu(n_phases, -10.0, 3.0)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| l + rng.random::<f64>() * (h - l)).collect()
    }
}

/// Generator for trial `index`: the master seed picks the key, the trial
/// index the stream, so draws do not depend on scheduling.
pub fn trial_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

pub fn trial_ic(region: &Region, master_seed: u64, index: u64) -> Vec<f64> {
    region.sample(&mut trial_rng(master_seed, index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub trials: u64,
    pub hits: u64,
    pub volume: f64,
    pub stderr: f64,
    pub undecided: u64,
    pub region: Region,
    pub seed: u64,
    pub eps: f64,
    pub target: BasinLabel,
}

impl McEstimate {
    fn from_counts(trials: u64, hits: u64, undecided: u64, region: &Region, seed: u64, eps: f64, target: BasinLabel) -> Self {
        let v = hits as f64 / trials as f64;
        Self {
            trials,
            hits,
            volume: v,
            stderr: (v * (1.0 - v) / trials as f64).sqrt(),
            undecided,
            region: region.clone(),
            seed,
            eps,
            target,
        }
    }
}

/// Fraction of `trials` uniform initial conditions in `region` whose label is `target`.
pub fn mc_volume(
    classifier: &Classifier,
    region: &Region,
    trials: u64,
    master_seed: u64,
    target: BasinLabel,
) -> Result<McEstimate> {
    region.validate()?;
    if region.lo.len() != classifier.system.dim() {
        return Err(BasinError::InvalidRegion(format!(
            "region has {} coordinates, system has {}",
            region.lo.len(),
            classifier.system.dim()
        )));
    }
    if trials == 0 {
        return Err(BasinError::InvalidInput("at least one trial is required".into()));
    }
    let (hits, undecided) = (0..trials)
        .into_par_iter()
        .map(|i| {
            let label = classifier.classify(&trial_ic(region, master_seed, i));
            ((label == target) as u64, (label == BasinLabel::Undecided) as u64)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(McEstimate::from_counts(trials, hits, undecided, region, master_seed, classifier.system.eps(), target))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub index: u64,
    pub initial: Vec<f64>,
    pub event_label: BasinLabel,
    pub winding_label: BasinLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub trials: u64,
    pub agreements: u64,
    pub disagreements: Vec<Disagreement>,
}

impl OracleComparison {
    pub fn agreement(&self) -> f64 {
        self.agreements as f64 / self.trials as f64
    }
}

/// Runs both classifiers on the same random initial conditions.
pub fn compare_classifiers(classifier: &Classifier, region: &Region, trials: u64, master_seed: u64) -> Result<OracleComparison> {
    region.validate()?;
    let disagreements: Vec<Disagreement> = (0..trials)
        .into_par_iter()
        .filter_map(|i| {
            let ic = trial_ic(region, master_seed, i);
            let event_label = classifier.classify(&ic);
            let winding_label = classifier.classify_by_winding(&ic);
            (event_label != winding_label).then_some(Disagreement { index: i, initial: ic, event_label, winding_label })
        })
        .collect();
    Ok(OracleComparison { trials, agreements: trials - disagreements.len() as u64, disagreements })
}

/// One free axis of a cross-section: `count` nodes `lo + k (hi - lo) / count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub index: usize,
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn node(&self, k: usize) -> f64 {
        self.lo + (self.hi - self.lo) * k as f64 / self.count as f64
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.count as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.node(k)).collect()
    }
}

/// Two free coordinates; all others fixed at `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub base: Vec<f64>,
    pub axes: [GridAxis; 2],
}

impl CrossSection {
    /// Plane over coordinates `(i, j)` of `system` with the given ranges.
    pub fn plane(system: &SlowFastSystem, base: Vec<f64>, i: (usize, f64, f64), j: (usize, f64, f64), count: usize) -> Self {
        let names = system.coordinate_names();
        let axis = |(index, lo, hi): (usize, f64, f64)| GridAxis { index, name: names[index].clone(), lo, hi, count };
        Self { base, axes: [axis(i), axis(j)] }
    }

    /// The `(fast, mu)` plane of a two-dimensional model.
    pub fn fast_slow(system: &SlowFastSystem, fast: (f64, f64), mu: (f64, f64), count: usize) -> Self {
        Self::plane(system, vec![0.0, 0.0], (0, fast.0, fast.1), (1, mu.0, mu.1), count)
    }

    pub fn with_resolution(&self, count: usize) -> Self {
        let mut c = self.clone();
        c.axes[0].count = count;
        c.axes[1].count = count;
        c
    }

    pub fn validate(&self, system: &SlowFastSystem) -> Result<()> {
        if self.base.len() != system.dim() {
            return Err(BasinError::InvalidGrid(format!("base has {} coordinates, expected {}", self.base.len(), system.dim())));
        }
        if self.axes[0].index == self.axes[1].index {
            return Err(BasinError::InvalidGrid("free axes must differ".into()));
        }
        for a in &self.axes {
            if a.index >= system.dim() || a.count == 0 || !(a.lo < a.hi) || !a.lo.is_finite() || !a.hi.is_finite() {
                return Err(BasinError::InvalidGrid(format!("bad axis '{}'", a.name)));
            }
        }
        Ok(())
    }

    pub fn state(&self, i: usize, j: usize) -> Vec<f64> {
        let mut y = self.base.clone();
        y[self.axes[0].index] = self.axes[0].node(i);
        y[self.axes[1].index] = self.axes[1].node(j);
        y
    }

    /// Names and values of the coordinates held fixed.
    pub fn fixed(&self, system: &SlowFastSystem) -> Vec<(String, f64)> {
        let names = system.coordinate_names();
        (0..self.base.len())
            .filter(|&k| k != self.axes[0].index && k != self.axes[1].index)
            .map(|k| (names[k].clone(), self.base[k]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinGrid {
    pub section: CrossSection,
    pub fixed: Vec<(String, f64)>,
    /// Row-major: `labels[j * n0 + i]` for node `i` of axis 0 and `j` of axis 1.
    pub labels: Vec<BasinLabel>,
    pub model: Model,
    pub eps: f64,
}

impl BasinGrid {
    pub fn shape(&self) -> (usize, usize) {
        (self.section.axes[0].count, self.section.axes[1].count)
    }

    pub fn label(&self, i: usize, j: usize) -> BasinLabel {
        self.labels[j * self.section.axes[0].count + i]
    }

    pub fn count(&self, label: BasinLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

pub fn basin_grid(classifier: &Classifier, section: &CrossSection) -> Result<BasinGrid> {
    section.validate(&classifier.system)?;
    let (n0, n1) = (section.axes[0].count, section.axes[1].count);
    let rows: Vec<Vec<BasinLabel>> = (0..n1)
        .into_par_iter()
        .map(|j| (0..n0).map(|i| classifier.classify(&section.state(i, j))).collect())
        .collect();
    Ok(BasinGrid {
        section: section.clone(),
        fixed: section.fixed(&classifier.system),
        labels: rows.into_iter().flatten().collect(),
        model: classifier.system.model.clone(),
        eps: classifier.system.eps(),
    })
}

/// Phase of the stable equilibrium branch for a rotator at slow value `mu`.
pub fn rotator_stable_phase(omega: f64, mu: f64) -> f64 {
    (mu + omega).clamp(-1.0, 1.0).asin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{PitchforkParams, RotatorParams};

    fn rotator() -> Classifier {
        Classifier::new(SlowFastSystem::rotator(RotatorParams::default()))
    }

    fn pitchfork() -> Classifier {
        Classifier::new(SlowFastSystem::pitchfork(PitchforkParams::default()))
    }

    #[test]
    fn label_codes_round_trip() {
        for l in [BasinLabel::Undecided, BasinLabel::RotatingOrbit, BasinLabel::BoundedCycle, BasinLabel::PointAttractor(3)] {
            assert_eq!(BasinLabel::from_code(l.code()), Some(l));
            assert_eq!(l.to_string().parse::<BasinLabel>().unwrap(), l);
        }
        assert_eq!(BasinLabel::from_code(5), None);
    }

    #[test]
    fn rotator_examples() {
        let c = rotator();
        assert_eq!(c.attractors.len(), 1);
        let e = c.attractors[0].state.clone();
        assert_eq!(c.classify(&e), BasinLabel::PointAttractor(0));
        for phi in [0.0, 1.0, 3.0, 5.5] {
            assert_eq!(c.classify(&[phi, 10.0]), BasinLabel::RotatingOrbit);
        }
    }

    #[test]
    fn pitchfork_example_goes_to_the_lower_equilibrium() {
        let c = pitchfork();
        assert_eq!(c.attractors.len(), 2);
        assert!((c.attractors[0].mu() + 2.0).abs() < 1e-8);
        assert_eq!(c.classify(&[0.5, -1.0]), BasinLabel::PointAttractor(0));
        assert_eq!(c.classify(&[2.5, 6.0]), BasinLabel::PointAttractor(1));
        assert_eq!(c.classify(&[-1.0, 0.0]), BasinLabel::Undecided);
    }

    #[test]
    fn short_horizon_is_undecided() {
        let sys = SlowFastSystem::pitchfork(PitchforkParams::default());
        let cfg = ClassifierConfig { horizon: Some(0.5), extensions: 0, ..ClassifierConfig::for_system(&sys) };
        let c = Classifier::with_config(sys, cfg);
        let out = c.classify_detailed(&[0.5, -1.0]);
        assert_eq!(out.label, BasinLabel::Undecided);
        assert!(out.diagnostic.is_some());
    }

    #[test]
    fn trial_streams_are_independent_of_order() {
        let region = Region::rotator_extended(1);
        let forward: Vec<Vec<f64>> = (0..50).map(|i| trial_ic(&region, 7, i)).collect();
        let backward: Vec<Vec<f64>> = (0..50).rev().map(|i| trial_ic(&region, 7, i)).collect();
        assert!(forward.iter().eq(backward.iter().rev()));
        assert_ne!(trial_ic(&region, 7, 0), trial_ic(&region, 8, 0));
        for ic in &forward {
            assert!((0.0..TAU).contains(&ic[0]) && (-10.0..3.0).contains(&ic[1]));
        }
    }

    #[test]
    fn estimator_is_exact_on_pure_regions() {
        let c = rotator();
        // Far above the fold every state rotates.
        let rotating = Region::phases_and_mu(1, 10.0, 11.0);
        let est = mc_volume(&c, &rotating, 200, 1, BasinLabel::RotatingOrbit).unwrap();
        assert_eq!((est.hits, est.volume, est.stderr), (200, 1.0, 0.0));
        let pitch = pitchfork();
        // Right of the funnel, away from x = 0: all of it drains to (2, 4).
        let white = Region::new(vec![1.5, 4.0], vec![3.0, 8.0]).unwrap();
        let est = mc_volume(&pitch, &white, 1000, 3, BasinLabel::PointAttractor(0)).unwrap();
        assert_eq!((est.hits, est.volume), (0, 0.0));
        assert!(est.hits <= est.trials && (0.0..=1.0).contains(&est.volume));
    }

    #[test]
    fn empty_region_is_rejected() {
        assert!(Region::new(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        let c = rotator();
        let bad = Region { lo: vec![0.0], hi: vec![1.0] };
        assert!(mc_volume(&c, &bad, 10, 0, BasinLabel::RotatingOrbit).is_err());
    }

    #[test]
    fn grid_nodes_coincide_under_refinement() {
        let c = pitchfork();
        let coarse = CrossSection::fast_slow(&c.system, (0.0, 3.0), (-4.0, 8.0), 8);
        let fine = coarse.with_resolution(16);
        for i in 0..8 {
            assert_eq!(coarse.axes[0].node(i), fine.axes[0].node(2 * i));
            assert_eq!(coarse.axes[1].node(i), fine.axes[1].node(2 * i));
        }
        let a = basin_grid(&c, &coarse).unwrap();
        let b = basin_grid(&c, &fine).unwrap();
        for j in 0..8 {
            for i in 0..8 {
                assert_eq!(a.label(i, j), b.label(2 * i, 2 * j));
            }
        }
        assert_eq!(a.shape(), (8, 8));
        assert_eq!(a.count(BasinLabel::Undecided), 0);
    }

    #[test]
    fn bad_sections_are_rejected() {
        let c = pitchfork();
        let mut s = CrossSection::fast_slow(&c.system, (0.0, 3.0), (-4.0, 8.0), 4);
        s.axes[1].index = 0;
        assert!(basin_grid(&c, &s).is_err());
        let s = CrossSection::fast_slow(&c.system, (3.0, 0.0), (-4.0, 8.0), 4);
        assert!(basin_grid(&c, &s).is_err());
    }
}
