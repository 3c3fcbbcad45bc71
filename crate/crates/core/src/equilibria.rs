//! Equilibria of the full systems, their linear stability, and the stable
//! manifold of a saddle (the basin boundary that forms the funnel walls).

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{angle_diff, wrap_angle, Model, SlowFastSystem};
use crate::ode::{self, Direction, EventSpec, OdeError, OdeSpec};

/// Acceptance bound on `|rhs|` for a returned equilibrium.
pub const RESIDUAL_TOL: f64 = 1e-11;
/// Loosest residual that [`classify`] accepts.
pub const CLASSIFY_TOL: f64 = 1e-8;
/// `|Re lambda|` at or below this counts as zero.
pub const HYPERBOLICITY_TOL: f64 = 1e-9;
/// Minimum separation between distinct equilibria.
pub const DEDUP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EquilibriumError {
    #[error("not an equilibrium: |rhs| = {residual:e}")]
    NotAnEquilibrium { residual: f64 },
    #[error("not a saddle with exactly one stable direction: {0}")]
    NotASaddle(String),
    #[error("curve does not reach mu = {mu}")]
    RangeNotCovered { mu: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Integration(#[from] OdeError),
}

pub type Result<T> = std::result::Result<T, EquilibriumError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    StableNode,
    StableFocus,
    Saddle,
    UnstableNode,
    UnstableFocus,
    Nonhyperbolic,
}

impl Stability {
    pub fn is_stable(self) -> bool {
        matches!(self, Stability::StableNode | Stability::StableFocus)
    }

    pub fn name(self) -> &'static str {
        match self {
            Stability::StableNode => "stable-node",
            Stability::StableFocus => "stable-focus",
            Stability::Saddle => "saddle",
            Stability::UnstableNode => "unstable-node",
            Stability::UnstableFocus => "unstable-focus",
            Stability::Nonhyperbolic => "nonhyperbolic",
        }
    }
}

impl std::fmt::Display for Stability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Complex eigenvalue as `(re, im)`.
pub type Eigenvalue = (f64, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    /// Full-system state; angular coordinates reduced into `[0, 2 pi)`.
    pub state: Vec<f64>,
    /// Jacobian eigenvalues sorted by real part.
    pub eigenvalues: Vec<Eigenvalue>,
    pub classification: Stability,
    pub residual: f64,
}

impl Equilibrium {
    pub fn mu(&self) -> f64 {
        *self.state.last().expect("non-empty state")
    }

    pub fn is_stable(&self) -> bool {
        self.classification.is_stable()
    }

    pub fn stable_count(&self) -> usize {
        self.eigenvalues.iter().filter(|e| e.0 < -HYPERBOLICITY_TOL).count()
    }
}

/// Sign pattern of the real parts decides the type; imaginary parts split
/// nodes from foci.
pub fn classify_eigenvalues(eigenvalues: &[Eigenvalue]) -> Stability {
    if eigenvalues.iter().any(|e| e.0.abs() <= HYPERBOLICITY_TOL) {
        return Stability::Nonhyperbolic;
    }
    let oscillating = eigenvalues.iter().any(|e| e.1.abs() > 1e-12);
    let stable = eigenvalues.iter().filter(|e| e.0 < 0.0).count();
    match (stable, oscillating) {
        (s, false) if s == eigenvalues.len() => Stability::StableNode,
        (s, true) if s == eigenvalues.len() => Stability::StableFocus,
        (0, false) => Stability::UnstableNode,
        (0, true) => Stability::UnstableFocus,
        _ => Stability::Saddle,
    }
}

/// Central-difference Jacobian with step `1e-6 (1 + |y|)`.
pub fn jacobian(system: &SlowFastSystem, y: &[f64]) -> DMatrix<f64> {
    let n = y.len();
    let h = 1e-6 * (1.0 + y.iter().map(|v| v * v).sum::<f64>().sqrt());
    let mut jac = DMatrix::zeros(n, n);
    let mut yp = y.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        yp[j] = y[j] + h;
        system.rhs(&yp, &mut fp);
        yp[j] = y[j] - h;
        system.rhs(&yp, &mut fm);
        yp[j] = y[j];
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

fn eigenvalues_of(jac: &DMatrix<f64>) -> Vec<Eigenvalue> {
    let mut ev: Vec<Eigenvalue> = jac.clone().complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect();
    ev.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    ev
}

fn residual(system: &SlowFastSystem, y: &[f64]) -> f64 {
    system.rhs_vec(y).iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn classify(system: &SlowFastSystem, state: &[f64]) -> Result<Equilibrium> {
    if state.len() != system.dim() {
        return Err(EquilibriumError::InvalidInput(format!(
            "state has length {}, expected {}",
            state.len(),
            system.dim()
        )));
    }
    let res = residual(system, state);
    if !(res <= CLASSIFY_TOL) {
        return Err(EquilibriumError::NotAnEquilibrium { residual: res });
    }
    let eigenvalues = eigenvalues_of(&jacobian(system, state));
    Ok(Equilibrium {
        state: system.wrap_phase(state),
        classification: classify_eigenvalues(&eigenvalues),
        eigenvalues,
        residual: res,
    })
}

/// Axis-aligned box, one interval per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SearchBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() || self.lo.is_empty() {
            return Err(EquilibriumError::InvalidInput("box bounds must have equal, non-zero length".into()));
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
            return Err(EquilibriumError::InvalidInput("box bounds must be finite with lo < hi".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        y.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| v >= l && v <= h)
    }

    /// Search box used for equilibria at the published parameters.
    pub fn default_for(system: &SlowFastSystem) -> Self {
        match &system.model {
            Model::Pitchfork(_) => Self { lo: vec![0.0, -4.0], hi: vec![4.0, 8.0] },
            Model::Tanh(_) => Self { lo: vec![0.0, -8.0], hi: vec![4.0, 8.0] },
            Model::Rotator(p) => Self { lo: vec![0.0, -p.omega - 1.5], hi: vec![TAU, -p.omega + 1.5] },
            Model::Network(p) => {
                let n = p.n();
                let mut lo = vec![0.0; n + 1];
                let mut hi = vec![TAU; n + 1];
                let (wmin, wmax) = p.omegas.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &w| (a.min(w), b.max(w)));
                lo[n] = -wmax - 1.0 - p.kappa;
                hi[n] = -wmin + 1.0 + p.kappa;
                Self { lo, hi }
            }
        }
    }
}

fn grid_nodes(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| lo + (hi - lo) * (k as f64 + 0.5) / n as f64)
}

/// Full tensor grids are used up to three coordinates; larger networks are
/// seeded from the quasistatic branches `phi_i = arcsin(mu + omega_i)` and
/// their single-oscillator flips.
fn seeds(system: &SlowFastSystem, bx: &SearchBox, density: usize) -> Vec<Vec<f64>> {
    let dim = system.dim();
    if dim <= 3 {
        let mut out = vec![Vec::with_capacity(dim)];
        for i in 0..dim {
            let axis: Vec<f64> = grid_nodes(bx.lo[i], bx.hi[i], density).collect();
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&v| {
                        let mut s = prefix.clone();
                        s.push(v);
                        s
                    })
                })
                .collect();
        }
        return out;
    }
    let Model::Network(p) = &system.model else { unreachable!("only networks exceed three coordinates") };
    let n = p.n();
    let mut out = Vec::new();
    for mu in grid_nodes(bx.lo[n], bx.hi[n], density * 4) {
        let base: Vec<f64> = p.omegas.iter().map(|w| (mu + w).clamp(-1.0, 1.0).asin()).collect();
        for flip in 0..=n {
            let mut s = base.clone();
            if flip < n {
                s[flip] = PI - s[flip];
            }
            s.push(mu);
            out.push(s);
        }
    }
    out
}

fn project_domain(system: &SlowFastSystem, y: &mut [f64]) {
    if matches!(system.model, Model::Pitchfork(_) | Model::Tanh(_)) && y[0] < 0.0 {
        y[0] = 0.0;
    }
}

/// Damped Newton with finite-difference Jacobians. Returns the best point and
/// its residual.
fn newton(system: &SlowFastSystem, seed: &[f64]) -> Option<(Vec<f64>, f64)> {
    let mut y = seed.to_vec();
    let mut res = residual(system, &y);
    for _ in 0..80 {
        if res <= 1e-15 {
            break;
        }
        let f = DVector::from_vec(system.rhs_vec(&y));
        let dx = jacobian(system, &y).lu().solve(&(-f))?;
        let mut lambda = 1.0;
        let mut improved = false;
        while lambda >= 1e-6 {
            let mut trial: Vec<f64> = y.iter().zip(dx.iter()).map(|(a, d)| a + lambda * d).collect();
            project_domain(system, &mut trial);
            let r = residual(system, &trial);
            if r < res {
                y = trial;
                res = r;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    res.is_finite().then_some((y, res))
}

/// Multi-start Newton over a `density`-per-axis seed grid (at least 8).
/// Results are sorted by slow coordinate, then lexicographically.
pub fn find_equilibria(system: &SlowFastSystem, bx: &SearchBox, density: usize) -> Vec<Equilibrium> {
    if bx.validate().is_err() || bx.dim() != system.dim() {
        return Vec::new();
    }
    let density = density.max(8);
    let mut found: Vec<Vec<f64>> = seeds(system, bx, density)
        .par_iter()
        .filter_map(|s| newton(system, s))
        .filter(|(y, r)| *r <= RESIDUAL_TOL && system.in_domain(y))
        .map(|(y, _)| system.wrap_phase(&y))
        .filter(|y| inside_modulo_angles(system, bx, y))
        .collect();
    let slow = system.slow_index();
    found.sort_by(|a, b| {
        a[slow].total_cmp(&b[slow]).then_with(|| {
            a.iter().zip(b).map(|(u, v)| u.total_cmp(v)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let mut unique: Vec<Vec<f64>> = Vec::new();
    for y in found {
        if unique.iter().all(|u| system.distance(u, &y) > DEDUP_TOL) {
            unique.push(y);
        }
    }
    unique.iter().filter_map(|y| classify(system, y).ok()).collect()
}

/// Angular coordinates are only bounded modulo `2 pi`.
fn inside_modulo_angles(system: &SlowFastSystem, bx: &SearchBox, y: &[f64]) -> bool {
    y.iter().enumerate().all(|(i, &v)| {
        if system.is_angular(i) && bx.hi[i] - bx.lo[i] >= TAU - 1e-12 {
            true
        } else {
            v >= bx.lo[i] - 1e-9 && v <= bx.hi[i] + 1e-9
        }
    })
}

/// Labels `(main, alternative)` for equilibria ordered by slow coordinate:
/// `e1, e2, ...` and the zero-based `e0, e1, ...`.
pub fn equilibrium_labels(count: usize) -> Vec<(String, String)> {
    (0..count).map(|k| (format!("e{}", k + 1), format!("e{k}"))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifoldSide {
    /// Seeded at `saddle + delta v`.
    Plus,
    /// Seeded at `saddle - delta v`.
    Minus,
    /// Not traced: a known invariant set serving as the other funnel wall.
    Invariant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    LeftBox { coordinate: usize },
    /// Arc cap reached inside the box (escape failure; the partial curve is kept).
    ArcCap,
    /// Time limit reached inside the box (escape failure).
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldCurve {
    pub points: Vec<Vec<f64>>,
    /// Cumulative arc length at each point.
    pub arclength: Vec<f64>,
    pub side: ManifoldSide,
    pub termination: Termination,
}

impl ManifoldCurve {
    pub fn total_arclength(&self) -> f64 {
        self.arclength.last().copied().unwrap_or(0.0)
    }

    pub fn escape_failure(&self) -> bool {
        !matches!(self.termination, Termination::LeftBox { .. })
    }

    /// The invariant line `x = 0` of the pitchfork and tanh models over `mu_range`.
    pub fn fast_axis(mu_range: (f64, f64)) -> Self {
        let (lo, hi) = mu_range;
        Self {
            points: vec![vec![0.0, lo], vec![0.0, hi]],
            arclength: vec![0.0, hi - lo],
            side: ManifoldSide::Invariant,
            termination: Termination::LeftBox { coordinate: 1 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldOptions {
    pub delta: f64,
    pub domain: SearchBox,
    pub arc_cap: f64,
    /// Largest distance between consecutive polyline points.
    pub max_segment: f64,
    pub t_max: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl ManifoldOptions {
    /// The pitchfork and tanh walls get exponentially close to `x = 0`, so
    /// those runs use a purely relative error control.
    pub fn for_system(system: &SlowFastSystem) -> Self {
        let (domain, abs_tol) = match &system.model {
            Model::Pitchfork(_) | Model::Tanh(_) => (SearchBox { lo: vec![0.0, -4.0], hi: vec![4.0, 8.0] }, 1e-300),
            _ => {
                let n = system.fast_dim();
                let mut lo = vec![-20.0 * PI; n + 1];
                let mut hi = vec![20.0 * PI; n + 1];
                lo[n] = -12.0;
                hi[n] = 12.0;
                (SearchBox { lo, hi }, 1e-14)
            }
        };
        Self {
            delta: 1e-6,
            domain,
            arc_cap: 1e4,
            max_segment: 0.005,
            t_max: 1e3 / system.eps(),
            rel_tol: 1e-12,
            abs_tol,
        }
    }
}

/// Unit stable eigenvector of a saddle with one stable direction, oriented so
/// its first component is non-negative.
pub fn stable_eigenvector(system: &SlowFastSystem, saddle: &Equilibrium) -> Result<Vec<f64>> {
    if saddle.classification != Stability::Saddle || saddle.stable_count() != 1 {
        return Err(EquilibriumError::NotASaddle(format!(
            "{} with {} stable eigenvalues",
            saddle.classification,
            saddle.stable_count()
        )));
    }
    let (lambda, im) = saddle.eigenvalues[0];
    if im != 0.0 {
        return Err(EquilibriumError::NotASaddle("stable eigenvalue is complex".into()));
    }
    let n = system.dim();
    let shifted = jacobian(system, &saddle.state) - DMatrix::identity(n, n) * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let k = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .expect("non-empty");
    let mut v: Vec<f64> = v_t.row(k).iter().copied().collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let sign = if v[0] < 0.0 { -1.0 } else { 1.0 };
    v.iter_mut().for_each(|x| *x *= sign / norm);
    Ok(v)
}

/// Traces both branches of the saddle's stable manifold backward in time
/// from `saddle +- delta v` until they leave `options.domain`.
pub fn trace_stable_manifold(
    system: &SlowFastSystem,
    saddle: &Equilibrium,
    options: &ManifoldOptions,
) -> Result<(ManifoldCurve, ManifoldCurve)> {
    if !(options.delta > 0.0 && options.arc_cap > 0.0 && options.max_segment > 0.0) {
        return Err(EquilibriumError::InvalidInput("delta, arc cap and segment bound must be positive".into()));
    }
    if options.domain.dim() != system.dim() {
        return Err(EquilibriumError::InvalidInput("domain box has the wrong dimension".into()));
    }
    let v = stable_eigenvector(system, saddle)?;
    // Start from the unwrapped Newton point so it sits inside the domain.
    let plus = trace_branch(system, &saddle.state, &v, 1.0, options)?;
    let minus = trace_branch(system, &saddle.state, &v, -1.0, options)?;
    Ok((plus, minus))
}

fn trace_branch(
    system: &SlowFastSystem,
    origin: &[f64],
    v: &[f64],
    sign: f64,
    options: &ManifoldOptions,
) -> Result<ManifoldCurve> {
    let n = system.dim();
    let y0: Vec<f64> = origin.iter().zip(v).map(|(o, d)| o + sign * options.delta * d).chain([0.0]).collect();
    // Reversed field plus an arc-length accumulator.
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        system.rhs(&y[..n], &mut dy[..n]);
        let mut speed = 0.0;
        for d in dy[..n].iter_mut() {
            *d = -*d;
            speed += *d * *d;
        }
        dy[n] = speed.sqrt();
    };
    let spec = OdeSpec::new(n + 1, rhs).tolerances(options.rel_tol, options.abs_tol);
    let mut events = Vec::with_capacity(2 * n + 1);
    for i in 0..n {
        events.push(EventSpec::threshold(i, options.domain.lo[i], Direction::Falling, true));
        events.push(EventSpec::threshold(i, options.domain.hi[i], Direction::Rising, true));
    }
    events.push(EventSpec::threshold(n, options.arc_cap, Direction::Rising, true));
    let traj = ode::integrate_with_events(&spec, &y0, (0.0, options.t_max), &events)?;
    let termination = match traj.events.last() {
        Some(e) if traj.terminated_by_event && e.id < 2 * n => Termination::LeftBox { coordinate: e.id / 2 },
        Some(_) if traj.terminated_by_event => Termination::ArcCap,
        _ => Termination::TimeLimit,
    };

    let mut points: Vec<Vec<f64>> = Vec::with_capacity(traj.len());
    let mut arclength = Vec::with_capacity(traj.len());
    let mut buf = vec![0.0; n + 1];
    for i in 0..traj.len() {
        let y = traj.state(i);
        if let Some(prev) = points.last().cloned() {
            let mut pieces = (euclid(&prev, &y[..n]) / options.max_segment).ceil() as usize;
            // Equal time steps are not equal chords; refine until every chord fits.
            for _ in 0..20 {
                if pieces <= 1 {
                    break;
                }
                let (t0, t1) = (traj.time(i - 1), traj.time(i));
                let mut fill = Vec::with_capacity(pieces - 1);
                for k in 1..pieces {
                    traj.dense_eval_into(t0 + (t1 - t0) * k as f64 / pieces as f64, &mut buf)?;
                    fill.push(buf[..n].to_vec());
                }
                let fits = std::iter::once(&prev)
                    .chain(&fill)
                    .zip(fill.iter().chain(std::iter::once(&y[..n].to_vec())))
                    .all(|(a, b)| euclid(a, b) <= options.max_segment);
                if fits {
                    points.extend(fill);
                    break;
                }
                pieces *= 2;
            }
        }
        points.push(y[..n].to_vec());
    }
    // Chord lengths, so that the arc-length column is monotone by construction.
    let mut acc = 0.0;
    arclength.push(0.0);
    for k in 1..points.len() {
        acc += euclid(&points[k - 1], &points[k]);
        arclength.push(acc);
    }
    let side = if sign > 0.0 { ManifoldSide::Plus } else { ManifoldSide::Minus };
    Ok(ManifoldCurve { points, arclength, side, termination })
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// The two funnel walls for a model: both manifold branches for the rotator;
/// for the pitchfork and tanh models the branch that runs along `x = 0`
/// together with the invariant axis itself.
pub fn funnel_walls(system: &SlowFastSystem, options: &ManifoldOptions) -> Result<(ManifoldCurve, ManifoldCurve)> {
    let saddles: Vec<Equilibrium> = find_equilibria(system, &SearchBox::default_for(system), 16)
        .into_iter()
        .filter(|e| e.classification == Stability::Saddle && e.stable_count() == 1)
        .collect();
    let [saddle] = saddles.as_slice() else {
        return Err(EquilibriumError::NotASaddle(format!("expected one saddle, found {}", saddles.len())));
    };
    let (plus, minus) = trace_stable_manifold(system, saddle, options)?;
    match system.model {
        Model::Pitchfork(_) | Model::Tanh(_) => {
            let axis = ManifoldCurve::fast_axis((options.domain.lo[1], options.domain.hi[1]));
            Ok((minus, axis))
        }
        _ => Ok((plus, minus)),
    }
}

/// First point where a polyline crosses `mu = level`, by linear interpolation.
pub fn crossing_at(curve: &ManifoldCurve, level: f64) -> Option<Vec<f64>> {
    let slow = curve.points.first()?.len() - 1;
    curve.points.windows(2).find_map(|w| {
        let (a, b) = (w[0][slow] - level, w[1][slow] - level);
        if a == 0.0 {
            return Some(w[0].clone());
        }
        if a * b > 0.0 || a == b {
            return None;
        }
        let s = a / (a - b);
        Some(w[0].iter().zip(&w[1]).map(|(p, q)| p + s * (q - p)).collect())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthSample {
    pub mu: f64,
    pub width: f64,
}

/// Fast-coordinate gap between the two walls at each `mu` (angular gaps on the circle).
pub fn funnel_width_profile(
    system: &SlowFastSystem,
    curves: (&ManifoldCurve, &ManifoldCurve),
    mu_grid: &[f64],
) -> Result<Vec<WidthSample>> {
    mu_grid
        .iter()
        .map(|&mu| {
            let a = crossing_at(curves.0, mu).ok_or(EquilibriumError::RangeNotCovered { mu })?;
            let b = crossing_at(curves.1, mu).ok_or(EquilibriumError::RangeNotCovered { mu })?;
            let width = if system.is_angular(0) { angle_diff(a[0], b[0]).abs() } else { (a[0] - b[0]).abs() };
            Ok(WidthSample { mu, width })
        })
        .collect()
}

fn point_segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    let t = if len2 == 0.0 {
        0.0
    } else {
        (p.iter().zip(a).zip(&ab).map(|((p, a), d)| (p - a) * d).sum::<f64>() / len2).clamp(0.0, 1.0)
    };
    p.iter().zip(a).zip(&ab).map(|((p, a), d)| (p - a - t * d).powi(2)).sum::<f64>().sqrt()
}

/// Largest distance from a point of `a` to the polyline `b`.
///
/// Segments of `b` are bucketed on a grid over the first two coordinates;
/// each query widens a ring of cells until no unvisited segment can be closer.
pub fn directed_hausdorff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    if b.len() == 1 || b[0].len() < 2 {
        return a
            .iter()
            .map(|p| b.iter().map(|q| euclid(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max);
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for q in b {
        x0 = x0.min(q[0]);
        x1 = x1.max(q[0]);
        y0 = y0.min(q[1]);
        y1 = y1.max(q[1]);
    }
    let extent = (x1 - x0).max(y1 - y0).max(f64::MIN_POSITIVE);
    let mean_chord = b.windows(2).map(|w| euclid(&w[0], &w[1])).sum::<f64>() / (b.len() - 1) as f64;
    let h = mean_chord.max(extent * 1e-5);
    let cell = |x: f64, y: f64| (((x - x0) / h).floor() as i64, ((y - y0) / h).floor() as i64);
    let mut grid: std::collections::HashMap<(i64, i64), Vec<usize>> = std::collections::HashMap::new();
    for (k, w) in b.windows(2).enumerate() {
        let (c0, c1) = (cell(w[0][0].min(w[1][0]), w[0][1].min(w[1][1])), cell(w[0][0].max(w[1][0]), w[0][1].max(w[1][1])));
        for i in c0.0..=c1.0 {
            for j in c0.1..=c1.1 {
                grid.entry((i, j)).or_default().push(k);
            }
        }
    }
    let (gx, gy) = cell(x1, y1);
    a.iter()
        .map(|p| {
            let (ci, cj) = cell(p[0], p[1]);
            let r_max = [ci.abs(), cj.abs(), (gx - ci).abs(), (gy - cj).abs()].into_iter().max().unwrap_or(0) + 1;
            let mut best = f64::INFINITY;
            for r in 0..=r_max {
                for i in ci - r..=ci + r {
                    for j in cj - r..=cj + r {
                        if (i - ci).abs() != r && (j - cj).abs() != r {
                            continue;
                        }
                        if let Some(segs) = grid.get(&(i, j)) {
                            for &k in segs {
                                best = best.min(point_segment_distance(p, &b[k], &b[k + 1]));
                            }
                        }
                    }
                }
                if best <= r as f64 * h {
                    break;
                }
            }
            best
        })
        .fold(0.0, f64::max)
}

/// Whether two planar polylines properly intersect (shared endpoints excluded).
pub fn polylines_cross(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    let orient = |p: &[f64], q: &[f64], r: &[f64]| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
    let bbox = |w: &[Vec<f64>]| {
        let (x0, x1) = (w[0][0].min(w[1][0]), w[0][0].max(w[1][0]));
        let (y0, y1) = (w[0][1].min(w[1][1]), w[0][1].max(w[1][1]));
        (x0, x1, y0, y1)
    };
    let b_boxes: Vec<_> = b.windows(2).map(bbox).collect();
    a.windows(2).any(|s| {
        let (ax0, ax1, ay0, ay1) = bbox(s);
        b.windows(2).zip(&b_boxes).any(|(t, &(bx0, bx1, by0, by1))| {
            if ax1 < bx0 || bx1 < ax0 || ay1 < by0 || by1 < ay0 {
                return false;
            }
            let d1 = orient(&s[0], &s[1], &t[0]);
            let d2 = orient(&s[0], &s[1], &t[1]);
            let d3 = orient(&t[0], &t[1], &s[0]);
            let d4 = orient(&t[0], &t[1], &s[1]);
            d1 * d2 < 0.0 && d3 * d4 < 0.0
        })
    })
}

/// Unwrapped angular curve folded into `[0, 2 pi)`, split where it wraps.
pub fn wrap_polyline(system: &SlowFastSystem, points: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
    let mut pieces: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut current: Vec<Vec<f64>> = Vec::new();
    let mut last_turn = None;
    for p in points {
        let turn = if system.is_angular(0) { Some((p[0] / TAU).floor() as i64) } else { None };
        if turn != last_turn && !current.is_empty() {
            pieces.push(std::mem::take(&mut current));
        }
        last_turn = turn;
        let mut q = p.clone();
        if system.is_angular(0) {
            q[0] = wrap_angle(q[0]);
        }
        current.push(q);
    }
    if !current.is_empty() {
        pieces.push(current);
    }
    pieces
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{NetworkParams, PitchforkParams, RotatorParams, TanhParams};
    use crate::reduction::ReducedSystem;

    fn pitchfork() -> SlowFastSystem {
        SlowFastSystem::pitchfork(PitchforkParams::default())
    }

    fn rotator() -> SlowFastSystem {
        SlowFastSystem::rotator(RotatorParams::default())
    }

    fn analytic_pitchfork_jacobian(p: &PitchforkParams, x: f64, mu: f64) -> [[f64; 2]; 2] {
        [[mu - 3.0 * x * x, x], [p.eps * p.a, -p.eps]]
    }

    #[test]
    fn pitchfork_equilibria_match_substitution_oracle() {
        let sys = pitchfork();
        let eqs = find_equilibria(&sys, &SearchBox::default_for(&sys), 16);
        // -mu + 3 s - 2 = 0 with s = sqrt(mu): s^2 - 3 s + 2 = 0, so s in {1, 2}.
        let expected = [([0.0, -2.0], true), ([1.0, 1.0], false), ([2.0, 4.0], true)];
        assert_eq!(eqs.len(), 3);
        for (e, (state, stable)) in eqs.iter().zip(expected) {
            assert!((e.state[0] - state[0]).abs() < 1e-8 && (e.state[1] - state[1]).abs() < 1e-8, "{e:?}");
            assert_eq!(e.is_stable(), stable);
            assert!(e.residual <= RESIDUAL_TOL);
        }
        assert_eq!(eqs[1].classification, Stability::Saddle);
    }

    #[test]
    fn finite_difference_jacobian_matches_analytic_pitchfork() {
        let p = PitchforkParams::default();
        let sys = SlowFastSystem::pitchfork(p);
        for &(x, mu) in &[(0.3, -1.0), (1.0, 1.0), (2.5, 4.0), (0.01, 7.0)] {
            let j = jacobian(&sys, &[x, mu]);
            let a = analytic_pitchfork_jacobian(&p, x, mu);
            for i in 0..2 {
                for k in 0..2 {
                    assert!((j[(i, k)] - a[i][k]).abs() < 1e-7, "({x}, {mu}) entry {i}{k}");
                }
            }
        }
    }

    #[test]
    fn classification_examples() {
        let sys = pitchfork();
        let e = classify(&sys, &[2.0, 4.0]).unwrap();
        assert!(e.eigenvalues.iter().all(|l| l.0 < 0.0));
        let s = classify(&sys, &[1.0, 1.0]).unwrap();
        assert_eq!(s.classification, Stability::Saddle);
        assert!(s.eigenvalues[0].0 < 0.0 && s.eigenvalues[1].0 > 0.0);
        let z = classify(&sys, &[0.0, -2.0]).unwrap();
        assert!((z.eigenvalues[0].0 + 2.0).abs() < 1e-8 && (z.eigenvalues[1].0 + 0.1).abs() < 1e-8);
        assert!(matches!(classify(&sys, &[0.5, 0.5]), Err(EquilibriumError::NotAnEquilibrium { .. })));
    }

    #[test]
    fn eigenvalue_sign_patterns() {
        assert_eq!(classify_eigenvalues(&[(-1.0, 0.0), (-2.0, 0.0)]), Stability::StableNode);
        assert_eq!(classify_eigenvalues(&[(-1.0, 1.0), (-1.0, -1.0)]), Stability::StableFocus);
        assert_eq!(classify_eigenvalues(&[(-1.0, 0.0), (2.0, 0.0)]), Stability::Saddle);
        assert_eq!(classify_eigenvalues(&[(1.0, 0.0), (2.0, 0.0)]), Stability::UnstableNode);
        assert_eq!(classify_eigenvalues(&[(1.0, 3.0), (1.0, -3.0)]), Stability::UnstableFocus);
        assert_eq!(classify_eigenvalues(&[(1e-10, 0.0), (-1.0, 0.0)]), Stability::Nonhyperbolic);
    }

    #[test]
    fn tanh_equilibria_have_a_middle_saddle() {
        let sys = SlowFastSystem::tanh(TanhParams::default());
        let eqs = find_equilibria(&sys, &SearchBox::default_for(&sys), 16);
        let mus: Vec<f64> = eqs.iter().map(Equilibrium::mu).collect();
        assert_eq!(eqs.len(), 3, "{mus:?}");
        let oracle = crate::reduction::bisect(|m| -m + 5.0 * m.tanh(), 4.0, 6.0);
        assert!((mus[0] + oracle).abs() < 1e-8 && mus[1].abs() < 1e-8 && (mus[2] - oracle).abs() < 1e-8);
        assert_eq!(eqs[1].classification, Stability::Saddle);
        assert!(eqs[0].is_stable() && eqs[2].is_stable());
    }

    #[test]
    fn rotator_equilibria_match_quadratic_oracle() {
        let sys = rotator();
        let eqs = find_equilibria(&sys, &SearchBox::default_for(&sys), 16);
        // Inside the stripe with alpha = pi/2: 101 mu^2 - 820 mu + 1600 = 0.
        let disc = (820.0f64 * 820.0 - 4.0 * 101.0 * 1600.0).sqrt();
        let roots = [(820.0 - disc) / 202.0, (820.0 + disc) / 202.0];
        assert_eq!(eqs.len(), 2);
        assert!((eqs[0].mu() - roots[0]).abs() < 1e-8 && eqs[0].is_stable());
        assert!((eqs[1].mu() - roots[1]).abs() < 1e-8);
        assert_eq!(eqs[1].classification, Stability::Saddle);
        for e in &eqs {
            assert!(angle_diff(e.state[0], (e.mu() - 4.0).asin()).abs() < 1e-8);
        }
    }

    #[test]
    fn reduced_roots_lift_to_full_equilibria() {
        for sys in [pitchfork(), SlowFastSystem::tanh(TanhParams::default()), rotator()] {
            let reduced = ReducedSystem::of(&sys).unwrap();
            let eqs = find_equilibria(&sys, &SearchBox::default_for(&sys), 16);
            let (lo, hi) = match sys.model {
                // Roots outside the stripe belong to rotating orbits, not equilibria.
                Model::Rotator(p) => (-p.omega - 1.0, -p.omega + 1.0),
                _ => (-8.0, 8.0),
            };
            let roots = reduced.roots(lo, hi, 4000);
            assert_eq!(roots.len(), eqs.len(), "{:?}", sys.tag());
            for (r, e) in roots.iter().zip(&eqs) {
                assert!((r - e.mu()).abs() < 1e-8);
                assert_eq!(reduced.slope(*r) < 0.0, e.is_stable(), "{:?} root {r}", sys.tag());
            }
        }
    }

    #[test]
    fn two_rotator_network_equilibria_are_found_modulo_two_pi() {
        let sys = SlowFastSystem::network(NetworkParams::two_rotators(0.6, 0.1));
        let eqs = find_equilibria(&sys, &SearchBox::default_for(&sys), 12);
        assert!(!eqs.is_empty());
        for (i, a) in eqs.iter().enumerate() {
            assert!(a.residual <= RESIDUAL_TOL);
            assert!(a.state[..2].iter().all(|&p| (0.0..TAU).contains(&p)));
            for b in &eqs[i + 1..] {
                assert!(sys.distance(&a.state, &b.state) > DEDUP_TOL);
            }
        }
    }

    #[test]
    fn saddle_is_required_for_tracing() {
        let sys = pitchfork();
        let stable = classify(&sys, &[2.0, 4.0]).unwrap();
        let opts = ManifoldOptions::for_system(&sys);
        assert!(matches!(trace_stable_manifold(&sys, &stable, &opts), Err(EquilibriumError::NotASaddle(_))));
    }

    #[test]
    fn pitchfork_manifold_branch_hugs_the_axis() {
        let sys = pitchfork();
        let saddle = classify(&sys, &[1.0, 1.0]).unwrap();
        let opts = ManifoldOptions::for_system(&sys);
        let (plus, minus) = trace_stable_manifold(&sys, &saddle, &opts).unwrap();
        let v = stable_eigenvector(&sys, &saddle).unwrap();
        for (curve, s) in [(&plus, 1.0), (&minus, -1.0)] {
            let seed = [1.0 + s * opts.delta * v[0], 1.0 + s * opts.delta * v[1]];
            assert!(euclid(&curve.points[0], &seed) < 1e-5);
            assert!(curve.points.windows(2).all(|w| euclid(&w[0], &w[1]) <= opts.max_segment * (1.0 + 1e-9)));
            assert!(!curve.escape_failure(), "{:?}", curve.termination);
        }
        let xs: Vec<f64> = (0..=8).map(|k| crossing_at(&minus, 2.0 + 0.5 * k as f64).unwrap()[0]).collect();
        assert!(xs.iter().all(|&x| x > 0.0));
        assert!(xs.windows(2).all(|w| w[1] < w[0]), "{xs:?}");
        assert!(!polylines_cross(&plus.points, &minus.points));
    }

    #[test]
    fn halving_delta_moves_the_manifold_by_less_than_ten_delta() {
        for sys in [pitchfork(), rotator()] {
            let eqs = find_equilibria(&sys, &SearchBox::default_for(&sys), 16);
            let saddle = eqs.iter().find(|e| e.classification == Stability::Saddle).unwrap();
            // Fine polylines so chord sagitta stays well below delta.
            let opts = ManifoldOptions { max_segment: 1e-3, ..ManifoldOptions::for_system(&sys) };
            let half = ManifoldOptions { delta: opts.delta / 2.0, ..opts.clone() };
            let (a, _) = trace_stable_manifold(&sys, saddle, &opts).unwrap();
            let (b, _) = trace_stable_manifold(&sys, saddle, &half).unwrap();
            let shared = 0.9 * a.total_arclength().min(b.total_arclength());
            let head: Vec<Vec<f64>> =
                a.points.iter().zip(&a.arclength).filter(|(_, s)| **s <= shared).map(|(p, _)| p.clone()).collect();
            let d = directed_hausdorff(&head, &b.points);
            assert!(d <= 10.0 * opts.delta, "{:?}: {d:e}", sys.tag());
        }
    }

    #[test]
    fn rotator_branches_follow_the_repelling_branch() {
        // Closest approach to phi = pi - arcsin(mu - 4) inside the stripe.
        let approach = |curve: &ManifoldCurve| {
            curve
                .points
                .iter()
                .filter(|p| p[1] > 3.0 && p[1] < 5.0)
                .map(|p| angle_diff(p[0], PI - (p[1] - 4.0).asin()).abs())
                .fold(f64::INFINITY, f64::min)
        };
        let trace = |eps: f64| {
            let sys = SlowFastSystem::rotator(RotatorParams { eps, ..RotatorParams::default() });
            let eqs = find_equilibria(&sys, &SearchBox::default_for(&sys), 16);
            trace_stable_manifold(&sys, &eqs[1], &ManifoldOptions::for_system(&sys)).unwrap()
        };
        let sys = rotator();
        let (plus, minus) = trace(0.1);
        for curve in [&plus, &minus] {
            assert!(!curve.escape_failure());
            assert!(curve.points.iter().any(|p| p[1] < 3.0 - 1.0), "escapes below the fold");
        }
        assert!(approach(&minus) < 0.05);
        // The other branch lags behind at eps = 0.1 and closes in as eps shrinks.
        let lag: Vec<f64> = [0.1, 0.03, 0.01].iter().map(|&e| approach(&trace(e).0)).collect();
        assert!(lag.windows(2).all(|w| w[1] < w[0]), "{lag:?}");
        let widths = funnel_width_profile(&sys, (&plus, &minus), &[3.2, 3.6, 4.0, 4.4]).unwrap();
        assert!(widths.iter().all(|w| w.width > 0.0));
        assert!(widths.windows(2).all(|w| w[0].width < w[1].width), "{widths:?}");
    }

    #[test]
    fn pitchfork_log_width_is_affine_in_mu() {
        let sys = pitchfork();
        let opts = ManifoldOptions::for_system(&sys);
        let (wall, axis) = funnel_walls(&sys, &opts).unwrap();
        let grid: Vec<f64> = (0..=20).map(|k| 2.0 + 0.2 * k as f64).collect();
        let widths = funnel_width_profile(&sys, (&wall, &axis), &grid).unwrap();
        assert!(widths.iter().all(|w| w.width > 0.0));
        let pts: Vec<(f64, f64)> = widths.iter().map(|w| (w.mu, w.width.ln())).collect();
        let (slope, r2) = ols(&pts);
        assert!(slope < 0.0 && r2 >= 0.99, "slope {slope}, r2 {r2}");
    }

    #[test]
    fn missing_range_is_reported() {
        let sys = pitchfork();
        let axis = ManifoldCurve::fast_axis((0.0, 1.0));
        assert_eq!(
            funnel_width_profile(&sys, (&axis, &axis), &[2.0]),
            Err(EquilibriumError::RangeNotCovered { mu: 2.0 })
        );
    }

    #[test]
    fn crossing_detection() {
        let square = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let other = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let apart = vec![vec![2.0, 0.0], vec![3.0, 1.0]];
        assert!(polylines_cross(&square, &other));
        assert!(!polylines_cross(&square, &apart));
        assert!((directed_hausdorff(&apart, &square) - 2.0).abs() < 1e-12);
    }

    fn brute_hausdorff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter()
            .map(|p| b.windows(2).map(|w| point_segment_distance(p, &w[0], &w[1])).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    }

    proptest::proptest! {
        #[test]
        fn bucketed_hausdorff_equals_brute_force(
            a in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40),
            b in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..40),
        ) {
            let a: Vec<Vec<f64>> = a.into_iter().map(|(x, y)| vec![x, y]).collect();
            let b: Vec<Vec<f64>> = b.into_iter().map(|(x, y)| vec![x, y]).collect();
            proptest::prop_assert!((directed_hausdorff(&a, &b) - brute_hausdorff(&a, &b)).abs() < 1e-12);
        }
    }

    fn ols(pts: &[(f64, f64)]) -> (f64, f64) {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
        (sxy / sxx, sxy * sxy / (sxx * syy))
    }
}
