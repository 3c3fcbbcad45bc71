//! Reduced slow subsystems `dmu/dtau = f(mu)` (slow time `tau = eps t`) and
//! their potentials.
//!
//! Potentials follow `U = -∫ f`, so stable equilibria of the reduced flow sit
//! at minima of `U`. For the rotator the averaged drift outside the stripe
//! `|mu + omega| <= 1` uses the bounded rotation average
//! `<sin phi> = c - sign(c) sqrt(c^2 - 1)`, `c = mu + omega`, and inside the
//! stripe the attracting quasistatic branch `phi* = arcsin(c)`.

use std::f64::consts::{FRAC_PI_2, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{NetworkParams, PitchforkParams, RotatorParams, SlowFastSystem, TanhParams};
use crate::ode::{self, OdeError, OdeSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReductionError {
    #[error("outside the domain of the formula: {0}")]
    DomainError(String),
    #[error("averaged samples must be sorted by strictly increasing mu")]
    UnsortedInput,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error(transparent)]
    Integration(#[from] OdeError),
}

pub type Result<T> = std::result::Result<T, ReductionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Analytic,
    NumericAveraged,
}

/// Sign convention of a tabulated potential.
pub const POTENTIAL_CONVENTION: &str = "U(mu) = -integral_0^mu f(s) ds";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
enum ReducedKind {
    Pitchfork(PitchforkParams),
    Tanh(TanhParams),
    Rotator(RotatorParams),
}

/// Closed-form reduced system of one of the planar models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedSystem {
    kind: ReducedKind,
}

/// Heaviside step with `H(0) = 1`.
#[inline]
pub fn heaviside(mu: f64) -> f64 {
    if mu >= 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn reduced_pitchfork(p: &PitchforkParams) -> ReducedSystem {
    ReducedSystem { kind: ReducedKind::Pitchfork(*p) }
}

pub fn reduced_tanh(p: &TanhParams) -> ReducedSystem {
    ReducedSystem { kind: ReducedKind::Tanh(*p) }
}

pub fn reduced_rotator(p: &RotatorParams) -> ReducedSystem {
    ReducedSystem { kind: ReducedKind::Rotator(*p) }
}

impl ReducedSystem {
    /// The reduced system of `system`, if it has a closed form.
    pub fn of(system: &SlowFastSystem) -> Option<Self> {
        use crate::models::Model;
        match &system.model {
            Model::Pitchfork(p) => Some(reduced_pitchfork(p)),
            Model::Tanh(p) => Some(reduced_tanh(p)),
            Model::Rotator(p) => Some(reduced_rotator(p)),
            Model::Network(_) => None,
        }
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::Analytic
    }

    /// The whole real line; the formulas have kinks at `mu = 0` (pitchfork)
    /// and `|mu + omega| = 1` (rotator), see [`ReducedSystem::kinks`].
    pub fn domain(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    /// Points where `f` is continuous but not differentiable.
    pub fn kinks(&self) -> Vec<f64> {
        match self.kind {
            ReducedKind::Pitchfork(_) => vec![0.0],
            ReducedKind::Tanh(_) => vec![],
            ReducedKind::Rotator(p) => vec![-p.omega - 1.0, -p.omega + 1.0],
        }
    }

    pub fn f(&self, mu: f64) -> f64 {
        match self.kind {
            ReducedKind::Pitchfork(p) => -mu + p.a * (mu * heaviside(mu)).sqrt() - p.b,
            ReducedKind::Tanh(p) => -mu - p.b + p.a * (mu.tanh() + 2.0),
            ReducedKind::Rotator(p) => -mu + p.eta * (1.0 - slow_average(&p, mu)),
        }
    }

    /// `U(mu) = -∫_0^mu f`, so `U(0) = 0`.
    pub fn potential(&self, mu: f64) -> f64 {
        match self.kind {
            ReducedKind::Pitchfork(p) => {
                let m = mu * heaviside(mu);
                0.5 * mu * mu + p.b * mu - 2.0 / 3.0 * p.a * m * m.sqrt()
            }
            ReducedKind::Tanh(p) => 0.5 * mu * mu - (2.0 * p.a - p.b) * mu - p.a * ln_cosh(mu),
            ReducedKind::Rotator(p) => {
                0.5 * mu * mu - p.eta * mu
                    + p.eta * (average_antiderivative(&p, mu + p.omega) - average_antiderivative(&p, p.omega))
            }
        }
    }

    /// Roots of `f` in `[lo, hi]`: sign changes on a uniform scan of `n`
    /// cells, each refined by bisection to machine precision.
    pub fn roots(&self, lo: f64, hi: f64, n: usize) -> Vec<f64> {
        let mut roots = Vec::new();
        let h = (hi - lo) / n as f64;
        let mut a = lo;
        let mut fa = self.f(a);
        for k in 1..=n {
            let b = if k == n { hi } else { lo + k as f64 * h };
            let fb = self.f(b);
            if fa == 0.0 {
                roots.push(a);
            } else if fa * fb < 0.0 {
                roots.push(bisect(|m| self.f(m), a, b));
            }
            a = b;
            fa = fb;
        }
        if fa == 0.0 {
            roots.push(hi);
        }
        roots
    }

    /// Slope of `f`, by central differences.
    pub fn slope(&self, mu: f64) -> f64 {
        let h = 1e-6 * (1.0 + mu.abs());
        (self.f(mu + h) - self.f(mu - h)) / (2.0 * h)
    }
}

/// Root of a continuous `g` with a sign change on `[a, b]`.
pub(crate) fn bisect(g: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut ga = g(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        let gm = g(m);
        if gm == 0.0 {
            return m;
        }
        if (gm < 0.0) == (ga < 0.0) {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn ln_cosh(x: f64) -> f64 {
    let ax = x.abs();
    ax + (-2.0 * ax).exp().ln_1p() - std::f64::consts::LN_2
}

/// Average of `sin(phi + alpha)` over the fast attractor at frozen `mu`.
fn slow_average(p: &RotatorParams, mu: f64) -> f64 {
    let c = mu + p.omega;
    let (sa, ca) = p.alpha.sin_cos();
    if c.abs() <= 1.0 {
        c * ca + (1.0 - c * c).sqrt() * sa
    } else {
        (c - c.signum() * (c * c - 1.0).sqrt()) * ca
    }
}

/// Continuous antiderivative in `c` of the fast average, anchored at `c = -1`.
fn average_antiderivative(p: &RotatorParams, c: f64) -> f64 {
    let (sa, ca) = p.alpha.sin_cos();
    // ∫_{±1}^{c} sign(u) sqrt(u^2 - 1) du for |c| >= 1
    let q = |c: f64| {
        let a = c.abs();
        let r = (a * a - 1.0).max(0.0).sqrt();
        0.5 * (a * r - (a + r).ln())
    };
    if c < -1.0 {
        ca * 0.5 * (c * c - 1.0) - ca * q(c)
    } else if c <= 1.0 {
        ca * 0.5 * (c * c - 1.0) + sa * 0.5 * (c * (1.0 - c * c).max(0.0).sqrt() + c.asin() + FRAC_PI_2)
    } else {
        sa * FRAC_PI_2 + ca * 0.5 * (c * c - 1.0) - ca * q(c)
    }
}

/// Time average of `sin(phi(t) + alpha)` along the rotating solution of the
/// layer problem `phi' = omega + mu - sin phi`; requires `|mu + omega| > 1`.
pub fn analytic_rotation_average(p: &RotatorParams, mu: f64) -> Result<f64> {
    let c = mu + p.omega;
    if !(c.abs() > 1.0) {
        return Err(ReductionError::DomainError(format!(
            "|mu + omega| = {} <= 1: the layer problem has equilibria, not rotations",
            c.abs()
        )));
    }
    Ok((c - c.signum() * (c * c - 1.0).sqrt()) * p.alpha.cos())
}

/// Settings of the numeric averaging protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragingProtocol {
    pub t_end: f64,
    pub transient: f64,
    pub sample_dt: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Shorten the window so the summed phase advances by a whole number of
    /// collective turns (`2 pi N`). Removes the partial-period bias for
    /// periodic rotations; off by default.
    pub trim_to_full_turns: bool,
}

impl Default for AveragingProtocol {
    fn default() -> Self {
        Self {
            t_end: 600.0,
            transient: 100.0,
            sample_dt: 0.01,
            rel_tol: 1e-10,
            abs_tol: 1e-10,
            trim_to_full_turns: false,
        }
    }
}

impl AveragingProtocol {
    pub fn trimmed() -> Self {
        Self { trim_to_full_turns: true, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedSample {
    pub mu: f64,
    pub g_bar: f64,
    pub x_bar: f64,
    pub transient_cut: f64,
    pub window: f64,
}

/// Averages the slow drift over the layer dynamics of the network at frozen `mu`.
pub fn numeric_average_network(p: &NetworkParams, mu: f64, seed: u64) -> Result<AveragedSample> {
    numeric_average_network_with(p, mu, seed, &AveragingProtocol::default())
}

pub fn numeric_average_network_with(
    p: &NetworkParams,
    mu: f64,
    seed: u64,
    proto: &AveragingProtocol,
) -> Result<AveragedSample> {
    if !mu.is_finite() {
        return Err(ReductionError::DomainError(format!("mu = {mu}")));
    }
    let window = proto.t_end - proto.transient;
    if !(window > 0.0 && proto.transient >= 0.0 && proto.sample_dt > 0.0) {
        return Err(ReductionError::DomainError("averaging window must be positive".into()));
    }
    let n = p.n();
    let sys = SlowFastSystem::network(NetworkParams { eps: 0.0, ..p.clone() });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi0: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * TAU).collect();
    let spec = OdeSpec::new(n, |_t, y: &[f64], dy: &mut [f64]| sys.layer_rhs(y, mu, dy))
        .tolerances(proto.rel_tol, proto.abs_tol);
    let traj = ode::integrate(&spec, &phi0, (0.0, proto.t_end))?;

    let window = if proto.trim_to_full_turns {
        full_turn_window(&traj, proto.transient, proto.t_end)?
    } else {
        window
    };
    let steps = ((window / proto.sample_dt).round() as usize).max(1);
    let dt = window / steps as f64;
    let samples = traj.sample_uniform(proto.transient, dt, steps + 1)?;
    let (sa, ca) = p.alpha.sin_cos();
    let xs: Vec<f64> = samples
        .iter()
        .map(|phis| phis.iter().map(|phi| phi.sin() * ca + phi.cos() * sa).sum::<f64>() / n as f64)
        .collect();
    let x_bar = trapezoid_uniform(&xs, dt) / window;
    let g_bar = -mu + p.eta * (1.0 - x_bar);
    Ok(AveragedSample { mu, g_bar, x_bar, transient_cut: proto.transient, window })
}

/// Longest window `[start, t*]` over which the phase sum advances by a whole
/// number of `2 pi N` turns; the full window if not even one turn fits.
fn full_turn_window(traj: &ode::Trajectory, start: f64, end: f64) -> Result<f64> {
    let n = traj.dim() as f64;
    let turn = TAU * n;
    let phase = |t: f64| -> Result<f64> { Ok(traj.dense_eval(t)?.iter().sum()) };
    let s0 = phase(start)?;
    let turns = ((phase(end)? - s0).abs() / turn).floor();
    if turns < 1.0 {
        return Ok(end - start);
    }
    let target = turns * turn;
    let t_star = bisect(|t| (phase(t).unwrap_or(f64::NAN) - s0).abs() - target, start, end);
    Ok(t_star - start)
}

/// Composite trapezoid rule on uniformly spaced samples.
pub fn trapezoid_uniform(values: &[f64], dx: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dx * (0.5 * (values[0] + values[n - 1]) + values[1..n - 1].iter().sum::<f64>()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StationaryKind {
    Minimum,
    Maximum,
}

/// Tabulated potential of an averaged drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialTable {
    pub mu: Vec<f64>,
    pub g_bar: Vec<f64>,
    /// `-∫ g`, minima at stable equilibria.
    pub u: Vec<f64>,
    /// `+∫ g`, the opposite sign convention.
    pub u_plus: Vec<f64>,
    /// Where the integration constant was fixed (`U = 0`).
    pub anchor: f64,
}

impl PotentialTable {
    /// Zeros of `g_bar` by linear interpolation. A `+ -> -` change is a stable
    /// equilibrium, hence a minimum of `u`.
    pub fn stationary_points(&self) -> Vec<(f64, StationaryKind)> {
        let mut out = Vec::new();
        for k in 0..self.mu.len().saturating_sub(1) {
            let (g0, g1) = (self.g_bar[k], self.g_bar[k + 1]);
            if g0 == 0.0 && k > 0 {
                continue;
            }
            if (g0 > 0.0 && g1 <= 0.0) || (g0 < 0.0 && g1 >= 0.0) {
                let t = g0 / (g0 - g1);
                let mu = self.mu[k] + t * (self.mu[k + 1] - self.mu[k]);
                let kind = if g0 > 0.0 { StationaryKind::Minimum } else { StationaryKind::Maximum };
                out.push((mu, kind));
            }
        }
        out
    }
}

/// Cumulative trapezoid potential of averaged samples, anchored at `mu = 0`
/// when it lies in range and at the first sample otherwise.
pub fn numeric_potential(samples: &[AveragedSample]) -> Result<PotentialTable> {
    if samples.len() < 2 {
        return Err(ReductionError::TooFewSamples { needed: 2, got: samples.len() });
    }
    if samples.windows(2).any(|w| !(w[1].mu > w[0].mu)) {
        return Err(ReductionError::UnsortedInput);
    }
    let mu: Vec<f64> = samples.iter().map(|s| s.mu).collect();
    let g: Vec<f64> = samples.iter().map(|s| s.g_bar).collect();
    let mut w = vec![0.0; mu.len()];
    for k in 1..mu.len() {
        w[k] = w[k - 1] + 0.5 * (g[k] + g[k - 1]) * (mu[k] - mu[k - 1]);
    }
    let (anchor, offset) = if mu[0] <= 0.0 && 0.0 <= mu[mu.len() - 1] {
        let k = mu.partition_point(|&m| m <= 0.0).saturating_sub(1).min(mu.len() - 2);
        // Integral from mu[k] to 0 with g linear on the cell.
        let h = -mu[k];
        let slope = (g[k + 1] - g[k]) / (mu[k + 1] - mu[k]);
        (0.0, w[k] + g[k] * h + 0.5 * slope * h * h)
    } else {
        (mu[0], 0.0)
    };
    let u_plus: Vec<f64> = w.iter().map(|v| v - offset).collect();
    let u = u_plus.iter().map(|v| -v).collect();
    Ok(PotentialTable { mu, g_bar: g, u, u_plus, anchor })
}

/// Uniform grid with `n` intervals over `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| if k == n { hi } else { lo + (hi - lo) * k as f64 / n as f64 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fig2() -> RotatorParams {
        RotatorParams::default()
    }

    #[test]
    fn pitchfork_reduced_examples() {
        let r = reduced_pitchfork(&PitchforkParams::default());
        assert_eq!(r.f(0.0), -2.0);
        assert!(r.f(4.0).abs() < 1e-15);
        assert_eq!(r.potential(0.0), 0.0);
        // Bisection oracle on (2, 6).
        let root = bisect(|m| r.f(m), 2.0, 6.0);
        assert!((root - 4.0).abs() < 1e-12);
    }

    #[test]
    fn tanh_reduced_examples() {
        let r = reduced_tanh(&TanhParams::default());
        assert_eq!(r.f(0.0), 0.0);
        let roots = r.roots(-8.0, 8.0, 1601);
        assert_eq!(roots.len(), 3);
        // Independent bisection on mu = 5 tanh mu over (4, 5.5).
        let oracle = bisect(|m| 5.0 * m.tanh() - m, 4.0, 5.5);
        assert!((oracle - 4.999_545_6).abs() < 1e-6);
        assert!((roots[2] - oracle).abs() < 1e-12);
        assert!((roots[0] + oracle).abs() < 1e-12);
        // Slope -1 once tanh saturates.
        assert!((r.f(41.0) - r.f(40.0) + 1.0).abs() < 1e-12);
        assert!((r.f(40.0) - (-40.0 - 10.0 + 15.0)).abs() < 1e-12);
    }

    #[test]
    fn rotator_reduced_examples() {
        let r = reduced_rotator(&fig2());
        assert!(r.f(10.0).abs() < 1e-12);
        // Quadratic 101 mu^2 - 820 mu + 1600 = 0 from squaring f = 0 in the stripe.
        let disc = (820.0f64 * 820.0 - 4.0 * 101.0 * 1600.0).sqrt();
        let (m1, m2) = ((820.0 - disc) / 202.0, (820.0 + disc) / 202.0);
        assert!((m1 - 3.2612).abs() < 1e-4 && (m2 - 4.8577).abs() < 1e-4);
        assert!(r.f(m1).abs() < 1e-12 && r.f(m2).abs() < 1e-12);
        assert!(r.f(m1 - 0.01) > 0.0 && r.f(m1 + 0.01) < 0.0);
        assert!(r.f(m2 - 0.01) < 0.0 && r.f(m2 + 0.01) > 0.0);
        let roots = r.roots(-10.0, 15.0, 2500);
        assert_eq!(roots.len(), 3);
        assert!((roots[0] - m1).abs() < 1e-12 && (roots[1] - m2).abs() < 1e-12);
        assert!((roots[2] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn rotator_reduced_is_continuous_at_fold_points() {
        for alpha in [0.0, 0.3, FRAC_PI_2, 2.0, -1.0] {
            let p = RotatorParams::new(-4.0, 10.0, alpha, 0.1).unwrap();
            let r = reduced_rotator(&p);
            let (sa, ca) = p.alpha.sin_cos();
            for c in [-1.0f64, 1.0] {
                // Both averaging branches meet at the fold points.
                let inside = c * ca + (1.0 - c * c).sqrt() * sa;
                let outside = (c - c.signum() * (c * c - 1.0).sqrt()) * ca;
                assert!((inside - outside).abs() <= 1e-9 / p.eta);
            }
            for edge in r.kinks() {
                // One-sided values converge like sqrt(d) towards the common limit.
                for d in [1e-6, 1e-8, 1e-10] {
                    let jump = (r.f(edge - d) - r.f(edge + d)).abs();
                    assert!(jump <= 2.0 * p.eta * (2.0 * d).sqrt() + 1e-12, "alpha {alpha} edge {edge} d {d}");
                }
                assert!((r.potential(edge - 1e-12) - r.potential(edge + 1e-12)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn rotation_average_examples() {
        assert!(analytic_rotation_average(&fig2(), 10.0).unwrap().abs() < 1e-16);
        let p0 = RotatorParams::new(-4.0, 10.0, 0.0, 0.1).unwrap();
        let v = analytic_rotation_average(&p0, 10.0).unwrap();
        assert!((v - (6.0 - 35f64.sqrt())).abs() < 1e-15);
        assert!((v - 0.08392).abs() < 1e-5);
        assert!(analytic_rotation_average(&p0, 1e6).unwrap() < 1e-5);
        assert!(matches!(analytic_rotation_average(&p0, 4.5), Err(ReductionError::DomainError(_))));
    }

    /// Brute-force time average of sin(phi) along the layer rotation.
    #[test]
    fn rotation_average_matches_simulated_layer() {
        let p0 = RotatorParams::new(-4.0, 10.0, 0.0, 0.1).unwrap();
        let c: f64 = 6.0;
        let period = TAU / (c * c - 1.0).sqrt();
        let spec = OdeSpec::new(1, |_t, y: &[f64], dy: &mut [f64]| dy[0] = c - y[0].sin());
        let t_end = 200.0 * period;
        let traj = ode::integrate(&spec, &[0.0], (0.0, t_end)).unwrap();
        let steps = 400_000;
        let dt = t_end / steps as f64;
        let ys: Vec<f64> = traj.sample_uniform(0.0, dt, steps + 1).unwrap().iter().map(|y| y[0].sin()).collect();
        let avg = trapezoid_uniform(&ys, dt) / t_end;
        assert!((avg - analytic_rotation_average(&p0, 10.0).unwrap()).abs() < 1e-3);
    }

    #[test]
    fn rotator_potential_matches_trapezoid_quadrature() {
        for alpha in [0.0, FRAC_PI_2, 0.8] {
            let r = reduced_rotator(&RotatorParams::new(-4.0, 10.0, alpha, 0.1).unwrap());
            for target in [-7.5, 2.5, 3.3, 4.7, 9.0, 12.0] {
                let n = 200_000;
                let xs: Vec<f64> = linspace(0.0, target, n).iter().map(|&m| -r.f(m)).collect();
                let quad = trapezoid_uniform(&xs, target / n as f64);
                assert!((quad - r.potential(target)).abs() < 1e-5, "alpha {alpha} mu {target}");
            }
        }
    }

    #[test]
    fn potentials_are_double_wells() {
        let cases = [
            (reduced_pitchfork(&PitchforkParams::default()), (-6.0, 8.0)),
            (reduced_tanh(&TanhParams::default()), (-8.0, 8.0)),
            (reduced_rotator(&fig2()), (-10.0, 15.0)),
        ];
        for (r, (lo, hi)) in cases {
            let roots = r.roots(lo, hi, 5000);
            assert_eq!(roots.len(), 3);
            assert!(r.slope(roots[0]) < 0.0 && r.slope(roots[1]) > 0.0 && r.slope(roots[2]) < 0.0);
            assert!(r.potential(roots[1]) > r.potential(roots[0]));
            assert!(r.potential(roots[1]) > r.potential(roots[2]));
        }
    }

    #[test]
    fn numeric_potential_examples() {
        let mk = |mu: f64, g: f64| AveragedSample { mu, g_bar: g, x_bar: 0.0, transient_cut: 100.0, window: 500.0 };
        let zero: Vec<_> = linspace(-1.0, 1.0, 20).into_iter().map(|m| mk(m, 0.0)).collect();
        assert!(numeric_potential(&zero).unwrap().u.iter().all(|&u| u == 0.0));

        let lin: Vec<_> = linspace(-2.0, 3.0, 50).into_iter().map(|m| mk(m, -m)).collect();
        let t = numeric_potential(&lin).unwrap();
        assert_eq!(t.anchor, 0.0);
        for (k, &m) in t.mu.iter().enumerate() {
            assert!((t.u[k] - 0.5 * m * m).abs() < 1e-12);
            assert!((t.u_plus[k] + 0.5 * m * m).abs() < 1e-12);
        }
        let st = t.stationary_points();
        assert_eq!(st.len(), 1);
        assert_eq!(st[0].1, StationaryKind::Minimum);
        assert!(st[0].0.abs() < 0.1);

        let shifted: Vec<_> = linspace(1.0, 2.0, 10).into_iter().map(|m| mk(m, 1.0)).collect();
        let t = numeric_potential(&shifted).unwrap();
        assert_eq!(t.anchor, 1.0);
        assert_eq!(t.u[0], 0.0);

        let mut bad = lin.clone();
        bad.swap(3, 4);
        assert_eq!(numeric_potential(&bad), Err(ReductionError::UnsortedInput));
        assert!(numeric_potential(&lin[..1]).is_err());
    }

    #[test]
    fn single_rotator_average_in_stripe_is_stationary() {
        let p = NetworkParams::new(vec![-4.0], 1.0, 10.0, 0.4, 0.1).unwrap();
        let mu = 4.3;
        let s = numeric_average_network(&p, mu, 7).unwrap();
        let phi_star = (mu - 4.0f64).asin();
        let expected = -mu + 10.0 * (1.0 - (phi_star + 0.4).sin());
        assert!((s.g_bar - expected).abs() < 1e-6, "{} vs {}", s.g_bar, expected);
    }

    #[test]
    fn single_rotator_average_outside_stripe_matches_formula() {
        let p = NetworkParams::new(vec![-4.0], 1.0, 10.0, 0.0, 0.1).unwrap();
        let r = RotatorParams::new(-4.0, 10.0, 0.0, 0.1).unwrap();
        for mu in [-2.0, 1.5, 6.5, 9.0] {
            let s = numeric_average_network_with(&p, mu, 3, &AveragingProtocol::trimmed()).unwrap();
            let expected = -mu + 10.0 * (1.0 - analytic_rotation_average(&r, mu).unwrap());
            assert!((s.g_bar - expected).abs() < 2e-3, "mu {mu}: {} vs {}", s.g_bar, expected);
        }
    }

    proptest! {
        #[test]
        fn potential_gradient_is_minus_f(mu in -10.0f64..15.0, which in 0usize..3) {
            let r = match which {
                0 => reduced_pitchfork(&PitchforkParams::default()),
                1 => reduced_tanh(&TanhParams::default()),
                _ => reduced_rotator(&fig2()),
            };
            prop_assume!(r.kinks().iter().all(|k| (mu - k).abs() > 1e-3));
            let h = 1e-5;
            let du = (r.potential(mu + h) - r.potential(mu - h)) / (2.0 * h);
            let f = r.f(mu);
            prop_assert!((du + f).abs() <= 1e-6 * f.abs().max(1.0), "mu {} du {} f {}", mu, du, f);
        }
    }
}
