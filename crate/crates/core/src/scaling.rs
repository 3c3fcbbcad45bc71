//! Funnel-volume scaling with `eps`: sweeps, `log V = log A - C / eps` fits,
//! the quadrature prediction of `C` for the rotator, and funnel widths.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basins::{mc_volume, BasinError, BasinLabel, Classifier, McEstimate, Region};
use crate::equilibria::{funnel_walls, funnel_width_profile, EquilibriumError, ManifoldOptions};
use crate::models::{RotatorParams, SlowFastSystem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScalingError {
    #[error("need at least {needed} points with V > 0, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("slow drift vanishes near mu = {mu} inside the span")]
    SingularIntegrand { mu: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Basin(#[from] BasinError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
}

pub type Result<T> = std::result::Result<T, ScalingError>;

pub const MIN_FIT_POINTS: usize = 4;
pub const MIN_SWEEP_TRIALS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub eps: f64,
    pub volume: f64,
    pub stderr: f64,
}

impl From<&McEstimate> for ScalingPoint {
    fn from(e: &McEstimate) -> Self {
        Self { eps: e.eps, volume: e.volume, stderr: e.stderr }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Weighted least squares line through `(x, y)`; unit weights give OLS.
/// `R^2` is clamped into `[0, 1]`.
pub fn linear_fit(x: &[f64], y: &[f64], w: Option<&[f64]>) -> LinearFit {
    let weight = |i: usize| w.map_or(1.0, |w| w[i]);
    let sw: f64 = (0..x.len()).map(weight).sum();
    let mx = (0..x.len()).map(|i| weight(i) * x[i]).sum::<f64>() / sw;
    let my = (0..x.len()).map(|i| weight(i) * y[i]).sum::<f64>() / sw;
    let sxx: f64 = (0..x.len()).map(|i| weight(i) * (x[i] - mx).powi(2)).sum();
    let sxy: f64 = (0..x.len()).map(|i| weight(i) * (x[i] - mx) * (y[i] - my)).sum();
    let syy: f64 = (0..x.len()).map(|i| weight(i) * (y[i] - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = (0..x.len()).map(|i| weight(i) * (y[i] - intercept - slope * x[i]).powi(2)).sum();
    let r2 = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    LinearFit { slope, intercept, r2 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// Points used in the fit.
    pub points: Vec<ScalingPoint>,
    /// Points dropped because `V = 0`.
    pub excluded: Vec<ScalingPoint>,
    pub log_a: f64,
    pub c: f64,
    pub r2: f64,
    /// `log V - (log A - C / eps)` for each used point.
    pub residuals: Vec<f64>,
    pub weighted: bool,
}

/// Unweighted least squares of `log V` on `1 / eps`.
pub fn fit_scaling(points: &[ScalingPoint]) -> Result<ScalingFit> {
    fit(points, false)
}

/// Weighted by the delta-method variance `(stderr / V)^2` of `log V`.
pub fn fit_scaling_weighted(points: &[ScalingPoint]) -> Result<ScalingFit> {
    fit(points, true)
}

fn fit(points: &[ScalingPoint], weighted: bool) -> Result<ScalingFit> {
    if points.iter().any(|p| !(p.eps > 0.0) || !(0.0..=1.0).contains(&p.volume)) {
        return Err(ScalingError::InvalidInput("eps must be positive and V within [0, 1]".into()));
    }
    let (used, excluded): (Vec<ScalingPoint>, Vec<ScalingPoint>) = points.iter().partition(|p| p.volume > 0.0);
    if used.len() < MIN_FIT_POINTS {
        return Err(ScalingError::TooFewPoints { needed: MIN_FIT_POINTS, got: used.len() });
    }
    let x: Vec<f64> = used.iter().map(|p| 1.0 / p.eps).collect();
    let y: Vec<f64> = used.iter().map(|p| p.volume.ln()).collect();
    let w: Vec<f64> = used.iter().map(|p| (p.volume / p.stderr.max(1e-12 * p.volume)).powi(2)).collect();
    let line = linear_fit(&x, &y, weighted.then_some(w.as_slice()));
    let residuals = x.iter().zip(&y).map(|(x, y)| y - line.intercept - line.slope * x).collect();
    Ok(ScalingFit { points: used, excluded, log_a: line.intercept, c: -line.slope, r2: line.r2, residuals, weighted })
}

fn validate_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() || eps_list.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(ScalingError::InvalidInput("eps values must be positive and finite".into()));
    }
    for (i, a) in eps_list.iter().enumerate() {
        if eps_list[i + 1..].contains(a) {
            return Err(ScalingError::InvalidInput(format!("eps {a} listed twice")));
        }
    }
    Ok(())
}

/// One Monte Carlo volume per `eps`. Every `eps` reuses `master_seed`, so all
/// runs see the same initial conditions.
pub fn volume_sweep(
    system: &SlowFastSystem,
    region: &Region,
    eps_list: &[f64],
    trials: u64,
    master_seed: u64,
    target: BasinLabel,
) -> Result<Vec<(f64, McEstimate)>> {
    validate_eps_list(eps_list)?;
    if trials < MIN_SWEEP_TRIALS {
        return Err(ScalingError::InvalidInput(format!("sweeps need at least {MIN_SWEEP_TRIALS} trials")));
    }
    eps_list
        .par_iter()
        .map(|&eps| {
            let classifier = Classifier::new(system.with_eps(eps));
            Ok((eps, mc_volume(&classifier, region, trials, master_seed, target)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedConstant {
    /// `C = ∫ -cos(phi*) / g dmu` over `span`, with `g` the slow drift on the
    /// repelling branch `phi* = pi - arcsin(mu + omega)`. Positive for an
    /// increasing span.
    pub c_pred: f64,
    /// The same integrand taken from `span.1` back to `span.0`, the direction
    /// in which the funnel wall is traced.
    pub raw_signed: f64,
    pub span: (f64, f64),
    pub evaluations: usize,
}

fn repelling_integrand(p: &RotatorParams, mu: f64) -> (f64, f64) {
    let c = (mu + p.omega).clamp(-1.0, 1.0);
    let phi = std::f64::consts::PI - c.asin();
    let g = -mu + p.eta * (1.0 - (phi + p.alpha).sin());
    (-phi.cos() / g, g)
}

/// Adaptive Simpson quadrature of the contraction exponent along the
/// repelling branch.
pub fn predicted_funnel_constant(p: &RotatorParams, span: (f64, f64)) -> Result<PredictedConstant> {
    p.validate().map_err(|e| ScalingError::InvalidInput(e.to_string()))?;
    let (a, b) = span;
    if !(a.is_finite() && b.is_finite()) {
        return Err(ScalingError::InvalidInput("span must be finite".into()));
    }
    let stripe = (-p.omega - 1.0, -p.omega + 1.0);
    let slack = 1e-12;
    if a.min(b) < stripe.0 - slack || a.max(b) > stripe.1 + slack {
        return Err(ScalingError::InvalidInput(format!(
            "span ({a}, {b}) leaves the stripe [{}, {}]",
            stripe.0, stripe.1
        )));
    }
    if a == b {
        return Ok(PredictedConstant { c_pred: 0.0, raw_signed: 0.0, span, evaluations: 0 });
    }
    // The drift must keep one sign on the span.
    let (lo, hi) = (a.min(b), a.max(b));
    let probes = 2048;
    let mut prev = repelling_integrand(p, lo).1;
    for k in 0..=probes {
        let mu = lo + (hi - lo) * k as f64 / probes as f64;
        let g = repelling_integrand(p, mu).1;
        if g.abs() < 1e-12 || g * prev < 0.0 {
            return Err(ScalingError::SingularIntegrand { mu });
        }
        prev = g;
    }
    let f = |mu: f64| repelling_integrand(p, mu).0;
    let mut evaluations = 3;
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let c = simpson(&f, a, b, fa, fm, fb, whole, 1e-13, 50, &mut evaluations);
    Ok(PredictedConstant { c_pred: c, raw_signed: -c, span, evaluations })
}

#[allow(clippy::too_many_arguments)]
fn simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    evals: &mut usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    *evals += 2;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1, evals)
        + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1, evals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthScaling {
    pub mu_probe: f64,
    /// `(eps, delta(mu_probe))`
    pub rows: Vec<(f64, f64)>,
    /// `log delta` against `1 / eps`.
    pub fit: LinearFit,
}

/// Funnel width at `mu_probe` for each `eps`, with an affine fit of
/// `log delta` in `1 / eps`.
pub fn width_scaling_check(system: &SlowFastSystem, eps_list: &[f64], mu_probe: f64) -> Result<WidthScaling> {
    validate_eps_list(eps_list)?;
    let rows: Vec<(f64, f64)> = eps_list
        .par_iter()
        .map(|&eps| {
            let sys = system.with_eps(eps);
            let (a, b) = funnel_walls(&sys, &ManifoldOptions::for_system(&sys))?;
            let w = funnel_width_profile(&sys, (&a, &b), &[mu_probe])?;
            Ok((eps, w[0].width))
        })
        .collect::<Result<_>>()?;
    if rows.len() < 2 {
        return Ok(WidthScaling { mu_probe, rows, fit: LinearFit { slope: f64::NAN, intercept: f64::NAN, r2: f64::NAN } });
    }
    let x: Vec<f64> = rows.iter().map(|r| 1.0 / r.0).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
    Ok(WidthScaling { mu_probe, rows, fit: linear_fit(&x, &y, None) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exact(c: f64, eps: &[f64]) -> Vec<ScalingPoint> {
        eps.iter().map(|&e| ScalingPoint { eps: e, volume: (-c / e).exp(), stderr: 1e-3 }).collect()
    }

    #[test]
    fn exact_model_is_recovered() {
        let fit = fit_scaling(&exact(2.0, &[0.2, 0.3, 0.5, 0.8, 1.0])).unwrap();
        assert!((fit.c - 2.0).abs() < 1e-9 && fit.log_a.abs() < 1e-9);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-9));
    }

    #[test]
    fn noisy_model_stays_in_band() {
        let eps = [0.2, 0.3, 0.5, 0.8, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inside = (0..100)
            .filter(|_| {
                let pts: Vec<ScalingPoint> = eps
                    .iter()
                    .map(|&e| ScalingPoint {
                        eps: e,
                        volume: (-2.0 / e).exp() * (1.0 + rng.random_range(-0.02..0.02)),
                        stderr: 1e-3,
                    })
                    .collect();
                (fit_scaling(&pts).unwrap().c - 2.0).abs() <= 0.1
            })
            .count();
        assert!(inside >= 95, "{inside}");
    }

    #[test]
    fn zero_volumes_are_excluded() {
        let mut pts = exact(1.0, &[0.2, 0.3, 0.5, 0.8]);
        pts.push(ScalingPoint { eps: 0.01, volume: 0.0, stderr: 0.0 });
        let fit = fit_scaling(&pts).unwrap();
        assert_eq!(fit.excluded.len(), 1);
        assert_eq!(fit.points.len(), 4);
        pts.remove(0);
        assert_eq!(fit_scaling(&pts), Err(ScalingError::TooFewPoints { needed: 4, got: 3 }));
    }

    #[test]
    fn weighted_fit_agrees_on_exact_data() {
        let fit = fit_scaling_weighted(&exact(3.0, &[0.2, 0.3, 0.5, 0.8, 1.0])).unwrap();
        assert!((fit.c - 3.0).abs() < 1e-9 && fit.weighted);
    }

    #[test]
    fn predicted_constant_basic_properties() {
        let p = RotatorParams::default();
        let zero = predicted_funnel_constant(&p, (3.7, 3.7)).unwrap();
        assert_eq!(zero.c_pred, 0.0);
        let whole = predicted_funnel_constant(&p, (3.0, 4.8)).unwrap().c_pred;
        let left = predicted_funnel_constant(&p, (3.0, 3.9)).unwrap().c_pred;
        let right = predicted_funnel_constant(&p, (3.9, 4.8)).unwrap().c_pred;
        assert!((whole - left - right).abs() < 1e-10);
        assert!(whole > 0.0);
        let back = predicted_funnel_constant(&p, (4.8, 3.0)).unwrap();
        assert!((back.c_pred + whole).abs() < 1e-12);
        assert!(predicted_funnel_constant(&p, (2.0, 4.0)).is_err());
    }

    #[test]
    fn predicted_constant_matches_midpoint_oracle() {
        let p = RotatorParams::default();
        let (a, b) = (3.0, 4.857_649_282);
        let n = 200_000;
        let h = (b - a) / n as f64;
        // Independent integrand: expansion rate sqrt(1 - c^2) on the repelling
        // branch over the drift -mu + eta (1 + sqrt(1 - c^2)) at alpha = pi/2.
        let oracle: f64 = (0..n)
            .map(|k| {
                let mu = a + (k as f64 + 0.5) * h;
                let s = (1.0 - (mu - 4.0).powi(2)).sqrt();
                s / (-mu + 10.0 * (1.0 + s)) * h
            })
            .sum();
        let got = predicted_funnel_constant(&p, (a, b)).unwrap().c_pred;
        assert!((got - oracle).abs() < 1e-7, "{got} vs {oracle}");
    }

    #[test]
    fn singular_drift_is_reported() {
        // eta = 2.5: g = -mu + 2.5 (1 + sqrt(1 - c^2)) goes from -0.5 at mu = 3 to 1 at mu = 4.
        let p = RotatorParams { eta: 2.5, ..RotatorParams::default() };
        assert!(matches!(predicted_funnel_constant(&p, (3.0, 5.0)), Err(ScalingError::SingularIntegrand { .. })));
    }

    #[test]
    fn sweep_validates_inputs() {
        let sys = SlowFastSystem::rotator(RotatorParams::default());
        let r = Region::rotator_extended(1);
        assert!(volume_sweep(&sys, &r, &[0.1, 0.1], 1000, 0, BasinLabel::RotatingOrbit).is_err());
        assert!(volume_sweep(&sys, &r, &[0.1], 10, 0, BasinLabel::RotatingOrbit).is_err());
        assert!(volume_sweep(&sys, &r, &[-0.1], 1000, 0, BasinLabel::RotatingOrbit).is_err());
    }

    #[test]
    fn single_eps_sweep_equals_direct_estimate() {
        let sys = SlowFastSystem::rotator(RotatorParams::default());
        let r = Region::rotator_extended(1);
        let sweep = volume_sweep(&sys, &r, &[0.1], 1000, 9, BasinLabel::RotatingOrbit).unwrap();
        let direct = mc_volume(&Classifier::new(sys), &r, 1000, 9, BasinLabel::RotatingOrbit).unwrap();
        assert_eq!(sweep, vec![(0.1, direct)]);
    }
}
