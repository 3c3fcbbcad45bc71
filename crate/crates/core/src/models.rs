//! The four bistable slow-fast models and their critical manifolds.
//!
//! State layout is always `(fast coordinates..., mu)`: the slow variable is the
//! last coordinate. Angular coordinates are integrated unwrapped on the real
//! line; [`SlowFastSystem::wrap_phase`] is for presentation only.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("state outside model domain: {0}")]
    DomainError(String),
    #[error("state has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter(msg.to_string()))
    }
}

/// Adaptive pitchfork normal form `x' = x(mu - x^2)`, `mu' = eps(-mu + a x - b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchforkParams {
    pub a: f64,
    pub b: f64,
    pub eps: f64,
}

impl PitchforkParams {
    pub fn new(a: f64, b: f64, eps: f64) -> Result<Self> {
        let p = Self { a, b, eps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        require(self.a.is_finite() && self.a > 0.0, "a must be > 0")?;
        require(self.b.is_finite() && self.b > 0.0, "b must be > 0")?;
        require(self.eps.is_finite() && self.eps > 0.0, "eps must be > 0")
    }

    /// Three equilibria (two stable) exist iff `a > 2 sqrt(b)`.
    pub fn is_bistable(&self) -> bool {
        self.a > 2.0 * self.b.sqrt()
    }
}

impl Default for PitchforkParams {
    fn default() -> Self {
        Self { a: 3.0, b: 2.0, eps: 0.1 }
    }
}

/// Pitchfork variant without the non-hyperbolic point: `x' = x(tanh mu + 2 - x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TanhParams {
    pub a: f64,
    pub b: f64,
    pub eps: f64,
}

impl TanhParams {
    pub fn new(a: f64, b: f64, eps: f64) -> Result<Self> {
        let p = Self { a, b, eps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        require(self.a.is_finite() && self.a > 0.0, "a must be > 0")?;
        require(self.b.is_finite() && self.b > 0.0, "b must be > 0")?;
        require(self.eps.is_finite() && self.eps > 0.0, "eps must be > 0")
    }
}

impl Default for TanhParams {
    fn default() -> Self {
        Self { a: 5.0, b: 10.0, eps: 0.1 }
    }
}

/// Adaptive active rotator `phi' = omega + mu - sin phi`,
/// `mu' = eps(-mu + eta(1 - sin(phi + alpha)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatorParams {
    pub omega: f64,
    pub eta: f64,
    pub alpha: f64,
    pub eps: f64,
}

impl RotatorParams {
    /// `alpha` is reduced into `(-pi, pi]`.
    pub fn new(omega: f64, eta: f64, alpha: f64, eps: f64) -> Result<Self> {
        let p = Self { omega, eta, alpha: normalize_angle(alpha), eps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        require(self.omega.is_finite(), "omega must be finite")?;
        require(self.eta.is_finite() && self.eta >= 0.0, "eta must be >= 0")?;
        require(self.alpha.is_finite(), "alpha must be finite")?;
        require(self.eps.is_finite() && self.eps > 0.0, "eps must be > 0")
    }
}

impl Default for RotatorParams {
    fn default() -> Self {
        Self { omega: -4.0, eta: 10.0, alpha: FRAC_PI_2, eps: 0.1 }
    }
}

/// Mean-field coupled adaptive rotators; `N = omegas.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub omegas: Vec<f64>,
    pub kappa: f64,
    pub eta: f64,
    pub alpha: f64,
    pub eps: f64,
}

impl NetworkParams {
    pub fn new(omegas: Vec<f64>, kappa: f64, eta: f64, alpha: f64, eps: f64) -> Result<Self> {
        let p = Self { omegas, kappa, eta, alpha: normalize_angle(alpha), eps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        require(!self.omegas.is_empty(), "network needs at least one rotator")?;
        require(self.omegas.iter().all(|w| w.is_finite()), "omegas must be finite")?;
        require(self.kappa.is_finite(), "kappa must be finite")?;
        require(self.eta.is_finite(), "eta must be finite")?;
        require(self.alpha.is_finite(), "alpha must be finite")?;
        require(self.eps.is_finite() && self.eps > 0.0, "eps must be > 0")
    }

    pub fn n(&self) -> usize {
        self.omegas.len()
    }

    /// Ten rotators with `omega_i = -4 + (i - 1)/9`, `kappa = 1`, `eta = 10`, `alpha = pi/2`.
    pub fn ten_rotators(eps: f64) -> Self {
        let omegas = (0..10).map(|i| -4.0 + i as f64 / 9.0).collect();
        Self { omegas, kappa: 1.0, eta: 10.0, alpha: FRAC_PI_2, eps }
    }

    /// Two rotators with `omega_1 = -4` and `omega_2 = omega_1 - delta_omega`.
    pub fn two_rotators(delta_omega: f64, eps: f64) -> Self {
        Self { omegas: vec![-4.0, -4.0 - delta_omega], kappa: 1.0, eta: 10.0, alpha: FRAC_PI_2, eps }
    }
}

/// Maps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

pub fn pitchfork_rhs(p: &PitchforkParams, state: [f64; 2]) -> Result<[f64; 2]> {
    let [x, mu] = state;
    if x < 0.0 {
        return Err(ModelError::DomainError(format!("x = {x} < 0")));
    }
    Ok([x * (mu - x * x), p.eps * (-mu + p.a * x - p.b)])
}

pub fn tanh_rhs(p: &TanhParams, state: [f64; 2]) -> Result<[f64; 2]> {
    let [x, mu] = state;
    if x < 0.0 {
        return Err(ModelError::DomainError(format!("x = {x} < 0")));
    }
    Ok([x * (mu.tanh() + 2.0 - x), p.eps * (-mu + p.a * x - p.b)])
}

pub fn rotator_rhs(p: &RotatorParams, state: [f64; 2]) -> [f64; 2] {
    let [phi, mu] = state;
    [p.omega + mu - phi.sin(), p.eps * (-mu + p.eta * (1.0 - (phi + p.alpha).sin()))]
}

pub fn network_rhs(p: &NetworkParams, state: &[f64]) -> Result<Vec<f64>> {
    if state.len() != p.n() + 1 {
        return Err(ModelError::DimensionMismatch { expected: p.n() + 1, got: state.len() });
    }
    let mut out = vec![0.0; state.len()];
    network_field(p, state, &mut out);
    Ok(out)
}

#[inline]
fn network_field(p: &NetworkParams, y: &[f64], dy: &mut [f64]) {
    const STACK: usize = 32;
    let n = p.n();
    if n <= STACK {
        let mut sc = [(0.0, 0.0); STACK];
        network_field_with(p, y, dy, &mut sc[..n]);
    } else {
        let mut sc = vec![(0.0, 0.0); n];
        network_field_with(p, y, dy, &mut sc);
    }
}

#[inline]
fn network_field_with(p: &NetworkParams, y: &[f64], dy: &mut [f64], sc: &mut [(f64, f64)]) {
    let n = sc.len();
    let mu = y[n];
    let (mut sum_sin, mut sum_cos) = (0.0, 0.0);
    for (slot, phi) in sc.iter_mut().zip(&y[..n]) {
        *slot = phi.sin_cos();
        sum_sin += slot.0;
        sum_cos += slot.1;
    }
    let k = p.kappa / n as f64;
    for i in 0..n {
        let (s, c) = sc[i];
        // sum_j sin(phi_j - phi_i) = cos(phi_i) S - sin(phi_i) C
        dy[i] = p.omegas[i] + mu - s + k * (c * sum_sin - s * sum_cos);
    }
    let (sa, ca) = p.alpha.sin_cos();
    let x = (sum_sin * ca + sum_cos * sa) / n as f64;
    dy[n] = p.eps * (-mu + p.eta * (1.0 - x));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Pitchfork,
    Tanh,
    Rotator,
    Network,
}

impl ModelTag {
    pub fn name(self) -> &'static str {
        match self {
            ModelTag::Pitchfork => "pitchfork",
            ModelTag::Tanh => "tanh",
            ModelTag::Rotator => "rotator",
            ModelTag::Network => "network",
        }
    }
}

impl std::str::FromStr for ModelTag {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pitchfork" => Ok(ModelTag::Pitchfork),
            "tanh" => Ok(ModelTag::Tanh),
            "rotator" => Ok(ModelTag::Rotator),
            "network" => Ok(ModelTag::Network),
            other => Err(ModelError::UnsupportedModel(other.to_string())),
        }
    }
}

impl std::fmt::Display for ModelTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Model {
    Pitchfork(PitchforkParams),
    Tanh(TanhParams),
    Rotator(RotatorParams),
    Network(NetworkParams),
}

/// A model instance with one slow coordinate (the last one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowFastSystem {
    pub model: Model,
}

impl From<Model> for SlowFastSystem {
    fn from(model: Model) -> Self {
        Self { model }
    }
}

impl SlowFastSystem {
    pub fn new(model: Model) -> Result<Self> {
        match &model {
            Model::Pitchfork(p) => p.validate()?,
            Model::Tanh(p) => p.validate()?,
            Model::Rotator(p) => p.validate()?,
            Model::Network(p) => p.validate()?,
        }
        Ok(Self { model })
    }

    pub fn pitchfork(p: PitchforkParams) -> Self {
        Self { model: Model::Pitchfork(p) }
    }

    pub fn tanh(p: TanhParams) -> Self {
        Self { model: Model::Tanh(p) }
    }

    pub fn rotator(p: RotatorParams) -> Self {
        Self { model: Model::Rotator(p) }
    }

    pub fn network(p: NetworkParams) -> Self {
        Self { model: Model::Network(p) }
    }

    pub fn tag(&self) -> ModelTag {
        match self.model {
            Model::Pitchfork(_) => ModelTag::Pitchfork,
            Model::Tanh(_) => ModelTag::Tanh,
            Model::Rotator(_) => ModelTag::Rotator,
            Model::Network(_) => ModelTag::Network,
        }
    }

    pub fn fast_dim(&self) -> usize {
        match &self.model {
            Model::Network(p) => p.n(),
            _ => 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.fast_dim() + 1
    }

    pub fn slow_index(&self) -> usize {
        self.fast_dim()
    }

    pub fn eps(&self) -> f64 {
        match &self.model {
            Model::Pitchfork(p) => p.eps,
            Model::Tanh(p) => p.eps,
            Model::Rotator(p) => p.eps,
            Model::Network(p) => p.eps,
        }
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        let mut model = self.model.clone();
        match &mut model {
            Model::Pitchfork(p) => p.eps = eps,
            Model::Tanh(p) => p.eps = eps,
            Model::Rotator(p) => p.eps = eps,
            Model::Network(p) => p.eps = eps,
        }
        Self { model }
    }

    pub fn is_angular(&self, i: usize) -> bool {
        matches!(self.model, Model::Rotator(_) | Model::Network(_)) && i < self.fast_dim()
    }

    pub fn angular_mask(&self) -> Vec<bool> {
        (0..self.dim()).map(|i| self.is_angular(i)).collect()
    }

    pub fn has_rotations(&self) -> bool {
        matches!(self.model, Model::Rotator(_) | Model::Network(_))
    }

    /// Coordinate names, slow variable last.
    pub fn coordinate_names(&self) -> Vec<String> {
        match &self.model {
            Model::Pitchfork(_) | Model::Tanh(_) => vec!["x".into(), "mu".into()],
            Model::Rotator(_) => vec!["phi".into(), "mu".into()],
            Model::Network(p) => (1..=p.n()).map(|i| format!("phi{i}")).chain(["mu".to_string()]).collect(),
        }
    }

    /// Full vector field. No domain checks: this is the integration hot path.
    #[inline]
    pub fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        match &self.model {
            Model::Pitchfork(p) => {
                let (x, mu) = (y[0], y[1]);
                dy[0] = x * (mu - x * x);
                dy[1] = p.eps * (-mu + p.a * x - p.b);
            }
            Model::Tanh(p) => {
                let (x, mu) = (y[0], y[1]);
                dy[0] = x * (mu.tanh() + 2.0 - x);
                dy[1] = p.eps * (-mu + p.a * x - p.b);
            }
            Model::Rotator(p) => {
                let (phi, mu) = (y[0], y[1]);
                dy[0] = p.omega + mu - phi.sin();
                dy[1] = p.eps * (-mu + p.eta * (1.0 - (phi + p.alpha).sin()));
            }
            Model::Network(p) => network_field(p, y, dy),
        }
    }

    pub fn rhs_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut dy = vec![0.0; self.dim()];
        self.rhs(y, &mut dy);
        dy
    }

    /// Checked evaluation: dimension and model domain.
    pub fn eval(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.dim() {
            return Err(ModelError::DimensionMismatch { expected: self.dim(), got: y.len() });
        }
        if !self.in_domain(y) {
            return Err(ModelError::DomainError(format!("x = {} < 0", y[0])));
        }
        Ok(self.rhs_vec(y))
    }

    pub fn in_domain(&self, y: &[f64]) -> bool {
        match self.model {
            Model::Pitchfork(_) | Model::Tanh(_) => y[0] >= 0.0,
            _ => true,
        }
    }

    /// Layer problem: fast coordinates with `mu` frozen (eps = 0).
    #[inline]
    pub fn layer_rhs(&self, fast: &[f64], mu: f64, out: &mut [f64]) {
        match &self.model {
            Model::Pitchfork(_) => out[0] = fast[0] * (mu - fast[0] * fast[0]),
            Model::Tanh(_) => out[0] = fast[0] * (mu.tanh() + 2.0 - fast[0]),
            Model::Rotator(p) => out[0] = p.omega + mu - fast[0].sin(),
            Model::Network(p) => {
                let n = p.n();
                let mut y = Vec::with_capacity(n + 1);
                y.extend_from_slice(&fast[..n]);
                y.push(mu);
                let mut dy = vec![0.0; n + 1];
                network_field(p, &y, &mut dy);
                out[..n].copy_from_slice(&dy[..n]);
            }
        }
    }

    /// Slow drift `g` with `mu' = eps * g(state)`.
    pub fn slow_drift(&self, y: &[f64]) -> f64 {
        match &self.model {
            Model::Pitchfork(p) => -y[1] + p.a * y[0] - p.b,
            Model::Tanh(p) => -y[1] + p.a * y[0] - p.b,
            Model::Rotator(p) => -y[1] + p.eta * (1.0 - (y[0] + p.alpha).sin()),
            Model::Network(p) => {
                let n = p.n();
                let x: f64 = y[..n].iter().map(|phi| (phi + p.alpha).sin()).sum::<f64>() / n as f64;
                -y[n] + p.eta * (1.0 - x)
            }
        }
    }

    /// Angular coordinates reduced into `[0, 2 pi)`; others unchanged.
    pub fn wrap_phase(&self, state: &[f64]) -> Vec<f64> {
        state
            .iter()
            .enumerate()
            .map(|(i, &v)| if self.is_angular(i) { wrap_angle(v) } else { v })
            .collect()
    }

    /// Distance between two states with angular differences taken on the circle.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(i, (u, v))| {
                let d = if self.is_angular(i) { angle_diff(*u, *v) } else { u - v };
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn critical_manifold(&self) -> Result<Vec<CriticalManifoldBranch>> {
        critical_manifold(&self.model)
    }
}

/// Reduces an angle into `[0, 2 pi)`.
pub fn wrap_angle(phi: f64) -> f64 {
    let r = phi.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Signed difference `a - b` mapped into `[-pi, pi)`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    (a - b + PI).rem_euclid(TAU) - PI
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchStability {
    Attracting,
    Repelling,
}

/// Closed-form fast coordinate of a critical manifold branch as a function of `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BranchCurve {
    /// `x = 0`
    Zero,
    /// `x = sqrt(mu)`
    SqrtMu,
    /// `x = tanh(mu) + 2`
    TanhPlusTwo,
    /// `phi = arcsin(mu + omega)`
    Arcsin { omega: f64 },
    /// `phi = pi - arcsin(mu + omega)`
    PiMinusArcsin { omega: f64 },
}

impl BranchCurve {
    pub fn eval(&self, mu: f64) -> f64 {
        match *self {
            BranchCurve::Zero => 0.0,
            BranchCurve::SqrtMu => mu.max(0.0).sqrt(),
            BranchCurve::TanhPlusTwo => mu.tanh() + 2.0,
            BranchCurve::Arcsin { omega } => (mu + omega).clamp(-1.0, 1.0).asin(),
            BranchCurve::PiMinusArcsin { omega } => PI - (mu + omega).clamp(-1.0, 1.0).asin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalManifoldBranch {
    pub name: String,
    pub curve: BranchCurve,
    /// Closed `mu` interval on which the branch exists (may be infinite).
    pub mu_range: (f64, f64),
    pub stability: BranchStability,
}

impl CriticalManifoldBranch {
    pub fn contains(&self, mu: f64) -> bool {
        mu >= self.mu_range.0 && mu <= self.mu_range.1
    }

    pub fn fast_at(&self, mu: f64) -> Option<f64> {
        self.contains(mu).then(|| self.curve.eval(mu))
    }
}

pub fn critical_manifold(model: &Model) -> Result<Vec<CriticalManifoldBranch>> {
    let inf = f64::INFINITY;
    let branch = |name: &str, curve, mu_range, stability| CriticalManifoldBranch {
        name: name.to_string(),
        curve,
        mu_range,
        stability,
    };
    match model {
        Model::Pitchfork(_) => Ok(vec![
            branch("S0a", BranchCurve::Zero, (-inf, 0.0), BranchStability::Attracting),
            branch("S0r", BranchCurve::Zero, (0.0, inf), BranchStability::Repelling),
            branch("S1", BranchCurve::SqrtMu, (0.0, inf), BranchStability::Attracting),
        ]),
        Model::Tanh(_) => Ok(vec![
            branch("S0", BranchCurve::Zero, (-inf, inf), BranchStability::Repelling),
            branch("S1", BranchCurve::TanhPlusTwo, (-inf, inf), BranchStability::Attracting),
        ]),
        Model::Rotator(p) => {
            let range = (-p.omega - 1.0, -p.omega + 1.0);
            Ok(vec![
                branch("Sa", BranchCurve::Arcsin { omega: p.omega }, range, BranchStability::Attracting),
                branch("Sr", BranchCurve::PiMinusArcsin { omega: p.omega }, range, BranchStability::Repelling),
            ])
        }
        Model::Network(_) => Err(ModelError::UnsupportedModel(
            "no closed-form critical manifold for the rotator network".into(),
        )),
    }
}
