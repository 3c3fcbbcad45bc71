//! Adaptive Dormand–Prince 5(4) integration with cubic Hermite dense output
//! and event location.
//!
//! Backward runs (`t1 < t0`) go through the same stepping loop: the vector
//! field is wrapped so that the solver always advances an internal clock
//! `s = |t - t0|` forward, and the stored times and derivatives are mapped back
//! to physical time.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("step cap of {max_steps} steps exceeded at t = {t}")]
    StepCapExceeded { max_steps: u64, t: f64 },
    #[error("state or vector field became non-finite at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("time {t} outside trajectory range [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("invalid integration input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, OdeError>;

pub const DEFAULT_REL_TOL: f64 = 1e-10;
pub const DEFAULT_ABS_TOL: f64 = 1e-10;
pub const DEFAULT_EVENT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_STEPS: u64 = 100_000_000;

/// An initial value problem `y' = rhs(t, y)` together with its solver settings.
///
/// `rhs` writes the derivative of `y` into its third argument.
#[derive(Clone)]
pub struct OdeSpec<F> {
    pub dim: usize,
    pub rhs: F,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: Option<f64>,
    pub max_steps: u64,
    pub event_tol: f64,
}

impl<F> OdeSpec<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    pub fn new(dim: usize, rhs: F) -> Self {
        Self {
            dim,
            rhs,
            rel_tol: DEFAULT_REL_TOL,
            abs_tol: DEFAULT_ABS_TOL,
            max_step: None,
            max_steps: DEFAULT_MAX_STEPS,
            event_tol: DEFAULT_EVENT_TOL,
        }
    }

    pub fn tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    pub fn max_step(mut self, h: f64) -> Self {
        self.max_step = Some(h);
        self
    }

    pub fn max_steps(mut self, n: u64) -> Self {
        self.max_steps = n;
        self
    }

    fn validate(&self, y0: &[f64], t0: f64, t1: f64) -> Result<()> {
        if self.dim == 0 {
            return Err(OdeError::InvalidInput("dimension must be at least 1".into()));
        }
        if y0.len() != self.dim {
            return Err(OdeError::InvalidInput(format!(
                "initial state has length {}, expected {}",
                y0.len(),
                self.dim
            )));
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0 && self.event_tol > 0.0) {
            return Err(OdeError::InvalidInput("tolerances must be positive".into()));
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0) {
                return Err(OdeError::InvalidInput("max_step must be positive".into()));
            }
        }
        if !t0.is_finite() || !t1.is_finite() || t0 == t1 {
            return Err(OdeError::InvalidInput(format!(
                "time span ({t0}, {t1}) must be finite and non-empty"
            )));
        }
        if y0.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFiniteState { t: t0 });
        }
        Ok(())
    }
}

/// Which sign changes of an event function count, relative to the order in
/// which the integrator visits times (for backward runs "rising" means `g`
/// grows as `t` decreases).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Rising,
    Falling,
    Any,
}

type EventFn<'a> = dyn Fn(&[f64], f64) -> f64 + 'a;

pub struct EventSpec<'a> {
    g: Box<EventFn<'a>>,
    pub direction: Direction,
    pub terminal: bool,
}

impl<'a> EventSpec<'a> {
    pub fn new(g: impl Fn(&[f64], f64) -> f64 + 'a, direction: Direction, terminal: bool) -> Self {
        Self { g: Box::new(g), direction, terminal }
    }

    /// Fires when coordinate `index` crosses `level`.
    pub fn threshold(index: usize, level: f64, direction: Direction, terminal: bool) -> Self {
        Self::new(move |y: &[f64], _t| y[index] - level, direction, terminal)
    }

    #[inline]
    pub fn eval(&self, y: &[f64], t: f64) -> f64 {
        (self.g)(y, t)
    }

    fn triggered(&self, before: f64, after: f64) -> bool {
        let rising = before < 0.0 && after >= 0.0;
        let falling = before > 0.0 && after <= 0.0;
        match self.direction {
            Direction::Rising => rising,
            Direction::Falling => falling,
            Direction::Any => rising || falling,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub state: Vec<f64>,
    pub id: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: u64,
    pub rejected: u64,
    pub rhs_evals: u64,
}

/// Accepted integration nodes with the derivative at each node, which is what
/// the cubic Hermite dense output needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    derivs: Vec<f64>,
    pub events: Vec<EventRecord>,
    pub terminated_by_event: bool,
    pub stats: StepStats,
}

impl Trajectory {
    fn with_capacity(dim: usize, cap: usize) -> Self {
        Self {
            dim,
            times: Vec::with_capacity(cap),
            states: Vec::with_capacity(cap * dim),
            derivs: Vec::with_capacity(cap * dim),
            events: Vec::new(),
            terminated_by_event: false,
            stats: StepStats::default(),
        }
    }

    fn push(&mut self, t: f64, y: &[f64], dy: &[f64]) {
        self.times.push(t);
        self.states.extend_from_slice(y);
        self.derivs.extend_from_slice(dy);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn derivative(&self, i: usize) -> &[f64] {
        &self.derivs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.states.chunks_exact(self.dim)
    }

    pub fn first_time(&self) -> f64 {
        self.times[0]
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one node")
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    fn ascending(&self) -> bool {
        self.len() < 2 || self.times[1] > self.times[0]
    }

    /// Index `i` of the interval `[times[i], times[i+1]]` containing `t`.
    fn interval(&self, t: f64) -> Result<usize> {
        let (lo, hi) = if self.ascending() {
            (self.first_time(), self.final_time())
        } else {
            (self.final_time(), self.first_time())
        };
        if !(t >= lo && t <= hi) {
            return Err(OdeError::OutOfRange { t, lo, hi });
        }
        let n = self.len();
        if n == 1 {
            return Ok(0);
        }
        let idx = if self.ascending() {
            self.times.partition_point(|&s| s <= t)
        } else {
            self.times.partition_point(|&s| s >= t)
        };
        Ok(idx.saturating_sub(1).min(n - 2))
    }

    /// Dense output at `t`: cubic Hermite interpolation between accepted nodes,
    /// exact at the nodes themselves.
    pub fn dense_eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.dense_eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn dense_eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let i = self.interval(t)?;
        self.hermite(i, t, out);
        Ok(())
    }

    fn hermite(&self, i: usize, t: f64, out: &mut [f64]) {
        if self.len() == 1 || t == self.times[i] {
            out.copy_from_slice(self.state(i));
            return;
        }
        if t == self.times[i + 1] {
            out.copy_from_slice(self.state(i + 1));
            return;
        }
        hermite_eval(
            self.times[i],
            self.state(i),
            self.derivative(i),
            self.times[i + 1],
            self.state(i + 1),
            self.derivative(i + 1),
            t,
            out,
        );
    }

    /// Samples `count` dense-output points `start + k*step`, walking the node
    /// intervals once instead of searching for each sample.
    pub fn sample_uniform(&self, start: f64, step: f64, count: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(count);
        if count == 0 {
            return Ok(out);
        }
        let mut i = self.interval(start)?;
        let asc = self.ascending();
        let (lo, hi) = if asc {
            (self.first_time(), self.final_time())
        } else {
            (self.final_time(), self.first_time())
        };
        let slack = 1e-9 * lo.abs().max(hi.abs()).max(1.0);
        for k in 0..count {
            let mut t = start + k as f64 * step;
            // Accumulated rounding may push the last samples just past the ends.
            if t > hi && t - hi <= slack {
                t = hi;
            } else if t < lo && lo - t <= slack {
                t = lo;
            }
            if t > hi || t < lo {
                return Err(OdeError::OutOfRange { t, lo, hi });
            }
            while i + 2 < self.len() && ((asc && t > self.times[i + 1]) || (!asc && t < self.times[i + 1])) {
                i += 1;
            }
            let mut y = vec![0.0; self.dim];
            self.hermite(i, t, &mut y);
            out.push(y);
        }
        Ok(out)
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn hermite_eval(t0: f64, y0: &[f64], f0: &[f64], t1: f64, y1: &[f64], f1: &[f64], t: f64, out: &mut [f64]) {
    let h = t1 - t0;
    let th = (t - t0) / h;
    let th1 = th - 1.0;
    for k in 0..out.len() {
        let dy = y1[k] - y0[k];
        out[k] = (1.0 - th) * y0[k]
            + th * y1[k]
            + th * th1 * ((1.0 - 2.0 * th) * dy + th1 * h * f0[k] + th * h * f1[k]);
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// PI controller constants.
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

pub fn integrate<F>(spec: &OdeSpec<F>, y0: &[f64], t_span: (f64, f64)) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    integrate_with_events(spec, y0, t_span, &[])
}

pub fn integrate_with_events<F>(
    spec: &OdeSpec<F>,
    y0: &[f64],
    t_span: (f64, f64),
    events: &[EventSpec<'_>],
) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let (t0, t1) = t_span;
    spec.validate(y0, t0, t1)?;
    let n = spec.dim;
    let dir = if t1 > t0 { 1.0 } else { -1.0 };
    let length = (t1 - t0).abs();
    let phys = |s: f64| if s == length { t1 } else { t0 + dir * s };
    // Internal field in the forward clock s.
    let field = |s: f64, y: &[f64], dy: &mut [f64]| {
        (spec.rhs)(phys(s), y, dy);
        if dir < 0.0 {
            for v in dy.iter_mut() {
                *v = -*v;
            }
        }
    };

    let mut traj = Trajectory::with_capacity(n, 256);
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut dy_phys = vec![0.0; n];

    field(0.0, &y, &mut k1);
    traj.stats.rhs_evals += 1;
    if k1.iter().any(|v| !v.is_finite()) {
        return Err(OdeError::NonFiniteState { t: t0 });
    }
    to_phys(&k1, dir, &mut dy_phys);
    traj.push(t0, &y, &dy_phys);

    let mut g_prev: Vec<f64> = events.iter().map(|e| e.eval(&y, t0)).collect();

    let max_step = spec.max_step.unwrap_or(length).min(length);
    let mut h = initial_step(&field, &y, &k1, length, max_step, spec, &mut ytmp, &mut k2);
    traj.stats.rhs_evals += 1;
    let mut s = 0.0;
    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;
    let mut attempts: u64 = 0;

    loop {
        if attempts >= spec.max_steps {
            return Err(OdeError::StepCapExceeded { max_steps: spec.max_steps, t: phys(s) });
        }
        attempts += 1;
        let mut last = false;
        if s + 1.01 * h >= length {
            h = length - s;
            last = true;
        }
        if h <= f64::EPSILON * s.abs().max(1.0) {
            return Err(OdeError::NonFiniteState { t: phys(s) });
        }

        for i in 0..n {
            ytmp[i] = y[i] + h * A21 * k1[i];
        }
        field(s + C2 * h, &ytmp, &mut k2);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        field(s + C3 * h, &ytmp, &mut k3);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        field(s + C4 * h, &ytmp, &mut k4);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        field(s + C5 * h, &ytmp, &mut k5);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let s_new = if last { length } else { s + h };
        field(s_new, &ytmp, &mut k6);
        for i in 0..n {
            ynew[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        field(s_new, &ynew, &mut k7);
        traj.stats.rhs_evals += 6;

        let mut err_sq = 0.0;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = spec.abs_tol + spec.rel_tol * y[i].abs().max(ynew[i].abs());
            err_sq += (e / sc) * (e / sc);
        }
        let err = (err_sq / n as f64).sqrt();

        if !err.is_finite() {
            // Blow-up inside the step; retry smaller and let the underflow check decide.
            traj.stats.rejected += 1;
            h *= 0.1;
            last_rejected = true;
            continue;
        }

        let fac11 = err.powf(EXPO1);
        if err <= 1.0 {
            let mut fac = fac11 / fac_old.powf(BETA);
            fac = (fac / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_next = (h / fac).min(max_step);
            if last_rejected {
                h_next = h_next.min(h);
            }
            fac_old = err.max(1e-4);
            last_rejected = false;

            if ynew.iter().any(|v| !v.is_finite()) {
                return Err(OdeError::NonFiniteState { t: phys(s_new) });
            }
            traj.stats.accepted += 1;

            let t_a = phys(s);
            let t_b = phys(s_new);
            if !events.is_empty() {
                let stop = locate_events(
                    events, &mut g_prev, &mut traj, t_a, &y, t_b, &ynew, &k7, dir, spec, &mut dy_phys,
                );
                if let Some((t_e, y_e)) = stop {
                    (spec.rhs)(t_e, &y_e, &mut dy_phys);
                    traj.stats.rhs_evals += 1;
                    traj.push(t_e, &y_e, &dy_phys);
                    traj.terminated_by_event = true;
                    return Ok(traj);
                }
            }

            to_phys(&k7, dir, &mut dy_phys);
            traj.push(t_b, &ynew, &dy_phys);
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            s = s_new;
            if last {
                return Ok(traj);
            }
            h = h_next;
        } else {
            traj.stats.rejected += 1;
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
            last_rejected = true;
        }
    }
}

#[inline]
fn to_phys(k: &[f64], dir: f64, out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(k) {
        *o = dir * v;
    }
}

/// Starting step from the two-evaluation heuristic of Hairer, Nørsett & Wanner.
#[allow(clippy::too_many_arguments)]
fn initial_step<F, G>(
    field: &G,
    y: &[f64],
    f0: &[f64],
    length: f64,
    max_step: f64,
    spec: &OdeSpec<F>,
    ytmp: &mut [f64],
    f1: &mut [f64],
) -> f64
where
    G: Fn(f64, &[f64], &mut [f64]),
{
    let n = y.len() as f64;
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..y.len() {
        let sk = spec.abs_tol + spec.rel_tol * y[i].abs();
        dnf += (f0[i] / sk).powi(2);
        dny += (y[i] / sk).powi(2);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
    h = h.min(max_step).min(length);
    for i in 0..y.len() {
        ytmp[i] = y[i] + h * f0[i];
    }
    field(h, ytmp, f1);
    let mut der2 = 0.0;
    for i in 0..y.len() {
        let sk = spec.abs_tol + spec.rel_tol * y[i].abs();
        der2 += ((f1[i] - f0[i]) / sk).powi(2);
    }
    let der2 = (der2 / n).sqrt() / h;
    let der12 = der2.abs().max((dnf / n).sqrt());
    let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(0.2) };
    let h = (100.0 * h).min(h1).min(max_step).min(length);
    if h.is_finite() && h > 0.0 {
        h
    } else {
        1e-6_f64.min(length)
    }
}

/// Checks every event across the accepted step `[t_a, t_b]`; records the
/// crossings and returns the earliest terminal one, if any.
#[allow(clippy::too_many_arguments)]
fn locate_events<F>(
    events: &[EventSpec<'_>],
    g_prev: &mut [f64],
    traj: &mut Trajectory,
    t_a: f64,
    y_a: &[f64],
    t_b: f64,
    y_b: &[f64],
    k_b: &[f64],
    dir: f64,
    spec: &OdeSpec<F>,
    scratch: &mut [f64],
) -> Option<(f64, Vec<f64>)>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = y_a.len();
    let f_a = traj.derivative(traj.len() - 1).to_vec();
    to_phys(k_b, dir, scratch);
    let f_b = scratch.to_vec();
    let interp = |t: f64, out: &mut [f64]| hermite_eval(t_a, y_a, &f_a, t_b, y_b, &f_b, t, out);

    let mut found: Vec<(f64, usize, Vec<f64>)> = Vec::new();
    for (id, ev) in events.iter().enumerate() {
        let g_b = ev.eval(y_b, t_b);
        if ev.triggered(g_prev[id], g_b) {
            let (t_e, y_e) = bisect_event(ev, &interp, t_a, g_prev[id], t_b, g_b, n, spec.event_tol);
            found.push((t_e, id, y_e));
        }
        g_prev[id] = g_b;
    }
    if found.is_empty() {
        return None;
    }
    // Order by progress along the integration direction, ties by event id.
    found.sort_by(|a, b| ((a.0 - t_a) * dir).total_cmp(&((b.0 - t_a) * dir)).then(a.1.cmp(&b.1)));
    let mut stop = None;
    for (t_e, id, y_e) in found {
        if let Some((t_stop, _)) = &stop {
            if (t_e - t_stop) * dir > 0.0 {
                break;
            }
        }
        traj.events.push(EventRecord { time: t_e, state: y_e.clone(), id });
        if events[id].terminal && stop.is_none() {
            stop = Some((t_e, y_e));
        }
    }
    stop
}

#[allow(clippy::too_many_arguments)]
fn bisect_event(
    ev: &EventSpec<'_>,
    interp: &impl Fn(f64, &mut [f64]),
    t_a: f64,
    g_a: f64,
    t_b: f64,
    g_b: f64,
    n: usize,
    event_tol: f64,
) -> (f64, Vec<f64>) {
    let mut y = vec![0.0; n];
    let (mut lo, mut hi) = (t_a, t_b);
    let mut g_lo = g_a;
    // Best point on the far side of the crossing.
    let mut best = (t_b, g_b);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        interp(mid, &mut y);
        let g = ev.eval(&y, mid);
        if g == 0.0 || (g < 0.0) != (g_lo < 0.0) {
            hi = mid;
            best = (mid, g);
        } else {
            lo = mid;
            g_lo = g;
        }
        if best.1.abs() <= event_tol * 1e-3 && (hi - lo).abs() <= 1e-13 * hi.abs().max(1.0) {
            break;
        }
    }
    let t_e = best.0;
    if t_e == t_b {
        // The crossing sits on the node itself.
        interp(t_b, &mut y);
    } else {
        interp(t_e, &mut y);
    }
    (t_e, y)
}
