//! Classical approximations of the coupled nuclear-electron problem: Ehrenfest,
//! Born-Oppenheimer (with symplectic Euler for comparison), Langevin and Smoluchowski,
//! plus trajectories, time averages and the hitting-time value function.
//!
//! All schemes run in the slow time t. The nuclear mass is scaled to one; the large
//! mass M only appears in the electron phase e^{-i M^{1/2} V t}.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::espec::{self, CrossingEvent, Eigenpairs};
use crate::model::ModelSystem;

pub const DEFAULT_C_STEP: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Ehrenfest,
    Bo,
    Langevin,
    Smoluchowski,
    SymplecticEuler,
}

impl Scheme {
    pub fn is_stochastic(self) -> bool {
        matches!(self, Scheme::Langevin | Scheme::Smoluchowski)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scheme::Ehrenfest => "ehrenfest",
            Scheme::Bo => "bo",
            Scheme::Langevin => "langevin",
            Scheme::Smoluchowski => "smoluchowski",
            Scheme::SymplecticEuler => "symplectic_euler",
        };
        f.write_str(s)
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ehrenfest" => Ok(Scheme::Ehrenfest),
            "bo" => Ok(Scheme::Bo),
            "langevin" => Ok(Scheme::Langevin),
            "smoluchowski" => Ok(Scheme::Smoluchowski),
            "symplectic_euler" => Ok(Scheme::SymplecticEuler),
            other => Err(Error::InvalidParameter { name: "scheme".into(), reason: format!("unknown scheme `{other}`") }),
        }
    }
}

/// Classical state. For Ehrenfest `phi` is the electron amplitude; for the
/// Born-Oppenheimer schemes it holds the tracked (real) adiabatic eigenvector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub x: f64,
    pub p: f64,
    pub phi: Vec<Complex64>,
    pub z: f64,
    pub t: f64,
}

fn real_vector(phi: &[Complex64]) -> DVector<f64> {
    DVector::from_iterator(phi.len(), phi.iter().map(|c| c.re))
}

fn complex_of(v: &DVector<f64>) -> Vec<Complex64> {
    v.iter().map(|&r| Complex64::new(r, 0.0)).collect()
}

impl PhaseState {
    /// Start on the ground adiabatic branch at (x, p).
    pub fn bo_start(model: &ModelSystem, x: f64, p: f64) -> Result<Self> {
        let e = espec::eigen_at(model, x)?;
        if !e.is_simple(0) {
            return Err(Error::Degenerate { x, level: 0 });
        }
        Ok(PhaseState { x, p, phi: complex_of(&e.vectors.column(0).into_owned()), z: 0.0, t: 0.0 })
    }

    /// Start with the electron in the ground eigenvector at (x, p). With `perp_correction` the
    /// first-order adiabatic admixture -i M^{-1/2} p <n|V'|0> / (lambda_n - lambda_0)^2 is added
    /// to each excited level and the amplitude renormalized.
    pub fn ehrenfest_start(model: &ModelSystem, x: f64, p: f64, mass: f64, perp_correction: bool) -> Result<Self> {
        let e = espec::eigen_at(model, x)?;
        if !e.is_simple(0) {
            return Err(Error::Degenerate { x, level: 0 });
        }
        let ground = e.vectors.column(0);
        let mut phi = complex_of(&ground.into_owned());
        if perp_correction {
            let dv = model.potential_derivative(x);
            let dv0 = &dv * ground;
            for n in 1..e.levels() {
                let gap = e.values[n] - e.values[0];
                if gap <= espec::DEGENERACY_TOL {
                    return Err(Error::Crossing { x });
                }
                let c = Complex64::new(0.0, -p * e.vectors.column(n).dot(&dv0) / (mass.sqrt() * gap * gap));
                for (k, ph) in phi.iter_mut().enumerate() {
                    *ph += c * e.vectors[(k, n)];
                }
            }
            let norm = phi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            phi.iter_mut().for_each(|c| *c /= norm);
        }
        Ok(PhaseState { x, p, phi, z: 0.0, t: 0.0 })
    }

    /// State for the stochastic schemes, which carry no electron data.
    pub fn classical(x: f64, p: f64) -> Self {
        PhaseState { x, p, phi: Vec::new(), z: 0.0, t: 0.0 }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.phi.iter().map(|c| c.norm_sqr()).sum()
    }

    fn check_finite(&self) -> Result<()> {
        if self.x.is_finite() && self.p.is_finite() && self.z.is_finite() && self.phi.iter().all(|c| c.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { t: self.t })
        }
    }
}

/// Scalar potential U(X) for the stochastic schemes; returns (U, -U').
pub trait Surface: Sync {
    fn energy_force(&self, x: f64) -> Result<(f64, f64)>;
}

/// The ground adiabatic eigenvalue lambda_0.
pub struct GroundSurface<'a>(pub &'a ModelSystem);

impl Surface for GroundSurface<'_> {
    fn energy_force(&self, x: f64) -> Result<(f64, f64)> {
        let m = self.0;
        let e = espec::eigen_at(m, x)?;
        if !e.is_simple(0) {
            return Err(Error::Degenerate { x, level: 0 });
        }
        let v = e.vectors.column(0);
        let slope = v.dot(&(m.potential_derivative(x) * v));
        Ok((e.values[0], -slope))
    }
}

/// Adiabatic level followed by eigenvector overlap from `prev`.
pub struct Tracked {
    pub value: f64,
    pub slope: f64,
    pub vector: DVector<f64>,
    /// Position of the tracked level in the ascending order.
    pub index: usize,
}

pub fn track_level(model: &ModelSystem, x: f64, prev: &DVector<f64>) -> Result<Tracked> {
    let e: Eigenpairs = espec::eigen_at(model, x)?;
    let mut best = 0;
    let mut best_ov = -1.0;
    for j in 0..e.levels() {
        let ov = e.vectors.column(j).dot(prev).abs();
        if ov > best_ov {
            best_ov = ov;
            best = j;
        }
    }
    if !e.is_simple(best) {
        return Err(Error::Degenerate { x, level: best });
    }
    let mut v = e.vectors.column(best).into_owned();
    if v.dot(prev) < 0.0 {
        v.neg_mut();
    }
    let slope = v.dot(&(model.potential_derivative(x) * &v));
    Ok(Tracked { value: e.values[best], slope, vector: v, index: best })
}

fn simpson_z(dt: f64, p0: f64, pm: f64, p1: f64) -> f64 {
    dt / 6.0 * (p0 * p0 + 4.0 * pm * pm + p1 * p1)
}

/// One Stormer-Verlet step on the tracked adiabatic branch; z by Simpson's rule on p^2.
pub fn step_bo(model: &ModelSystem, state: &PhaseState, dt: f64) -> Result<PhaseState> {
    let prev = real_vector(&state.phi);
    let a = track_level(model, state.x, &prev)?;
    let p_half = state.p - 0.5 * dt * a.slope;
    let x1 = state.x + dt * p_half;
    let b = track_level(model, x1, &a.vector)?;
    let p1 = p_half - 0.5 * dt * b.slope;
    let next = PhaseState {
        x: x1,
        p: p1,
        phi: complex_of(&b.vector),
        z: state.z + simpson_z(dt, state.p, p_half, p1),
        t: state.t + dt,
    };
    next.check_finite()?;
    Ok(next)
}

/// One symplectic Euler step (kick, then drift) on the tracked adiabatic branch.
pub fn step_symplectic_euler(model: &ModelSystem, state: &PhaseState, dt: f64) -> Result<PhaseState> {
    let prev = real_vector(&state.phi);
    let a = track_level(model, state.x, &prev)?;
    let p1 = state.p - dt * a.slope;
    let x1 = state.x + dt * p1;
    let b = track_level(model, x1, &a.vector)?;
    let next = PhaseState {
        x: x1,
        p: p1,
        phi: complex_of(&b.vector),
        z: state.z + 0.5 * dt * (state.p * state.p + p1 * p1),
        t: state.t + dt,
    };
    next.check_finite()?;
    Ok(next)
}

fn expectation(m: &DMatrix<f64>, phi: &[Complex64]) -> f64 {
    let d = phi.len();
    let mut s = 0.0;
    for i in 0..d {
        let mut row = Complex64::new(0.0, 0.0);
        for j in 0..d {
            row += phi[j] * m[(i, j)];
        }
        s += (phi[i].conj() * row).re;
    }
    s
}

fn ehrenfest_force(model: &ModelSystem, x: f64, phi: &[Complex64]) -> f64 {
    -expectation(&model.potential_derivative(x), phi)
}

/// Rotate phi by exp(-i M^{1/2} V(x) dt) through the eigendecomposition of V(x).
pub fn rotate_electron(model: &ModelSystem, x: f64, phi: &[Complex64], mass: f64, dt: f64) -> Result<Vec<Complex64>> {
    let e = espec::eigen_at(model, x)?;
    let d = phi.len();
    let w = mass.sqrt() * dt;
    let mut out = vec![Complex64::new(0.0, 0.0); d];
    for n in 0..d {
        let col = e.vectors.column(n);
        let mut c = Complex64::new(0.0, 0.0);
        for k in 0..d {
            c += phi[k] * col[k];
        }
        c *= Complex64::from_polar(1.0, -w * e.values[n]);
        for k in 0..d {
            out[k] += c * col[k];
        }
    }
    Ok(out)
}

/// Strang step: half kick, drift, exact electron rotation at the midpoint X, half kick.
pub fn step_ehrenfest(model: &ModelSystem, state: &PhaseState, dt: f64, mass: f64, c_step: f64) -> Result<PhaseState> {
    let dt_max = c_step / mass.sqrt();
    if dt > dt_max * (1.0 + 1e-12) {
        return Err(Error::StiffnessGuard { dt, dt_max });
    }
    let drift = (state.norm_sqr() - 1.0).abs();
    if drift > 1e-8 {
        return Err(Error::NormDrift(drift));
    }
    let p_half = state.p + 0.5 * dt * ehrenfest_force(model, state.x, &state.phi);
    let x1 = state.x + dt * p_half;
    let phi = rotate_electron(model, 0.5 * (state.x + x1), &state.phi, mass, dt)?;
    let p1 = p_half + 0.5 * dt * ehrenfest_force(model, x1, &phi);
    let next = PhaseState { x: x1, p: p1, phi, z: state.z + simpson_z(dt, state.p, p_half, p1), t: state.t + dt };
    next.check_finite()?;
    Ok(next)
}

/// BAOAB step for dX = p dt, dp = -U'(X) dt - K p dt + sqrt(2 T K) dW with unit mass.
pub fn step_langevin<R: Rng + ?Sized>(
    surface: &dyn Surface,
    state: &PhaseState,
    dt: f64,
    temperature: f64,
    friction: f64,
    rng: &mut R,
) -> Result<PhaseState> {
    let (_, f0) = surface.energy_force(state.x)?;
    let mut p = state.p + 0.5 * dt * f0;
    let mut x = state.x + 0.5 * dt * p;
    let c1 = (-friction * dt).exp();
    let xi: f64 = rng.sample(StandardNormal);
    p = c1 * p + (temperature * (1.0 - c1 * c1)).sqrt() * xi;
    x += 0.5 * dt * p;
    let (_, f1) = surface.energy_force(x)?;
    p += 0.5 * dt * f1;
    let next = PhaseState { x, p, phi: Vec::new(), z: state.z + 0.5 * dt * (state.p * state.p + p * p), t: state.t + dt };
    next.check_finite()?;
    Ok(next)
}

/// Euler-Maruyama step for dX = -U'(X) dt + sqrt(2 T) dW. The returned p is the drift -U'(X).
pub fn step_smoluchowski<R: Rng + ?Sized>(
    surface: &dyn Surface,
    state: &PhaseState,
    dt: f64,
    temperature: f64,
    rng: &mut R,
) -> Result<PhaseState> {
    let (_, f) = surface.energy_force(state.x)?;
    let xi: f64 = rng.sample(StandardNormal);
    let x = state.x + f * dt + (2.0 * temperature * dt).sqrt() * xi;
    let next = PhaseState { x, p: f, phi: Vec::new(), z: state.z, t: state.t + dt };
    next.check_finite()?;
    Ok(next)
}

/// Energy of a state under a scheme: H_E, H_BO, or the Langevin / Smoluchowski potential.
pub fn energy(model: &ModelSystem, surface: &dyn Surface, scheme: Scheme, state: &PhaseState) -> Result<f64> {
    match scheme {
        Scheme::Ehrenfest => Ok(0.5 * state.p * state.p + expectation(&model.potential(state.x), &state.phi)),
        Scheme::Bo | Scheme::SymplecticEuler => {
            let t = track_level(model, state.x, &real_vector(&state.phi))?;
            Ok(0.5 * state.p * state.p + t.value)
        }
        Scheme::Langevin => Ok(0.5 * state.p * state.p + surface.energy_force(state.x)?.0),
        Scheme::Smoluchowski => Ok(surface.energy_force(state.x)?.0),
    }
}

/// <phi, (V - lambda_0) phi> at the state's position, the gap between H_E and H_BO.
pub fn excitation_energy(model: &ModelSystem, state: &PhaseState) -> Result<f64> {
    let e = espec::eigen_at(model, state.x)?;
    Ok(expectation(&model.potential(state.x), &state.phi) - e.values[0] * state.norm_sqr())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub scheme: Scheme,
    pub t_final: f64,
    pub dt: f64,
    pub mass: f64,
    pub temperature: f64,
    pub friction: f64,
    pub c_step: f64,
    /// Return surface X = x_surface mod L; defaults to the initial position.
    pub x_surface: Option<f64>,
}

impl SimConfig {
    pub fn new(scheme: Scheme, t_final: f64, dt: f64, mass: f64) -> Self {
        SimConfig { scheme, t_final, dt, mass, temperature: 0.0, friction: 1.0, c_step: DEFAULT_C_STEP, x_surface: None }
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt * (1.0 + 1e-12)).floor() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub p: f64,
    pub h: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingRecord {
    pub tau: f64,
    pub state: PhaseState,
    pub theta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub scheme: Scheme,
    pub dt: f64,
    pub mass: f64,
    pub samples: Vec<Sample>,
    /// Electron amplitude per sample (Ehrenfest only).
    pub phi: Vec<Vec<Complex64>>,
    pub crossings: Vec<CrossingEvent>,
    pub hits: Vec<HittingRecord>,
    pub init: PhaseState,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn positions(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.x).collect()
    }

    pub fn t_final(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }
}

fn deterministic_step(model: &ModelSystem, cfg: &SimConfig, state: &PhaseState, dt: f64) -> Result<PhaseState> {
    match cfg.scheme {
        Scheme::Bo => step_bo(model, state, dt),
        Scheme::SymplecticEuler => step_symplectic_euler(model, state, dt),
        Scheme::Ehrenfest => step_ehrenfest(model, state, dt, cfg.mass, cfg.c_step),
        _ => unreachable!("stochastic schemes are not re-stepped"),
    }
}

fn surface_index(x: f64, x_surface: f64, length: f64) -> f64 {
    ((x - x_surface) / length).floor()
}

/// Locate the hit inside a deterministic step by bisection on the partial step length.
fn bisect_hit(model: &ModelSystem, cfg: &SimConfig, from: &PhaseState, target: f64) -> Result<PhaseState> {
    let (mut lo, mut hi) = (0.0, cfg.dt);
    let mut best = from.clone();
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let s = deterministic_step(model, cfg, from, mid)?;
        let below = s.x < target;
        best = s;
        if below {
            lo = mid;
        } else {
            hi = mid;
        }
        if (best.x - target).abs() <= 1e-14 * (1.0 + target.abs()) || hi - lo <= 1e-16 * cfg.dt {
            break;
        }
    }
    Ok(best)
}

fn interpolate_hit(a: &PhaseState, b: &PhaseState, target: f64) -> PhaseState {
    let w = (target - a.x) / (b.x - a.x);
    PhaseState {
        x: target,
        p: a.p + w * (b.p - a.p),
        phi: Vec::new(),
        z: a.z + w * (b.z - a.z),
        t: a.t + w * (b.t - a.t),
    }
}

/// Integrate from `init` to `t_final`. Stochastic schemes need `rng` and use `surface`
/// (the ground eigenvalue unless another surface is supplied through `simulate_on`).
pub fn simulate<R: Rng + ?Sized>(
    model: &ModelSystem,
    init: &PhaseState,
    cfg: &SimConfig,
    rng: Option<&mut R>,
) -> Result<Trajectory> {
    simulate_on(model, &GroundSurface(model), init, cfg, rng)
}

pub fn simulate_on<R: Rng + ?Sized>(
    model: &ModelSystem,
    surface: &dyn Surface,
    init: &PhaseState,
    cfg: &SimConfig,
    mut rng: Option<&mut R>,
) -> Result<Trajectory> {
    if !(cfg.dt > 0.0 && cfg.t_final >= 0.0) {
        return Err(Error::InvalidParameter { name: "dt".into(), reason: "need dt > 0 and t_final >= 0".into() });
    }
    if cfg.scheme.is_stochastic() && rng.is_none() {
        return Err(Error::InvalidParameter { name: "rng".into(), reason: "stochastic scheme needs a random stream".into() });
    }
    let steps = cfg.steps();
    let x_surface = cfg.x_surface.unwrap_or(init.x);
    let mut samples = Vec::with_capacity(steps + 1);
    let mut phis = Vec::new();
    let mut hits = Vec::new();
    let mut state = init.clone();
    let record_phi = cfg.scheme == Scheme::Ehrenfest;
    let push = |s: &PhaseState, samples: &mut Vec<Sample>, phis: &mut Vec<Vec<Complex64>>| -> Result<()> {
        let h = energy(model, surface, cfg.scheme, s)?;
        samples.push(Sample { t: s.t, x: s.x, p: s.p, h, z: s.z });
        if record_phi {
            phis.push(s.phi.clone());
        }
        Ok(())
    };
    push(&state, &mut samples, &mut phis)?;
    for k in 1..=steps {
        let mut next = match cfg.scheme {
            Scheme::Langevin => {
                step_langevin(surface, &state, cfg.dt, cfg.temperature, cfg.friction, rng.as_deref_mut().unwrap())?
            }
            Scheme::Smoluchowski => step_smoluchowski(surface, &state, cfg.dt, cfg.temperature, rng.as_deref_mut().unwrap())?,
            _ => deterministic_step(model, cfg, &state, cfg.dt)?,
        };
        // pin the clock to k dt so long runs do not accumulate rounding in t
        next.t = init.t + k as f64 * cfg.dt;
        let (w0, w1) = (surface_index(state.x, x_surface, model.length), surface_index(next.x, x_surface, model.length));
        if w1 > w0 {
            let target = x_surface + w1 * model.length;
            let hit = if cfg.scheme.is_stochastic() {
                interpolate_hit(&state, &next, target)
            } else {
                bisect_hit(model, cfg, &state, target)?
            };
            if hits.last().is_none_or(|h: &HittingRecord| hit.t > h.tau) {
                hits.push(HittingRecord { tau: hit.t, theta: hit.z, state: hit });
            }
        }
        state = next;
        push(&state, &mut samples, &mut phis)?;
    }
    let crossings = if model.levels >= 2 && matches!(cfg.scheme, Scheme::Bo | Scheme::SymplecticEuler | Scheme::Ehrenfest) {
        let ts: Vec<f64> = samples.iter().map(|s| s.t).collect();
        let xs: Vec<f64> = samples.iter().map(|s| s.x).collect();
        espec::detect_crossings(model, &ts, &xs, model.tolerance("c_min", 1e-6))?
    } else {
        Vec::new()
    };
    Ok(Trajectory { scheme: cfg.scheme, dt: cfg.dt, mass: cfg.mass, samples, phi: phis, crossings, hits, init: init.clone() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeAverage {
    pub mean: f64,
    /// Standard error from 16 equal-length blocks.
    pub std_error: f64,
    pub duration: f64,
}

fn window_integral(samples: &[Sample], g: &dyn Fn(f64) -> f64, t0: f64, t1: f64) -> f64 {
    // samples are equally spaced in t up to rounding; locate the window by bisection
    let lo = samples.partition_point(|s| s.t <= t0).saturating_sub(1);
    let mut total = 0.0;
    for w in samples[lo..].windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.t >= t1 {
            break;
        }
        let ta = a.t.max(t0);
        let tb = b.t.min(t1);
        if tb <= ta {
            continue;
        }
        let lerp = |t: f64| a.x + (b.x - a.x) * (t - a.t) / (b.t - a.t);
        total += 0.5 * (tb - ta) * (g(lerp(ta)) + g(lerp(tb)));
    }
    total
}

/// Trapezoid average of g(X_t) over [t0, t1] with a 16-block standard error.
pub fn time_average_window(traj: &Trajectory, g: &dyn Fn(f64) -> f64, t0: f64, t1: f64) -> Result<TimeAverage> {
    let s = &traj.samples;
    if s.len() < 2 {
        return Err(Error::InsufficientData("empty trajectory".into()));
    }
    let t_end = s[s.len() - 1].t;
    if !(t0 >= s[0].t && t1 <= t_end * (1.0 + 1e-14) && t1 > t0) {
        return Err(Error::InsufficientData(format!("window [{t0}, {t1}] outside [{}, {t_end}]", s[0].t)));
    }
    let t1 = t1.min(t_end);
    let duration = t1 - t0;
    let mean = window_integral(s, g, t0, t1) / duration;
    let blocks = 16;
    let h = duration / blocks as f64;
    let means: Vec<f64> =
        (0..blocks).map(|b| window_integral(s, g, t0 + b as f64 * h, t0 + (b + 1) as f64 * h) / h).collect();
    let bm = means.iter().sum::<f64>() / blocks as f64;
    let var = means.iter().map(|m| (m - bm).powi(2)).sum::<f64>() / (blocks - 1) as f64;
    Ok(TimeAverage { mean, std_error: (var / blocks as f64).sqrt(), duration })
}

/// Average over [t_0 + burn_in, t_final].
pub fn time_average(traj: &Trajectory, g: &dyn Fn(f64) -> f64, burn_in: f64) -> Result<TimeAverage> {
    let t0 = traj.samples.first().map_or(0.0, |s| s.t) + burn_in;
    time_average_window(traj, g, t0, traj.t_final())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HittingValue {
    pub theta_gain: f64,
    pub tau: f64,
    /// sup over the path of |<phi, (V - lambda_0) phi>| (zero for Born-Oppenheimer).
    pub max_excitation: f64,
    pub end: PhaseState,
}

/// Integrate from a start on I = {X = start.x mod L} until the first return; requires p > 0.
pub fn hitting_value_function(
    model: &ModelSystem,
    start: &PhaseState,
    cfg: &SimConfig,
    t_max: f64,
) -> Result<HittingValue> {
    if cfg.scheme.is_stochastic() {
        return Err(Error::Unsupported("hitting values need a deterministic scheme".into()));
    }
    if start.p <= 0.0 {
        return Err(Error::TurningPoint { x: start.x });
    }
    let target = start.x + model.length;
    let mut state = start.clone();
    let mut max_exc = 0.0f64;
    let track_exc = cfg.scheme == Scheme::Ehrenfest && model.levels > 1;
    loop {
        if track_exc {
            max_exc = max_exc.max(excitation_energy(model, &state)?.abs());
        }
        if state.t - start.t > t_max {
            return Err(Error::UnboundedHitting { t_max });
        }
        let next = deterministic_step(model, cfg, &state, cfg.dt)?;
        if next.p <= 0.0 {
            return Err(Error::TurningPoint { x: next.x });
        }
        if next.x >= target {
            let hit = bisect_hit(model, cfg, &state, target)?;
            if track_exc {
                max_exc = max_exc.max(excitation_energy(model, &hit)?.abs());
            }
            return Ok(HittingValue { theta_gain: hit.z - start.z, tau: hit.t - start.t, max_excitation: max_exc, end: hit });
        }
        state = next;
    }
}
