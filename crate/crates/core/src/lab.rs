//! Convergence harness: quantum observables from the grid eigensolver against classical
//! time averages, swept over M, with log-log rate fits and replayable run records.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, PhaseState, Scheme, SimConfig};
use crate::error::{Error, Result};
use crate::espec;
use crate::model::{ModelSpec, ModelSystem};
use crate::qref::{self, GridHamiltonian, Laplacian};
use crate::rng::StreamRng;
use crate::wkb;

pub type Observable = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// Names accepted by `observable`.
pub const OBSERVABLES: &[&str] = &["one", "cos", "sin", "half", "cos2"];

/// Default error metric: the max over these.
pub const DEFAULT_OBSERVABLES: &[&str] = &["cos", "sin", "half", "cos2"];

/// Position observable on a torus of length L. `half` is a smoothed indicator of [0, L/2).
pub fn observable(name: &str, length: f64) -> Result<Observable> {
    let k = 2.0 * PI / length;
    Ok(match name {
        "one" => Box::new(|_| 1.0),
        "cos" => Box::new(move |x: f64| (k * x).cos()),
        "sin" => Box::new(move |x: f64| (k * x).sin()),
        "half" => Box::new(move |x: f64| 0.5 + 0.5 * (4.0 * (k * x).sin()).tanh()),
        "cos2" => Box::new(move |x: f64| (2.0 * k * x).cos()),
        other => {
            return Err(Error::InvalidParameter {
                name: "g".into(),
                reason: format!("unknown observable `{other}`, expected one of {OBSERVABLES:?}"),
            })
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergeConfig {
    pub scheme: Scheme,
    pub masses: Vec<f64>,
    /// Classical energy window: k(M) is the quantum number nearest this energy.
    pub energy: f64,
    /// Return surface; `None` picks the grid point of widest first gap.
    pub x_surface: Option<f64>,
    /// Returns averaged over (rounded up to a multiple of the branch laps).
    pub returns: usize,
    pub observables: Vec<String>,
    pub laplacian: Laplacian,
    pub dt_bo: f64,
    /// Ehrenfest step is c_step / sqrt(M).
    pub c_step: f64,
    pub perp_correction: bool,
    pub seed: u64,
}

impl ConvergeConfig {
    pub fn new(scheme: Scheme, masses: &[f64], energy: f64) -> Self {
        ConvergeConfig {
            scheme,
            masses: masses.to_vec(),
            energy,
            x_surface: None,
            returns: 4,
            observables: DEFAULT_OBSERVABLES.iter().map(|s| s.to_string()).collect(),
            laplacian: Laplacian::Spectral,
            dt_bo: 2e-3,
            c_step: 0.05,
            perp_correction: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mass: f64,
    pub k: i64,
    pub wkb_energy: f64,
    /// Energies of the selected eigenpair group (a doublet is averaged).
    pub energies: Vec<f64>,
    pub quantum_energy: f64,
    pub n_grid: usize,
    pub quantum: Vec<f64>,
    pub classical: Vec<f64>,
    pub errors: Vec<f64>,
    pub error: f64,
    pub crossings: usize,
    pub returns: usize,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub alpha: f64,
    pub stderr: f64,
    pub intercept: f64,
    /// alpha +- 2 stderr.
    pub interval: (f64, f64),
    pub max_residual: f64,
    pub flags: Vec<String>,
}

/// Relative spread in log e above which the fit is flagged pre-asymptotic.
pub const PRE_ASYMPTOTIC_RESIDUAL: f64 = 0.25;

/// Errors below this are treated as the quadrature floor.
pub const ERROR_FLOOR: f64 = 1e-10;

/// Least squares on (log M, log e); alpha is the negated slope.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!("{} points, need at least 3", points.len())));
    }
    if points.iter().any(|&(m, e)| !(m > 0.0 && e > 0.0)) {
        return Err(Error::InsufficientData("masses and errors must be positive".into()));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let res: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - intercept - slope * x).collect();
    let ssr: f64 = res.iter().map(|r| r * r).sum();
    let stderr = (ssr / (n - 2.0) / sxx).sqrt();
    let max_residual = res.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    let mut flags = Vec::new();
    if max_residual > PRE_ASYMPTOTIC_RESIDUAL {
        flags.push("pre-asymptotic".to_string());
    }
    if points.iter().all(|p| p.1 <= ERROR_FLOOR) {
        flags.push("floor-limited".to_string());
    }
    let alpha = -slope;
    Ok(RateFit { alpha, stderr, intercept, interval: (alpha - 2.0 * stderr, alpha + 2.0 * stderr), max_residual, flags })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: ModelSpec,
    pub config: ConvergeConfig,
    pub seed: u64,
    pub cells: Vec<Cell>,
    pub fit: Option<RateFit>,
    pub flags: Vec<String>,
    /// Caustic certificate: turning points found per M (empty when caustic-free).
    pub caustics: Vec<Vec<f64>>,
    pub versions: BTreeMap<String, String>,
}

impl RunRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Every number except the wall times, as raw bits.
    pub fn fingerprint(&self) -> Vec<u64> {
        let mut v = Vec::new();
        for c in &self.cells {
            v.push(c.mass.to_bits());
            v.push(c.k as u64);
            v.push(c.wkb_energy.to_bits());
            v.push(c.n_grid as u64);
            v.push(c.crossings as u64);
            v.extend(c.energies.iter().chain(&c.quantum).chain(&c.classical).chain(&c.errors).map(|x| x.to_bits()));
        }
        if let Some(f) = &self.fit {
            v.extend([f.alpha, f.stderr, f.intercept].iter().map(|x| x.to_bits()));
        }
        v
    }

    /// Rows (M, error, fitted error).
    pub fn rate_table(&self) -> Vec<(f64, f64, f64)> {
        self.cells
            .iter()
            .map(|c| {
                let fit = self.fit.as_ref().map_or(f64::NAN, |f| (f.intercept - f.alpha * c.mass.ln()).exp());
                (c.mass, c.error, fit)
            })
            .collect()
    }
}

fn versions() -> BTreeMap<String, String> {
    let mut v = BTreeMap::new();
    v.insert("qclab".to_string(), env!("CARGO_PKG_VERSION").to_string());
    v.insert("record".to_string(), "1".to_string());
    v
}

/// Grid point of widest first gap, used as the default return surface.
pub fn widest_gap_point(model: &ModelSystem, n: usize) -> Result<f64> {
    if model.levels < 2 {
        return Ok(0.0);
    }
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..n {
        let x = model.length * i as f64 / n as f64;
        let e = espec::eigen_at(model, x)?;
        let gap = e.values[1] - e.values[0];
        if gap > best.0 + 1e-12 {
            best = (gap, x);
        }
    }
    Ok(best.1)
}

/// Time average of each observable over whole returns of a classical orbit at energy E.
pub fn classical_average(
    model: &ModelSystem,
    cfg: &ConvergeConfig,
    mass: f64,
    energy: f64,
    x_surface: f64,
    returns: usize,
    gs: &[Observable],
) -> Result<(Vec<f64>, usize)> {
    let lam0 = espec::eigen_at(model, x_surface)?.values[0];
    let p0 = (2.0 * (energy - lam0)).sqrt();
    if !(p0 > 0.0) {
        return Err(Error::TurningPoint { x: x_surface });
    }
    let (init, dt) = match cfg.scheme {
        Scheme::Ehrenfest => {
            (PhaseState::ehrenfest_start(model, x_surface, p0, mass, cfg.perp_correction)?, cfg.c_step / mass.sqrt())
        }
        Scheme::Bo | Scheme::SymplecticEuler => (PhaseState::bo_start(model, x_surface, p0)?, cfg.dt_bo),
        s => return Err(Error::Unsupported(format!("{s} has no return map"))),
    };
    let prof = wkb::branch_profile(model, 1024)?;
    let h = prof.spacing();
    let lap_time: f64 = prof.values.iter().map(|v| h / (2.0 * (energy - v)).max(1e-300).sqrt()).sum::<f64>() / prof.loops as f64;
    let t_final = 2.0 * lap_time * returns as f64 + 20.0 * dt;
    let mut sim = SimConfig::new(cfg.scheme, t_final, dt, mass);
    sim.c_step = cfg.c_step.max(dynamics::DEFAULT_C_STEP);
    let traj = dynamics::simulate::<StreamRng>(model, &init, &sim, None)?;
    if traj.hits.len() < returns {
        return Err(Error::UnboundedHitting { t_max: t_final });
    }
    let t1 = traj.hits[returns - 1].tau;
    let values =
        gs.iter().map(|g| dynamics::time_average_window(&traj, g.as_ref(), init.t, t1).map(|a| a.mean)).collect::<Result<_>>()?;
    Ok((values, traj.crossings.len()))
}

fn cell(model: &ModelSystem, cfg: &ConvergeConfig, mass: f64, x_surface: f64, gs: &[Observable]) -> Result<Cell> {
    let start = Instant::now();
    let prof = wkb::branch_profile(model, wkb::PROFILE_POINTS)?;
    let k = wkb::nearest_quantum_number(model, cfg.energy, mass)?;
    let wkb_energy = prof.quantized_energy(k, mass)?;
    let n = qref::resolved_grid(model, mass, wkb_energy, 16)?;
    let h = GridHamiltonian::assemble(model, mass, n, cfg.laplacian, wkb_energy)?;
    let pairs = qref::eigensolve_near(&h, wkb_energy, 2)?;
    // the two states nearest the WKB level form the +-k doublet
    let group = &pairs[..2.min(pairs.len())];
    let energies: Vec<f64> = group.iter().map(|p| p.energy).collect();
    let quantum_energy = energies.iter().sum::<f64>() / energies.len() as f64;
    let rho = qref::average_density(group);
    let quantum: Vec<f64> = gs.iter().map(|g| qref::observable(&rho, model.length, g.as_ref())).collect();
    let returns = cfg.returns.div_ceil(prof.loops) * prof.loops;
    let (classical, crossings) = classical_average(model, cfg, mass, quantum_energy, x_surface, returns, gs)?;
    let errors: Vec<f64> = quantum.iter().zip(&classical).map(|(q, c)| (q - c).abs()).collect();
    let error = errors.iter().cloned().fold(0.0, f64::max);
    Ok(Cell {
        mass,
        k,
        wkb_energy,
        energies,
        quantum_energy,
        n_grid: n,
        quantum,
        classical,
        errors,
        error,
        crossings,
        returns,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Sweep the masses in parallel; cells are merged in input order.
pub fn converge(spec: &ModelSpec, cfg: &ConvergeConfig) -> Result<RunRecord> {
    let model = ModelSystem::build(spec)?;
    if cfg.masses.is_empty() {
        return Err(Error::InvalidParameter { name: "M".into(), reason: "empty mass list".into() });
    }
    let mut caustics = Vec::with_capacity(cfg.masses.len());
    for &mass in &cfg.masses {
        let k = wkb::nearest_quantum_number(&model, cfg.energy, mass)?;
        let e = wkb::quantized_energy(&model, k, mass)?;
        let c = wkb::detect_caustics(&model, e, wkb::PROFILE_POINTS)?;
        if !c.is_empty() {
            return Err(Error::Caustic(c));
        }
        caustics.push(c);
    }
    let x_surface = match cfg.x_surface {
        Some(x) => x,
        None => widest_gap_point(&model, 256)?,
    };
    let gs: Vec<Observable> = cfg.observables.iter().map(|n| observable(n, model.length)).collect::<Result<_>>()?;
    let cells: Vec<Cell> = cfg.masses.par_iter().map(|&m| cell(&model, cfg, m, x_surface, &gs)).collect::<Result<_>>()?;
    let mut flags = Vec::new();
    let fit = if cells.iter().all(|c| c.error <= ERROR_FLOOR) {
        flags.push("floor-limited".to_string());
        None
    } else if cells.len() >= 3 {
        let pts: Vec<(f64, f64)> = cells.iter().map(|c| (c.mass, c.error.max(ERROR_FLOOR))).collect();
        let f = fit_rate(&pts)?;
        flags.extend(f.flags.iter().cloned());
        Some(f)
    } else {
        None
    };
    Ok(RunRecord { model: spec.clone(), config: cfg.clone(), seed: cfg.seed, cells, fit, flags, caustics, versions: versions() })
}

/// Rerun a record from its stored model and configuration.
pub fn replay(record: &RunRecord) -> Result<RunRecord> {
    converge(&record.model, &record.config)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub scheme: Scheme,
    pub mass: f64,
    pub dts: Vec<f64>,
    /// |<g>_dt - <g>_quantum| per dt.
    pub errors: Vec<f64>,
    /// |<g>_dt - <g>_ref| with the reference at dt_min / 8.
    pub discretization: Vec<f64>,
    /// Max energy deviation along the run per dt.
    pub energy_drift: Vec<f64>,
    pub discretization_slope: f64,
    pub energy_slope: f64,
    /// The quantum-classical error at the reference step.
    pub floor: f64,
}

fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(&x, &y)| (x, y.max(1e-300))).collect();
    fit_rate(&pts).map_or(f64::NAN, |f| -f.alpha)
}

/// Observable error versus time step at fixed M for the Born-Oppenheimer integrators.
pub fn symplectic_perturbation_study(
    spec: &ModelSpec,
    cfg: &ConvergeConfig,
    mass: f64,
    dts: &[f64],
) -> Result<PerturbationReport> {
    if !matches!(cfg.scheme, Scheme::Bo | Scheme::SymplecticEuler) {
        return Err(Error::Unsupported(format!("{} is not a symplectic Born-Oppenheimer scheme", cfg.scheme)));
    }
    let model = ModelSystem::build(spec)?;
    let x_surface = match cfg.x_surface {
        Some(x) => x,
        None => widest_gap_point(&model, 256)?,
    };
    let g = observable("cos2", model.length)?;
    let probe = cell(&model, cfg, mass, x_surface, std::slice::from_ref(&g))?;
    let energy = probe.quantum_energy;
    let prof = wkb::branch_profile(&model, 64)?;
    let returns = cfg.returns.div_ceil(prof.loops) * prof.loops;
    let run = |dt: f64| -> Result<(f64, f64)> {
        let mut c = cfg.clone();
        c.dt_bo = dt;
        let (v, _) = classical_average(&model, &c, mass, energy, x_surface, returns, std::slice::from_ref(&g))?;
        let lam0 = espec::eigen_at(&model, x_surface)?.values[0];
        let init = PhaseState::bo_start(&model, x_surface, (2.0 * (energy - lam0)).sqrt())?;
        let sim = SimConfig::new(cfg.scheme, 20.0, dt, mass);
        let traj = dynamics::simulate::<StreamRng>(&model, &init, &sim, None)?;
        let h0 = traj.samples[0].h;
        let drift = traj.samples.iter().map(|s| (s.h - h0).abs()).fold(0.0, f64::max);
        Ok((v[0], drift))
    };
    let dt_min = dts.iter().cloned().fold(f64::INFINITY, f64::min);
    let (reference, _) = run(dt_min / 8.0)?;
    let results: Vec<(f64, f64)> = dts.par_iter().map(|&dt| run(dt)).collect::<Result<_>>()?;
    let quantum = probe.quantum[0];
    let errors: Vec<f64> = results.iter().map(|r| (r.0 - quantum).abs()).collect();
    let discretization: Vec<f64> = results.iter().map(|r| (r.0 - reference).abs()).collect();
    let energy_drift: Vec<f64> = results.iter().map(|r| r.1).collect();
    Ok(PerturbationReport {
        scheme: cfg.scheme,
        mass,
        dts: dts.to_vec(),
        discretization_slope: log_slope(dts, &discretization),
        energy_slope: log_slope(dts, &energy_drift),
        errors,
        discretization,
        energy_drift,
        floor: (reference - quantum).abs(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DemoRow {
    pub mass: f64,
    pub re: f64,
    pub im: f64,
    pub magnitude: f64,
    /// Closed-form value where one exists (NaN otherwise).
    pub reference: f64,
    pub error: f64,
}

fn scalar_cos(a: f64) -> Result<ModelSystem> {
    ModelSystem::build(&ModelSpec::new("scalar_cos", 1, 2.0 * PI).with_param("a", a))
}

/// Pair of single-sheet fields at E = 1 on V = +-0.3 cos X; their momenta cross at X = pi/2, 3pi/2.
pub fn crossing_fields(mass: f64, n: usize) -> Result<(wkb::WkbField, wkb::WkbField)> {
    Ok((wkb::WkbField::bo(&scalar_cos(0.3)?, 1.0, mass, n, 0.0)?, wkb::WkbField::bo(&scalar_cos(-0.3)?, 1.0, mass, n, 0.0)?))
}

/// Counter-propagating quantized fields near E = 1 on V = 0.3 cos X.
pub fn counter_propagating_fields(mass: f64, n: usize) -> Result<(wkb::WkbField, wkb::WkbField)> {
    let m = scalar_cos(0.3)?;
    let k = wkb::nearest_quantum_number(&m, 1.0, mass)?;
    let e = wkb::quantized_energy(&m, k, mass)?;
    let f = wkb::WkbField::bo(&m, e, mass, n, 0.0)?;
    let r = f.reversed();
    Ok((f, r))
}

/// The oscillatory-integral demos: `fresnel` (Gaussian-Fresnel against its closed form),
/// `overlap` (counter-propagating modes, g = cos X) and `crossing` (modes with a simple
/// critical point, g a bump around X = pi/2).
pub fn oscint_demo(kind: &str, masses: &[f64]) -> Result<Vec<DemoRow>> {
    use crate::oscint;
    use num_complex::Complex64;
    masses
        .iter()
        .map(|&mass| {
            let (value, reference) = match kind {
                "fresnel" => {
                    let it = oscint::OscillatoryIntegrand::new(
                        |s| 0.5 * s * s,
                        |s| s,
                        |_| 1.0,
                        |s| Complex64::new((-0.5 * s * s).exp(), 0.0),
                        mass,
                        (-8.0, 8.0),
                    );
                    let exact = (Complex64::new(2.0 * PI, 0.0) / Complex64::new(1.0, -mass.sqrt())).sqrt();
                    (oscint::oscillatory_quadrature(&it, None)?.value, Some(exact))
                }
                "overlap" => {
                    let (a, b) = counter_propagating_fields(mass, 128)?;
                    (oscint::mode_overlap(&a, &b, |x| x.cos(), mass)?.value, None)
                }
                "crossing" => {
                    let (a, b) = crossing_fields(mass, 256)?;
                    (oscint::mode_overlap(&a, &b, |x| oscint::bump(x, 0.5 * PI, 1.0), mass)?.value, None)
                }
                other => {
                    return Err(Error::InvalidParameter {
                        name: "demo".into(),
                        reason: format!("unknown demo `{other}`, expected fresnel, overlap or crossing"),
                    })
                }
            };
            Ok(DemoRow {
                mass,
                re: value.re,
                im: value.im,
                magnitude: value.norm(),
                reference: reference.map_or(f64::NAN, |r| r.norm()),
                error: reference.map_or(f64::NAN, |r| (value - r).norm()),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn exact_power_laws() {
        let pts: Vec<(f64, f64)> = [64.0, 256.0, 1024.0, 4096.0].iter().map(|&m: &f64| (m, 3.0 / m)).collect();
        let f = fit_rate(&pts).unwrap();
        assert!((f.alpha - 1.0).abs() < 1e-12 && f.stderr < 1e-12);
        let pts: Vec<(f64, f64)> = [10.0, 100.0, 1000.0].iter().map(|&m: &f64| (m, 0.2 / m.sqrt())).collect();
        assert!((fit_rate(&pts).unwrap().alpha - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fit_needs_three_positive_points() {
        assert!(fit_rate(&[(1.0, 1.0), (2.0, 0.5)]).is_err());
        assert!(fit_rate(&[(1.0, 1.0), (2.0, 0.0), (4.0, 0.1)]).is_err());
    }

    #[test]
    fn noisy_power_law_recovers_exponent() {
        // independent oracle: synthetic resamples around C M^{-0.75}
        let mut r = rng::stream(17, 0);
        let masses = [64.0, 256.0, 1024.0, 4096.0];
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let pts: Vec<(f64, f64)> =
                masses.iter().map(|&m: &f64| (m, 2.0 * m.powf(-0.75) * (1.0 + 0.1 * (2.0 * r.random::<f64>() - 1.0)))).collect();
            worst = worst.max((fit_rate(&pts).unwrap().alpha - 0.75).abs());
        }
        assert!(worst < 0.1, "{worst}");
    }

    #[test]
    fn observables_registry() {
        let l = 2.0 * PI;
        assert_eq!(observable("cos", l).unwrap()(0.0), 1.0);
        assert!((observable("cos2", l).unwrap()(PI / 2.0) + 1.0).abs() < 1e-15);
        let half = observable("half", l).unwrap();
        assert!((half(PI / 2.0) - 0.5 - 0.5 * 4f64.tanh()).abs() < 1e-15);
        assert!((half(0.3) + half(0.3 + PI) - 1.0).abs() < 1e-14);
        assert!(observable("tan", l).is_err());
    }

    fn free_spec() -> ModelSpec {
        ModelSpec::new("free", 1, 2.0 * PI)
    }

    #[test]
    fn free_model_sits_at_the_floor() {
        let cfg = ConvergeConfig::new(Scheme::Bo, &[16.0, 64.0, 256.0], 0.5);
        let rec = converge(&free_spec(), &cfg).unwrap();
        for c in &rec.cells {
            assert!(c.error < 1e-9, "{c:?}");
        }
        assert!(rec.flags.iter().any(|f| f == "floor-limited") || rec.fit.as_ref().is_some_and(|f| f.flags.contains(&"floor-limited".to_string())));
    }

    #[test]
    fn caustic_energy_is_refused() {
        let spec = ModelSpec::new("scalar_cos", 1, 2.0 * PI).with_param("a", 1.0);
        let cfg = ConvergeConfig::new(Scheme::Bo, &[64.0, 256.0, 1024.0], 0.5);
        assert!(matches!(converge(&spec, &cfg), Err(Error::Caustic(_))));
    }

    #[test]
    fn record_roundtrip_and_replay() {
        let spec = ModelSpec::new("scalar_cos", 1, 2.0 * PI).with_param("a", 0.2);
        let mut cfg = ConvergeConfig::new(Scheme::Bo, &[16.0, 64.0, 256.0], 1.0);
        cfg.dt_bo = 5e-3;
        let rec = converge(&spec, &cfg).unwrap();
        let back = RunRecord::from_json(&rec.to_json().unwrap()).unwrap();
        assert_eq!(back.fingerprint(), rec.fingerprint());
        assert_eq!(replay(&back).unwrap().fingerprint(), rec.fingerprint());
        let table = rec.rate_table();
        assert_eq!(table.len(), 3);
        assert!(table.iter().all(|r| r.2 > 0.0));
    }

    #[test]
    fn verlet_and_symplectic_euler_share_positions() {
        let spec = ModelSpec::new("two_level_gap", 2, 2.0 * PI).with_param("delta", 0.25);
        let model = ModelSystem::build(&spec).unwrap();
        let init = PhaseState::bo_start(&model, 0.0, 1.5).unwrap();
        let a = dynamics::simulate::<StreamRng>(&model, &init, &SimConfig::new(Scheme::Bo, 5.0, 0.01, 1.0), None).unwrap();
        let b = dynamics::simulate::<StreamRng>(&model, &init, &SimConfig::new(Scheme::SymplecticEuler, 5.0, 0.01, 1.0), None)
            .unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((x.x - y.x).abs() < 1e-12);
        }
    }

    #[test]
    fn verlet_error_is_second_order() {
        let spec = ModelSpec::new("scalar_cos", 1, 2.0 * PI).with_param("a", 0.3);
        let cfg = ConvergeConfig::new(Scheme::Bo, &[256.0], 1.0);
        let rep = symplectic_perturbation_study(&spec, &cfg, 256.0, &[0.2, 0.1, 0.05, 0.025]).unwrap();
        assert!((rep.energy_slope - 2.0).abs() < 0.2, "{rep:?}");
        assert!((rep.discretization_slope - 2.0).abs() < 0.3, "{rep:?}");
    }

    #[test]
    fn oscint_demos() {
        let rows = oscint_demo("fresnel", &[100.0, 1e4]).unwrap();
        assert!(rows.iter().all(|r| r.error < 1e-8));
        let rows = oscint_demo("crossing", &[256.0, 4096.0]).unwrap();
        let slope = (rows[1].magnitude / rows[0].magnitude).ln() / 16f64.ln();
        assert!((slope + 0.25).abs() < 0.05, "{slope}");
        assert!(oscint_demo("nope", &[1.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn power_law_fit_is_exact(c in 0.01f64..100.0, alpha in 0.1f64..2.0) {
            let pts: Vec<(f64, f64)> = [32.0, 128.0, 512.0, 2048.0].iter().map(|&m: &f64| (m, c * m.powf(-alpha))).collect();
            let f = fit_rate(&pts).unwrap();
            prop_assert!((f.alpha - alpha).abs() < 1e-10);
            prop_assert!((f.intercept - c.ln()).abs() < 1e-9);
        }
    }
}
