//! Canonical-ensemble sampling of electron coefficients and equilibrium observables.
//!
//! At position X the normalized coefficients u (|u| = 1) have density proportional to
//! exp(-sum_j gap_j |u_j|^2 / T) on the unit sphere of C^d. Ratios r(X)/r(X_c) of the sphere
//! integrals are obtained by thermodynamic integration of d log r / dX.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, PhaseState, Surface};
use crate::error::{Error, Result};
use crate::espec::{self, GapSource, KappaReport};
use crate::model::ModelSystem;
use crate::rng;

const BATCHES: usize = 16;
const LOGGED_PAIRS: usize = 1024;

/// Gauss-Legendre nodes and weights on [0, 1].
const GL_NODES: [(f64, f64); 8] = [
    (0.019855071751231856, 0.05061426814518813),
    (0.10166676129318664, 0.11119051722668724),
    (0.2372337950418355, 0.15685332293894363),
    (0.4082826787521751, 0.18134189168918100),
    (0.5917173212478249, 0.18134189168918100),
    (0.7627662049581645, 0.15685332293894363),
    (0.8983332387068134, 0.11119051722668724),
    (0.9801449282487681, 0.05061426814518813),
];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GibbsSample {
    pub gamma: Vec<Complex64>,
    pub weight: f64,
    pub x: f64,
}

/// One Metropolis proposal: weights of the current and proposed state and the acceptance
/// probabilities of the move and of its reverse.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ProposalPair {
    pub w_current: f64,
    pub w_proposed: f64,
    pub forward: f64,
    pub backward: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ElectronSamples {
    pub samples: Vec<GibbsSample>,
    /// Effective sample size of the importance weights over all proposals.
    pub ess: f64,
    pub acceptance: f64,
    pub pairs: Vec<ProposalPair>,
    /// T / gap_{d-1}, the truncation diagnostic.
    pub truncation: f64,
}

fn check_gaps(gaps: &[f64], x: f64, temperature: f64) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidParameter { name: "T".into(), reason: "must be > 0".into() });
    }
    if gaps.is_empty() {
        return Err(Error::NoExcitedLevel);
    }
    if gaps.iter().any(|g| *g <= espec::DEGENERACY_TOL) {
        return Err(Error::Crossing { x });
    }
    Ok(())
}

// Proposal: gamma_0 complex normal with unit mean square, gamma_j with variance T / gap_j per
// real component, then u = gamma / |gamma|. The induced density of u on the sphere is
// proportional to (|u_0|^2 + sum_j b_j |u_j|^2)^{-d}, b_j = gap_j / (2T).
fn draw<R: Rng + ?Sized>(gaps: &[f64], temperature: f64, rng: &mut R) -> Vec<Complex64> {
    let mut g = Vec::with_capacity(gaps.len() + 1);
    let s0 = 0.5f64.sqrt();
    g.push(Complex64::new(s0 * rng.sample::<f64, _>(StandardNormal), s0 * rng.sample::<f64, _>(StandardNormal)));
    for gap in gaps {
        let s = (temperature / gap).sqrt();
        g.push(Complex64::new(s * rng.sample::<f64, _>(StandardNormal), s * rng.sample::<f64, _>(StandardNormal)));
    }
    let n = g.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    g.iter().map(|c| c / n).collect()
}

fn log_weight(gaps: &[f64], temperature: f64, u: &[Complex64]) -> f64 {
    let d = u.len() as f64;
    let mut target = 0.0;
    let mut q = u[0].norm_sqr();
    for (gap, c) in gaps.iter().zip(&u[1..]) {
        target += gap / temperature * c.norm_sqr();
        q += 0.5 * gap / temperature * c.norm_sqr();
    }
    -target + d * q.ln()
}

/// Independence Metropolis chain targeting the sphere density at X with the gaps of `source`.
pub fn sample_electron_coefficients<R: Rng + ?Sized>(
    source: &impl GapSource,
    x: f64,
    temperature: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<ElectronSamples> {
    let (gaps, _) = source.gaps_and_slopes(x)?;
    sample_with_gaps(&gaps, x, temperature, n_samples, rng)
}

pub fn sample_with_gaps<R: Rng + ?Sized>(
    gaps: &[f64],
    x: f64,
    temperature: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<ElectronSamples> {
    check_gaps(gaps, x, temperature)?;
    let mut cur = draw(gaps, temperature, rng);
    let mut lw = log_weight(gaps, temperature, &cur);
    let mut log_ws = Vec::with_capacity(n_samples);
    let mut samples = Vec::with_capacity(n_samples);
    let mut pairs = Vec::new();
    let mut accepted = 0usize;
    for _ in 0..n_samples {
        let prop = draw(gaps, temperature, rng);
        let lp = log_weight(gaps, temperature, &prop);
        log_ws.push(lp);
        let forward = (lp - lw).exp().min(1.0);
        if pairs.len() < LOGGED_PAIRS {
            pairs.push(ProposalPair { w_current: lw.exp(), w_proposed: lp.exp(), forward, backward: (lw - lp).exp().min(1.0) });
        }
        if rng.random::<f64>() < forward {
            cur = prop;
            lw = lp;
            accepted += 1;
        }
        samples.push(GibbsSample { gamma: cur.clone(), weight: lw.exp(), x });
    }
    let top = log_ws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (s1, s2) = log_ws.iter().fold((0.0, 0.0), |(a, b), l| {
        let w = (l - top).exp();
        (a + w, b + w * w)
    });
    Ok(ElectronSamples {
        samples,
        ess: if s2 > 0.0 { s1 * s1 / s2 } else { 0.0 },
        acceptance: accepted as f64 / n_samples.max(1) as f64,
        pairs,
        truncation: temperature / gaps[gaps.len() - 1],
    })
}

/// Mean and batch-means standard error.
pub fn batch_mean(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let b = BATCHES.min(n);
    if b < 2 {
        return (mean, f64::NAN);
    }
    let len = n / b;
    let means: Vec<f64> = (0..b).map(|i| values[i * len..(i + 1) * len].iter().sum::<f64>() / len as f64).collect();
    let bm = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - bm).powi(2)).sum::<f64>() / (b - 1) as f64;
    (mean, (var / b as f64).sqrt())
}

/// d log r / dX at X per chain sample: -(1/T) sum_j gap_j' |u_j|^2.
fn log_r_slope_series(source: &impl GapSource, x: f64, temperature: f64, n: usize, seed: u64, index: u64) -> Result<Vec<f64>> {
    let (gaps, slopes) = source.gaps_and_slopes(x)?;
    let mut r = rng::stream(seed, index);
    let set = sample_with_gaps(&gaps, x, temperature, n, &mut r)?;
    Ok(set
        .samples
        .iter()
        .map(|s| -s.gamma[1..].iter().zip(&slopes).map(|(c, dg)| dg * c.norm_sqr()).sum::<f64>() / temperature)
        .collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub log_ratio: f64,
    pub mc_error: f64,
    pub kappa: f64,
    /// |log_ratio| <= kappa + 3 mc_error.
    pub within_bound: bool,
}

/// log r(X) - log r(X_c) by 8-node Gauss-Legendre integration along X_c + s (X - X_c).
/// kappa is taken over the segment between the two points.
pub fn marginal_ratio(
    source: &(impl GapSource + Sync),
    x: f64,
    x_c: f64,
    temperature: f64,
    n_samples: usize,
    seed: u64,
) -> Result<RatioEstimate> {
    if x == x_c {
        source.gaps_and_slopes(x)?;
        return Ok(RatioEstimate { log_ratio: 0.0, mc_error: 0.0, kappa: 0.0, within_bound: true });
    }
    let h = x - x_c;
    let nodes: Vec<(f64, f64)> = GL_NODES
        .par_iter()
        .enumerate()
        .map(|(k, (s, w))| {
            let series = log_r_slope_series(source, x_c + s * h, temperature, n_samples, seed, k as u64)?;
            let (m, e) = batch_mean(&series);
            Ok((w * h * m, w * h * e))
        })
        .collect::<Result<_>>()?;
    let log_ratio = nodes.iter().map(|n| n.0).sum();
    let mc_error = nodes.iter().map(|n| n.1 * n.1).sum::<f64>().sqrt();
    let kappa = espec::kappa(source, (x.min(x_c), x.max(x_c)), x_c, temperature, 33, 33)?.kappa;
    let within_bound = f64::abs(log_ratio) <= kappa + 3.0 * mc_error;
    Ok(RatioEstimate { log_ratio, mc_error, kappa, within_bound })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GibbsObservable {
    /// Weight e^{-lambda_0/T} r(X).
    pub value: f64,
    /// Weight e^{-lambda_0/T} alone.
    pub r_free: f64,
    pub difference: f64,
    pub mc_error: f64,
    pub kappa: f64,
    pub temperature_ratio: f64,
    pub grid: Vec<f64>,
    pub log_r: Vec<f64>,
}

fn weighted_mean(g: &[f64], log_w: &[f64]) -> f64 {
    let top = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (num, den) = g.iter().zip(log_w).fold((0.0, 0.0), |(a, b), (gi, l)| {
        let w = (l - top).exp();
        (a + gi * w, b + w)
    });
    num / den
}

/// Periodic trapezoid quadrature of the Gibbs average of g over [X_c - L/2, X_c + L/2).
/// log r(X_i) - log r(X_c) is the cumulative trapezoid integral of the sampled d log r / dX.
pub fn gibbs_observable(
    model: &ModelSystem,
    g: &(dyn Fn(f64) -> f64 + Sync),
    temperature: f64,
    n_grid: usize,
    x_c: f64,
    samples_per_point: usize,
    seed: u64,
) -> Result<GibbsObservable> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidParameter { name: "T".into(), reason: "must be > 0".into() });
    }
    let n = n_grid.max(8) & !1;
    let l = model.length;
    let h = l / n as f64;
    let grid: Vec<f64> = (0..n).map(|i| x_c - 0.5 * l + i as f64 * h).collect();
    let lam0: Vec<f64> = grid.iter().map(|&x| espec::eigen_at(model, x).map(|e| e.values[0])).collect::<Result<_>>()?;
    let gv: Vec<f64> = grid.iter().map(|&x| g(x)).collect();
    let base: Vec<f64> = lam0.iter().map(|v| -v / temperature).collect();
    let r_free = weighted_mean(&gv, &base);
    let centre = n / 2;
    if model.levels < 2 {
        return Ok(GibbsObservable {
            value: r_free,
            r_free,
            difference: 0.0,
            mc_error: 0.0,
            kappa: 0.0,
            temperature_ratio: 0.0,
            grid,
            log_r: vec![0.0; n],
        });
    }
    let series: Vec<Vec<f64>> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &x)| log_r_slope_series(model, x, temperature, samples_per_point, seed, i as u64))
        .collect::<Result<_>>()?;
    let len = samples_per_point / BATCHES;
    if len == 0 {
        return Err(Error::InsufficientData(format!("need at least {BATCHES} samples per grid point")));
    }
    let integrate = |slope: &[f64]| -> Vec<f64> {
        let mut log_r = vec![0.0; n];
        for i in centre + 1..n {
            log_r[i] = log_r[i - 1] + 0.5 * h * (slope[i - 1] + slope[i]);
        }
        for i in (0..centre).rev() {
            log_r[i] = log_r[i + 1] - 0.5 * h * (slope[i] + slope[i + 1]);
        }
        log_r
    };
    let observable = |log_r: &[f64]| -> f64 {
        let lw: Vec<f64> = base.iter().zip(log_r).map(|(a, b)| a + b).collect();
        weighted_mean(&gv, &lw)
    };
    let mean_slope: Vec<f64> = series.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect();
    let log_r = integrate(&mean_slope);
    let value = observable(&log_r);
    let batch_values: Vec<f64> = (0..BATCHES)
        .map(|b| {
            let slope: Vec<f64> = series.iter().map(|s| s[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64).collect();
            observable(&integrate(&slope))
        })
        .collect();
    let bm = batch_values.iter().sum::<f64>() / BATCHES as f64;
    let var = batch_values.iter().map(|v| (v - bm).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    let kr = torus_kappa(model, x_c, temperature)?;
    Ok(GibbsObservable {
        value,
        r_free,
        difference: value - r_free,
        mc_error: (var / BATCHES as f64).sqrt(),
        kappa: kr.kappa,
        temperature_ratio: kr.temperature_ratio,
        grid,
        log_r,
    })
}

/// kappa over the window [X_c - L/2, X_c + L/2].
pub fn torus_kappa(model: &ModelSystem, x_c: f64, temperature: f64) -> Result<KappaReport> {
    let l = model.length;
    espec::kappa(model, (x_c - 0.5 * l, x_c + 0.5 * l), x_c, temperature, 65, 33)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapDiagnostics {
    /// max T / gap_1.
    pub temperature_ratio: f64,
    /// max sum_n |gap_n'| / gap_n.
    pub log_slope: f64,
    /// max |sum_n |gap_n'| gap_n^{-2} log(1/gap_n)|.
    pub weighted_log_slope: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrectedPotential {
    pub temperature: f64,
    pub coefficient: f64,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub diagnostics: GapDiagnostics,
}

/// Default weight of T sum_n log gap_n in the corrected potential.
pub const CORRECTION_COEFFICIENT: f64 = 0.5;

/// lambda_0 + c T sum_n log gap_n as a surface for the stochastic schemes.
pub struct CorrectedSurface<'a> {
    pub model: &'a ModelSystem,
    pub temperature: f64,
    pub coefficient: f64,
}

impl CorrectedSurface<'_> {
    fn correction(&self, x: f64) -> Result<(f64, f64)> {
        let (gaps, slopes) = self.model.gaps_and_slopes(x)?;
        let c = self.coefficient * self.temperature;
        let v: f64 = gaps.iter().map(|g| g.ln()).sum();
        let dv: f64 = gaps.iter().zip(&slopes).map(|(g, s)| s / g).sum();
        Ok((c * v, c * dv))
    }
}

impl Surface for CorrectedSurface<'_> {
    fn energy_force(&self, x: f64) -> Result<(f64, f64)> {
        let (u, f) = dynamics::GroundSurface(self.model).energy_force(x)?;
        let (c, dc) = self.correction(x)?;
        Ok((u + c, f - dc))
    }
}

/// Corrected potential on an n-point grid of the torus with the gap diagnostics.
pub fn corrected_potential(model: &ModelSystem, temperature: f64, coefficient: f64, n: usize) -> Result<CorrectedPotential> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidParameter { name: "T".into(), reason: "must be > 0".into() });
    }
    let surface = CorrectedSurface { model, temperature, coefficient };
    let grid: Vec<f64> = (0..n).map(|i| model.length * i as f64 / n as f64).collect();
    let mut values = Vec::with_capacity(n);
    let mut diag = GapDiagnostics { temperature_ratio: 0.0, log_slope: 0.0, weighted_log_slope: 0.0 };
    for &x in &grid {
        values.push(surface.energy_force(x)?.0);
        let (gaps, slopes) = model.gaps_and_slopes(x)?;
        diag.temperature_ratio = diag.temperature_ratio.max(temperature / gaps[0]);
        diag.log_slope = diag.log_slope.max(gaps.iter().zip(&slopes).map(|(g, s)| s.abs() / g).sum());
        let w: f64 = gaps.iter().zip(&slopes).map(|(g, s)| s.abs() / (g * g) * (1.0 / g).ln()).sum();
        diag.weighted_log_slope = diag.weighted_log_slope.max(w.abs());
    }
    Ok(CorrectedPotential { temperature, coefficient, grid, values, diagnostics: diag })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Budget {
    pub t_final: f64,
    pub burn_in: f64,
    pub dt_langevin: f64,
    pub dt_smoluchowski: f64,
    pub chains: usize,
    pub friction: f64,
    pub grid: usize,
    pub samples_per_point: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            t_final: 2000.0,
            burn_in: 50.0,
            dt_langevin: 0.01,
            dt_smoluchowski: 0.002,
            chains: 16,
            friction: 1.0,
            grid: 128,
            samples_per_point: 4096,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChainAverage {
    pub mean: f64,
    /// Standard error from the spread of independent chains.
    pub std_error: f64,
    pub chains: usize,
}

/// Long-run average of g under one stochastic scheme, chains run in parallel with streams
/// (seed, chain) and started at X_c.
pub fn chain_average(
    surface: &dyn Surface,
    scheme: dynamics::Scheme,
    g: &(dyn Fn(f64) -> f64 + Sync),
    temperature: f64,
    budget: &Budget,
    x_c: f64,
    seed: u64,
) -> Result<ChainAverage> {
    let dt = match scheme {
        dynamics::Scheme::Langevin => budget.dt_langevin,
        dynamics::Scheme::Smoluchowski => budget.dt_smoluchowski,
        _ => return Err(Error::Unsupported(format!("{scheme:?} is not a stochastic scheme"))),
    };
    let burn = (budget.burn_in / dt).round() as usize;
    let steps = (budget.t_final / dt).round() as usize;
    let means: Vec<f64> = (0..budget.chains)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, c as u64);
            let mut s = PhaseState::classical(x_c, 0.0);
            for _ in 0..burn {
                s = step(surface, scheme, &s, dt, temperature, budget.friction, &mut r)?;
            }
            let mut acc = 0.5 * g(s.x);
            for k in 0..steps {
                s = step(surface, scheme, &s, dt, temperature, budget.friction, &mut r)?;
                acc += if k + 1 == steps { 0.5 * g(s.x) } else { g(s.x) };
            }
            Ok(acc / steps as f64)
        })
        .collect::<Result<_>>()?;
    let n = means.len();
    let mean = means.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { f64::NAN };
    Ok(ChainAverage { mean, std_error: (var / n as f64).sqrt(), chains: n })
}

fn step<R: Rng + ?Sized>(
    surface: &dyn Surface,
    scheme: dynamics::Scheme,
    s: &PhaseState,
    dt: f64,
    temperature: f64,
    friction: f64,
    rng: &mut R,
) -> Result<PhaseState> {
    if scheme == dynamics::Scheme::Langevin {
        dynamics::step_langevin(surface, s, dt, temperature, friction, rng)
    } else {
        dynamics::step_smoluchowski(surface, s, dt, temperature, rng)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub temperature: f64,
    pub gibbs: GibbsObservable,
    pub langevin: ChainAverage,
    pub smoluchowski: ChainAverage,
    pub kappa: f64,
    pub langevin_difference: f64,
    pub smoluchowski_difference: f64,
    pub langevin_sigma: f64,
    pub smoluchowski_sigma: f64,
    pub pass: bool,
    pub seed: u64,
}

/// Langevin and Smoluchowski long-run averages of g against the Gibbs quadrature.
pub fn equilibrium_compare(
    model: &ModelSystem,
    g: &(dyn Fn(f64) -> f64 + Sync),
    temperature: f64,
    budget: &Budget,
    x_c: f64,
    seed: u64,
) -> Result<EquilibriumReport> {
    let gibbs = gibbs_observable(model, g, temperature, budget.grid, x_c, budget.samples_per_point, seed)?;
    let surface = dynamics::GroundSurface(model);
    let langevin = chain_average(&surface, dynamics::Scheme::Langevin, g, temperature, budget, x_c, seed ^ 0x4c41)?;
    let smoluchowski = chain_average(&surface, dynamics::Scheme::Smoluchowski, g, temperature, budget, x_c, seed ^ 0x534d)?;
    let ls = langevin.std_error.hypot(gibbs.mc_error);
    let ss = smoluchowski.std_error.hypot(gibbs.mc_error);
    let ld = langevin.mean - gibbs.value;
    let sd = smoluchowski.mean - gibbs.value;
    let pass = ld.abs() <= gibbs.kappa + 3.0 * ls && sd.abs() <= gibbs.kappa + 3.0 * ss;
    Ok(EquilibriumReport {
        temperature,
        kappa: gibbs.kappa,
        gibbs,
        langevin,
        smoluchowski,
        langevin_difference: ld,
        smoluchowski_difference: sd,
        langevin_sigma: ls,
        smoluchowski_sigma: ss,
        pass,
        seed,
    })
}

/// Quadrature of the r-free Gibbs average, e^{-U/T} weights on n points of the torus.
pub fn boltzmann_average(u: &dyn Fn(f64) -> f64, g: &dyn Fn(f64) -> f64, length: f64, temperature: f64, n: usize) -> f64 {
    let xs: Vec<f64> = (0..n).map(|i| length * i as f64 / n as f64).collect();
    let gv: Vec<f64> = xs.iter().map(|&x| g(x)).collect();
    let lw: Vec<f64> = xs.iter().map(|&x| -u(x) / temperature).collect();
    weighted_mean(&gv, &lw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use std::f64::consts::PI;

    fn uniform_phase(theta: f64) -> Complex64 {
        Complex64::from_polar(1.0, 2.0 * PI * theta)
    }

    fn multi(gaps: &[f64], a: f64, eps: f64) -> ModelSystem {
        let mut s = ModelSpec::new("multi_level", gaps.len() + 1, 2.0 * PI).with_param("a", a).with_param("eps", eps);
        for (i, g) in gaps.iter().enumerate() {
            s = s.with_param(&format!("gap_{}", i + 1), *g);
        }
        ModelSystem::build(&s).unwrap()
    }

    // On the unit sphere of C^2, t = |u_1|^2 is uniform on [0, 1].
    fn excited_fraction_oracle(a: f64) -> f64 {
        let n = 20000;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let t = (i as f64 + 0.5) / n as f64;
            let w = (-a * t).exp();
            num += t * w;
            den += w;
        }
        num / den
    }

    #[test]
    fn low_temperature_concentrates_on_ground_state() {
        let mut r = rng::stream(1, 0);
        let set = sample_with_gaps(&[1.0, 2.0], 0.0, 1e-4, 2000, &mut r).unwrap();
        let m: f64 = set.samples.iter().map(|s| 1.0 - s.gamma[0].norm_sqr()).sum::<f64>() / 2000.0;
        assert!(m < 1e-3);
        for s in &set.samples {
            let n: f64 = s.gamma.iter().map(|c| c.norm_sqr()).sum();
            assert!((n - 1.0).abs() < 1e-12 && s.weight > 0.0);
        }
    }

    #[test]
    fn excited_population_matches_sphere_integral() {
        let (t, gap) = (0.01, 0.5);
        let mut r = rng::stream(2, 0);
        let set = sample_with_gaps(&[gap], 0.0, t, 200_000, &mut r).unwrap();
        let v: Vec<f64> = set.samples.iter().map(|s| s.gamma[1].norm_sqr()).collect();
        let (m, e) = batch_mean(&v);
        let oracle = excited_fraction_oracle(gap / t);
        assert!((m - oracle).abs() < 3.0 * e, "{m} vs {oracle} +- {e}");
        assert!((oracle - t / gap).abs() < 2.0 * (t / gap).powi(2));
        assert!(set.ess > 1000.0 && set.acceptance > 0.5);
    }

    #[test]
    fn real_and_imaginary_parts_have_equal_variance() {
        let mut r = rng::stream(3, 0);
        let set = sample_with_gaps(&[0.5, 0.8], 0.0, 0.2, 100_000, &mut r).unwrap();
        for j in 0..3 {
            let re: Vec<f64> = set.samples.iter().map(|s| s.gamma[j].re.powi(2)).collect();
            let im: Vec<f64> = set.samples.iter().map(|s| s.gamma[j].im.powi(2)).collect();
            let diff: Vec<f64> = re.iter().zip(&im).map(|(a, b)| a - b).collect();
            let (m, e) = batch_mean(&diff);
            assert!(m.abs() < 3.0 * e + 1e-12, "level {j}: {m} +- {e}");
        }
    }

    fn ks_statistic(a: &mut [f64], b: &mut [f64]) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    fn ks_p_value(d: f64, n: usize, m: usize) -> f64 {
        let ne = (n * m) as f64 / (n + m) as f64;
        let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
        let mut p = 0.0;
        for k in 1..200 {
            let k = k as f64;
            p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        }
        p.clamp(0.0, 1.0)
    }

    #[test]
    fn distribution_is_phase_invariant() {
        let mut r = rng::stream(4, 0);
        let set = sample_with_gaps(&[0.5, 0.9], 0.0, 0.3, 20_000, &mut r).unwrap();
        let mut rot = rng::stream(4, 1);
        // thin the chain to reduce autocorrelation
        let thin: Vec<&GibbsSample> = set.samples.iter().step_by(4).collect();
        let half = thin.len() / 2;
        let mut a: Vec<f64> = thin[..half].iter().map(|s| s.gamma[1].re).collect();
        let mut b: Vec<f64> =
            thin[half..].iter().map(|s| (s.gamma[1] * uniform_phase(rot.random::<f64>())).re).collect();
        let d = ks_statistic(&mut a, &mut b);
        assert!(ks_p_value(d, a.len(), b.len()) > 0.01, "D = {d}");
    }

    #[test]
    fn metropolis_pairs_satisfy_detailed_balance() {
        let mut r = rng::stream(5, 0);
        let set = sample_with_gaps(&[0.4], 0.0, 0.5, 2000, &mut r).unwrap();
        assert_eq!(set.pairs.len(), LOGGED_PAIRS);
        for p in &set.pairs {
            let lhs = p.w_current * p.forward;
            let rhs = p.w_proposed * p.backward;
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(rhs));
        }
    }

    #[test]
    fn crossing_is_rejected() {
        let mut r = rng::stream(6, 0);
        assert!(matches!(sample_with_gaps(&[0.0], 0.3, 0.1, 10, &mut r), Err(Error::Crossing { .. })));
        let cross = ModelSystem::build(&ModelSpec::new("two_level_cross", 2, 2.0 * PI)).unwrap();
        assert!(sample_electron_coefficients(&cross, 0.0, 0.1, 10, &mut r).is_err());
    }

    #[test]
    fn ratio_vanishes_at_the_centre_and_for_flat_gaps() {
        let m = multi(&[1.0, 1.5], 0.3, 0.0);
        let est = marginal_ratio(&m, 1.0, 1.0, 0.1, 1000, 7).unwrap();
        assert_eq!(est.log_ratio, 0.0);
        let est = marginal_ratio(&m, 2.0, 0.0, 0.1, 4000, 7).unwrap();
        assert!(est.log_ratio.abs() <= 1e-12 + 3.0 * est.mc_error);
    }

    #[test]
    fn ratio_matches_quadrature_and_kappa_bound() {
        let src = |x: f64| (vec![1.0 + 0.1 * x.cos()], vec![-0.1 * x.sin()]);
        let t = 0.05;
        // d=2: r(X) is proportional to (1 - e^{-a}) / a with a = gap(X) / T
        let log_r = |x: f64| {
            let a = (1.0 + 0.1 * f64::cos(x)) / t;
            ((1.0 - (-a).exp()) / a).ln()
        };
        for &x in &[0.7, 1.9, 3.0] {
            let est = marginal_ratio(&src, x, 0.0, t, 20_000, 11).unwrap();
            let exact = log_r(x) - log_r(0.0);
            assert!((est.log_ratio - exact).abs() < 3.0 * est.mc_error + 1e-6, "{x}: {} vs {exact}", est.log_ratio);
            assert!(est.within_bound);
        }
    }

    #[test]
    fn unit_observable_and_flat_gaps() {
        let m = multi(&[1.0], 0.5, 0.0);
        let one = gibbs_observable(&m, &|_| 1.0, 0.2, 64, 0.0, 256, 1).unwrap();
        assert!((one.value - 1.0).abs() < 1e-12);
        let c = gibbs_observable(&m, &|x| x.cos(), 0.2, 64, 0.0, 1024, 1).unwrap();
        assert!(c.difference.abs() <= 3.0 * c.mc_error + 1e-12);
    }

    #[test]
    fn low_temperature_localizes_at_the_minimum() {
        // lambda_0 = 0.5 cos X, minimum at pi; Laplace: <cos X> = -1 + T / (2 a) + O(T^2)
        let m = multi(&[1.0], 0.5, 0.0);
        let t = 0.005;
        let o = gibbs_observable(&m, &|x| x.cos(), t, 512, PI, 256, 2).unwrap();
        let laplace = -1.0 + t / 1.0;
        assert!((o.value - laplace).abs() < 4.0 * (t / 0.5).powi(2), "{}", o.value);
    }

    #[test]
    fn gibbs_observable_matches_exact_marginal() {
        let m = multi(&[1.0], 0.25, 0.3);
        let t = 0.25;
        let u = |x: f64| {
            let a = (1.0 + 0.3 * x.cos()) / t;
            0.25 * x.cos() - t * ((1.0 - (-a).exp()) / a).ln()
        };
        let exact = boltzmann_average(&u, &|x| x.cos(), 2.0 * PI, t, 4096);
        let o = gibbs_observable(&m, &|x| x.cos(), t, 256, 0.0, 4096, 3).unwrap();
        assert!((o.value - exact).abs() < 3.0 * o.mc_error + 1e-4, "{} vs {exact} +- {}", o.value, o.mc_error);
    }

    #[test]
    fn corrected_potential_values() {
        let flat = multi(&[1.0, 2.0], 0.3, 0.0);
        let s0 = dynamics::GroundSurface(&flat);
        let s1 = CorrectedSurface { model: &flat, temperature: 0.1, coefficient: CORRECTION_COEFFICIENT };
        for &x in &[0.3, 2.0, 4.4] {
            let (u0, f0) = s0.energy_force(x).unwrap();
            let (u1, f1) = s1.energy_force(x).unwrap();
            assert!((u1 - u0 - 0.05 * 2f64.ln()).abs() < 1e-12);
            assert!((f1 - f0).abs() < 1e-12);
        }
        let m = multi(&[1.0], 0.0, 0.1);
        let cp = corrected_potential(&m, 0.05, CORRECTION_COEFFICIENT, 16).unwrap();
        for (x, v) in cp.grid.iter().zip(&cp.values) {
            let expect = 0.025 * (1.0 + 0.1 * x.cos()).ln();
            assert!((v - expect).abs() < 1e-12);
        }
        assert!((cp.diagnostics.temperature_ratio - 0.05 / 0.9).abs() < 1e-3);
    }

    #[test]
    fn corrected_force_matches_finite_difference() {
        let m = multi(&[0.8, 1.3], 0.4, 0.2);
        let s = CorrectedSurface { model: &m, temperature: 0.2, coefficient: 0.5 };
        let h = 1e-5;
        for &x in &[0.1, 1.7, 3.9] {
            let fd = -(s.energy_force(x + h).unwrap().0 - s.energy_force(x - h).unwrap().0) / (2.0 * h);
            assert!((s.energy_force(x).unwrap().1 - fd).abs() < 1e-7);
        }
    }

    #[test]
    fn free_model_equilibrium_is_uniform() {
        let m = ModelSystem::build(&ModelSpec::new("free", 1, 2.0 * PI)).unwrap();
        let budget = Budget { t_final: 200.0, burn_in: 0.0, chains: 8, dt_smoluchowski: 0.01, ..Budget::default() };
        let rep = equilibrium_compare(&m, &|x| x.cos(), 1.0, &budget, 0.0, 9).unwrap();
        assert!(rep.gibbs.value.abs() < 1e-12);
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn scalar_marginal_matches_boltzmann_quadrature() {
        let m = ModelSystem::build(&ModelSpec::new("scalar_cos", 1, 2.0 * PI).with_param("a", 1.0)).unwrap();
        let t = 0.5;
        let exact = boltzmann_average(&|x| x.cos(), &|x| x.cos(), 2.0 * PI, t, 2048);
        let budget = Budget { t_final: 400.0, chains: 8, ..Budget::default() };
        let rep = equilibrium_compare(&m, &|x| x.cos(), t, &budget, PI, 10).unwrap();
        assert!((rep.gibbs.value - exact).abs() < 1e-10);
        assert!(rep.langevin_difference.abs() < 3.0 * rep.langevin_sigma, "{rep:?}");
        assert!(rep.smoluchowski_difference.abs() < 3.0 * rep.smoluchowski_sigma + 0.002, "{rep:?}");
    }
}
