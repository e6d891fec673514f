//! WKB fields on the torus: Bohr-Sommerfeld energies, the phase theta, the weight G,
//! the classical density and the approximate eigenfunction rho^{1/2} psi e^{i M^{1/2} theta}.
//!
//! The ground branch is followed by eigenvector overlap. Through an exact crossing it
//! continues onto the smooth branch, so an orbit may need two laps of the torus before the
//! branch closes; such orbits are stored on an extended grid of `loops * n` points.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, PhaseState, Scheme, Trajectory};
use crate::error::{Error, Result};
use crate::espec;
use crate::model::ModelSystem;
use crate::qref::WaveField;
use crate::spectral::{self, PeriodicCubic, TrigInterpolant};

/// Momentum threshold below which a point counts as a caustic.
pub const EPS_CAUSTIC: f64 = 1e-6;

/// Points per lap used for the quantization integral.
pub const PROFILE_POINTS: usize = 2048;

/// Offset used to evaluate the smooth branch at an exactly degenerate grid point.
const DEGENERATE_OFFSET: f64 = 1e-7;

/// Ground branch sampled on the extended grid xi_j = j L / n, j < loops * n.
#[derive(Clone, Debug)]
pub struct BranchProfile {
    pub length: f64,
    pub n: usize,
    pub loops: usize,
    pub values: Vec<f64>,
    pub vectors: Vec<DVector<f64>>,
    /// -1 when the real eigenvector returns with flipped sign after the orbit.
    pub holonomy: f64,
}

struct BranchPoint {
    value: f64,
    vector: DVector<f64>,
    index: usize,
}

fn branch_point(model: &ModelSystem, x: f64, prev: &DVector<f64>) -> Result<BranchPoint> {
    match dynamics::track_level(model, x, prev) {
        Ok(t) => Ok(BranchPoint { value: t.value, vector: t.vector, index: t.index }),
        Err(Error::Degenerate { .. }) => {
            let h = DEGENERATE_OFFSET * model.length;
            let a = dynamics::track_level(model, x - h, prev)?;
            let b = dynamics::track_level(model, x + h, &a.vector)?;
            let mut v = &a.vector + &b.vector;
            v /= v.norm();
            Ok(BranchPoint { value: 0.5 * (a.value + b.value), vector: v, index: usize::MAX })
        }
        Err(e) => Err(e),
    }
}

/// Follow the ground branch around the torus until it closes (one or two laps).
pub fn branch_profile(model: &ModelSystem, n: usize) -> Result<BranchProfile> {
    if n < 4 {
        return Err(Error::InvalidParameter { name: "n".into(), reason: "need at least 4 grid points".into() });
    }
    let h = model.length / n as f64;
    let mut anchor = None;
    for j in 0..n {
        let e = espec::eigen_at(model, j as f64 * h)?;
        if e.is_simple(0) {
            anchor = Some((j, e.vectors.column(0).into_owned()));
            break;
        }
    }
    let (ja, v0) = anchor.ok_or(Error::Degenerate { x: 0.0, level: 0 })?;
    let mut values = vec![espec::eigen_at(model, ja as f64 * h)?.values[0]];
    let mut vectors = vec![v0.clone()];
    let mut prev = v0.clone();
    let mut loops = 0;
    for lap in 1..=2 {
        for s in 1..=n {
            let j = ja + (lap - 1) * n + s;
            let pt = branch_point(model, j as f64 * h, &prev)?;
            prev = pt.vector.clone();
            if s == n {
                if pt.index == 0 {
                    loops = lap;
                }
                if loops > 0 {
                    break;
                }
            }
            values.push(pt.value);
            vectors.push(pt.vector);
        }
        if loops > 0 {
            break;
        }
    }
    if loops == 0 {
        return Err(Error::Unsupported("ground branch does not close within two laps".into()));
    }
    let holonomy = if prev.dot(&v0) < 0.0 { -1.0 } else { 1.0 };
    // rotate so that index 0 sits at xi = 0
    let total = loops * n;
    values.rotate_right(ja % total);
    vectors.rotate_right(ja % total);
    Ok(BranchProfile { length: model.length, n, loops, values, vectors, holonomy })
}

impl BranchProfile {
    pub fn period(&self) -> f64 {
        self.loops as f64 * self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Closed-orbit action of p = sqrt(2 (E - lambda)) by the periodic trapezoid rule.
    pub fn action(&self, energy: f64) -> f64 {
        self.spacing() * self.values.iter().map(|l| (2.0 * (energy - l)).max(0.0).sqrt()).sum::<f64>()
    }

    /// Extra phase pi needed when the eigenvector comes back with flipped sign.
    pub fn phase_offset(&self) -> f64 {
        if self.holonomy < 0.0 {
            PI
        } else {
            0.0
        }
    }

    /// Real-valued quantum number of energy E: (M^{1/2} action - offset) / (2 pi).
    pub fn quantum_number(&self, energy: f64, mass: f64) -> f64 {
        (mass.sqrt() * self.action(energy) - self.phase_offset()) / (2.0 * PI)
    }

    /// Energy with M^{1/2} * action = 2 pi k (+ pi for a sign-flipping branch).
    pub fn quantized_energy(&self, k: i64, mass: f64) -> Result<f64> {
        let target = (2.0 * PI * k as f64 + self.phase_offset()) / mass.sqrt();
        let lo0 = self.max_value();
        if self.action(lo0) >= target {
            return Err(Error::NoQuantizedRoot { k });
        }
        let (mut lo, mut hi) = (lo0, lo0 + 1.0);
        while self.action(hi) < target {
            hi = lo0 + 2.0 * (hi - lo0);
            if !hi.is_finite() {
                return Err(Error::NoQuantizedRoot { k });
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.action(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi.abs().max(1e-300) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Energy of quantum number k on the ground branch, to relative 1e-12.
pub fn quantized_energy(model: &ModelSystem, k: i64, mass: f64) -> Result<f64> {
    branch_profile(model, PROFILE_POINTS)?.quantized_energy(k, mass)
}

/// Nearest integer quantum number for energy E (the inverse of `quantized_energy`).
pub fn nearest_quantum_number(model: &ModelSystem, energy: f64, mass: f64) -> Result<i64> {
    let prof = branch_profile(model, PROFILE_POINTS)?;
    if energy <= prof.max_value() {
        return Err(Error::Caustic(caustics_of(&prof, energy)));
    }
    Ok(prof.quantum_number(energy, mass).round() as i64)
}

fn caustics_of(prof: &BranchProfile, energy: f64) -> Vec<f64> {
    let h = prof.spacing();
    let total = prof.values.len();
    let f = |j: usize| 2.0 * (energy - prof.values[j % total]) - EPS_CAUSTIC * EPS_CAUSTIC;
    let mut out: Vec<f64> = Vec::new();
    for j in 0..total {
        let (a, b) = (f(j), f(j + 1));
        let x = if (a > 0.0) != (b > 0.0) {
            Some(h * (j as f64 + a / (a - b)))
        } else {
            None
        };
        if let Some(x) = x {
            let x = x.rem_euclid(prof.length);
            if !out.iter().any(|y| (y - x).abs() < 1e-12 * prof.length) {
                out.push(x);
            }
        }
    }
    out
}

/// Turning points where p = sqrt(2 (E - lambda_0)) falls below EPS_CAUSTIC on an n-point grid.
pub fn detect_caustics(model: &ModelSystem, energy: f64, n: usize) -> Result<Vec<f64>> {
    Ok(caustics_of(&branch_profile(model, n)?, energy))
}

/// WKB data on the extended grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WkbField {
    pub scheme: Scheme,
    pub length: f64,
    pub n: usize,
    pub loops: usize,
    pub energy: f64,
    pub mass: f64,
    pub x_surface: f64,
    /// Extended grid xi_j = j L / n, j < loops * n.
    pub grid: Vec<f64>,
    pub theta: Vec<f64>,
    pub p: Vec<f64>,
    pub g: Vec<f64>,
    /// Per-sheet density C / p; summing the sheets over X gives the physical density.
    pub rho: Vec<f64>,
    pub psi: Vec<Vec<Complex64>>,
    /// dX_t / dX_0 = p_t / p_0 at the grid points of the generating orbit.
    pub first_variation: Vec<f64>,
    pub action: f64,
    pub holonomy: f64,
}

impl WkbField {
    /// Born-Oppenheimer field at energy E on the n-point grid of the torus.
    pub fn bo(model: &ModelSystem, energy: f64, mass: f64, n: usize, x_surface: f64) -> Result<Self> {
        let prof = branch_profile(model, n)?;
        let psi: Vec<Vec<Complex64>> =
            prof.vectors.iter().map(|v| v.iter().map(|&r| Complex64::new(r, 0.0)).collect()).collect();
        Self::assemble(model, Scheme::Bo, &prof.values, psi, prof.loops, prof.holonomy, energy, mass, x_surface)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        model: &ModelSystem,
        scheme: Scheme,
        potential: &[f64],
        psi: Vec<Vec<Complex64>>,
        loops: usize,
        holonomy: f64,
        energy: f64,
        mass: f64,
        x_surface: f64,
    ) -> Result<Self> {
        let total = potential.len();
        let n = total / loops;
        let h = model.length / n as f64;
        let period = loops as f64 * model.length;
        let p2: Vec<f64> = potential.iter().map(|v| 2.0 * (energy - v)).collect();
        if p2.iter().any(|&q| q <= EPS_CAUSTIC * EPS_CAUSTIC) {
            let prof = BranchProfile {
                length: model.length,
                n,
                loops,
                values: potential.to_vec(),
                vectors: Vec::new(),
                holonomy,
            };
            return Err(Error::Caustic(caustics_of(&prof, energy)));
        }
        let p: Vec<f64> = p2.iter().map(|q| q.sqrt()).collect();
        let grid: Vec<f64> = (0..total).map(|j| j as f64 * h).collect();
        let (mean, prim) = spectral::antiderivative(&p, period);
        let xi_i = model.wrap(x_surface);
        let prim_i = TrigInterpolant::from_real(&prim, period).eval_re(xi_i);
        let theta: Vec<f64> = grid.iter().zip(&prim).map(|(x, q)| mean * (x - xi_i) + q - prim_i).collect();
        let p_i = TrigInterpolant::from_real(&p, period).eval_re(xi_i);
        let first_variation: Vec<f64> = p.iter().map(|q| q / p_i).collect();
        let g: Vec<f64> = first_variation.iter().map(|j| j.sqrt()).collect();
        let inv_sum: f64 = p.iter().map(|q| 1.0 / q).sum::<f64>() * h;
        let rho: Vec<f64> = p.iter().map(|q| 1.0 / (q * inv_sum)).collect();
        Ok(WkbField {
            scheme,
            length: model.length,
            n,
            loops,
            energy,
            mass,
            x_surface: xi_i,
            grid,
            theta,
            p,
            g,
            rho,
            psi,
            first_variation,
            action: mean * period,
            holonomy,
        })
    }

    /// Ehrenfest field: V0 = <phi, V phi> along one orbit of Ehrenfest dynamics started in the
    /// ground state at x_surface, with E adjusted until the action is quantized with index k.
    pub fn ehrenfest(model: &ModelSystem, k: i64, mass: f64, n: usize, x_surface: f64) -> Result<Self> {
        let prof = branch_profile(model, PROFILE_POINTS)?;
        let mut energy = prof.quantized_energy(k, mass)?;
        let target = (2.0 * PI * k as f64 + prof.phase_offset()) / mass.sqrt();
        let mut field = None;
        for _ in 0..8 {
            let f = ehrenfest_orbit(model, energy, mass, n, prof.loops, prof.holonomy, x_surface)?;
            let miss = f.action - target;
            // d action / dE = period of the orbit
            let period: f64 = f.p.iter().map(|q| 1.0 / q).sum::<f64>() * model.length / n as f64;
            let done = miss.abs() <= 1e-13 * target.abs();
            field = Some(f);
            if done {
                break;
            }
            energy -= miss / period;
        }
        Ok(field.expect("at least one iteration"))
    }

    /// The counter-propagating field: theta and p negated, psi conjugated.
    pub fn reversed(&self) -> Self {
        let mut f = self.clone();
        f.theta.iter_mut().for_each(|t| *t = -*t);
        f.p.iter_mut().for_each(|p| *p = -*p);
        f.psi.iter_mut().for_each(|v| v.iter_mut().for_each(|c| *c = c.conj()));
        f.action = -f.action;
        f
    }

    pub fn sheets(&self) -> usize {
        self.loops
    }

    /// Physical grid X_i = i L / n.
    pub fn physical_grid(&self) -> Vec<f64> {
        self.grid[..self.n].to_vec()
    }

    /// Density on the physical grid, summed over sheets.
    pub fn density(&self) -> Vec<f64> {
        (0..self.n).map(|i| (0..self.loops).map(|s| self.rho[s * self.n + i]).sum()).collect()
    }

    /// Distance of M^{1/2} * action (plus the holonomy phase) from 2 pi Z.
    pub fn phase_mismatch(&self) -> f64 {
        let off = if self.holonomy < 0.0 { PI } else { 0.0 };
        let w = self.mass.sqrt() * self.action - off;
        let r = w.rem_euclid(2.0 * PI);
        r.min(2.0 * PI - r)
    }
}

fn ehrenfest_orbit(
    model: &ModelSystem,
    energy: f64,
    mass: f64,
    n: usize,
    loops: usize,
    holonomy: f64,
    x_surface: f64,
) -> Result<WkbField> {
    let xi = model.wrap(x_surface);
    let e0 = espec::eigen_at(model, xi)?;
    let pe = 2.0 * (energy - e0.values[0]);
    if pe <= 0.0 {
        return Err(Error::Caustic(vec![xi]));
    }
    let mut state = PhaseState::ehrenfest_start(model, xi, pe.sqrt(), mass, false)?;
    let dt = 0.05 / mass.sqrt();
    let omega = mass.sqrt();
    let end = xi + loops as f64 * model.length;
    let v0 = |s: &PhaseState| -> f64 {
        let v = model.potential(s.x);
        let mut acc = 0.0;
        for i in 0..s.phi.len() {
            for j in 0..s.phi.len() {
                acc += (s.phi[i].conj() * s.phi[j] * v[(i, j)]).re;
            }
        }
        acc
    };
    let mut xs = vec![state.x - xi];
    let mut vs = vec![v0(&state)];
    let mut dyn_phase = 0.0;
    let mut psis = vec![state.phi.clone()];
    let max_steps = 100_000_000usize;
    let mut steps = 0;
    while state.x < end {
        let va = *vs.last().unwrap();
        let next = dynamics::step_ehrenfest(model, &state, dt, mass, 1.0)?;
        if next.p <= 0.0 {
            return Err(Error::Caustic(vec![model.wrap(next.x)]));
        }
        let vb = v0(&next);
        dyn_phase += 0.5 * dt * (va + vb);
        state = next;
        steps += 1;
        if steps > max_steps {
            return Err(Error::UnboundedHitting { t_max: state.t });
        }
        if state.x < end {
            xs.push(state.x - xi);
            vs.push(vb);
            let rot = Complex64::from_polar(1.0, omega * dyn_phase);
            psis.push(state.phi.iter().map(|c| c * rot).collect());
        }
    }
    let period = loops as f64 * model.length;
    let d = model.levels;
    let vspline = PeriodicCubic::new(&xs, &vs, period);
    let splines: Vec<(PeriodicCubic, PeriodicCubic)> = (0..d)
        .map(|c| {
            let re: Vec<f64> = psis.iter().map(|v| v[c].re).collect();
            let im: Vec<f64> = psis.iter().map(|v| v[c].im).collect();
            (PeriodicCubic::new(&xs, &re, period), PeriodicCubic::new(&xs, &im, period))
        })
        .collect();
    let total = loops * n;
    let h = model.length / n as f64;
    let mut pot = Vec::with_capacity(total);
    let mut psi = Vec::with_capacity(total);
    for j in 0..total {
        // orbit coordinates start at the surface
        let s = j as f64 * h - xi;
        pot.push(vspline.eval(s));
        psi.push(splines.iter().map(|(re, im)| Complex64::new(re.eval(s), im.eval(s))).collect());
    }
    WkbField::assemble(model, Scheme::Ehrenfest, &pot, psi, loops, holonomy, energy, mass, x_surface)
}

/// Check that the field is quantized to `tol` and build rho^{1/2} psi e^{i M^{1/2} theta} on
/// the physical grid, normalized in L^2.
pub fn assemble_wkb_eigenfunction(field: &WkbField, tol: f64) -> Result<WaveField> {
    let mismatch = field.phase_mismatch();
    if mismatch > tol {
        return Err(Error::NonQuantized(mismatch));
    }
    let omega = field.mass.sqrt();
    let d = field.psi.first().map_or(1, |v| v.len());
    let mut data = vec![Complex64::new(0.0, 0.0); field.n * d];
    for j in 0..field.grid.len() {
        let i = j % field.n;
        let amp = field.rho[j].sqrt();
        let ph = Complex64::from_polar(amp, omega * field.theta[j]);
        for c in 0..d {
            data[i * d + c] += ph * field.psi[j][c];
        }
    }
    let mut w = WaveField { length: field.length, levels: d, data };
    w.normalize();
    Ok(w)
}

/// Weight G and first variation J integrated along a classical path.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightAlong {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub j: Vec<f64>,
    pub g: Vec<f64>,
    /// max |G_t^2 / G_0^2 - J_t|
    pub liouville_deviation: f64,
    /// max |G_t^2 / G_0^2 - p_t / p_0|
    pub one_d_deviation: f64,
}

struct BranchEval {
    slope: f64,
    curvature: f64,
    vector: DVector<f64>,
}

fn branch_eval(model: &ModelSystem, x: f64, prev: &DVector<f64>) -> Result<BranchEval> {
    let c = dynamics::track_level(model, x, prev)?;
    let h = 1e-3 * model.length / (2.0 * PI);
    let s = |dx: f64| -> Result<f64> { Ok(dynamics::track_level(model, x + dx, &c.vector)?.slope) };
    let curvature = (s(-2.0 * h)? - s(2.0 * h)? + 8.0 * (s(h)? - s(-h)?)) / (12.0 * h);
    Ok(BranchEval { slope: c.slope, curvature, vector: c.vector })
}

/// Integrate (X, p, J, K = dp/dX_0, log G) by RK4 along the path of `traj` on its
/// adiabatic branch, sampling at the trajectory times. J(0) = 1 and K(0) = -U'(X_0)/p_0
/// so neighbouring paths share the energy of the reference path.
pub fn weight_along(traj: &Trajectory, model: &ModelSystem) -> Result<WeightAlong> {
    match traj.scheme {
        Scheme::Bo | Scheme::SymplecticEuler => {}
        Scheme::Ehrenfest if model.levels == 1 => {}
        _ => return Err(Error::Unsupported("weights need a Born-Oppenheimer path".into())),
    }
    let init = &traj.init;
    if init.p.abs() <= EPS_CAUSTIC {
        return Err(Error::Caustic(vec![model.wrap(init.x)]));
    }
    let mut vec = if init.phi.is_empty() {
        espec::eigen_at(model, init.x)?.vectors.column(0).into_owned()
    } else {
        DVector::from_iterator(init.phi.len(), init.phi.iter().map(|c| c.re))
    };
    let b0 = branch_eval(model, init.x, &vec)?;
    let mut y = [init.x, init.p, 1.0, -b0.slope / init.p, 0.0];
    let p0 = init.p;
    let rhs = |y: &[f64; 5], b: &BranchEval| -> [f64; 5] {
        [y[1], -b.slope, y[3], -b.curvature * y[2], 0.5 * y[3] / y[2]]
    };
    let times = traj.times();
    let mut out = WeightAlong {
        times: times.clone(),
        x: vec![y[0]],
        p: vec![y[1]],
        j: vec![1.0],
        g: vec![1.0],
        liouville_deviation: 0.0,
        one_d_deviation: 0.0,
    };
    let mut t = times.first().copied().unwrap_or(0.0);
    for &t1 in times.iter().skip(1) {
        let span = t1 - t;
        let subs = ((span / 2e-3).ceil() as usize).max(1);
        let h = span / subs as f64;
        for _ in 0..subs {
            let add = |a: &[f64; 5], k: &[f64; 5], s: f64| -> [f64; 5] {
                let mut r = *a;
                for i in 0..5 {
                    r[i] += s * k[i];
                }
                r
            };
            let e1 = branch_eval(model, y[0], &vec)?;
            let k1 = rhs(&y, &e1);
            let y2 = add(&y, &k1, 0.5 * h);
            let e2 = branch_eval(model, y2[0], &e1.vector)?;
            let k2 = rhs(&y2, &e2);
            let y3 = add(&y, &k2, 0.5 * h);
            let e3 = branch_eval(model, y3[0], &e2.vector)?;
            let k3 = rhs(&y3, &e3);
            let y4 = add(&y, &k3, h);
            let e4 = branch_eval(model, y4[0], &e3.vector)?;
            let k4 = rhs(&y4, &e4);
            for i in 0..5 {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            vec = e4.vector;
            if y[2] <= EPS_CAUSTIC {
                return Err(Error::Caustic(vec![model.wrap(y[0])]));
            }
        }
        t = t1;
        let g2 = (2.0 * y[4]).exp();
        out.liouville_deviation = out.liouville_deviation.max((g2 - y[2]).abs());
        out.one_d_deviation = out.one_d_deviation.max((g2 - y[1] / p0).abs());
        out.x.push(y[0]);
        out.p.push(y[1]);
        out.j.push(y[2]);
        out.g.push(y[4].exp());
    }
    Ok(out)
}
